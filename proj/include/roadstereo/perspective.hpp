#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "block_stats.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace roadstereo {

/// A row-aligned match between the reference and target images.
struct Correspondence {
    PixelCoord ref;
    PixelCoord tar;

    /// u_ref - u_tar.
    int shift() const noexcept { return ref.u - tar.u; }
};

/// Horizontal ground-plane shift between the views, affine in the row:
/// du(v) = kappa0 + kappa1 * v. delta_p keeps every row shift non-negative.
struct GroundPlaneShiftModel {
    double kappa0 = 0.0;
    double kappa1 = 0.0;
    int delta_p = 0;

    double shift_at(double v) const noexcept { return kappa0 + kappa1 * v; }

    /// Integer shift applied to row v: round(du(v)) - delta_p.
    int row_shift(int v) const noexcept {
        return static_cast<int>(std::floor(shift_at(v) + 0.5)) - delta_p;
    }

    /// Unrounded shift of row v: du(v) - delta_p.
    double exact_row_shift(int v) const noexcept { return shift_at(v) - delta_p; }
};

/// Integer moves whole pixels per row. Subpixel resamples each row by the
/// exact shift with linear interpolation, so the residual disparity stays
/// continuous across rows.
enum class WarpMode { Integer, Subpixel };

inline WarpMode parse_warp_mode(const std::string& name) {
    if (name == "integer") return WarpMode::Integer;
    if (name == "subpixel") return WarpMode::Subpixel;
    throw Error(ErrorCode::InvalidArgument, "unknown warp mode '" + name + "' (integer|subpixel)");
}

inline const char* to_string(WarpMode mode) noexcept {
    return mode == WarpMode::Integer ? "integer" : "subpixel";
}

struct CorrespondenceParams {
    int window = 9;                    ///< odd block side used for correlation
    int max_shift = 64;                ///< search over [-max_shift, max_shift]
    double response_threshold = 25.0;  ///< minimum block variance (intensity^2)
    int stride = 4;                    ///< sample every stride-th row and column
    double min_correlation = 0.9;
    unsigned workers = 0;
};

/// Exhaustive per-row NCC search at textured reference pixels. For each
/// sampled pixel the best-correlating target column is kept if its correlation
/// is at least min_correlation.
inline std::vector<Correspondence> find_sparse_correspondences(const GrayImage& ref, const GrayImage& tar,
                                                               const CorrespondenceParams& params) {
    require_same_shape(ref, tar, "find_sparse_correspondences");
    if (params.window < 3 || params.window % 2 == 0)
        throw Error(ErrorCode::InvalidArgument, "correspondence window must be odd and >= 3");
    if (params.stride < 1 || params.max_shift < 0)
        throw Error(ErrorCode::InvalidArgument, "bad correspondence stride or max_shift");

    const int r = params.window / 2;
    const BlockStats stats_ref = block_stats(ref, r, params.workers);
    const BlockStats stats_tar = block_stats(tar, r, params.workers);
    const std::int64_t n = stats_ref.block_size();
    const double min_scaled_var = params.response_threshold * static_cast<double>(n) * static_cast<double>(n);

    std::vector<int> rows;
    for (int v = r; v < ref.height() - r; v += params.stride) rows.push_back(v);
    std::vector<std::vector<Correspondence>> per_row(rows.size());

    parallel_for(rows.size(), params.workers, [&](std::size_t i) {
        const int v = rows[i];
        for (int u = r; u < ref.width() - r; u += params.stride) {
            if (static_cast<double>(stats_ref.scaled_variance(u, v)) < min_scaled_var) continue;
            double best_cost = 2.0;
            int best_shift = 0;
            bool found = false;
            for (int s = -params.max_shift; s <= params.max_shift; ++s) {
                if (!stats_tar.valid(u - s, v)) continue;
                const double c = detail::ncc_cost_from_moments(
                    n, detail::block_cross_sum(ref, tar, u, v, s, r), stats_ref.sum(u, v), stats_tar.sum(u - s, v),
                    stats_ref.root_scaled_variance(u, v), stats_tar.root_scaled_variance(u - s, v));
                if (std::isnan(c)) continue;
                if (!found || c < best_cost) {
                    best_cost = c;
                    best_shift = s;
                    found = true;
                }
            }
            if (found && 1.0 - best_cost >= params.min_correlation)
                per_row[i].push_back({{u, v}, {u - best_shift, v}});
        }
    });

    std::vector<Correspondence> matches;
    for (auto& row : per_row) matches.insert(matches.end(), row.begin(), row.end());
    if (matches.size() < 2)
        throw Error(ErrorCode::InsufficientMatches,
                    "found " + std::to_string(matches.size()) + " reliable correspondences, need at least 2");
    return matches;
}

namespace detail {

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
};

/// Least squares of shift against row, centred sums, fixed summation order.
inline LineFit fit_shift_line(const std::vector<Correspondence>& matches) {
    const double m = static_cast<double>(matches.size());
    double sv = 0.0;
    double ss = 0.0;
    for (const auto& c : matches) {
        sv += c.ref.v;
        ss += c.shift();
    }
    const double mean_v = sv / m;
    const double mean_s = ss / m;
    double cvv = 0.0;
    double cvs = 0.0;
    for (const auto& c : matches) {
        const double dv = c.ref.v - mean_v;
        cvv += dv * dv;
        cvs += dv * (c.shift() - mean_s);
    }
    if (cvv <= 0.0) throw Error(ErrorCode::RankDeficient, "all correspondences lie on one row");
    const double slope = cvs / cvv;
    return {mean_s - slope * mean_v, slope};
}

} // namespace detail

/// Least-squares fit of (u_ref - u_tar) against v, with one trim pass that
/// drops matches whose residual exceeds 3 px. delta_p = floor(min du(v)) over
/// the image rows.
inline GroundPlaneShiftModel fit_row_shift_model(std::vector<Correspondence> matches, int image_height) {
    if (image_height < 1) throw Error(ErrorCode::InvalidArgument, "image height must be positive");
    if (matches.size() < 2) throw Error(ErrorCode::RankDeficient, "need at least 2 correspondences");
    for (const auto& c : matches)
        if (c.ref.v != c.tar.v) throw Error(ErrorCode::InvalidArgument, "correspondence rows differ");

    // canonical order makes the fit independent of the input order
    std::sort(matches.begin(), matches.end(), [](const Correspondence& a, const Correspondence& b) {
        return std::tie(a.ref.v, a.ref.u, a.tar.u) < std::tie(b.ref.v, b.ref.u, b.tar.u);
    });

    detail::LineFit fit = detail::fit_shift_line(matches);
    std::vector<Correspondence> kept;
    kept.reserve(matches.size());
    for (const auto& c : matches)
        if (std::abs(c.shift() - (fit.intercept + fit.slope * c.ref.v)) <= 3.0) kept.push_back(c);
    if (kept.size() != matches.size() && kept.size() >= 2) {
        try {
            fit = detail::fit_shift_line(kept);
        } catch (const Error&) {
            // trimmed set collapsed onto a single row; keep the untrimmed fit
        }
    }

    GroundPlaneShiftModel model{fit.intercept, fit.slope, 0};
    const double lowest = std::min(model.shift_at(0.0), model.shift_at(image_height - 1));
    if (!std::isfinite(lowest)) throw Error(ErrorCode::RankDeficient, "row-shift model is not finite");
    model.delta_p = static_cast<int>(std::floor(lowest));
    return model;
}

/// Shifts row v of the target right by row_shift(v); uncovered pixels are 0.
inline GrayImage warp_target(const GrayImage& tar, const GroundPlaneShiftModel& model) {
    GrayImage out(tar.width(), tar.height(), 0);
    for (int v = 0; v < tar.height(); ++v) {
        const int s = model.row_shift(v);
        const auto src = tar.row(v);
        auto dst = out.row(v);
        for (int u = 0; u < tar.width(); ++u) {
            const int su = u - s;
            if (su >= 0 && su < tar.width()) dst[u] = src[su];
        }
    }
    return out;
}

/// Row v moved right by exact_row_shift(v), sampled linearly and rounded to
/// the nearest intensity. Columns whose source lies outside [0, width-1] are 0.
inline GrayImage warp_target_subpixel(const GrayImage& tar, const GroundPlaneShiftModel& model) {
    GrayImage out(tar.width(), tar.height(), 0);
    const int last = tar.width() - 1;
    for (int v = 0; v < tar.height(); ++v) {
        const double s = model.exact_row_shift(v);
        const auto src = tar.row(v);
        auto dst = out.row(v);
        for (int u = 0; u < tar.width(); ++u) {
            const double x = u - s;
            if (!(x >= 0.0 && x <= last)) continue;
            const int x0 = static_cast<int>(std::floor(x));
            const int x1 = std::min(x0 + 1, last);
            const double t = x - x0;
            dst[u] = static_cast<std::uint8_t>(std::floor((1.0 - t) * src[x0] + t * src[x1] + 0.5));
        }
    }
    return out;
}

inline GrayImage warp_target(const GrayImage& tar, const GroundPlaneShiftModel& model, WarpMode mode) {
    return mode == WarpMode::Integer ? warp_target(tar, model) : warp_target_subpixel(tar, model);
}

/// Pixels of the warped target that received a source pixel.
inline RoadMask warp_coverage(int width, int height, const GroundPlaneShiftModel& model,
                              WarpMode mode = WarpMode::Integer) {
    RoadMask out(width, height, false);
    for (int v = 0; v < height; ++v) {
        if (mode == WarpMode::Integer) {
            const int s = model.row_shift(v);
            for (int u = 0; u < width; ++u) out.set(u, v, u - s >= 0 && u - s < width);
        } else {
            const double s = model.exact_row_shift(v);
            for (int u = 0; u < width; ++u) out.set(u, v, u - s >= 0.0 && u - s <= width - 1);
        }
    }
    return out;
}

} // namespace roadstereo
