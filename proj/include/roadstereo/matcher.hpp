#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "block_stats.hpp"
#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"
#include "perspective.hpp"

namespace roadstereo {

struct MatcherParams {
    int window_radius = 3;  ///< matching block is (2r+1)^2
    int agg_radius = 5;     ///< aggregation window (2R+1)^2; 5 gives the 120-neighbour system
    int d_max = 30;         ///< largest residual disparity searched, inclusive
    double sigma0 = 1.5;    ///< spatial bandwidth, pixels
    double sigma1 = 5.5;    ///< range bandwidth, intensity units
    double delta_r = 1.0;   ///< left-right threshold, squared pixels
    unsigned workers = 0;   ///< 0 = hardware concurrency; never affects results

    void validate() const {
        auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
        if (window_radius < 1) bad("matcher.window_radius must be >= 1");
        if (agg_radius < 0) bad("matcher.agg_radius must be >= 0");
        if (d_max < 1) bad("matcher.d_max must be >= 1");
        if (!(sigma0 > 0.0)) bad("matcher.sigma0 must be > 0");
        if (!(sigma1 > 0.0)) bad("matcher.sigma1 must be > 0");
        if (!(delta_r > 0.0)) bad("matcher.delta_r must be > 0");
    }
};

/// Matching costs indexed by (u, v, d), d in [0, d_max]. Stored as 32-bit
/// reals; NaN marks an INVALID entry.
class CostVolume {
public:
    CostVolume() = default;
    CostVolume(int width, int height, int d_max)
        : width_(width), height_(height), d_max_(d_max),
          cost_(static_cast<std::size_t>(width) * height * (d_max + 1), std::numeric_limits<float>::quiet_NaN()) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int d_max() const noexcept { return d_max_; }
    int depth() const noexcept { return d_max_ + 1; }

    float& operator()(int u, int v, int d) noexcept { return cost_[index(u, v, d)]; }
    float operator()(int u, int v, int d) const noexcept { return cost_[index(u, v, d)]; }

    bool valid(int u, int v, int d) const noexcept { return !std::isnan(cost_[index(u, v, d)]); }

    /// Costs for all d at one pixel.
    const float* at(int u, int v) const noexcept { return cost_.data() + index(u, v, 0); }
    float* at(int u, int v) noexcept { return cost_.data() + index(u, v, 0); }

    /// Bitwise equality; NaN == NaN.
    friend bool operator==(const CostVolume& a, const CostVolume& b) noexcept {
        if (a.width_ != b.width_ || a.height_ != b.height_ || a.d_max_ != b.d_max_) return false;
        for (std::size_t i = 0; i < a.cost_.size(); ++i) {
            const bool na = std::isnan(a.cost_[i]);
            if (na != std::isnan(b.cost_[i])) return false;
            if (!na && a.cost_[i] != b.cost_[i]) return false;
        }
        return true;
    }

private:
    std::size_t index(int u, int v, int d) const noexcept {
        return (static_cast<std::size_t>(v) * width_ + u) * static_cast<std::size_t>(d_max_ + 1) + d;
    }

    int width_ = 0;
    int height_ = 0;
    int d_max_ = 0;
    std::vector<float> cost_;
};

/// Matching cost between the ref block at p and the tar block at p - [d, 0]:
/// one minus the normalised cross-correlation, in [0, 2].
/// Throws OutOfBounds if either block leaves its image, DegenerateBlock if
/// either block has zero variance.
inline double matching_cost(const GrayImage& ref, const GrayImage& tar, const BlockStats& stats_ref,
                            const BlockStats& stats_tar, PixelCoord p, int d) {
    require_same_shape(ref, tar, "matching_cost");
    const int r = stats_ref.radius();
    if (stats_tar.radius() != r) throw Error(ErrorCode::InvalidArgument, "block stats radii differ");
    if (!stats_ref.valid(p.u, p.v) || !stats_tar.valid(p.u - d, p.v))
        throw Error(ErrorCode::OutOfBounds, "block at (" + std::to_string(p.u) + "," + std::to_string(p.v) +
                                                ") with d=" + std::to_string(d) + " leaves the image");
    const double c = detail::ncc_cost_from_moments(
        stats_ref.block_size(), detail::block_cross_sum(ref, tar, p.u, p.v, d, r), stats_ref.sum(p.u, p.v),
        stats_tar.sum(p.u - d, p.v), stats_ref.root_scaled_variance(p.u, p.v),
        stats_tar.root_scaled_variance(p.u - d, p.v));
    if (std::isnan(c)) throw Error(ErrorCode::DegenerateBlock, "zero-variance block");
    return c;
}

/// Precomputed factors of the bilateral weight. The spatial table covers
/// every offset of the aggregation window; the range table is indexed by the
/// absolute intensity difference.
class BilateralWeights {
public:
    BilateralWeights(int agg_radius, double sigma0, double sigma1) : radius_(agg_radius) {
        const int side = 2 * agg_radius + 1;
        spatial_.resize(static_cast<std::size_t>(side) * side);
        for (int dv = -agg_radius; dv <= agg_radius; ++dv)
            for (int du = -agg_radius; du <= agg_radius; ++du)
                spatial_[offset_index(du, dv)] = spatial_weight(du, dv, sigma0);
        for (int k = 0; k < 256; ++k) range_[k] = range_weight(k, sigma1);
    }

    static double spatial_weight(int du, int dv, double sigma0) noexcept {
        return std::exp(-static_cast<double>(du * du + dv * dv) / (sigma0 * sigma0));
    }
    static double range_weight(int intensity_gap, double sigma1) noexcept {
        return std::exp(-static_cast<double>(intensity_gap * intensity_gap) / (sigma1 * sigma1));
    }

    int radius() const noexcept { return radius_; }
    double spatial(int du, int dv) const noexcept { return spatial_[offset_index(du, dv)]; }
    double range(int intensity_gap) const noexcept { return range_[static_cast<std::size_t>(std::abs(intensity_gap))]; }
    double operator()(int du, int dv, int intensity_gap) const noexcept {
        return spatial(du, dv) * range(intensity_gap);
    }

private:
    std::size_t offset_index(int du, int dv) const noexcept {
        return static_cast<std::size_t>(dv + radius_) * (2 * radius_ + 1) + (du + radius_);
    }

    int radius_;
    std::vector<double> spatial_;
    double range_[256]{};
};

/// exp(-|p-q|^2 / sigma0^2) * exp(-(i(p)-i(q))^2 / sigma1^2).
inline double bilateral_weight(const GrayImage& guide, PixelCoord p, PixelCoord q, const MatcherParams& params) {
    if (!guide.contains(p.u, p.v) || !guide.contains(q.u, q.v))
        throw Error(ErrorCode::OutOfBounds, "bilateral_weight: pixel outside image");
    return BilateralWeights::spatial_weight(q.u - p.u, q.v - p.v, params.sigma0) *
           BilateralWeights::range_weight(static_cast<int>(guide(q.u, q.v)) - guide(p.u, p.v), params.sigma1);
}

/// Raw reference volume: ref block at p against tar block at p - [d, 0].
inline CostVolume raw_reference_costs(const GrayImage& ref, const GrayImage& tar, const BlockStats& stats_ref,
                                      const BlockStats& stats_tar, int d_max, unsigned workers = 0) {
    require_same_shape(ref, tar, "raw_reference_costs");
    CostVolume vol(ref.width(), ref.height(), d_max);
    const int r = stats_ref.radius();
    const std::int64_t n = stats_ref.block_size();
    parallel_for(static_cast<std::size_t>(ref.height()), workers, [&](std::size_t row) {
        const int v = static_cast<int>(row);
        for (int u = 0; u < ref.width(); ++u) {
            if (!stats_ref.valid(u, v)) continue;
            float* out = vol.at(u, v);
            for (int d = 0; d <= d_max; ++d) {
                if (!stats_tar.valid(u - d, v)) continue;
                const double c = detail::ncc_cost_from_moments(
                    n, detail::block_cross_sum(ref, tar, u, v, d, r), stats_ref.sum(u, v), stats_tar.sum(u - d, v),
                    stats_ref.root_scaled_variance(u, v), stats_tar.root_scaled_variance(u - d, v));
                out[d] = static_cast<float>(c);
            }
        }
    });
    return vol;
}

/// Raw target volume: tar block at p against ref block at p + [d, 0]. The cost
/// is symmetric in its two blocks, so this is the reference volume read along
/// the other diagonal.
inline CostVolume raw_target_costs(const CostVolume& raw_ref) {
    CostVolume vol(raw_ref.width(), raw_ref.height(), raw_ref.d_max());
    for (int v = 0; v < raw_ref.height(); ++v)
        for (int u = 0; u < raw_ref.width(); ++u)
            for (int d = 0; d <= raw_ref.d_max() && u + d < raw_ref.width(); ++d) vol(u, v, d) = raw_ref(u + d, v, d);
    return vol;
}

/// Bilateral aggregation: E(p,d) = sum_q w(p,q) c(q,d) / sum_q w(p,q) over the
/// (2R+1)^2 window including p. Neighbours outside the image or with INVALID
/// cost drop out of both sums; if none remain the result is INVALID.
/// Per (p, d) the neighbours are visited in row-major window order.
inline CostVolume aggregate_costs(const CostVolume& raw, const GrayImage& guide, const MatcherParams& params) {
    require_same_shape(guide, raw, "aggregate_costs");
    const BilateralWeights weights(params.agg_radius, params.sigma0, params.sigma1);
    const int R = params.agg_radius;
    const int depth = raw.depth();
    CostVolume out(raw.width(), raw.height(), raw.d_max());

    parallel_for(static_cast<std::size_t>(raw.height()), params.workers, [&](std::size_t row) {
        const int v = static_cast<int>(row);
        std::vector<double> num(static_cast<std::size_t>(depth));
        std::vector<double> den(static_cast<std::size_t>(depth));
        for (int u = 0; u < raw.width(); ++u) {
            std::fill(num.begin(), num.end(), 0.0);
            std::fill(den.begin(), den.end(), 0.0);
            const int centre = guide(u, v);
            for (int dv = -R; dv <= R; ++dv) {
                const int qv = v + dv;
                if (qv < 0 || qv >= raw.height()) continue;
                for (int du = -R; du <= R; ++du) {
                    const int qu = u + du;
                    if (qu < 0 || qu >= raw.width()) continue;
                    const double w = weights(du, dv, static_cast<int>(guide(qu, qv)) - centre);
                    const float* c = raw.at(qu, qv);
                    for (int d = 0; d < depth; ++d) {
                        if (std::isnan(c[d])) continue;
                        num[d] += w * static_cast<double>(c[d]);
                        den[d] += w;
                    }
                }
            }
            float* dst = out.at(u, v);
            for (int d = 0; d < depth; ++d)
                if (den[d] > 0.0) dst[d] = static_cast<float>(num[d] / den[d]);
        }
    });
    return out;
}

struct CostVolumes {
    CostVolume reference;
    CostVolume target;
};

/// Both aggregated volumes. The reference volume is guided by ref and the
/// target volume by tar_warped. When `tar_coverage` is given, target blocks
/// touching uncovered pixels yield INVALID costs.
inline CostVolumes compute_cost_volumes(const GrayImage& ref, const GrayImage& tar_warped,
                                        const MatcherParams& params, const RoadMask* tar_coverage = nullptr) {
    params.validate();
    require_same_shape(ref, tar_warped, "compute_cost_volumes");
    const BlockStats stats_ref = block_stats(ref, params.window_radius, params.workers);
    const BlockStats stats_tar = tar_coverage
                                     ? block_stats(tar_warped, *tar_coverage, params.window_radius, params.workers)
                                     : block_stats(tar_warped, params.window_radius, params.workers);
    const CostVolume raw_ref = raw_reference_costs(ref, tar_warped, stats_ref, stats_tar, params.d_max, params.workers);
    const CostVolume raw_tar = raw_target_costs(raw_ref);
    return {aggregate_costs(raw_ref, ref, params), aggregate_costs(raw_tar, tar_warped, params)};
}

/// Integer argmin per pixel; ties go to the smallest d.
inline DisparityMap wta_disparity(const CostVolume& vol, unsigned workers = 0) {
    DisparityMap out(vol.width(), vol.height());
    parallel_for(static_cast<std::size_t>(vol.height()), workers, [&](std::size_t row) {
        const int v = static_cast<int>(row);
        for (int u = 0; u < vol.width(); ++u) {
            const float* c = vol.at(u, v);
            int best = -1;
            for (int d = 0; d < vol.depth(); ++d)
                if (!std::isnan(c[d]) && (best < 0 || c[d] < c[best])) best = d;
            if (best >= 0) out.set(u, v, best);
        }
    });
    return out;
}

/// Keeps p iff (l_ref(p) - l_tar(p - [l_ref(p), 0]))^2 <= delta_r.
inline DisparityMap lr_consistency(const DisparityMap& disp_ref, const DisparityMap& disp_tar, double delta_r) {
    require_same_shape(disp_ref, disp_tar, "lr_consistency");
    DisparityMap out(disp_ref.width(), disp_ref.height());
    for (int v = 0; v < disp_ref.height(); ++v) {
        for (int u = 0; u < disp_ref.width(); ++u) {
            const auto d = disp_ref.at(u, v);
            if (!d) continue;
            const int tu = u - static_cast<int>(std::lround(*d));
            if (tu < 0 || tu >= disp_ref.width()) continue;
            const auto dt = disp_tar.at(tu, v);
            if (!dt) continue;
            const double diff = *d - *dt;
            if (diff * diff <= delta_r) out.set(u, v, *d);
        }
    }
    return out;
}

/// Parabola vertex through c(d-1), c(d), c(d+1). Applied only when both
/// neighbours exist and are valid and the parabola is strictly convex.
inline DisparityMap subpixel_refine(const DisparityMap& disp, const CostVolume& vol) {
    require_same_shape(disp, vol, "subpixel_refine");
    DisparityMap out(disp.width(), disp.height());
    for (int v = 0; v < disp.height(); ++v) {
        for (int u = 0; u < disp.width(); ++u) {
            const auto value = disp.at(u, v);
            if (!value) continue;
            const int d = static_cast<int>(std::lround(*value));
            double refined = *value;
            if (d - 1 >= 0 && d + 1 <= vol.d_max() && vol.valid(u, v, d - 1) && vol.valid(u, v, d) &&
                vol.valid(u, v, d + 1)) {
                const double cm = vol(u, v, d - 1);
                const double c0 = vol(u, v, d);
                const double cp = vol(u, v, d + 1);
                const double denom = 2.0 * cm + 2.0 * cp - 4.0 * c0;
                if (denom > 1e-12) refined = d + (cm - cp) / denom;
            }
            out.set(u, v, std::max(0.0, refined));
        }
    }
    return out;
}

/// Adds back the per-row shift applied by the warp of the given mode.
inline DisparityMap undo_perspective_shift(const DisparityMap& disp, const GroundPlaneShiftModel& model,
                                          WarpMode mode = WarpMode::Integer) {
    DisparityMap out(disp.width(), disp.height());
    for (int v = 0; v < disp.height(); ++v) {
        const double shift = mode == WarpMode::Integer ? model.row_shift(v) : model.exact_row_shift(v);
        for (int u = 0; u < disp.width(); ++u)
            if (const auto d = disp.at(u, v)) out.set(u, v, std::max(0.0, *d + shift));
    }
    return out;
}

/// Intermediate and final products of one matching run, all in the warped frame
/// except `disparity`.
struct MatchResult {
    CostVolumes volumes;
    DisparityMap wta_reference;
    DisparityMap wta_target;
    DisparityMap consistent;
    DisparityMap refined;
    DisparityMap disparity;
};

/// Costs, WTA on both volumes, left-right check, subpixel refinement, then the
/// perspective shift is restored.
inline MatchResult match_warped(const GrayImage& ref, const GrayImage& tar_warped, const GroundPlaneShiftModel& model,
                                const MatcherParams& params, WarpMode mode = WarpMode::Integer) {
    MatchResult res;
    const RoadMask coverage = warp_coverage(tar_warped.width(), tar_warped.height(), model, mode);
    res.volumes = compute_cost_volumes(ref, tar_warped, params, &coverage);
    res.wta_reference = wta_disparity(res.volumes.reference, params.workers);
    res.wta_target = wta_disparity(res.volumes.target, params.workers);
    res.consistent = lr_consistency(res.wta_reference, res.wta_target, params.delta_r);
    res.refined = subpixel_refine(res.consistent, res.volumes.reference);
    res.disparity = undo_perspective_shift(res.refined, model, mode);
    return res;
}

} // namespace roadstereo
