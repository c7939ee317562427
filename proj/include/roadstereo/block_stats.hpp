#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace roadstereo {

/// Per-pixel mean and standard deviation of the (2r+1)x(2r+1) block centred on
/// each pixel. Pixels whose block leaves the image are INVALID.
///
/// Besides mu/sigma the exact integer moments are kept: the block sum and the
/// scaled variance n*sum(i^2) - sum(i)^2. Costs are formed from these so that
/// they do not depend on floating-point rounding of the mean.
class BlockStats {
public:
    BlockStats() = default;

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int radius() const noexcept { return radius_; }
    int block_size() const noexcept { return (2 * radius_ + 1) * (2 * radius_ + 1); }

    bool valid(int u, int v) const noexcept {
        return u >= radius_ && v >= radius_ && u < width_ - radius_ && v < height_ - radius_ &&
               (uncovered_.empty() || !uncovered_[index(u, v)]);
    }

    std::optional<double> mu(int u, int v) const noexcept {
        if (!valid(u, v)) return std::nullopt;
        return static_cast<double>(sum_[index(u, v)]) / block_size();
    }

    /// Population standard deviation.
    std::optional<double> sigma(int u, int v) const noexcept {
        if (!valid(u, v)) return std::nullopt;
        return std::sqrt(static_cast<double>(scaled_var_[index(u, v)])) / block_size();
    }

    std::int64_t sum(int u, int v) const noexcept { return sum_[index(u, v)]; }
    std::int64_t scaled_variance(int u, int v) const noexcept { return scaled_var_[index(u, v)]; }
    double root_scaled_variance(int u, int v) const noexcept { return root_var_[index(u, v)]; }

    friend BlockStats block_stats(const GrayImage& img, int window_radius, unsigned workers);
    friend BlockStats block_stats(const GrayImage& img, const RoadMask& coverage, int window_radius,
                                  unsigned workers);

private:
    std::size_t index(int u, int v) const noexcept {
        return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
    }

    int width_ = 0;
    int height_ = 0;
    int radius_ = 0;
    std::vector<std::int64_t> sum_;
    std::vector<std::int64_t> scaled_var_;
    std::vector<double> root_var_;
    std::vector<std::uint8_t> uncovered_;
};

inline BlockStats block_stats(const GrayImage& img, int window_radius, unsigned workers = 0) {
    if (window_radius < 1)
        throw Error(ErrorCode::InvalidArgument, "window radius must be >= 1, got " + std::to_string(window_radius));
    const int side = 2 * window_radius + 1;
    if (side > img.width() || side > img.height())
        throw Error(ErrorCode::WindowTooLarge, std::to_string(side) + "x" + std::to_string(side) +
                                                   " block does not fit a " + std::to_string(img.width()) + "x" +
                                                   std::to_string(img.height()) + " image");

    BlockStats st;
    st.width_ = img.width();
    st.height_ = img.height();
    st.radius_ = window_radius;
    const std::size_t count = img.size();
    st.sum_.assign(count, 0);
    st.scaled_var_.assign(count, 0);
    st.root_var_.assign(count, 0.0);

    const std::int64_t n = static_cast<std::int64_t>(side) * side;
    parallel_for(static_cast<std::size_t>(img.height() - 2 * window_radius), workers, [&](std::size_t row) {
        const int v = static_cast<int>(row) + window_radius;
        for (int u = window_radius; u < img.width() - window_radius; ++u) {
            std::int64_t s = 0;
            std::int64_t s2 = 0;
            for (int dv = -window_radius; dv <= window_radius; ++dv) {
                for (int du = -window_radius; du <= window_radius; ++du) {
                    const std::int64_t i = img(u + du, v + dv);
                    s += i;
                    s2 += i * i;
                }
            }
            const std::size_t k = st.index(u, v);
            st.sum_[k] = s;
            st.scaled_var_[k] = n * s2 - s * s;
            st.root_var_[k] = std::sqrt(static_cast<double>(st.scaled_var_[k]));
        }
    });
    return st;
}

/// As above, but a block that contains any pixel outside `coverage` is also
/// INVALID. Used for warped images whose uncovered pixels hold no data.
inline BlockStats block_stats(const GrayImage& img, const RoadMask& coverage, int window_radius,
                              unsigned workers = 0) {
    require_same_shape(img, coverage, "block_stats coverage");
    BlockStats st = block_stats(img, window_radius, workers);
    st.uncovered_.assign(img.size(), 0);
    const int r = window_radius;
    for (int v = 0; v < img.height(); ++v) {
        for (int u = 0; u < img.width(); ++u) {
            if (coverage(u, v)) continue;
            for (int bv = std::max(0, v - r); bv <= std::min(img.height() - 1, v + r); ++bv)
                for (int bu = std::max(0, u - r); bu <= std::min(img.width() - 1, u + r); ++bu)
                    st.uncovered_[st.index(bu, bv)] = 1;
        }
    }
    return st;
}

namespace detail {

/// 1 - NCC from exact integer moments:
///   c = 1 - (n*S - sum_r*sum_t) / (sqrt(Vr) * sqrt(Vt))
/// which is the mean/stddev form of the cost with both numerator and
/// denominator multiplied by n^2. NaN for a zero-variance block.
inline double ncc_cost_from_moments(std::int64_t n, std::int64_t cross, std::int64_t sum_ref, std::int64_t sum_tar,
                                    double root_var_ref, double root_var_tar) noexcept {
    const double denom = root_var_ref * root_var_tar;
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    const double cov = static_cast<double>(n * cross - sum_ref * sum_tar);
    return 1.0 - cov / denom;
}

/// Sum over the block of ref(q) * tar(q - [d, 0]).
inline std::int64_t block_cross_sum(const GrayImage& ref, const GrayImage& tar, int u, int v, int d,
                                    int radius) noexcept {
    std::int64_t s = 0;
    for (int dv = -radius; dv <= radius; ++dv) {
        const auto ref_row = ref.row(v + dv);
        const auto tar_row = tar.row(v + dv);
        for (int du = -radius; du <= radius; ++du)
            s += static_cast<std::int64_t>(ref_row[u + du]) * tar_row[u + du - d];
    }
    return s;
}

} // namespace detail

} // namespace roadstereo
