#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace roadstereo {

/// 64-bit linear congruential generator, x' = a x + c mod 2^64 with Knuth's
/// MMIX constants. Outputs use the high 53 bits.
class Lcg64 {
public:
    static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
    static constexpr std::uint64_t kIncrement = 1442695040888963407ULL;

    explicit Lcg64(std::uint64_t seed) : state_(seed) { next(); }

    std::uint64_t next() noexcept {
        state_ = state_ * kMultiplier + kIncrement;
        return state_;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per two draws).
    double normal() noexcept {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

/// Circular disparity perturbation; negative depth_offset models a pothole.
struct Defect {
    PixelCoord center;
    double radius = 1.0;
    double depth_offset = 0.0;
};

/// Rectified stereo rig over a textured ground plane.
struct SceneSpec {
    int width = 320;
    int height = 240;
    double f = 300.0;            ///< focal length, pixels
    double u_o = 160.0;          ///< principal point
    double v_o = 120.0;
    double t_c = 0.3;            ///< baseline, metres
    double beta = 2.0;           ///< plane offset, metres
    double n_x = 1.0;            ///< plane-normal component entering the shift
    double theta = 0.6;          ///< pitch, radians
    double psi = 0.0;            ///< roll, radians
    std::uint64_t texture_seed = 1;
    double noise_sigma = 0.0;    ///< additive Gaussian intensity noise, 0 = off
    std::vector<Defect> defects;

    void validate() const {
        auto bad = [](const std::string& what) { throw Error(ErrorCode::BadScene, what); };
        if (width < 8 || height < 8) bad("scene must be at least 8x8");
        if (!(f > 0.0)) bad("f must be > 0");
        if (!(t_c > 0.0)) bad("t_c must be > 0");
        if (!(beta > 0.0)) bad("beta must be > 0");
        if (!(theta > 0.0 && theta < std::numbers::pi)) bad("theta must lie in (0, pi)");
        if (noise_sigma < 0.0) bad("noise_sigma must be >= 0");
        for (const auto& d : defects)
            if (!(d.radius >= 1.0)) bad("defect radius must be >= 1");
    }

    /// Plane disparity is alpha0 + alpha1 * (v cos psi - u sin psi), with the roll
    /// applied about the principal point. At psi = 0 these are the row-shift
    /// intercept and slope of the ground plane.
    double plane_scale() const noexcept { return t_c * n_x / beta; }
    double alpha1() const noexcept { return plane_scale() * std::cos(theta); }
    double alpha0() const noexcept {
        const double k = plane_scale();
        return k * f * std::sin(theta) -
               alpha1() * (v_o * std::cos(psi) - u_o * std::sin(psi));
    }

    double plane_disparity(double u, double v) const noexcept {
        return alpha0() + alpha1() * (v * std::cos(psi) - u * std::sin(psi));
    }

    /// Plane plus every defect covering (u, v).
    double disparity(double u, double v) const noexcept {
        double d = plane_disparity(u, v);
        for (const auto& def : defects) {
            const double du = u - def.center.u;
            const double dv = v - def.center.v;
            if (du * du + dv * dv <= def.radius * def.radius) d += def.depth_offset;
        }
        return d;
    }
};

/// Exact disparity of every pixel. Throws BadScene when the plane's horizon is
/// inside the image or a defect drives a disparity negative.
inline DisparityMap ground_truth_disparity(const SceneSpec& spec) {
    spec.validate();
    DisparityMap out(spec.width, spec.height);
    for (int v = 0; v < spec.height; ++v) {
        for (int u = 0; u < spec.width; ++u) {
            const double plane = spec.plane_disparity(u, v);
            if (plane < 0.0 || (spec.n_x != 0.0 && plane <= 0.0))
                throw Error(ErrorCode::BadScene, "ground plane is not below the horizon at (" + std::to_string(u) +
                                                     "," + std::to_string(v) + ")");
            const double d = spec.disparity(u, v);
            if (d < 0.0)
                throw Error(ErrorCode::BadScene,
                            "negative disparity at (" + std::to_string(u) + "," + std::to_string(v) + ")");
            out.set(u, v, d);
        }
    }
    return out;
}

/// Reference pixels seen by both cameras with `margin` pixels of support on
/// every side: the margin-wide neighbourhood stays inside both images and
/// away from the target's unrendered columns.
inline RoadMask common_view_mask(const SceneSpec& spec, int margin) {
    if (margin < 0) throw Error(ErrorCode::InvalidArgument, "margin must be >= 0");
    const DisparityMap gt = ground_truth_disparity(spec);
    RoadMask mask(spec.width, spec.height, false);
    for (int v = margin; v < spec.height - margin; ++v)
        for (int u = margin; u + margin < spec.width; ++u)
            mask.set(u, v, u - gt.raw(u, v) - margin >= 0.0);
    return mask;
}

namespace detail {

/// One octave of value noise: a lattice of uniform values with the given cell
/// size, smoothstep-interpolated.
class ValueNoise {
public:
    ValueNoise(int width, int height, int cell, Lcg64& rng)
        : cell_(cell), nx_(width / cell + 2), ny_(height / cell + 2) {
        lattice_.resize(static_cast<std::size_t>(nx_) * ny_);
        for (auto& x : lattice_) x = rng.uniform();
    }

    double operator()(double x, double y) const noexcept {
        const double gx = x / cell_;
        const double gy = y / cell_;
        const int ix = std::clamp(static_cast<int>(std::floor(gx)), 0, nx_ - 2);
        const int iy = std::clamp(static_cast<int>(std::floor(gy)), 0, ny_ - 2);
        const double tx = smooth(gx - ix);
        const double ty = smooth(gy - iy);
        const double a = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * tx;
        const double b = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * tx;
        return a + (b - a) * ty;
    }

private:
    static double smooth(double t) noexcept { return t * t * (3.0 - 2.0 * t); }
    double at(int ix, int iy) const noexcept { return lattice_[static_cast<std::size_t>(iy) * nx_ + ix]; }

    int cell_;
    int nx_;
    int ny_;
    std::vector<double> lattice_;
};

inline std::uint8_t quantize(double x) noexcept {
    return static_cast<std::uint8_t>(std::clamp(std::floor(x + 0.5), 0.0, 255.0));
}

} // namespace detail

struct StereoPair {
    GrayImage ref;
    GrayImage tar;
};

/// Reference: two-octave value noise (cells of 8 and 3 px) mapped to [20, 235].
/// Target: each row of the reference resampled with linear interpolation at
/// u_ref = u_tar + d(u_ref, v), solved by fixed-point iteration; samples
/// outside the reference are 0.
inline StereoPair render_stereo_pair(const SceneSpec& spec, unsigned workers = 0) {
    (void)ground_truth_disparity(spec);

    Lcg64 rng(spec.texture_seed);
    const detail::ValueNoise coarse(spec.width, spec.height, 8, rng);
    const detail::ValueNoise fine(spec.width, spec.height, 3, rng);

    std::vector<double> texture(static_cast<std::size_t>(spec.width) * spec.height);
    for (int v = 0; v < spec.height; ++v)
        for (int u = 0; u < spec.width; ++u)
            texture[static_cast<std::size_t>(v) * spec.width + u] =
                20.0 + 215.0 * (0.6 * coarse(u, v) + 0.4 * fine(u, v));

    StereoPair pair{GrayImage(spec.width, spec.height), GrayImage(spec.width, spec.height)};
    for (int v = 0; v < spec.height; ++v)
        for (int u = 0; u < spec.width; ++u)
            pair.ref(u, v) = detail::quantize(texture[static_cast<std::size_t>(v) * spec.width + u]);

    parallel_for(static_cast<std::size_t>(spec.height), workers, [&](std::size_t row) {
        const int v = static_cast<int>(row);
        const auto src = pair.ref.row(v);
        for (int u = 0; u < spec.width; ++u) {
            double x = u + spec.disparity(u, v);
            for (int it = 0; it < 16; ++it) x = u + spec.disparity(x, v);
            double value = 0.0;
            const double fx = std::floor(x);
            const int i0 = static_cast<int>(fx);
            const double t = x - fx;
            if (i0 >= 0 && i0 < spec.width) {
                if (t == 0.0)
                    value = src[i0];
                else if (i0 + 1 < spec.width)
                    value = src[i0] * (1.0 - t) + src[i0 + 1] * t;
            }
            pair.tar(u, v) = detail::quantize(value);
        }
    });

    if (spec.noise_sigma > 0.0) {
        Lcg64 noise(spec.texture_seed ^ 0x9e3779b97f4a7c15ULL);
        for (GrayImage* img : {&pair.ref, &pair.tar})
            for (auto& px : img->data()) px = detail::quantize(px + spec.noise_sigma * noise.normal());
    }
    return pair;
}

} // namespace roadstereo
