#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace roadstereo {

struct FitSample {
    double u = 0.0;
    double v = 0.0;
    double d = 0.0;
};

/// Road disparity model d = alpha0 + alpha1 * y(psi), y(psi) = v cos(psi) - u sin(psi).
struct RoadModelFit {
    double alpha0 = 0.0;
    double alpha1 = 0.0;
    double psi = 0.0;
    double e_min = 0.0;
    int iterations = 0;
    bool converged = true;
};

struct RollOptions {
    double lambda0 = 10.0;
    double delta_psi = std::numbers::pi / 1.8e6;
    int max_iters = 200;
    double psi_init = 0.0;

    void validate() const {
        if (!(lambda0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "roll.lambda0 must be > 0");
        if (!(delta_psi > 0.0)) throw Error(ErrorCode::InvalidArgument, "roll.delta_psi must be > 0");
        if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "roll.max_iters must be >= 1");
    }
};

/// Valid pixels, restricted to the mask when one is given. Row-major order.
inline std::vector<FitSample> collect_samples(const DisparityMap& disp, const RoadMask* mask = nullptr) {
    if (mask) require_same_shape(disp, *mask, "collect_samples");
    std::vector<FitSample> samples;
    for (int v = 0; v < disp.height(); ++v)
        for (int u = 0; u < disp.width(); ++u)
            if (disp.valid(u, v) && (!mask || (*mask)(u, v))) samples.push_back({double(u), double(v), disp.raw(u, v)});
    if (samples.empty()) throw Error(ErrorCode::NoSamples, "no valid disparities inside the road region");
    return samples;
}

struct LinearFit {
    double alpha0 = 0.0;
    double alpha1 = 0.0;
    double e_min = 0.0;
};

namespace detail {

inline double rotated_row(const FitSample& s, double cos_psi, double sin_psi) noexcept {
    return s.v * cos_psi - s.u * sin_psi;
}

/// Closed-form 2x2 least squares from centred sums; the energy is the explicit
/// residual sum so it is never negative.
inline LinearFit fit_rotated(std::span<const FitSample> samples, double psi) {
    if (samples.size() < 2) throw Error(ErrorCode::RankDeficient, "need at least 2 samples");
    const double c = std::cos(psi);
    const double s = std::sin(psi);
    const double m = static_cast<double>(samples.size());
    double sy = 0.0;
    double sd = 0.0;
    for (const auto& p : samples) {
        sy += rotated_row(p, c, s);
        sd += p.d;
    }
    const double mean_y = sy / m;
    const double mean_d = sd / m;
    double cyy = 0.0;
    double cyd = 0.0;
    for (const auto& p : samples) {
        const double dy = rotated_row(p, c, s) - mean_y;
        cyy += dy * dy;
        cyd += dy * (p.d - mean_d);
    }
    if (cyy <= 1e-9 * m)
        throw Error(ErrorCode::RankDeficient, "samples span a single rotated row at psi=" + std::to_string(psi));
    LinearFit fit;
    fit.alpha1 = cyd / cyy;
    fit.alpha0 = mean_d - fit.alpha1 * mean_y;
    double e = 0.0;
    for (const auto& p : samples) {
        const double r = p.d - fit.alpha0 - fit.alpha1 * rotated_row(p, c, s);
        e += r * r;
    }
    fit.e_min = e;
    return fit;
}

} // namespace detail

/// Line fit of disparity against image row.
inline LinearFit fit_linear_model(std::span<const FitSample> samples) { return detail::fit_rotated(samples, 0.0); }

/// Line fit of disparity against the rotated row y(psi) and its minimum energy.
inline LinearFit rotated_energy(std::span<const FitSample> samples, double psi) {
    return detail::fit_rotated(samples, psi);
}

/// dE_min/dpsi. With r the fit residuals and y' = dy/dpsi = -v sin(psi) - u cos(psi),
/// the projection form -2 d^T (I - YJ) Y' J d collapses to -2 alpha1 * sum(r_i y'_i).
inline double energy_gradient(std::span<const FitSample> samples, double psi) {
    const LinearFit fit = detail::fit_rotated(samples, psi);
    const double c = std::cos(psi);
    const double s = std::sin(psi);
    double acc = 0.0;
    for (const auto& p : samples) {
        const double r = p.d - fit.alpha0 - fit.alpha1 * detail::rotated_row(p, c, s);
        const double dy = -p.v * s - p.u * c;
        acc += r * dy;
    }
    return -2.0 * fit.alpha1 * acc;
}

/// Maps psi into (-pi/2, pi/2]. The energy has period pi in psi.
inline double wrap_roll(double psi) noexcept {
    constexpr double pi = std::numbers::pi;
    return psi - pi * std::ceil((psi - pi / 2.0) / pi);
}

/// Gradient descent on E_min(psi) with the secant learning-rate update
///   lambda(k+1) = lambda(k) g(k) / (g(k) - g(k+1)).
/// A trial step that does not give sufficient decrease is halved before it is
/// accepted; lambda(k) is the rate actually applied. Stops when the accepted
/// step is below delta_psi, when the gradient difference vanishes, or after
/// max_iters (converged = false, best iterate returned).
inline RoadModelFit estimate_roll(std::span<const FitSample> samples, const RollOptions& opts) {
    opts.validate();
    auto energy = [&](double psi) {
        try {
            return detail::fit_rotated(samples, psi).e_min;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    double psi = opts.psi_init;
    double e = detail::fit_rotated(samples, psi).e_min;
    double g = energy_gradient(samples, psi);
    double lambda = opts.lambda0;
    bool converged = false;
    int iter = 0;

    while (iter < opts.max_iters) {
        ++iter;
        if (g == 0.0) {
            converged = true;
            break;
        }
        double step = lambda * g;
        double trial = psi - step;
        double e_trial = energy(trial);
        for (int halvings = 0; halvings < 200 && !(e_trial <= e - 1e-4 * step * g); ++halvings) {
            step *= 0.5;
            trial = psi - step;
            e_trial = energy(trial);
        }
        if (!(e_trial <= e)) {
            // no descent possible at machine precision
            converged = true;
            break;
        }
        const double applied = step / g;
        const double g_trial = energy_gradient(samples, trial);
        const double moved = std::abs(trial - psi);
        psi = trial;
        e = e_trial;
        if (moved < opts.delta_psi) {
            converged = true;
            break;
        }
        const double dg = g - g_trial;
        if (std::abs(dg) < 1e-15) {
            converged = true;
            break;
        }
        const double next = applied * g / dg;
        lambda = (std::isfinite(next) && next > 0.0) ? next : applied;
        g = g_trial;
    }

    RoadModelFit out;
    out.psi = wrap_roll(psi);
    const LinearFit fit = detail::fit_rotated(samples, out.psi);
    out.alpha0 = fit.alpha0;
    out.alpha1 = fit.alpha1;
    out.e_min = fit.e_min;
    out.iterations = iter;
    out.converged = converged;
    return out;
}

/// Fit with the roll forced to a given angle (no optimisation).
inline RoadModelFit fit_at_roll(std::span<const FitSample> samples, double psi) {
    const LinearFit fit = detail::fit_rotated(samples, psi);
    return {fit.alpha0, fit.alpha1, psi, fit.e_min, 0, true};
}

/// Drops samples whose residual under `fit` exceeds 3 sigma, sigma = sqrt(e_min / m).
inline std::vector<FitSample> trim_outliers(std::span<const FitSample> samples, const RoadModelFit& fit) {
    const double sigma = std::sqrt(fit.e_min / static_cast<double>(samples.size()));
    const double c = std::cos(fit.psi);
    const double s = std::sin(fit.psi);
    std::vector<FitSample> kept;
    kept.reserve(samples.size());
    for (const auto& p : samples)
        if (std::abs(p.d - fit.alpha0 - fit.alpha1 * detail::rotated_row(p, c, s)) <= 3.0 * sigma) kept.push_back(p);
    return kept;
}

/// l'(p) = l(p) - alpha0 + alpha1 (u sin psi - v cos psi) + delta_t.
/// Results below zero cannot be stored as disparities and become INVALID.
inline DisparityMap transform_disparities(const DisparityMap& disp, const RoadModelFit& fit, double delta_t) {
    DisparityMap out(disp.width(), disp.height());
    const double c = std::cos(fit.psi);
    const double s = std::sin(fit.psi);
    for (int v = 0; v < disp.height(); ++v) {
        for (int u = 0; u < disp.width(); ++u) {
            const auto d = disp.at(u, v);
            if (!d) continue;
            const double t = *d - fit.alpha0 + fit.alpha1 * (u * s - v * c) + delta_t;
            if (std::isfinite(t) && t >= 0.0) out.set(u, v, t);
        }
    }
    return out;
}

} // namespace roadstereo
