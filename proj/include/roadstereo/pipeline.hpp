#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "disparity_transform.hpp"
#include "image.hpp"
#include "matcher.hpp"
#include "metrics.hpp"
#include "perspective.hpp"

namespace roadstereo {

struct StageTiming {
    std::string stage;
    double milliseconds = 0.0;
};

struct DisparityEstimate {
    GroundPlaneShiftModel model;
    std::size_t correspondences = 0;
    DisparityMap disparity;
    std::vector<StageTiming> timings;
    double matcher_seconds = 0.0;
};

/// Perspective transformation, dense matching and shift restoration.
inline DisparityEstimate estimate_disparity(const GrayImage& ref, const GrayImage& tar,
                                            const CorrespondenceParams& corr, const MatcherParams& params,
                                            WarpMode warp = WarpMode::Subpixel) {
    require_same_shape(ref, tar, "reference and target images");
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    DisparityEstimate out;
    auto t0 = clock::now();
    const auto matches = find_sparse_correspondences(ref, tar, corr);
    out.correspondences = matches.size();
    out.model = fit_row_shift_model(matches, ref.height());
    const GrayImage warped = warp_target(tar, out.model, warp);
    out.timings.push_back({"perspective", ms_since(t0)});

    t0 = clock::now();
    MatchResult res = match_warped(ref, warped, out.model, params, warp);
    const double match_ms = ms_since(t0);
    out.timings.push_back({"matcher", match_ms});
    out.matcher_seconds = match_ms / 1000.0;
    out.disparity = std::move(res.disparity);
    return out;
}

struct TransformOptions {
    RollOptions roll;
    double delta_t = 30.0;
    bool trim = false;  ///< one 3-sigma trim pass before the final fit
};

struct TransformResult {
    RoadModelFit fit;
    DisparityMap transformed;
    double sigma_d = 0.0;
};

/// Fits the road model on the masked samples, then flattens every valid pixel.
/// sigma_d is measured over the masked transformed pixels.
inline TransformResult transform_road(const DisparityMap& disp, const RoadMask* mask, const TransformOptions& opts) {
    auto samples = collect_samples(disp, mask);
    TransformResult out;
    out.fit = estimate_roll(samples, opts.roll);
    if (opts.trim) {
        auto kept = trim_outliers(samples, out.fit);
        if (kept.size() >= 2 && kept.size() < samples.size()) {
            RollOptions warm = opts.roll;
            warm.psi_init = out.fit.psi;
            out.fit = estimate_roll(kept, warm);
        }
    }
    out.transformed = transform_disparities(disp, out.fit, opts.delta_t);
    out.sigma_d = transformed_stddev(out.transformed, mask);
    return out;
}

} // namespace roadstereo
