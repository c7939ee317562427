#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace roadstereo {

struct EvalReport {
    double e_p = 0.0;        ///< percentage of pixels with |error| > epsilon_d
    double e_r = 0.0;        ///< RMSE, pixels
    std::size_t m = 0;       ///< number of evaluated pixels
    double epsilon_d = 2.0;
    std::optional<double> sigma_d;
    std::optional<double> mde_per_s;
};

/// Formats with 6 significant digits and '.' as decimal separator.
inline std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", value);
    std::string s(buf);
    for (char& c : s)
        if (c == ',') c = '.';
    return s;
}

namespace detail {

/// Signed errors est - gt over pixels valid in both maps (and inside the mask).
inline std::vector<double> joint_errors(const DisparityMap& est, const DisparityMap& gt, const RoadMask* mask) {
    require_same_shape(est, gt, "evaluation");
    if (mask) require_same_shape(est, *mask, "evaluation mask");
    std::vector<double> errors;
    for (int v = 0; v < est.height(); ++v)
        for (int u = 0; u < est.width(); ++u)
            if (est.valid(u, v) && gt.valid(u, v) && (!mask || (*mask)(u, v)))
                errors.push_back(est.raw(u, v) - gt.raw(u, v));
    if (errors.empty()) throw Error(ErrorCode::NoSamples, "no pixels are valid in both maps");
    return errors;
}

} // namespace detail

/// 100 * fraction of jointly valid pixels whose absolute error strictly exceeds epsilon_d.
inline double error_percentage(const DisparityMap& est, const DisparityMap& gt, const RoadMask* mask,
                               double epsilon_d) {
    const auto errors = detail::joint_errors(est, gt, mask);
    std::size_t bad = 0;
    for (double e : errors) bad += std::abs(e) > epsilon_d ? 1 : 0;
    return 100.0 * static_cast<double>(bad) / static_cast<double>(errors.size());
}

inline double rmse(const DisparityMap& est, const DisparityMap& gt, const RoadMask* mask = nullptr) {
    const auto errors = detail::joint_errors(est, gt, mask);
    double acc = 0.0;
    for (double e : errors) acc += e * e;
    return std::sqrt(acc / static_cast<double>(errors.size()));
}

/// Millions of disparity evaluations per second: width * height * d_max / t * 1e-6.
inline double mde_per_second(int width, int height, int d_max, double seconds) {
    if (!(seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "elapsed time must be > 0");
    return static_cast<double>(width) * height * d_max / seconds * 1e-6;
}

/// Population standard deviation of the valid (masked) values.
inline double transformed_stddev(const DisparityMap& disp_t, const RoadMask* mask = nullptr) {
    if (mask) require_same_shape(disp_t, *mask, "transformed_stddev");
    double sum = 0.0;
    std::size_t m = 0;
    for (int v = 0; v < disp_t.height(); ++v)
        for (int u = 0; u < disp_t.width(); ++u)
            if (disp_t.valid(u, v) && (!mask || (*mask)(u, v))) {
                sum += disp_t.raw(u, v);
                ++m;
            }
    if (m == 0) throw Error(ErrorCode::NoSamples, "no valid transformed disparities selected");
    const double mean = sum / static_cast<double>(m);
    double acc = 0.0;
    for (int v = 0; v < disp_t.height(); ++v)
        for (int u = 0; u < disp_t.width(); ++u)
            if (disp_t.valid(u, v) && (!mask || (*mask)(u, v))) {
                const double dev = disp_t.raw(u, v) - mean;
                acc += dev * dev;
            }
    return std::sqrt(acc / static_cast<double>(m));
}

inline EvalReport evaluate(const DisparityMap& est, const DisparityMap& gt, const RoadMask* mask, double epsilon_d) {
    EvalReport report;
    report.epsilon_d = epsilon_d;
    report.m = detail::joint_errors(est, gt, mask).size();
    report.e_p = error_percentage(est, gt, mask, epsilon_d);
    report.e_r = rmse(est, gt, mask);
    return report;
}

inline std::string to_key_value(const EvalReport& r) {
    std::string out;
    out += "e_p = " + format_number(r.e_p) + "\n";
    out += "e_r = " + format_number(r.e_r) + "\n";
    out += "m = " + std::to_string(r.m) + "\n";
    out += "epsilon_d = " + format_number(r.epsilon_d) + "\n";
    if (r.sigma_d) out += "sigma_d = " + format_number(*r.sigma_d) + "\n";
    if (r.mde_per_s) out += "mde_per_s = " + format_number(*r.mde_per_s) + "\n";
    return out;
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["e_p"] = r.e_p;
    j["e_r"] = r.e_r;
    j["m"] = r.m;
    j["epsilon_d"] = r.epsilon_d;
    j["sigma_d"] = r.sigma_d ? nlohmann::json(*r.sigma_d) : nlohmann::json(nullptr);
    j["mde_per_s"] = r.mde_per_s ? nlohmann::json(*r.mde_per_s) : nlohmann::json(nullptr);
    return j;
}

} // namespace roadstereo
