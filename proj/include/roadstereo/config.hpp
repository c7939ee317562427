#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "disparity_transform.hpp"
#include "error.hpp"
#include "io.hpp"
#include "matcher.hpp"
#include "perspective.hpp"
#include "synthetic_scene.hpp"

namespace roadstereo {

/// Flat key = value settings; later assignments of a key replace earlier ones.
using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

} // namespace detail

/// Parses "key = value" lines. '#' starts a comment; blank lines are ignored.
inline ConfigMap parse_config_text(std::string_view text, const std::string& origin = "config") {
    ConfigMap out;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(line_no);
        if (eq == std::string_view::npos) throw Error(ErrorCode::BadConfig, where + ": expected 'key = value'");
        const auto key = detail::trim(line.substr(0, eq));
        if (key.empty()) throw Error(ErrorCode::BadConfig, where + ": empty key");
        out[std::string(key)] = std::string(detail::trim(line.substr(eq + 1)));
    }
    return out;
}

inline ConfigMap load_config_file(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    return parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                             path.string());
}

/// Every setting the command-line tool understands.
struct PipelineConfig {
    MatcherParams matcher;
    CorrespondenceParams perspective;
    WarpMode warp = WarpMode::Subpixel;
    RollOptions roll;
    std::optional<double> fixed_roll;  ///< skip roll estimation and fit at this angle
    double delta_t = 30.0;
    bool trim = false;
    double epsilon_d = 2.0;
    std::optional<std::string> mask_path;
    std::vector<DisparityFormat> formats{DisparityFormat::Pfm};
    SceneSpec scene;
    bool timing = false;
    unsigned workers = 0;

    void validate() const {
        matcher.validate();
        roll.validate();
        scene.validate();
        if (!std::isfinite(delta_t)) throw Error(ErrorCode::BadConfig, "transform.delta_t must be finite");
        if (!(epsilon_d >= 0.0)) throw Error(ErrorCode::BadConfig, "eval.epsilon_d must be >= 0");
        if (formats.empty()) throw Error(ErrorCode::BadConfig, "output.format lists no format");
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& text) {
    double value = 0.0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value))
        throw Error(ErrorCode::BadConfig, key + ": '" + text + "' is not a finite number");
    return value;
}

template <typename Int>
Int parse_integer(const std::string& key, const std::string& text) {
    Int value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw Error(ErrorCode::BadConfig, key + ": '" + text + "' is not an integer");
    return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
    if (text == "0" || text == "false" || text == "no" || text == "off") return false;
    throw Error(ErrorCode::BadConfig, key + ": '" + text + "' is not a boolean");
}

/// "u v radius offset; u v radius offset; ..."
inline std::vector<Defect> parse_defects(const std::string& key, const std::string& text) {
    std::vector<Defect> out;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
        if (trim(item).empty()) continue;
        std::istringstream in{std::string(trim(item))};
        std::string a, b, c, d, extra;
        if (!(in >> a >> b >> c >> d) || (in >> extra))
            throw Error(ErrorCode::BadConfig, key + ": defect '" + item + "' needs 'u v radius offset'");
        out.push_back({{parse_integer<int>(key, a), parse_integer<int>(key, b)}, parse_double(key, c),
                       parse_double(key, d)});
    }
    return out;
}

inline std::vector<DisparityFormat> parse_formats(const std::string& key, const std::string& text) {
    std::vector<DisparityFormat> out;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ',')) {
        const auto name = trim(item);
        if (name.empty()) continue;
        try {
            out.push_back(parse_disparity_format(name));
        } catch (const Error& e) {
            throw Error(ErrorCode::BadConfig, key + ": " + e.what());
        }
    }
    return out;
}

} // namespace detail

/// Applies settings on top of `cfg`. Unknown keys are rejected.
inline void apply_config(PipelineConfig& cfg, const ConfigMap& values) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_integer;
    for (const auto& [key, text] : values) {
        const auto& k = key;
        if (k == "matcher.window_radius") cfg.matcher.window_radius = parse_integer<int>(k, text);
        else if (k == "matcher.agg_radius") cfg.matcher.agg_radius = parse_integer<int>(k, text);
        else if (k == "matcher.d_max") cfg.matcher.d_max = parse_integer<int>(k, text);
        else if (k == "matcher.sigma0") cfg.matcher.sigma0 = parse_double(k, text);
        else if (k == "matcher.sigma1") cfg.matcher.sigma1 = parse_double(k, text);
        else if (k == "matcher.delta_r") cfg.matcher.delta_r = parse_double(k, text);
        else if (k == "perspective.window") cfg.perspective.window = parse_integer<int>(k, text);
        else if (k == "perspective.max_shift") cfg.perspective.max_shift = parse_integer<int>(k, text);
        else if (k == "perspective.response_threshold") cfg.perspective.response_threshold = parse_double(k, text);
        else if (k == "perspective.stride") cfg.perspective.stride = parse_integer<int>(k, text);
        else if (k == "perspective.min_correlation") cfg.perspective.min_correlation = parse_double(k, text);
        else if (k == "perspective.warp") {
            try {
                cfg.warp = parse_warp_mode(text);
            } catch (const Error& e) {
                throw Error(ErrorCode::BadConfig, k + ": " + e.what());
            }
        }
        else if (k == "roll.lambda0") cfg.roll.lambda0 = parse_double(k, text);
        else if (k == "roll.delta_psi") cfg.roll.delta_psi = parse_double(k, text);
        else if (k == "roll.max_iters") cfg.roll.max_iters = parse_integer<int>(k, text);
        else if (k == "roll.psi_init") cfg.roll.psi_init = parse_double(k, text);
        else if (k == "roll.fixed") cfg.fixed_roll = text.empty() ? std::nullopt : std::optional(parse_double(k, text));
        else if (k == "transform.delta_t") cfg.delta_t = parse_double(k, text);
        else if (k == "transform.trim") cfg.trim = parse_bool(k, text);
        else if (k == "eval.epsilon_d") cfg.epsilon_d = parse_double(k, text);
        else if (k == "mask") cfg.mask_path = text.empty() ? std::nullopt : std::optional(text);
        else if (k == "output.format") cfg.formats = detail::parse_formats(k, text);
        else if (k == "timing") cfg.timing = parse_bool(k, text);
        else if (k == "workers") cfg.workers = parse_integer<unsigned>(k, text);
        else if (k == "scene.width") cfg.scene.width = parse_integer<int>(k, text);
        else if (k == "scene.height") cfg.scene.height = parse_integer<int>(k, text);
        else if (k == "scene.f") cfg.scene.f = parse_double(k, text);
        else if (k == "scene.u_o") cfg.scene.u_o = parse_double(k, text);
        else if (k == "scene.v_o") cfg.scene.v_o = parse_double(k, text);
        else if (k == "scene.t_c") cfg.scene.t_c = parse_double(k, text);
        else if (k == "scene.beta") cfg.scene.beta = parse_double(k, text);
        else if (k == "scene.n_x") cfg.scene.n_x = parse_double(k, text);
        else if (k == "scene.theta") cfg.scene.theta = parse_double(k, text);
        else if (k == "scene.psi") cfg.scene.psi = parse_double(k, text);
        else if (k == "scene.texture_seed") cfg.scene.texture_seed = parse_integer<std::uint64_t>(k, text);
        else if (k == "scene.noise_sigma") cfg.scene.noise_sigma = parse_double(k, text);
        else if (k == "scene.defects") cfg.scene.defects = detail::parse_defects(k, text);
        else throw Error(ErrorCode::BadConfig, "unknown key '" + k + "'");
    }
    cfg.matcher.workers = cfg.workers;
    cfg.perspective.workers = cfg.workers;
}

} // namespace roadstereo
