#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <roadstereo/config.hpp>
#include <roadstereo/io.hpp>
#include <roadstereo/metrics.hpp>
#include <roadstereo/pipeline.hpp>
#include <roadstereo/synthetic_scene.hpp>

namespace rs = roadstereo;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct StageFailure {
    std::string stage;
    rs::Error error;
};

template <typename F>
auto run_stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const rs::Error& e) {
        throw StageFailure{name, e};
    }
}

int exit_code_for(rs::ErrorCode code) {
    switch (code) {
    case rs::ErrorCode::MissingFile:
    case rs::ErrorCode::UnsupportedDepth:
    case rs::ErrorCode::Truncated:
    case rs::ErrorCode::WrongChannels:
    case rs::ErrorCode::SizeMismatch:
    case rs::ErrorCode::InvalidArgument:
    case rs::ErrorCode::WindowTooLarge:
    case rs::ErrorCode::BadScene:
    case rs::ErrorCode::BadConfig: return 2;
    default: return 1;
    }
}

class Report {
public:
    void add(const std::string& key, double value) { lines_.emplace_back(key, rs::format_number(value)); }
    void add(const std::string& key, long long value) { lines_.emplace_back(key, std::to_string(value)); }
    void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
    void blank() { lines_.emplace_back(); }
    void print() const {
        for (const auto& [k, v] : lines_) std::cout << (k.empty() ? "" : k + " = " + v) << '\n';
        std::cout.flush();
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : lines_) {
            if (k.empty()) continue;
            char* end = nullptr;
            const double x = std::strtod(v.c_str(), &end);
            j[k] = (!v.empty() && *end == '\0') ? nlohmann::json(x) : nlohmann::json(v);
        }
        return j;
    }

private:
    std::vector<std::pair<std::string, std::string>> lines_;
};

/// Command-line settings. Flags land in `overrides` and are applied after the
/// config file, so they always win.
struct Settings {
    std::string config_path;
    std::vector<std::string> sets;
    rs::ConfigMap overrides;

    rs::PipelineConfig resolve() const {
        rs::PipelineConfig cfg;
        if (!config_path.empty()) rs::apply_config(cfg, rs::load_config_file(config_path));
        rs::ConfigMap extra;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw rs::Error(rs::ErrorCode::BadConfig, "--set expects key=value, got '" + s + "'");
            const auto parsed = rs::parse_config_text(s, "--set");
            extra.insert(parsed.begin(), parsed.end());
        }
        for (const auto& [k, v] : overrides) extra[k] = v;
        rs::apply_config(cfg, extra);
        cfg.validate();
        return cfg;
    }
};

void add_override(CLI::App* app, Settings& s, const std::string& flag, const std::string& key,
                  const std::string& help) {
    app->add_option_function<std::string>(flag, [&s, key](const std::string& v) { s.overrides[key] = v; }, help);
}

void add_common(CLI::App* app, Settings& s) {
    app->add_option("--config", s.config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", s.sets, "extra config assignment key=value (repeatable)");
    add_override(app, s, "--workers", "workers", "worker threads, 0 = all cores");
    app->add_flag_callback("--timing", [&s] { s.overrides["timing"] = "1"; }, "print per-stage wall-clock times");
}

void add_output_format(CLI::App* app, Settings& s) {
    add_override(app, s, "--format", "output.format", "comma list of png16, pfm, csv");
}

void add_matcher_flags(CLI::App* app, Settings& s) {
    add_override(app, s, "--d-max", "matcher.d_max", "largest residual disparity");
    add_override(app, s, "--window-radius", "matcher.window_radius", "matching block radius");
    add_override(app, s, "--agg-radius", "matcher.agg_radius", "aggregation window radius");
    add_override(app, s, "--sigma0", "matcher.sigma0", "spatial bandwidth");
    add_override(app, s, "--sigma1", "matcher.sigma1", "range bandwidth");
    add_override(app, s, "--delta-r", "matcher.delta_r", "left-right threshold");
    add_override(app, s, "--warp", "perspective.warp", "integer or subpixel row warp");
}

void add_roll_flags(CLI::App* app, Settings& s) {
    add_override(app, s, "--lambda0", "roll.lambda0", "initial step size");
    add_override(app, s, "--delta-psi", "roll.delta_psi", "roll convergence threshold");
    add_override(app, s, "--max-iters", "roll.max_iters", "roll iteration cap");
    add_override(app, s, "--psi-init", "roll.psi_init", "initial roll");
    add_override(app, s, "--fixed-roll", "roll.fixed", "fit at this roll instead of estimating it");
    add_override(app, s, "--delta-t", "transform.delta_t", "target disparity of the flattened road");
    app->add_flag_callback("--trim", [&s] { s.overrides["transform.trim"] = "1"; }, "one 3-sigma trim pass");
}

void add_mask_flag(CLI::App* app, Settings& s) { add_override(app, s, "--mask", "mask", "road mask image"); }

std::optional<rs::RoadMask> load_mask(const rs::PipelineConfig& cfg) {
    if (!cfg.mask_path) return std::nullopt;
    return run_stage("load", [&] { return rs::load_road_mask(*cfg.mask_path); });
}

std::vector<fs::path> write_disparity(const rs::DisparityMap& map, const std::string& stem,
                                      const rs::PipelineConfig& cfg) {
    std::vector<fs::path> written;
    run_stage("write", [&] {
        for (const auto fmt : cfg.formats) {
            fs::path path = stem + rs::extension_for(fmt);
            rs::save_disparity(map, path, fmt);
            written.push_back(path);
        }
    });
    return written;
}

void report_outputs(Report& r, const std::string& key, const std::vector<fs::path>& paths) {
    for (const auto& p : paths) r.add(key, p.string());
}

struct MatchOutcome {
    rs::DisparityEstimate estimate;
};

MatchOutcome do_match(const std::string& ref_path, const std::string& tar_path, const rs::PipelineConfig& cfg,
                      Report& r) {
    auto t0 = Clock::now();
    const auto ref = run_stage("load", [&] { return rs::load_gray_image(ref_path); });
    const auto tar = run_stage("load", [&] { return rs::load_gray_image(tar_path); });
    run_stage("load", [&] { rs::require_same_shape(ref, tar, "reference and target images"); });
    const double load_ms = ms_since(t0);

    MatchOutcome out{run_stage("match", [&] {
        return rs::estimate_disparity(ref, tar, cfg.perspective, cfg.matcher, cfg.warp);
    })};
    const auto& est = out.estimate;
    r.add("correspondences", static_cast<long long>(est.correspondences));
    r.add("kappa0", est.model.kappa0);
    r.add("kappa1", est.model.kappa1);
    r.add("delta_p", static_cast<long long>(est.model.delta_p));
    r.add("warp", std::string(rs::to_string(cfg.warp)));
    r.add("valid_pixels", static_cast<long long>(est.disparity.valid_count()));
    if (cfg.timing) {
        r.add("time.load_ms", load_ms);
        for (const auto& t : est.timings) r.add("time." + t.stage + "_ms", t.milliseconds);
        r.add("mde_per_s", rs::mde_per_second(ref.width(), ref.height(), cfg.matcher.d_max,
                                              std::max(est.matcher_seconds, 1e-9)));
    }
    return out;
}

void report_fit(Report& r, const rs::TransformResult& res) {
    r.add("psi", res.fit.psi);
    r.add("alpha0", res.fit.alpha0);
    r.add("alpha1", res.fit.alpha1);
    r.add("e_min", res.fit.e_min);
    r.add("sigma_d", res.sigma_d);
    r.add("iterations", static_cast<long long>(res.fit.iterations));
    r.add("converged", static_cast<long long>(res.fit.converged ? 1 : 0));
    if (!res.fit.converged)
        std::cerr << "roadstereo: transform: roll did not converge; reporting the best iterate\n";
}

rs::TransformResult do_transform(const rs::DisparityMap& disp, const rs::RoadMask* mask,
                                 const rs::PipelineConfig& cfg, double psi_init) {
    return run_stage("transform", [&] {
        if (cfg.fixed_roll) {
            const auto samples = rs::collect_samples(disp, mask);
            rs::TransformResult res;
            res.fit = rs::fit_at_roll(samples, *cfg.fixed_roll);
            res.transformed = rs::transform_disparities(disp, res.fit, cfg.delta_t);
            res.sigma_d = rs::transformed_stddev(res.transformed, mask);
            return res;
        }
        rs::TransformOptions opts;
        opts.roll = cfg.roll;
        opts.roll.psi_init = psi_init;
        opts.delta_t = cfg.delta_t;
        opts.trim = cfg.trim;
        return rs::transform_road(disp, mask, opts);
    });
}

int cmd_match(const Settings& s, const std::string& ref, const std::string& tar, const std::string& out) {
    const auto cfg = run_stage("config", [&] { return s.resolve(); });
    Report r;
    const auto m = do_match(ref, tar, cfg, r);
    auto t0 = Clock::now();
    report_outputs(r, "output", write_disparity(m.estimate.disparity, out, cfg));
    if (cfg.timing) r.add("time.write_ms", ms_since(t0));
    r.print();
    return 0;
}

int cmd_transform(const Settings& s, const std::vector<std::string>& inputs, const std::vector<std::string>& outs) {
    const auto cfg = run_stage("config", [&] { return s.resolve(); });
    if (outs.size() != inputs.size())
        throw StageFailure{"config", rs::Error(rs::ErrorCode::InvalidArgument,
                                               std::to_string(inputs.size()) + " --disp inputs but " +
                                                   std::to_string(outs.size()) + " --out stems")};
    const auto mask = load_mask(cfg);
    Report r;
    double psi = cfg.roll.psi_init;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i > 0) r.blank();
        const auto disp = run_stage("load", [&] { return rs::load_disparity(inputs[i]); });
        if (mask) run_stage("load", [&] { rs::require_same_shape(disp, *mask, "disparity and mask"); });
        auto t0 = Clock::now();
        const auto res = do_transform(disp, mask ? &*mask : nullptr, cfg, psi);
        const double fit_ms = ms_since(t0);
        psi = res.fit.psi;  // consecutive frames share nearly the same roll
        r.add("input", inputs[i]);
        report_fit(r, res);
        report_outputs(r, "output", write_disparity(res.transformed, outs[i], cfg));
        if (cfg.timing) r.add("time.transform_ms", fit_ms);
    }
    r.print();
    return 0;
}

int cmd_evaluate(const Settings& s, const std::string& est_path, const std::string& gt_path, bool json) {
    const auto cfg = run_stage("config", [&] { return s.resolve(); });
    const auto est = run_stage("load", [&] { return rs::load_disparity(est_path); });
    const auto gt = run_stage("load", [&] { return rs::load_disparity(gt_path); });
    const auto mask = load_mask(cfg);
    const auto report =
        run_stage("evaluate", [&] { return rs::evaluate(est, gt, mask ? &*mask : nullptr, cfg.epsilon_d); });
    if (json)
        std::cout << rs::to_json(report).dump(2) << '\n';
    else
        std::cout << rs::to_key_value(report);
    return 0;
}

int cmd_synth(const Settings& s, const std::string& out) {
    const auto cfg = run_stage("config", [&] { return s.resolve(); });
    const auto gt = run_stage("synth", [&] { return rs::ground_truth_disparity(cfg.scene); });
    const auto pair = run_stage("synth", [&] { return rs::render_stereo_pair(cfg.scene, cfg.workers); });
    const auto mask = run_stage("synth", [&] {
        return rs::common_view_mask(cfg.scene, cfg.matcher.window_radius + cfg.matcher.agg_radius);
    });
    Report r;
    run_stage("write", [&] {
        rs::save_gray_image(pair.ref, out + "_ref.png");
        rs::save_gray_image(pair.tar, out + "_tar.png");
        rs::save_road_mask(mask, out + "_mask.png");
    });
    r.add("reference", out + "_ref.png");
    r.add("target", out + "_tar.png");
    r.add("mask", out + "_mask.png");
    report_outputs(r, "ground_truth", write_disparity(gt, out + "_gt", cfg));
    r.add("alpha0", cfg.scene.alpha0());
    r.add("alpha1", cfg.scene.alpha1());
    r.add("psi", cfg.scene.psi);
    r.print();
    return 0;
}

int cmd_pipeline(const Settings& s, const std::string& ref, const std::string& tar, const std::string& gt_path,
                 const std::string& out, bool json) {
    const auto cfg = run_stage("config", [&] { return s.resolve(); });
    const auto mask = load_mask(cfg);
    std::optional<rs::DisparityMap> gt;
    if (!gt_path.empty()) gt = run_stage("load", [&] { return rs::load_disparity(gt_path); });

    Report r;
    const auto m = do_match(ref, tar, cfg, r);
    const auto& disp = m.estimate.disparity;
    if (mask) run_stage("load", [&] { rs::require_same_shape(disp, *mask, "images and mask"); });
    report_outputs(r, "disparity", write_disparity(disp, out + "_disp", cfg));

    auto t0 = Clock::now();
    const auto res = do_transform(disp, mask ? &*mask : nullptr, cfg, cfg.roll.psi_init);
    const double fit_ms = ms_since(t0);
    report_fit(r, res);
    report_outputs(r, "transformed", write_disparity(res.transformed, out + "_transformed", cfg));
    if (cfg.timing) r.add("time.transform_ms", fit_ms);

    if (gt) {
        auto report = run_stage("evaluate", [&] {
            rs::require_same_shape(disp, *gt, "estimate and ground truth");
            return rs::evaluate(disp, *gt, mask ? &*mask : nullptr, cfg.epsilon_d);
        });
        report.sigma_d = res.sigma_d;
        if (m.estimate.matcher_seconds > 0.0)
            report.mde_per_s =
                rs::mde_per_second(disp.width(), disp.height(), cfg.matcher.d_max, m.estimate.matcher_seconds);
        if (json) {
            auto j = rs::to_json(report);
            j["run"] = r.to_json();
            std::cout << j.dump(2) << '\n';
            return 0;
        }
        r.add("e_p", report.e_p);
        r.add("e_r", report.e_r);
        r.add("m", static_cast<long long>(report.m));
        r.add("epsilon_d", report.epsilon_d);
    }
    r.print();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Road stereo: perspective-aware dense matching and roll-corrected disparity transformation"};
    app.require_subcommand(1);

    Settings s;
    std::string ref, tar, out, est, gt;
    std::vector<std::string> disps, outs;
    bool json = false;

    auto* match = app.add_subcommand("match", "estimate a disparity map from a rectified pair");
    add_common(match, s);
    add_matcher_flags(match, s);
    add_output_format(match, s);
    match->add_option("--ref", ref, "reference (left) image")->required();
    match->add_option("--tar", tar, "target (right) image")->required();
    match->add_option("--out", out, "output stem; the format extension is appended")->required();

    auto* transform = app.add_subcommand("transform", "fit the road model and flatten disparity maps");
    add_common(transform, s);
    add_roll_flags(transform, s);
    add_mask_flag(transform, s);
    add_output_format(transform, s);
    transform->add_option("--disp", disps, "disparity map (repeatable; roll is warm-started in order)")->required();
    transform->add_option("--out", outs, "output stem per input")->required();

    auto* evaluate = app.add_subcommand("evaluate", "compare an estimate with ground truth");
    add_common(evaluate, s);
    add_mask_flag(evaluate, s);
    add_override(evaluate, s, "--epsilon-d", "eval.epsilon_d", "bad-pixel threshold");
    evaluate->add_option("--est", est, "estimated disparity")->required();
    evaluate->add_option("--gt", gt, "ground-truth disparity")->required();
    evaluate->add_flag("--json", json, "print JSON instead of key = value");

    auto* synth = app.add_subcommand("synth", "render a synthetic road scene with ground truth");
    add_common(synth, s);
    add_output_format(synth, s);
    add_override(synth, s, "--seed", "scene.texture_seed", "texture seed");
    add_override(synth, s, "--psi", "scene.psi", "roll angle, radians");
    add_override(synth, s, "--theta", "scene.theta", "pitch angle, radians");
    add_override(synth, s, "--width", "scene.width", "image width");
    add_override(synth, s, "--height", "scene.height", "image height");
    add_override(synth, s, "--noise-sigma", "scene.noise_sigma", "Gaussian intensity noise");
    add_override(synth, s, "--defects", "scene.defects", "'u v radius offset; ...'");
    synth->add_option("--out", out, "output stem")->required();

    auto* pipeline = app.add_subcommand("pipeline", "match, transform and optionally evaluate in one run");
    add_common(pipeline, s);
    add_matcher_flags(pipeline, s);
    add_roll_flags(pipeline, s);
    add_mask_flag(pipeline, s);
    add_output_format(pipeline, s);
    add_override(pipeline, s, "--epsilon-d", "eval.epsilon_d", "bad-pixel threshold");
    pipeline->add_option("--ref", ref, "reference (left) image")->required();
    pipeline->add_option("--tar", tar, "target (right) image")->required();
    pipeline->add_option("--gt", gt, "ground-truth disparity to evaluate against");
    pipeline->add_option("--out", out, "output stem")->required();
    pipeline->add_flag("--json", json, "print the evaluation as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*match) return cmd_match(s, ref, tar, out);
        if (*transform) return cmd_transform(s, disps, outs);
        if (*evaluate) return cmd_evaluate(s, est, gt, json);
        if (*synth) return cmd_synth(s, out);
        if (*pipeline) return cmd_pipeline(s, ref, tar, gt, out, json);
    } catch (const StageFailure& f) {
        std::cerr << "roadstereo: " << f.stage << ": " << f.error.what() << '\n';
        return exit_code_for(f.error.code());
    } catch (const std::exception& e) {
        std::cerr << "roadstereo: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
