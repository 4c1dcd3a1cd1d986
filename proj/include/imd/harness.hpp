#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "imd/imd_engine.hpp"
#include "imd/mask.hpp"
#include "imd/occlusion.hpp"
#include "imd/pgm.hpp"
#include "imd/rng.hpp"
#include "imd/segmenter.hpp"
#include "imd/shape_world.hpp"
#include "imd/toy_diffusion.hpp"
#include "imd/voting.hpp"

namespace imd {

// Reproducible experiment runner: benchmark construction, sweeps mirroring
// the ablation axes, toy-diffusion training, and CSV/PGM/JSON artifacts.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class SweepAxis { steps, samples, occlusion_rate, noise_degree, voting, mask_type };

inline const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::steps: return "steps";
        case SweepAxis::samples: return "samples";
        case SweepAxis::occlusion_rate: return "occlusion_rate";
        case SweepAxis::noise_degree: return "noise_degree";
        case SweepAxis::voting: return "voting";
        case SweepAxis::mask_type: return "mask_type";
    }
    return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "steps") return SweepAxis::steps;
    if (s == "samples") return SweepAxis::samples;
    if (s == "occlusion_rate") return SweepAxis::occlusion_rate;
    if (s == "noise_degree") return SweepAxis::noise_degree;
    if (s == "voting") return SweepAxis::voting;
    if (s == "mask_type") return SweepAxis::mask_type;
    throw ConfigError("unknown sweep axis: " + s);
}

struct ExperimentConfig {
    WorldParams world;
    SceneOcclusion occlusion;    // defaults: rectangle tuned to 40% +- 2%
    OracleParams oracle;
    double seg_theta = 0.4;
    double seg_noise = 0.0;      // area fraction for the noisy wrapper
    IMDConfig imd;               // root_seed mirrors `seed`
    SweepAxis axis = SweepAxis::steps;
    nlohmann::json sweep_values = nlohmann::json::array({1, 3, 5, 7});
    int scene_count = 50;
    std::uint64_t seed = 7;

    SegmenterKind segmenter() const {
        SegmenterKind base = SegmenterKind::thresholded(seg_theta);
        if (seg_noise > 0.0) return SegmenterKind::noisy(seg_noise, std::move(base));
        return base;
    }
};

// ---------------------------------------------------------------------------
// Config parsing (strict: unknown keys are errors)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& scope) {
    if (!j.is_object()) throw ConfigError("config: " + scope + " must be an object");
    for (const auto& item : j.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw ConfigError("config: unknown key '" + item.key() + "' in " + scope);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"version", "world", "occlusion", "oracle", "segmenter", "imd",
                           "sweep", "scenes", "seed"},
                       "top level");
    if (!j.contains("version")) throw ConfigError("config: missing 'version'");
    if (j.at("version").get<int>() != 1) throw ConfigError("config: unsupported version");

    ExperimentConfig cfg;
    if (j.contains("world")) {
        const auto& w = j.at("world");
        detail::check_keys(w, {"width", "height", "k_min", "k_max", "scale_lo", "scale_hi",
                               "appearance_lo", "appearance_hi"},
                           "world");
        cfg.world.width = detail::get_or(w, "width", cfg.world.width);
        cfg.world.height = detail::get_or(w, "height", cfg.world.height);
        cfg.world.k_min = detail::get_or(w, "k_min", cfg.world.k_min);
        cfg.world.k_max = detail::get_or(w, "k_max", cfg.world.k_max);
        cfg.world.scale_lo = detail::get_or(w, "scale_lo", cfg.world.scale_lo);
        cfg.world.scale_hi = detail::get_or(w, "scale_hi", cfg.world.scale_hi);
        cfg.world.appearance_lo = detail::get_or(w, "appearance_lo", cfg.world.appearance_lo);
        cfg.world.appearance_hi = detail::get_or(w, "appearance_hi", cfg.world.appearance_hi);
    }
    if (j.contains("occlusion")) {
        const auto& o = j.at("occlusion");
        detail::check_keys(o, {"kind", "ratio_lo", "ratio_hi", "shift_lo", "shift_hi",
                               "target_rate", "rate_tol"},
                           "occlusion");
        const std::string kind = detail::get_or<std::string>(o, "kind", "rectangle");
        if (kind == "rectangle") cfg.occlusion.spec.kind = OcclusionKind::rectangle;
        else if (kind == "shift") cfg.occlusion.spec.kind = OcclusionKind::shift;
        else if (kind == "oval") cfg.occlusion.spec.kind = OcclusionKind::oval;
        else if (kind == "object") cfg.occlusion.spec.kind = OcclusionKind::object;
        else throw ConfigError("config: unknown occlusion kind: " + kind);
        cfg.occlusion.spec.ratio_lo = detail::get_or(o, "ratio_lo", cfg.occlusion.spec.ratio_lo);
        cfg.occlusion.spec.ratio_hi = detail::get_or(o, "ratio_hi", cfg.occlusion.spec.ratio_hi);
        cfg.occlusion.spec.shift_lo = detail::get_or(o, "shift_lo", cfg.occlusion.spec.shift_lo);
        cfg.occlusion.spec.shift_hi = detail::get_or(o, "shift_hi", cfg.occlusion.spec.shift_hi);
        cfg.occlusion.target_rate = detail::get_or(o, "target_rate", cfg.occlusion.target_rate);
        cfg.occlusion.rate_tol = detail::get_or(o, "rate_tol", cfg.occlusion.rate_tol);
    }
    if (j.contains("oracle")) {
        const auto& o = j.at("oracle");
        detail::check_keys(o, {"fidelity_beta", "boundary_sigma", "artifact_gain"}, "oracle");
        cfg.oracle.fidelity_beta = detail::get_or(o, "fidelity_beta", cfg.oracle.fidelity_beta);
        cfg.oracle.boundary_sigma = detail::get_or(o, "boundary_sigma", cfg.oracle.boundary_sigma);
        cfg.oracle.artifact_gain = detail::get_or(o, "artifact_gain", cfg.oracle.artifact_gain);
    }
    if (j.contains("segmenter")) {
        const auto& s = j.at("segmenter");
        detail::check_keys(s, {"theta", "noise"}, "segmenter");
        cfg.seg_theta = detail::get_or(s, "theta", cfg.seg_theta);
        cfg.seg_noise = detail::get_or(s, "noise", cfg.seg_noise);
    }
    if (j.contains("imd")) {
        const auto& i = j.at("imd");
        detail::check_keys(i, {"steps", "samples", "strategy", "tau", "convergence_eps"}, "imd");
        cfg.imd.steps_T = detail::get_or(i, "steps", cfg.imd.steps_T);
        cfg.imd.samples_N = detail::get_or(i, "samples", cfg.imd.samples_N);
        cfg.imd.strategy.kind =
            voting_kind_from_string(detail::get_or<std::string>(i, "strategy", "logits_vote"));
        cfg.imd.strategy.tau = detail::get_or(i, "tau", cfg.imd.strategy.tau);
        cfg.imd.convergence_eps = detail::get_or(i, "convergence_eps", cfg.imd.convergence_eps);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::check_keys(s, {"axis", "values"}, "sweep");
        cfg.axis = sweep_axis_from_string(detail::get_or<std::string>(s, "axis", "steps"));
        if (s.contains("values")) {
            if (!s.at("values").is_array() || s.at("values").empty())
                throw ConfigError("config: sweep.values must be a nonempty array");
            cfg.sweep_values = s.at("values");
        } else if (cfg.axis == SweepAxis::mask_type) {
            cfg.sweep_values = nlohmann::json::array({"partial", "intermediate", "complete"});
        }
    }
    cfg.scene_count = detail::get_or(j, "scenes", cfg.scene_count);
    if (cfg.scene_count < 1) throw ConfigError("config: scenes must be >= 1");
    cfg.seed = detail::get_or(j, "seed", cfg.seed);
    cfg.imd.root_seed = cfg.seed;
    try {
        cfg.imd.validate();
        cfg.oracle.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    return nlohmann::json{
        {"version", 1},
        {"world",
         {{"width", cfg.world.width},
          {"height", cfg.world.height},
          {"k_min", cfg.world.k_min},
          {"k_max", cfg.world.k_max},
          {"scale_lo", cfg.world.scale_lo},
          {"scale_hi", cfg.world.scale_hi},
          {"appearance_lo", cfg.world.appearance_lo},
          {"appearance_hi", cfg.world.appearance_hi}}},
        {"occlusion",
         {{"kind", to_string(cfg.occlusion.spec.kind)},
          {"ratio_lo", cfg.occlusion.spec.ratio_lo},
          {"ratio_hi", cfg.occlusion.spec.ratio_hi},
          {"shift_lo", cfg.occlusion.spec.shift_lo},
          {"shift_hi", cfg.occlusion.spec.shift_hi},
          {"target_rate", cfg.occlusion.target_rate},
          {"rate_tol", cfg.occlusion.rate_tol}}},
        {"oracle",
         {{"fidelity_beta", cfg.oracle.fidelity_beta},
          {"boundary_sigma", cfg.oracle.boundary_sigma},
          {"artifact_gain", cfg.oracle.artifact_gain}}},
        {"segmenter", {{"theta", cfg.seg_theta}, {"noise", cfg.seg_noise}}},
        {"imd",
         {{"steps", cfg.imd.steps_T},
          {"samples", cfg.imd.samples_N},
          {"strategy", to_string(cfg.imd.strategy.kind)},
          {"tau", cfg.imd.strategy.tau},
          {"convergence_eps", cfg.imd.convergence_eps}}},
        {"sweep", {{"axis", to_string(cfg.axis)}, {"values", cfg.sweep_values}}},
        {"scenes", cfg.scene_count},
        {"seed", cfg.seed}};
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

// Seeding scheme (documented contract):
//   scene_seed(i)  = seed_derive(config.seed, i, 0xFFFF)
//   run root       = seed_derive(scene_seed(i), 10, 0), shared across sweep
//                    values so per-scene comparisons are paired.
inline std::uint64_t scene_seed(std::uint64_t root, int scene_index) {
    return seed_derive(root, static_cast<std::uint32_t>(scene_index), 0xFFFFu);
}

inline std::uint64_t scene_run_root(std::uint64_t scene_seed_value) {
    return seed_derive(scene_seed_value, 10, 0);
}

inline std::vector<Scene> build_benchmark(const ExperimentConfig& cfg) {
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.scene_count));
    for (int i = 0; i < cfg.scene_count; ++i)
        scenes.push_back(build_scene(scene_seed(cfg.seed, i), cfg.world, cfg.occlusion));
    return scenes;
}

inline void write_benchmark_json(const std::vector<Scene>& scenes, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scenes) arr.push_back(scene_to_json(s));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << nlohmann::json{{"scenes", arr}}.dump(2) << "\n";
}

// Per-pixel mean over n segmented oracle samples conditioned on the scene's
// partial mask: the ensemble probability map of the segmentation stage.
inline ProbMask oracle_mean_prob(const Scene& scene, const OracleParams& params,
                                 const SegmenterKind& seg, int n_samples, std::uint64_t seed) {
    const GrayImage partial_image = realize_image(scene.partial_mask, scene.appearance);
    std::vector<BinaryMask> masks;
    masks.reserve(static_cast<std::size_t>(n_samples));
    for (int k = 0; k < n_samples; ++k) {
        Rng rng(seed_derive(seed, 11, static_cast<std::uint32_t>(k)));
        const GrayImage img =
            oracle_generate(scene, partial_image, scene.partial_mask, scene.partial_mask, params, rng);
        masks.push_back(segment(img, scene.partial_mask, seg, rng).mask);
    }
    return mean_masks(masks);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

// Reported convergence: first step whose fused mask repeats the previous one
// at IoU >= this threshold.
inline constexpr double kConvergenceDetectIou = 0.97;

struct SweepRow {
    std::string axis_value;
    int scene_id = 0;
    double final_iou = 0.0;
    int conv_step = 0;
    int steps_run = 0;
};

struct SweepValueStats {
    std::string axis_value;
    double mean_final_iou = 0.0;
    double stddev_final_iou = 0.0;
    double mean_conv_step = 0.0;
    int scenes = 0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::vector<SweepValueStats> stats;
};

namespace detail {

inline std::string sweep_value_label(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) {
        std::ostringstream oss;
        oss << v.get<double>();
        return oss.str();
    }
    throw ConfigError("config: sweep value must be a number or string");
}

inline std::optional<std::vector<SweepRow>> load_value_csv(const std::string& path,
                                                           const std::string& label,
                                                           int expected_rows) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line) || line != "axis_value,scene_id,final_iou,conv_step,steps_run")
        return std::nullopt;
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        SweepRow row;
        std::string field;
        try {
            if (!std::getline(ss, row.axis_value, ',')) return std::nullopt;
            if (!std::getline(ss, field, ',')) return std::nullopt;
            row.scene_id = std::stoi(field);
            if (!std::getline(ss, field, ',')) return std::nullopt;
            row.final_iou = std::stod(field);
            if (!std::getline(ss, field, ',')) return std::nullopt;
            row.conv_step = std::stoi(field);
            if (!std::getline(ss, field)) return std::nullopt;
            row.steps_run = std::stoi(field);
        } catch (const std::exception&) {
            return std::nullopt;
        }
        if (row.axis_value != label) return std::nullopt;
        rows.push_back(row);
    }
    if (static_cast<int>(rows.size()) != expected_rows) return std::nullopt;
    return rows;
}

inline void write_value_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "axis_value,scene_id,final_iou,conv_step,steps_run\n";
    for (const auto& r : rows)
        out << r.axis_value << "," << r.scene_id << "," << fmt_double(r.final_iou) << ","
            << r.conv_step << "," << r.steps_run << "\n";
}

}  // namespace detail

// Runs the configured sweep. Writes one value_<label>.csv per sweep value
// (existing complete files are reused, which makes sweeps resumable and
// idempotent per value), then the merged sweep.csv, summary.json and
// config.echo.json under out_dir.
inline SweepReport run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                             bool quiet = true) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const std::vector<Scene> base_scenes =
        cfg.axis == SweepAxis::occlusion_rate || cfg.axis == SweepAxis::mask_type
            ? std::vector<Scene>{}
            : build_benchmark(cfg);

    // mask_type runs condition the first step on masks from a double
    // occlusion, so all three conditions describe the same visible evidence.
    std::vector<Scene> dbl_scenes;
    std::vector<BinaryMask> dbl_intermediate;
    if (cfg.axis == SweepAxis::mask_type) {
        for (int i = 0; i < cfg.scene_count; ++i) {
            const std::uint64_t sseed = scene_seed(cfg.seed, i);
            for (int attempt = 0;; ++attempt) {
                if (attempt >= 32)
                    throw std::runtime_error("mask_type sweep: no usable double occlusion");
                SceneOcclusion no_target = cfg.occlusion;
                no_target.target_rate = 0.0;  // use the raw occlusion spec
                Scene scene = build_scene(sseed, cfg.world, no_target);
                Rng docc(seed_derive(sseed, 4, static_cast<std::uint32_t>(attempt)));
                const DoubleOcclusion d = double_occlude(scene.complete_mask, cfg.occlusion.spec, docc);
                if (d.partial.empty_fg()) continue;
                scene.partial_mask = d.partial;
                scene.occluder = mask_difference(scene.complete_mask, d.partial);
                dbl_scenes.push_back(std::move(scene));
                dbl_intermediate.push_back(d.intermediate);
                break;
            }
        }
    }

    SweepReport report;
    for (const auto& value : cfg.sweep_values) {
        const std::string label = detail::sweep_value_label(value);
        const std::string value_path = (fs::path(out_dir) / ("value_" + label + ".csv")).string();
        if (auto cached = detail::load_value_csv(value_path, label, cfg.scene_count)) {
            if (!quiet) std::cout << "sweep: reusing " << value_path << "\n";
            report.rows.insert(report.rows.end(), cached->begin(), cached->end());
            continue;
        }

        ExperimentConfig vcfg = cfg;
        const std::vector<Scene>* scenes = &base_scenes;
        std::vector<Scene> rate_scenes;
        switch (cfg.axis) {
            case SweepAxis::steps:
                vcfg.imd.steps_T = value.get<int>();
                break;
            case SweepAxis::samples:
                vcfg.imd.samples_N = value.get<int>();
                break;
            case SweepAxis::occlusion_rate: {
                // Values are percentages, as in the ablation table.
                vcfg.occlusion.target_rate = value.get<double>() / 100.0;
                rate_scenes = build_benchmark(vcfg);
                scenes = &rate_scenes;
                break;
            }
            case SweepAxis::noise_degree:
                vcfg.seg_noise = value.get<double>() / 100.0;
                break;
            case SweepAxis::voting:
                vcfg.imd.strategy.kind = voting_kind_from_string(value.get<std::string>());
                break;
            case SweepAxis::mask_type:
                scenes = &dbl_scenes;
                break;
        }

        std::vector<SweepRow> rows;
        for (int i = 0; i < static_cast<int>(scenes->size()); ++i) {
            const Scene& scene = (*scenes)[static_cast<std::size_t>(i)];
            IMDConfig run_cfg = vcfg.imd;
            run_cfg.root_seed = scene_run_root(scene_seed(cfg.seed, i));
            const Generator gen = make_oracle_generator(scene, vcfg.oracle);

            const BinaryMask* initial = nullptr;
            if (cfg.axis == SweepAxis::mask_type) {
                if (label == "intermediate") initial = &dbl_intermediate[static_cast<std::size_t>(i)];
                else if (label == "complete") initial = &scene.complete_mask;
                else if (label != "partial")
                    throw ConfigError("mask_type sweep value must be partial/intermediate/complete");
            }

            const IMDTrace trace = run_imd(scene, gen, vcfg.segmenter(), run_cfg, initial);
            SweepRow row;
            row.axis_value = label;
            row.scene_id = i;
            row.final_iou = trace.steps.back().fused_iou_truth;
            row.conv_step = convergence_step(trace, kConvergenceDetectIou);
            row.steps_run = static_cast<int>(trace.steps.size());
            rows.push_back(row);
        }
        detail::write_value_csv(value_path, rows);
        if (!quiet) std::cout << "sweep: wrote " << value_path << "\n";
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }

    // Aggregate by value, in configured order.
    for (const auto& value : cfg.sweep_values) {
        const std::string label = detail::sweep_value_label(value);
        SweepValueStats st;
        st.axis_value = label;
        std::vector<double> ious;
        double conv_acc = 0.0;
        for (const auto& r : report.rows)
            if (r.axis_value == label) {
                ious.push_back(r.final_iou);
                conv_acc += r.conv_step;
            }
        st.scenes = static_cast<int>(ious.size());
        if (st.scenes > 0) {
            double mean = 0.0;
            for (double v : ious) mean += v;
            mean /= st.scenes;
            double var = 0.0;
            for (double v : ious) var += (v - mean) * (v - mean);
            st.mean_final_iou = mean;
            st.stddev_final_iou = std::sqrt(var / st.scenes);
            st.mean_conv_step = conv_acc / st.scenes;
        }
        report.stats.push_back(st);
    }

    std::ofstream csv(fs::path(out_dir) / "sweep.csv");
    if (!csv) throw std::runtime_error("cannot write sweep.csv");
    csv << "axis_value,scene_id,final_iou,conv_step,steps_run\n";
    for (const auto& r : report.rows)
        csv << r.axis_value << "," << r.scene_id << "," << detail::fmt_double(r.final_iou) << ","
            << r.conv_step << "," << r.steps_run << "\n";
    csv.close();

    nlohmann::json jstats = nlohmann::json::array();
    for (const auto& st : report.stats)
        jstats.push_back({{"axis_value", st.axis_value},
                          {"mean_final_iou", st.mean_final_iou},
                          {"stddev_final_iou", st.stddev_final_iou},
                          {"mean_conv_step", st.mean_conv_step},
                          {"scenes", st.scenes}});
    std::ofstream js(fs::path(out_dir) / "summary.json");
    js << nlohmann::json{{"axis", to_string(cfg.axis)}, {"values", jstats}}.dump(2) << "\n";

    std::ofstream echo(fs::path(out_dir) / "config.echo.json");
    echo << config_to_json(cfg).dump(2) << "\n";
    return report;
}

// Single-scene run with full trace artifacts.
inline IMDTrace run_single(const ExperimentConfig& cfg, const std::string& out_dir,
                           bool quiet = true) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const Scene scene = build_scene(scene_seed(cfg.seed, 0), cfg.world, cfg.occlusion);
    IMDConfig run_cfg = cfg.imd;
    run_cfg.root_seed = scene_run_root(scene_seed(cfg.seed, 0));
    const Generator gen = make_oracle_generator(scene, cfg.oracle);
    const IMDTrace trace = run_imd(scene, gen, cfg.segmenter(), run_cfg);

    write_trace(trace, run_cfg, out_dir);
    write_pgm((fs::path(out_dir) / "partial.pgm").string(), scene.partial_mask);
    write_pgm((fs::path(out_dir) / "complete.pgm").string(), scene.complete_mask);
    write_benchmark_json({scene}, (fs::path(out_dir) / "scenes.json").string());
    std::ofstream echo(fs::path(out_dir) / "config.echo.json");
    echo << config_to_json(cfg).dump(2) << "\n";
    if (!quiet)
        std::cout << "run: final iou " << detail::fmt_double(trace.final_iou_truth) << " after "
                  << trace.steps.size() << " steps\n";
    return trace;
}

// ---------------------------------------------------------------------------
// Toy diffusion harness
// ---------------------------------------------------------------------------

inline std::vector<double> mask_to_reals(const BinaryMask& m) {
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data()[i];
    return out;
}

// Adapter: a trained toy model as the generator of a 16x16 end-to-end loop.
inline Generator make_toy_generator(toy::ToyDenoiser model, toy::NoiseSchedule sched) {
    return [model = std::move(model), sched = std::move(sched)](
               const GrayImage& partial_image, const BinaryMask& /*partial_mask*/,
               const BinaryMask& condition, Rng& rng) {
        auto sample = toy::ddpm_sample(model, partial_image.data(), mask_to_reals(condition), sched, rng);
        return GrayImage(partial_image.width(), partial_image.height(), std::move(sample));
    };
}

struct ToyDatasetEntry {
    toy::TrainSample sample;   // complete/partial/condition, tau and eps unset
    BinaryMask complete_mask;
    BinaryMask partial_mask;
    BinaryMask condition_mask;
    double appearance = 0.8;
    Shape shape;
};

// Single-ellipse 16x16 family with the double-occlusion training scheme:
// condition = one occlusion, target = the complete mask, visible evidence =
// both occlusions. Rectangle and shift occluders are drawn with equal
// probability.
inline std::vector<ToyDatasetEntry> build_toy_dataset(int count, std::uint64_t seed,
                                                      const WorldParams& world) {
    std::vector<ToyDatasetEntry> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        for (int attempt = 0;; ++attempt) {
            if (attempt >= 64) throw std::runtime_error("build_toy_dataset: retry budget exhausted");
            Rng rng(seed_derive(seed_derive(seed, static_cast<std::uint32_t>(i), 0xFFFE), 1,
                                static_cast<std::uint32_t>(attempt)));
            ToyDatasetEntry entry;
            entry.shape = sample_shape(rng, world.k_min, world.k_max, world.scale_lo, world.scale_hi,
                                       world.width, world.height);
            entry.appearance = rng.uniform(world.appearance_lo, world.appearance_hi);
            entry.complete_mask = render(entry.shape, world.width, world.height);
            OcclusionSpec spec;
            spec.kind = rng.bernoulli(0.5) ? OcclusionKind::rectangle : OcclusionKind::shift;
            const DoubleOcclusion d = double_occlude(entry.complete_mask, spec, rng);
            if (d.partial.empty_fg()) continue;
            entry.partial_mask = d.partial;
            entry.condition_mask = d.intermediate;
            entry.sample.complete = mask_to_reals(entry.complete_mask);
            entry.sample.partial_image =
                realize_image(entry.partial_mask, entry.appearance).data();
            entry.sample.condition = mask_to_reals(entry.condition_mask);
            out.push_back(std::move(entry));
            break;
        }
    }
    return out;
}

// Draws (tau, eps) for each entry; the rest of the sample is fixed data.
inline std::vector<toy::TrainSample> draw_training_batchset(const std::vector<ToyDatasetEntry>& data,
                                                            const toy::NoiseSchedule& sched, Rng& rng) {
    std::vector<toy::TrainSample> out;
    out.reserve(data.size());
    for (const auto& entry : data) {
        toy::TrainSample s = entry.sample;
        s.tau = static_cast<int>(rng.uniform_int(1, sched.steps));
        s.eps.resize(s.complete.size());
        for (auto& v : s.eps) v = rng.normal();
        out.push_back(std::move(s));
    }
    return out;
}

struct ToyTrainResult {
    toy::ToyDenoiser model;
    std::vector<toy::TrainLogRow> log;
    double first_total = 0.0;
    double last_total = 0.0;
    double iou_partial_condition = 0.0;   // mean IoU-to-truth, partial-mask conditioning
    double iou_complete_condition = 0.0;  // mean IoU-to-truth, complete-mask conditioning
};

struct ToyTrainOptions {
    int dataset_size = 192;
    int eval_samples = 100;
    int schedule_steps = 40;
    toy::ToyDims dims{};       // 16x16 defaults
    toy::TrainConfig train{};  // lambda_ce 1.0, lr 1e-3, batch 8
    WorldParams world{16, 16, 1, 1, 0.22, 0.38, 0.6, 1.0};
};

// Trains the toy model on the single-ellipse family and evaluates the
// conditioned-mask ordering (complete vs partial conditioning).
inline ToyTrainResult train_toy(std::uint64_t seed, const ToyTrainOptions& opt,
                                const std::string& out_dir = "", bool quiet = true) {
    namespace fs = std::filesystem;
    const toy::NoiseSchedule sched = toy::make_schedule(opt.schedule_steps, toy::ScheduleKind::cosine);
    const auto dataset = build_toy_dataset(opt.dataset_size, seed, opt.world);

    ToyTrainResult result;
    result.model = toy::init_denoiser(opt.dims, seed_derive(seed, 20, 0));
    Rng train_rng(seed_derive(seed, 21, 0));

    // One (tau, eps) draw per entry per epoch keeps the objective fresh
    // without storing a separate noise dataset.
    for (int epoch = 1; epoch <= opt.train.epochs; ++epoch) {
        const auto samples = draw_training_batchset(dataset, sched, train_rng);
        toy::TrainConfig one_epoch = opt.train;
        one_epoch.epochs = 1;
        auto rows = toy::train(result.model, samples, sched, one_epoch, train_rng);
        rows[0].epoch = epoch;
        result.log.push_back(rows[0]);
        if (!quiet)
            std::cout << "epoch " << epoch << " loss_eps " << detail::fmt_double(rows[0].loss_eps)
                      << " loss_mask " << detail::fmt_double(rows[0].loss_mask) << "\n";
    }
    result.first_total = result.log.front().total;
    result.last_total = result.log.back().total;

    // Conditioned-mask ordering eval on held-out scenes.
    Rng eval_rng(seed_derive(seed, 22, 0));
    const auto eval_set = build_toy_dataset(opt.eval_samples, seed_derive(seed, 23, 0), opt.world);
    double acc_partial = 0.0, acc_complete = 0.0;
    for (const auto& entry : eval_set) {
        const auto pimg = entry.sample.partial_image;
        const auto sample_iou = [&](const std::vector<double>& cond) {
            auto vec = toy::ddpm_sample(result.model, pimg, cond, sched, eval_rng);
            BinaryMask m(entry.complete_mask.width(), entry.complete_mask.height());
            for (int y = 0; y < m.height(); ++y)
                for (int x = 0; x < m.width(); ++x)
                    m.set(x, y, vec[static_cast<std::size_t>(y) * m.width() + x] >= 0.5);
            return iou(m, entry.complete_mask);
        };
        acc_partial += sample_iou(mask_to_reals(entry.partial_mask));
        acc_complete += sample_iou(entry.sample.complete);
    }
    result.iou_partial_condition = acc_partial / eval_set.size();
    result.iou_complete_condition = acc_complete / eval_set.size();

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream csv(fs::path(out_dir) / "toy_train_log.csv");
        csv << "epoch,loss_eps,loss_mask,total\n";
        for (const auto& row : result.log)
            csv << row.epoch << "," << detail::fmt_double(row.loss_eps) << ","
                << detail::fmt_double(row.loss_mask) << "," << detail::fmt_double(row.total) << "\n";
        toy::save_checkpoint(result.model, (fs::path(out_dir) / "toy_checkpoint.json").string());
        nlohmann::json summary{{"first_total", result.first_total},
                               {"last_total", result.last_total},
                               {"iou_partial_condition", result.iou_partial_condition},
                               {"iou_complete_condition", result.iou_complete_condition}};
        std::ofstream js(fs::path(out_dir) / "toy_summary.json");
        js << summary.dump(2) << "\n";
    }
    return result;
}

// ---------------------------------------------------------------------------
// Self test and gradcheck drivers (CLI entry points)
// ---------------------------------------------------------------------------

inline bool run_gradcheck(bool quiet = false) {
    bool ok = true;
    // Full coverage at a small configuration, spot checks at the default one.
    const toy::GradCheckReport small =
        toy::gradcheck(toy::ToyDims{16, 8, 4, 12}, 3, 12345, 1e-5, -1);
    const toy::GradCheckReport full = toy::gradcheck(toy::ToyDims{}, 2, 999, 1e-5, 24);
    for (const auto* rep : {&small, &full}) {
        for (const auto& g : rep->groups) {
            if (!quiet)
                std::cout << (rep == &small ? "small" : "default") << " " << g.name << " checked "
                          << g.checked << " max_rel_err " << g.max_rel_err << "\n";
            if (!(g.max_rel_err < 1e-4)) ok = false;
        }
    }
    if (!quiet) std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
    return ok;
}

namespace detail {

inline bool self_check(bool cond, const char* what, bool quiet) {
    if (!quiet || !cond) std::cout << (cond ? "  ok: " : "  FAIL: ") << what << "\n";
    return cond;
}

}  // namespace detail

// Compact property suite over the mask, voting and occlusion layers; the
// full suite lives in the test binaries.
inline bool run_selftest(bool quiet = false) {
    bool ok = true;
    Rng rng(4242);

    // Voting vs per-pixel counting oracle.
    {
        bool exact = true;
        for (int trial = 0; trial < 200 && exact; ++trial) {
            std::vector<BinaryMask> masks;
            std::vector<ProbMask> logits;
            for (int k = 0; k < 5; ++k) {
                BinaryMask m(4, 4);
                for (int y = 0; y < 4; ++y)
                    for (int x = 0; x < 4; ++x) m.set(x, y, rng.bernoulli(0.5));
                logits.emplace_back(4, 4, mask_to_reals(m));
                masks.push_back(std::move(m));
            }
            const BinaryMask fused = fuse(masks, logits, VotingStrategy{VotingKind::mask_mean, 0.5});
            for (int y = 0; y < 4 && exact; ++y)
                for (int x = 0; x < 4; ++x) {
                    int count = 0;
                    for (const auto& m : masks) count += m.at(x, y);
                    if (fused.at(x, y) != (count / 5.0 >= 0.5 ? 1 : 0)) {
                        exact = false;
                        break;
                    }
                }
        }
        ok &= detail::self_check(exact, "mask_mean voting matches counting oracle", quiet);
    }

    // Mask metric identities.
    {
        BinaryMask a(3, 1, {1, 1, 0}), b(3, 1, {0, 1, 1});
        ok &= detail::self_check(std::abs(iou(a, b) - 1.0 / 3.0) < 1e-12, "iou hand case", quiet);
        ok &= detail::self_check(std::abs(dice(a, b) - 0.5) < 1e-12, "dice hand case", quiet);
        ok &= detail::self_check(iou(a, a) == 1.0 && dice(b, b) == 1.0, "metric identity", quiet);
    }

    // Occlusion partition and subset chain over random draws.
    {
        bool good = true;
        Shape shape;
        shape.ellipses.push_back({32, 32, 20, 14, 0.4});
        const BinaryMask disk = render(shape, 64, 64);
        for (int trial = 0; trial < 100 && good; ++trial) {
            const OcclusionResult r = rect_occlude(disk, 0.2, 0.9, rng);
            good &= mask_union(r.occluded_mask, r.occluder) == disk;
            good &= mask_intersect(r.occluded_mask, r.occluder).empty_fg();
            good &= std::abs(r.achieved_rate -
                             static_cast<double>(r.occluder.area()) / disk.area()) < 1e-12;
            OcclusionSpec spec;
            const DoubleOcclusion d = double_occlude(disk, spec, rng);
            good &= is_subset(d.partial, d.intermediate) && is_subset(d.intermediate, disk);
        }
        ok &= detail::self_check(good, "occlusion partition and double-occlusion chain", quiet);
    }

    // Threshold / mean identities and unimodality samples.
    {
        BinaryMask m(3, 1, {1, 0, 1});
        ok &= detail::self_check(threshold(mean_masks({m, m, m}), 0.5) == m,
                                 "threshold(mean([M]xN)) == M", quiet);
        ok &= detail::self_check(is_unimodal({0, 1, 0}, 0.0) &&
                                     !is_unimodal({0, 1, 0, 1, 0}, 0.0),
                                 "unimodality spot checks", quiet);
    }

    if (!quiet) std::cout << (ok ? "selftest PASS" : "selftest FAIL") << "\n";
    return ok;
}

}  // namespace imd
