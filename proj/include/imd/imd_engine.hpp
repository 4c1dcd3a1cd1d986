#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "imd/mask.hpp"
#include "imd/pgm.hpp"
#include "imd/rng.hpp"
#include "imd/segmenter.hpp"
#include "imd/shape_world.hpp"
#include "imd/voting.hpp"

namespace imd {

// The outer loop: a mask denoiser built from a generator and a segmenter,
// iterated with per-step ensemble voting. The engine sees the ground truth
// only through the generator/segmenter black boxes; truth enters this file
// solely to compute trace metrics.

// Generator contract: sample a completed-object image from the visible
// partial object and a condition mask, consuming only the provided stream.
using Generator = std::function<GrayImage(const GrayImage& partial_image,
                                          const BinaryMask& partial_mask,
                                          const BinaryMask& condition_mask, Rng& rng)>;

inline Generator make_oracle_generator(const Scene& scene, const OracleParams& params) {
    return [scene, params](const GrayImage& partial_image, const BinaryMask& partial_mask,
                           const BinaryMask& condition_mask, Rng& rng) {
        return oracle_generate(scene, partial_image, partial_mask, condition_mask, params, rng);
    };
}

struct IMDConfig {
    int steps_T = 5;
    int samples_N = 5;
    VotingStrategy strategy{};       // logits_vote, tau = 0.5
    double convergence_eps = 0.0;    // > 0 enables early stop at iou >= 1-eps
    std::uint64_t root_seed = 0;

    void validate() const {
        if (steps_T < 1) throw std::invalid_argument("IMDConfig: steps_T must be >= 1");
        if (samples_N < 1) throw std::invalid_argument("IMDConfig: samples_N must be >= 1");
        if (convergence_eps < 0.0) throw std::invalid_argument("IMDConfig: convergence_eps < 0");
        strategy.validate();
    }
};

struct StepRecord {
    int t = 0;
    BinaryMask fused;                    // condition mask for the next step
    ProbMask mean_prob;                  // per-pixel mean of the sample masks
    std::vector<BinaryMask> sample_masks;
    double delta_iou = 0.0;              // iou(fused_t, fused_{t-1})
    double fused_iou_truth = -1.0;       // -1 when truth is unavailable
    double mean_sample_iou_truth = -1.0;
    bool empty_fuse_fallback = false;    // raw vote came back empty
};

struct IMDTrace {
    std::vector<StepRecord> steps;
    GrayImage final_image;               // generated under the final mask
    double final_iou_truth = -1.0;

    const BinaryMask& final_mask() const {
        if (steps.empty()) throw std::logic_error("IMDTrace: no steps");
        return steps.back().fused;
    }
};

// One denoising step: sample N images under the current condition, segment
// each with the visible region as prompt, and fuse. Sample k of step t
// consumes seed_derive(root, t, k) with k >= 1; k = 0 is reserved for the
// final completion pass. The fused mask is unioned with the visible partial
// mask: visible evidence is ground truth by definition of the task.
inline StepRecord imd_step(const GrayImage& partial_image, const BinaryMask& partial_mask,
                           const BinaryMask& condition, const Generator& gen,
                           const SegmenterKind& seg, const IMDConfig& cfg, int t) {
    cfg.validate();
    if (t < 1) throw std::invalid_argument("imd_step: t must be >= 1");
    if (condition.empty_fg()) throw std::invalid_argument("imd_step: empty condition");

    StepRecord rec;
    rec.t = t;
    std::vector<BinaryMask> masks;
    std::vector<ProbMask> logits;
    masks.reserve(static_cast<std::size_t>(cfg.samples_N));
    logits.reserve(static_cast<std::size_t>(cfg.samples_N));
    for (int k = 1; k <= cfg.samples_N; ++k) {
        Rng rng(seed_derive(cfg.root_seed, static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(k)));
        GrayImage image;
        try {
            image = gen(partial_image, partial_mask, condition, rng);
        } catch (const std::exception& e) {
            throw std::runtime_error("imd_step t=" + std::to_string(t) + " k=" + std::to_string(k) +
                                     ": generator: " + e.what());
        }
        Segmentation s;
        try {
            s = segment(image, partial_mask, seg, rng);
        } catch (const std::exception& e) {
            throw std::runtime_error("imd_step t=" + std::to_string(t) + " k=" + std::to_string(k) +
                                     ": segmenter: " + e.what());
        }
        masks.push_back(std::move(s.mask));
        logits.push_back(std::move(s.logits));
    }

    BinaryMask raw = fuse(masks, logits, cfg.strategy);
    if (raw.empty_fg()) {
        rec.empty_fuse_fallback = true;
        raw = condition;
    }
    rec.fused = mask_union(raw, partial_mask);
    rec.mean_prob = mean_masks(masks);
    rec.sample_masks = std::move(masks);
    return rec;
}

// Runs the full loop, then generates the final completion under the last
// fused mask with a dedicated derived seed. The first-step condition is the
// scene's partial mask unless an explicit initial condition is supplied
// (the conditioned-mask ablation feeds intermediate/complete masks here).
inline IMDTrace run_imd(const Scene& scene, const Generator& gen, const SegmenterKind& seg,
                        const IMDConfig& cfg, const BinaryMask* initial_condition = nullptr) {
    cfg.validate();
    if (scene.partial_mask.empty_fg()) throw std::invalid_argument("run_imd: scene has empty partial");
    const GrayImage partial_image = realize_image(scene.partial_mask, scene.appearance);

    IMDTrace trace;
    BinaryMask condition = initial_condition ? *initial_condition : scene.partial_mask;
    for (int t = 1; t <= cfg.steps_T; ++t) {
        StepRecord rec = imd_step(partial_image, scene.partial_mask, condition, gen, seg, cfg, t);
        rec.delta_iou = iou(rec.fused, condition);
        rec.fused_iou_truth = iou(rec.fused, scene.complete_mask);
        double acc = 0.0;
        for (const auto& m : rec.sample_masks) acc += iou(m, scene.complete_mask);
        rec.mean_sample_iou_truth = acc / static_cast<double>(rec.sample_masks.size());
        condition = rec.fused;
        const double delta = rec.delta_iou;
        trace.steps.push_back(std::move(rec));
        if (cfg.convergence_eps > 0.0 && delta >= 1.0 - cfg.convergence_eps) break;
    }

    const int last_t = trace.steps.back().t;
    Rng rng(seed_derive(cfg.root_seed, static_cast<std::uint32_t>(last_t + 1), 0));
    trace.final_image = gen(partial_image, scene.partial_mask, condition, rng);
    trace.final_iou_truth = trace.steps.back().fused_iou_truth;
    return trace;
}

// First step whose fused mask agrees with its predecessor at IoU >= conv_iou;
// falls back to the number of steps run when no step qualifies.
inline int convergence_step(const IMDTrace& trace, double conv_iou) {
    for (const auto& rec : trace.steps)
        if (rec.delta_iou >= conv_iou) return rec.t;
    return static_cast<int>(trace.steps.size());
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

inline nlohmann::json imd_config_to_json(const IMDConfig& cfg) {
    return nlohmann::json{{"steps_T", cfg.steps_T},
                          {"samples_N", cfg.samples_N},
                          {"strategy", to_string(cfg.strategy.kind)},
                          {"tau", cfg.strategy.tau},
                          {"convergence_eps", cfg.convergence_eps},
                          {"root_seed", cfg.root_seed}};
}

namespace detail {
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace detail

// Writes per-step masks and probability maps as PGM, the per-step metric
// table as trace.csv, and a JSON summary with the config echo.
inline void write_trace(const IMDTrace& trace, const IMDConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (const auto& rec : trace.steps) {
        char name[64];
        std::snprintf(name, sizeof(name), "step%02d_fused.pgm", rec.t);
        write_pgm((fs::path(out_dir) / name).string(), rec.fused);
        std::snprintf(name, sizeof(name), "step%02d_meanprob.pgm", rec.t);
        write_pgm((fs::path(out_dir) / name).string(), rec.mean_prob);
    }

    std::ofstream csv(fs::path(out_dir) / "trace.csv");
    if (!csv) throw std::runtime_error("write_trace: cannot write trace.csv");
    csv << "step,delta_iou,fused_iou_truth,mean_sample_iou_truth\n";
    for (const auto& rec : trace.steps)
        csv << rec.t << "," << detail::fmt_double(rec.delta_iou) << ","
            << detail::fmt_double(rec.fused_iou_truth) << ","
            << detail::fmt_double(rec.mean_sample_iou_truth) << "\n";
    csv.close();

    int fallbacks = 0;
    for (const auto& rec : trace.steps) fallbacks += rec.empty_fuse_fallback ? 1 : 0;
    nlohmann::json summary{
        {"config", imd_config_to_json(cfg)},
        {"steps_run", trace.steps.size()},
        {"final_iou_truth", trace.final_iou_truth},
        {"convergence_step", convergence_step(trace, 0.97)},
        {"empty_fuse_fallbacks", fallbacks},
    };
    std::ofstream js(fs::path(out_dir) / "summary.json");
    if (!js) throw std::runtime_error("write_trace: cannot write summary.json");
    js << summary.dump(2) << "\n";
}

}  // namespace imd
