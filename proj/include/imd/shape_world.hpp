#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "imd/mask.hpp"
#include "imd/occlusion.hpp"
#include "imd/rng.hpp"

namespace imd {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// All coordinates are in pixel units of the target render resolution.
struct EllipseComponent {
    double cx = 0, cy = 0;   // center
    double a = 1, b = 1;     // semi-axes, > 0
    double rotation = 0;     // radians

    bool contains(double px, double py) const {
        const double dx = px - cx, dy = py - cy;
        const double c = std::cos(rotation), s = std::sin(rotation);
        const double u = c * dx + s * dy;
        const double v = -s * dx + c * dy;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

struct Shape {
    std::vector<EllipseComponent> ellipses;
};

// Grayscale image with values in [0,1]; the generator's output currency.
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int width, int height)
        : width_(width), height_(height) {
        if (width < 1 || height < 1) throw std::invalid_argument("GrayImage: width/height must be >= 1");
        data_.assign(static_cast<std::size_t>(width) * height, 0.0);
    }
    GrayImage(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width < 1 || height < 1) throw std::invalid_argument("GrayImage: width/height must be >= 1");
        if (data_.size() != static_cast<std::size_t>(width_) * height_)
            throw std::invalid_argument("GrayImage: data length != width*height");
        for (double v : data_)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("GrayImage: value outside [0,1]");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<double>& data() const { return data_; }
    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int x, int y, double v) { data_[static_cast<std::size_t>(y) * width_ + x] = v; }
    bool same_dims(const GrayImage& o) const { return width_ == o.width_ && height_ == o.height_; }
    bool operator==(const GrayImage&) const = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<double> data_;
};

// Knobs of the synthetic generator. They model the coupling between
// condition quality and output quality:
//   fidelity_beta  - expected fraction of the condition/truth disagreement
//                    that one sample resolves toward the truth;
//   boundary_sigma - boundary wobble scale in pixels, amplified by 1+q where
//                    q is the condition's incompleteness;
//   artifact_gain  - expected spurious blob area per unit incompleteness,
//                    as a fraction of the true object area.
struct OracleParams {
    double fidelity_beta = 0.5;   // (0, 1]
    double boundary_sigma = 1.0;  // >= 0, pixels
    double artifact_gain = 0.15;  // >= 0

    void validate() const {
        if (!(fidelity_beta > 0.0 && fidelity_beta <= 1.0))
            throw std::invalid_argument("OracleParams: fidelity_beta outside (0,1]");
        if (!(boundary_sigma >= 0.0)) throw std::invalid_argument("OracleParams: boundary_sigma < 0");
        if (!(artifact_gain >= 0.0)) throw std::invalid_argument("OracleParams: artifact_gain < 0");
    }
};

// One synthetic ground-truth instance.
struct Scene {
    Shape shape;
    double appearance = 0.8;     // object intensity, (0, 1]
    BinaryMask complete_mask;    // render(shape)
    BinaryMask partial_mask;     // nonempty subset of complete_mask
    BinaryMask occluder;         // complete minus partial
    std::uint64_t seed = 0;      // seed this scene was built from
    int build_attempt = 0;       // retry index the builder succeeded at
};

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Pixel is foreground iff its center lies inside any component. Exact
// inequality test, no anti-aliasing.
inline BinaryMask render(const Shape& shape, int width, int height) {
    if (width < 1 || height < 1) throw std::invalid_argument("render: bad dimensions");
    BinaryMask out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            for (const auto& e : shape.ellipses)
                if (e.contains(px, py)) {
                    out.set(x, y, true);
                    break;
                }
        }
    return out;
}

inline GrayImage realize_image(const BinaryMask& mask, double appearance) {
    if (!(appearance > 0.0 && appearance <= 1.0))
        throw std::invalid_argument("realize_image: appearance outside (0,1]");
    GrayImage out(mask.width(), mask.height());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) out.set(x, y, appearance);
    return out;
}

// ---------------------------------------------------------------------------
// Shape sampling
// ---------------------------------------------------------------------------

// K ellipse components, K uniform in [k_min, k_max], semi-axes uniform in
// scale_range * min(width, height). Components after the first are anchored
// near an existing one; the whole draw is resampled until the rendered union
// is nonempty and 4-connected (bounded retries).
inline Shape sample_shape(Rng& rng, int k_min, int k_max, double scale_lo, double scale_hi,
                          int width, int height, int max_tries = 100) {
    if (k_min < 1 || k_min > k_max) throw std::invalid_argument("sample_shape: bad k range");
    if (!(scale_lo > 0.0 && scale_lo <= scale_hi))
        throw std::invalid_argument("sample_shape: bad scale range");
    const double unit = std::min(width, height);
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        Shape shape;
        const int k = static_cast<int>(rng.uniform_int(k_min, k_max));
        for (int i = 0; i < k; ++i) {
            EllipseComponent e;
            e.a = rng.uniform(scale_lo, scale_hi) * unit;
            e.b = rng.uniform(scale_lo, scale_hi) * unit;
            e.rotation = rng.uniform(0.0, 3.14159265358979323846);
            if (i == 0) {
                e.cx = rng.uniform(0.35, 0.65) * width;
                e.cy = rng.uniform(0.35, 0.65) * height;
            } else {
                const auto& anchor =
                    shape.ellipses[static_cast<std::size_t>(rng.uniform_int(0, i - 1))];
                const double reach = 0.5 * (std::min(anchor.a, anchor.b) + std::min(e.a, e.b));
                const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
                const double len = rng.uniform(0.5, 1.2) * reach;
                e.cx = std::clamp(anchor.cx + len * std::cos(ang), 0.12 * width, 0.88 * width);
                e.cy = std::clamp(anchor.cy + len * std::sin(ang), 0.12 * height, 0.88 * height);
            }
            shape.ellipses.push_back(e);
        }
        const BinaryMask mask = render(shape, width, height);
        if (!mask.empty_fg() && is_4connected(mask)) return shape;
    }
    throw std::runtime_error("sample_shape: retry budget exhausted");
}

// ---------------------------------------------------------------------------
// Oracle generator
// ---------------------------------------------------------------------------

namespace detail {

// Pixels of `subset` ordered by BFS distance from `from` (ties row-major).
inline std::vector<std::size_t> rank_by_distance(const BinaryMask& subset, const BinaryMask& from) {
    const auto dist = bfs_distance(from);
    std::vector<std::size_t> px;
    for (std::size_t i = 0; i < subset.size(); ++i)
        if (subset.data()[i]) px.push_back(i);
    std::stable_sort(px.begin(), px.end(),
                     [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    return px;
}

// Admission order for the fill region: a priority flood out of `anchor`
// that prefers pixels deep inside the true silhouette. Each admitted pixel
// is 4-adjacent to the anchor or to an earlier admission, so every fill
// prefix stays attached to the conditioned region, and within a cross
// section the deep (central) pixels come before the shallow (contour)
// ones. That ordering is what makes ensemble probability maps unimodal
// across occluded cross sections. Fill pixels in pockets not reachable
// through the fill region are appended at the end, deepest first.
inline std::vector<std::size_t> fill_admission_order(const BinaryMask& fill_set,
                                                     const BinaryMask& anchor,
                                                     const BinaryMask& m_true) {
    const int w = fill_set.width(), h = fill_set.height();
    BinaryMask outside(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            outside.set(x, y, !m_true.at(x, y) && !anchor.at(x, y));
    // Depth: distance to the region that is background under both truth and
    // condition. Degenerate case (no such background) falls back to zeros.
    std::vector<int> depth;
    if (outside.empty_fg())
        depth.assign(fill_set.size(), 0);
    else
        depth = bfs_distance(outside);

    // Ordered frontier: deepest first, ties in row-major order.
    std::set<std::pair<int, std::size_t>> frontier;  // (-depth, index)
    std::vector<char> seen(fill_set.size(), 0);
    const auto push_neighbors = [&](int x, int y) {
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
            const int nx = x + dx[d], ny = y + dy[d];
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
            if (fill_set.data()[ni] && !seen[ni]) {
                seen[ni] = 1;
                frontier.insert({-depth[ni], ni});
            }
        }
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (anchor.at(x, y)) push_neighbors(x, y);

    std::vector<std::size_t> order;
    order.reserve(fill_set.area());
    while (!frontier.empty()) {
        const auto it = frontier.begin();
        const std::size_t idx = it->second;
        frontier.erase(it);
        order.push_back(idx);
        push_neighbors(static_cast<int>(idx % w), static_cast<int>(idx / w));
    }
    // Unreached pockets (fill components not adjacent to the anchor).
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < fill_set.size(); ++i)
        if (fill_set.data()[i] && !seen[i]) rest.push_back(i);
    std::stable_sort(rest.begin(), rest.end(),
                     [&depth](std::size_t a, std::size_t b) { return depth[a] > depth[b]; });
    order.insert(order.end(), rest.begin(), rest.end());
    return order;
}

inline void stamp_disc_outside(BinaryMask& target, const BinaryMask& forbidden,
                               int cx, int cy, int r) {
    for (int oy = -r; oy <= r; ++oy)
        for (int ox = -r; ox <= r; ++ox) {
            if (ox * ox + oy * oy > r * r) continue;
            const int x = cx + ox, y = cy + oy;
            if (target.in_bounds(x, y) && !forbidden.at(x, y)) target.set(x, y, true);
        }
}

}  // namespace detail

// Sample one completed-object image conditioned on the visible partial object
// and a condition mask. The oracle stands in for a trained mask-conditioned
// generator; it reads the ground truth, while the iterative engine on top of
// it only ever sees generator and segmenter outputs.
//
// Sampling model, per call:
//   (a) blend toward truth: the pixels where truth and condition disagree
//       are ranked by distance from the conditioned region and a random
//       quantile prefix (expected fraction fidelity_beta) flips toward the
//       truth. The quantile construction keeps each sample spatially
//       coherent, which in turn makes ensemble probability maps unimodal
//       across occluded cross-sections.
//   (b) boundary jitter: the whole sampled mask is dilated or eroded by a
//       random depth scaled by boundary_sigma * (1 + q); the sign is a fair
//       coin, so the perturbation is zero-mean in area.
//   (c) visible partial pixels are always foreground.
//   (d) spurious blobs with expected total area artifact_gain * q * |truth|
//       appear outside the true object.
// The output image carries `appearance` on the sampled mask, plus
// per-pixel intensity noise of amplitude <= 0.05, and black background.
inline GrayImage oracle_generate(const Scene& truth, const GrayImage& partial_image,
                                 const BinaryMask& partial_mask, const BinaryMask& condition_mask,
                                 const OracleParams& params, Rng& rng) {
    params.validate();
    const BinaryMask& m_true = truth.complete_mask;
    if (!m_true.same_dims(partial_mask) || !m_true.same_dims(condition_mask) ||
        partial_image.width() != m_true.width() || partial_image.height() != m_true.height())
        throw std::invalid_argument("oracle_generate: dimension mismatch");
    if (partial_mask.empty_fg()) throw std::invalid_argument("oracle_generate: empty partial");
    if (!is_subset(partial_mask, m_true))
        throw std::invalid_argument("oracle_generate: partial not inside truth");

    const BinaryMask m_cond = mask_union(condition_mask, partial_mask);
    const double true_area = static_cast<double>(m_true.area());
    const double q =
        1.0 - static_cast<double>(intersection_area(m_cond, m_true)) / true_area;

    const double beta = params.fidelity_beta;
    BinaryMask sampled = m_cond;

    // (a) fill side: truth pixels the condition is missing. The fill level is
    // a mixture: with a failure probability growing with incompleteness the
    // sample barely extends the object (a generation that went astray under a
    // poor condition); otherwise the level is drawn around a compensated
    // fidelity so that the expected filled fraction equals fidelity_beta
    // exactly. At beta = 1 the failure probability is zero and the level is
    // exactly 1.
    const BinaryMask fill_set = mask_difference(m_true, m_cond);
    if (!fill_set.empty_fg()) {
        const auto ranked = detail::fill_admission_order(fill_set, m_cond, m_true);
        // Failure probability: mildly rising in q, then a sharp knee once the
        // conditioned region covers too little of the object for a sample to
        // stay anchored (the completion-quality cliff at heavy occlusion).
        const double knee = 1.0 / (1.0 + std::exp(-(q - 0.66) / 0.045));
        const double fail_p =
            std::min(0.85, 2.0 * (1.0 - beta) * (0.05 * q + 0.585 * knee));
        const double u_fail = rng.uniform();
        const double u_level = rng.uniform();
        double level;
        if (u_fail < fail_p) {
            level = 0.1 * u_level;  // mean 0.05
        } else {
            const double beta_c = (beta - 0.05 * fail_p) / (1.0 - fail_p);
            level = std::clamp(1.0 - 2.0 * (1.0 - beta_c) * u_level, 0.0, 1.0);
        }
        const auto n_add = static_cast<std::size_t>(level * static_cast<double>(ranked.size()) + 1e-9);
        for (std::size_t i = 0; i < n_add && i < ranked.size(); ++i) {
            const auto idx = ranked[i];
            sampled.set(static_cast<int>(idx % m_true.width()),
                        static_cast<int>(idx / m_true.width()), true);
        }
    }
    // (a) drop side: condition pixels outside the truth.
    const BinaryMask drop_set = mask_difference(m_cond, m_true);
    if (!drop_set.empty_fg()) {
        const auto ranked = detail::rank_by_distance(drop_set, m_true);
        const double level = std::clamp(2.0 * (1.0 - beta) * rng.uniform(), 0.0, 1.0);
        const auto n_keep = static_cast<std::size_t>(level * static_cast<double>(ranked.size()) + 1e-9);
        for (std::size_t i = n_keep; i < ranked.size(); ++i) {
            const auto idx = ranked[i];
            sampled.set(static_cast<int>(idx % m_true.width()),
                        static_cast<int>(idx / m_true.width()), false);
        }
    }

    // (b) zero-mean boundary jitter: the whole mask dilates or erodes by a
    // random depth. The contour within 2 px of the visible partial object is
    // pinned (alignment with given evidence), so the wobble lives only where
    // the shape is actually uncertain.
    if (params.boundary_sigma > 0.0) {
        const double depth_scale = 0.35 * params.boundary_sigma * (1.0 + q);
        const int depth = std::min(2, static_cast<int>(std::lround(std::abs(rng.normal()) * depth_scale)));
        const bool grow = rng.bernoulli(0.5);
        if (depth > 0) {
            const BinaryMask anchored = dilate_cheby(partial_mask, 2);
            const BinaryMask before = sampled;
            sampled = grow ? dilate_cheby(sampled, depth) : erode_cheby(sampled, depth);
            for (int y = 0; y < sampled.height(); ++y)
                for (int x = 0; x < sampled.width(); ++x)
                    if (anchored.at(x, y)) sampled.set(x, y, before.at(x, y));
        }
    }

    // (c) the visible evidence is never lost.
    sampled = mask_union(sampled, partial_mask);

    // (d) artifact blobs outside the true object. Centers keep a clearance
    // band around the sampled mask, so a blob is a disjoint hallucination
    // rather than a bump on the object: segmentation's component filter
    // discards it per sample, the way stray background objects never make
    // it past the segmentation stage.
    if (params.artifact_gain > 0.0 && q > 0.0) {
        const BinaryMask forbidden = dilate_cheby(mask_union(sampled, m_true), 3);
        std::vector<std::size_t> placeable;
        for (std::size_t i = 0; i < m_true.size(); ++i)
            if (!forbidden.data()[i]) placeable.push_back(i);
        if (!placeable.empty()) {
            const double expected_area = params.artifact_gain * q * true_area;
            const double mean_blob_area = 9.0;  // average of the r=1 and r=2 discs
            const double n_real = expected_area / mean_blob_area;
            int n_blobs = static_cast<int>(n_real);
            if (rng.bernoulli(n_real - n_blobs)) ++n_blobs;
            for (int bidx = 0; bidx < n_blobs; ++bidx) {
                const auto at = placeable[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(placeable.size()) - 1))];
                const int r = static_cast<int>(rng.uniform_int(1, 2));
                detail::stamp_disc_outside(sampled, m_true,
                                           static_cast<int>(at % m_true.width()),
                                           static_cast<int>(at / m_true.width()), r);
            }
        }
    }

    GrayImage out(m_true.width(), m_true.height());
    for (int y = 0; y < m_true.height(); ++y)
        for (int x = 0; x < m_true.width(); ++x)
            if (sampled.at(x, y))
                out.set(x, y, std::clamp(truth.appearance + rng.uniform(-0.05, 0.05), 0.0, 1.0));
    return out;
}

// ---------------------------------------------------------------------------
// Scene construction and serialization
// ---------------------------------------------------------------------------

struct WorldParams {
    int width = 64, height = 64;
    int k_min = 1, k_max = 3;
    double scale_lo = 0.14, scale_hi = 0.30;   // semi-axis / min(W,H)
    double appearance_lo = 0.6, appearance_hi = 1.0;
};

struct SceneOcclusion {
    OcclusionSpec spec;          // used when target_rate <= 0
    double target_rate = 0.4;    // > 0: rectangle occlusion tuned to this rate
    double rate_tol = 0.02;
};

// Deterministic scene builder. Shape/appearance and occlusion consume
// sub-seeds derived from the scene seed, so a serialized scene can rebuild
// its masks without replaying the shape sampling stream.
inline Scene build_scene(std::uint64_t scene_seed, const WorldParams& world,
                         const SceneOcclusion& occ, int max_tries = 32) {
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        Rng shape_rng(seed_derive(scene_seed, 1, static_cast<std::uint32_t>(attempt)));
        Scene scene;
        scene.seed = scene_seed;
        scene.shape = sample_shape(shape_rng, world.k_min, world.k_max, world.scale_lo,
                                   world.scale_hi, world.width, world.height);
        scene.appearance = shape_rng.uniform(world.appearance_lo, world.appearance_hi);
        scene.complete_mask = render(scene.shape, world.width, world.height);

        Rng occ_rng(seed_derive(scene_seed, 2, static_cast<std::uint32_t>(attempt)));
        OcclusionResult r;
        if (occ.target_rate > 0.0)
            r = occlude_to_rate(scene.complete_mask, occ.target_rate, occ.rate_tol, occ_rng);
        else
            r = occlude(scene.complete_mask, occ.spec, occ_rng);
        if (r.occluded_mask.empty_fg()) continue;  // empty partial: not a usable scene
        scene.partial_mask = r.occluded_mask;
        scene.occluder = r.occluder;
        scene.build_attempt = attempt;
        return scene;
    }
    throw std::runtime_error("build_scene: could not build a scene with nonempty partial");
}

inline nlohmann::json scene_to_json(const Scene& scene) {
    nlohmann::json ellipses = nlohmann::json::array();
    for (const auto& e : scene.shape.ellipses)
        ellipses.push_back({{"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"rotation", e.rotation}});
    return nlohmann::json{{"seed", scene.seed},
                          {"attempt", scene.build_attempt},
                          {"appearance", scene.appearance},
                          {"width", scene.complete_mask.width()},
                          {"height", scene.complete_mask.height()},
                          {"occluded_rate",
                           static_cast<double>(scene.occluder.area()) /
                               static_cast<double>(scene.complete_mask.area())},
                          {"ellipses", ellipses}};
}

// Rebuilds a scene from its serialized parameters. The occlusion replays
// from the stored seed with the original parameters, so the masks come back
// bit-identical.
inline Scene scene_from_json(const nlohmann::json& j, const SceneOcclusion& occ) {
    Scene scene;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.appearance = j.at("appearance").get<double>();
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    for (const auto& je : j.at("ellipses")) {
        EllipseComponent e;
        e.cx = je.at("cx").get<double>();
        e.cy = je.at("cy").get<double>();
        e.a = je.at("a").get<double>();
        e.b = je.at("b").get<double>();
        e.rotation = je.at("rotation").get<double>();
        scene.shape.ellipses.push_back(e);
    }
    scene.complete_mask = render(scene.shape, width, height);
    scene.build_attempt = j.at("attempt").get<int>();
    Rng occ_rng(seed_derive(scene.seed, 2, static_cast<std::uint32_t>(scene.build_attempt)));
    OcclusionResult r;
    if (occ.target_rate > 0.0)
        r = occlude_to_rate(scene.complete_mask, occ.target_rate, occ.rate_tol, occ_rng);
    else
        r = occlude(scene.complete_mask, occ.spec, occ_rng);
    if (r.occluded_mask.empty_fg())
        throw std::runtime_error("scene_from_json: occlusion replay produced empty partial");
    scene.partial_mask = r.occluded_mask;
    scene.occluder = r.occluder;
    return scene;
}

}  // namespace imd
