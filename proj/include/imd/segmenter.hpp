#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <utility>

#include "imd/mask.hpp"
#include "imd/rng.hpp"
#include "imd/shape_world.hpp"

namespace imd {

// The segmentation stage: image -> (object mask, soft logit map). The
// threshold kind plays the off-the-shelf segmenter; the noisy kind wraps
// another segmenter and injects zero-mean mask errors for the robustness
// study.

struct SegmenterKind {
    enum class Kind { threshold, noisy };
    Kind kind = Kind::threshold;
    double level = 0.4;  // threshold theta, or noise area fraction p
    std::shared_ptr<const SegmenterKind> inner;  // required for noisy

    static SegmenterKind thresholded(double theta = 0.4) {
        if (!(theta > 0.0 && theta < 1.0))
            throw std::invalid_argument("SegmenterKind: theta outside (0,1)");
        return SegmenterKind{Kind::threshold, theta, nullptr};
    }
    static SegmenterKind noisy(double p, SegmenterKind inner_kind) {
        if (!(p >= 0.0)) throw std::invalid_argument("SegmenterKind: noise fraction must be >= 0");
        return SegmenterKind{Kind::noisy, p,
                             std::make_shared<const SegmenterKind>(std::move(inner_kind))};
    }
};

struct Segmentation {
    BinaryMask mask;
    ProbMask logits;
};

namespace detail {

// Foreground pixels with a 4-neighbour background pixel.
inline std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(x, y)) continue;
            const bool edge = (x == 0 || !m.at(x - 1, y)) || (x + 1 == m.width() || !m.at(x + 1, y)) ||
                              (y == 0 || !m.at(x, y - 1)) || (y + 1 == m.height() || !m.at(x, y + 1));
            if (edge) out.push_back({x, y});
        }
    return out;
}

}  // namespace detail

inline Segmentation segment(const GrayImage& image, const BinaryMask& prompt_region,
                            const SegmenterKind& seg, Rng& rng) {
    if (image.width() != prompt_region.width() || image.height() != prompt_region.height())
        throw std::invalid_argument("segment: dimension mismatch");
    if (prompt_region.empty_fg()) throw std::invalid_argument("segment: empty prompt");

    if (seg.kind == SegmenterKind::Kind::threshold) {
        std::vector<double> vals(image.data().size());
        for (std::size_t i = 0; i < vals.size(); ++i)
            vals[i] = std::clamp(image.data()[i], 0.0, 1.0);
        ProbMask logits(image.width(), image.height(), std::move(vals));
        BinaryMask mask = largest_component_containing(threshold(logits, seg.level), prompt_region);
        return {std::move(mask), std::move(logits)};
    }

    // noisy: run the inner segmenter, then flip boundary-adjacent blobs
    // totalling level * |mask| pixels in expectation. Each blob is a disc of
    // radius 1..3 XOR-ed in place, centred on a boundary pixel so the flips
    // straddle the edge and stay zero-mean in area.
    if (!seg.inner) throw std::invalid_argument("segment: noisy segmenter without inner");
    Segmentation base = segment(image, prompt_region, *seg.inner, rng);
    if (seg.level <= 0.0) return base;

    BinaryMask perturbed = base.mask;
    const double target = seg.level * static_cast<double>(base.mask.area());
    double flipped = 0.0;
    for (int tries = 0; flipped < target && tries < 10000; ++tries) {
        const auto boundary = detail::boundary_pixels(perturbed);
        if (boundary.empty()) break;
        const auto [bx, by] =
            boundary[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(boundary.size()) - 1))];
        const int r = static_cast<int>(rng.uniform_int(1, 3));
        for (int oy = -r; oy <= r; ++oy)
            for (int ox = -r; ox <= r; ++ox) {
                if (ox * ox + oy * oy > r * r) continue;
                const int x = bx + ox, y = by + oy;
                if (!perturbed.in_bounds(x, y)) continue;
                perturbed.set(x, y, !perturbed.at(x, y));
                flipped += 1.0;
            }
    }

    std::vector<double> blended(perturbed.size());
    for (std::size_t i = 0; i < blended.size(); ++i)
        blended[i] = 0.9 * perturbed.data()[i] + 0.1 * base.logits.data()[i];
    return {std::move(perturbed), ProbMask(image.width(), image.height(), std::move(blended))};
}

}  // namespace imd
