#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "imd/mask.hpp"
#include "imd/rng.hpp"

namespace imd {

// Training-time "noise injection": synthesize partial objects from complete
// ones by removing a randomly placed region.

enum class OcclusionKind { rectangle, shift, oval, object };

inline const char* to_string(OcclusionKind k) {
    switch (k) {
        case OcclusionKind::rectangle: return "rectangle";
        case OcclusionKind::shift: return "shift";
        case OcclusionKind::oval: return "oval";
        case OcclusionKind::object: return "object";
    }
    return "?";
}

struct OcclusionSpec {
    OcclusionKind kind = OcclusionKind::rectangle;
    // Size-proportional kinds: occluder extent as a fraction of the mask bbox.
    double ratio_lo = 0.2, ratio_hi = 0.9;
    // Shift kind: translation magnitude as a fraction of the bbox dimension.
    double shift_lo = 0.17, shift_hi = 0.25;
};

struct OcclusionResult {
    BinaryMask occluded_mask;  // original minus occluder
    BinaryMask occluder;       // the removed region (subset of the original)
    double achieved_rate = 0.0;  // |occluder| / |original|
};

namespace detail {

inline void check_ratio_range(double lo, double hi) {
    // The zero-size rectangle (lo = hi = 0) is allowed; it occludes nothing.
    if (!(lo >= 0.0 && lo <= hi && hi <= 1.0))
        throw std::invalid_argument("occlusion: invalid ratio range");
}

inline void check_nonempty(const BinaryMask& mask) {
    if (mask.empty_fg()) throw std::invalid_argument("occlusion: empty mask");
}

// Index of a foreground pixel drawn uniformly, in row-major order.
inline std::pair<int, int> sample_fg_pixel(const BinaryMask& mask, Rng& rng) {
    const auto n = mask.area();
    auto target = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) {
                if (target == 0) return {x, y};
                --target;
            }
    throw std::logic_error("sample_fg_pixel: unreachable");
}

inline OcclusionResult apply_occluder(const BinaryMask& mask, const BinaryMask& region) {
    OcclusionResult res;
    res.occluder = mask_intersect(region, mask);
    res.occluded_mask = mask_difference(mask, res.occluder);
    res.achieved_rate =
        static_cast<double>(res.occluder.area()) / static_cast<double>(mask.area());
    return res;
}

// Axis-aligned rectangle as continuous half-extents around (cx, cy): pixel
// (x, y) is covered iff |x - cx| < hw and |y - cy| < hh. Strict comparison
// makes hw = hh = 0 the empty rectangle, and the covered set grows
// monotonically with the extents (the property occlude_to_rate bisects on).
inline BinaryMask rect_region(int width, int height, double cx, double cy, double hw, double hh) {
    BinaryMask out(width, height);
    if (hw <= 0.0 || hh <= 0.0) return out;
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - hw)));
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(cx + hw)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - hh)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(cy + hh)));
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x)
            if (std::abs(x - cx) < hw && std::abs(y - cy) < hh) out.set(x, y, true);
    return out;
}

inline BinaryMask oval_region(int width, int height, double cx, double cy, double hw, double hh) {
    BinaryMask out(width, height);
    if (hw <= 0.0 || hh <= 0.0) return out;
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - hw)));
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(cx + hw)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - hh)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(cy + hh)));
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x) {
            const double u = (x - cx) / hw, v = (y - cy) / hh;
            if (u * u + v * v < 1.0) out.set(x, y, true);
        }
    return out;
}

}  // namespace detail

// Rectangle occlusion at a fixed centroid and size ratios. Exposed so tests
// and occlude_to_rate can pin the geometry.
inline OcclusionResult rect_occlude_at(const BinaryMask& mask, double cx, double cy,
                                       double ratio_w, double ratio_h) {
    detail::check_nonempty(mask);
    const BBox box = bbox_of(mask);
    const double hw = 0.5 * ratio_w * box.width();
    const double hh = 0.5 * ratio_h * box.height();
    return detail::apply_occluder(mask, detail::rect_region(mask.width(), mask.height(), cx, cy, hw, hh));
}

// A foreground pixel is sampled uniformly as the rectangle centroid; width
// and height ratios are sampled independently from ratio_range and applied
// to the mask's bbox extents. The rectangle is clipped to the image.
inline OcclusionResult rect_occlude(const BinaryMask& mask, double ratio_lo, double ratio_hi, Rng& rng) {
    detail::check_nonempty(mask);
    detail::check_ratio_range(ratio_lo, ratio_hi);
    const auto [cx, cy] = detail::sample_fg_pixel(mask, rng);
    const double rw = rng.uniform(ratio_lo, ratio_hi);
    const double rh = rng.uniform(ratio_lo, ratio_hi);
    return rect_occlude_at(mask, cx, cy, rw, rh);
}

inline OcclusionResult oval_occlude(const BinaryMask& mask, double ratio_lo, double ratio_hi, Rng& rng) {
    detail::check_nonempty(mask);
    detail::check_ratio_range(ratio_lo, ratio_hi);
    const auto [cx, cy] = detail::sample_fg_pixel(mask, rng);
    const BBox box = bbox_of(mask);
    const double hw = 0.5 * rng.uniform(ratio_lo, ratio_hi) * box.width();
    const double hh = 0.5 * rng.uniform(ratio_lo, ratio_hi) * box.height();
    return detail::apply_occluder(mask, detail::oval_region(mask.width(), mask.height(), cx, cy, hw, hh));
}

// Occlude by the mask's own translated copy. Shift magnitude per axis is
// uniform in shift_range scaled by that axis' bbox extent; the sign per axis
// is a fair coin. Magnitudes are fractions of the bbox dimension, which
// keeps the strategy scale-invariant like the rectangle one.
inline OcclusionResult shift_occlude(const BinaryMask& mask, double shift_lo, double shift_hi, Rng& rng) {
    detail::check_nonempty(mask);
    if (!(shift_lo >= 0.0 && shift_lo <= shift_hi && shift_hi < 1.0 + 1e-12))
        throw std::invalid_argument("occlusion: invalid shift range");
    const BBox box = bbox_of(mask);
    const double mx = rng.uniform(shift_lo, shift_hi) * box.width();
    const double my = rng.uniform(shift_lo, shift_hi) * box.height();
    const int sx = rng.bernoulli(0.5) ? 1 : -1;
    const int sy = rng.bernoulli(0.5) ? 1 : -1;
    const int dx = sx * static_cast<int>(std::lround(mx));
    const int dy = sy * static_cast<int>(std::lround(my));
    return detail::apply_occluder(mask, translate(mask, dx, dy));
}

inline OcclusionResult object_occlude(const BinaryMask& mask, Rng& rng) {
    return shift_occlude(mask, 0.17, 0.25, rng);
}

inline OcclusionResult occlude(const BinaryMask& mask, const OcclusionSpec& spec, Rng& rng) {
    switch (spec.kind) {
        case OcclusionKind::rectangle: return rect_occlude(mask, spec.ratio_lo, spec.ratio_hi, rng);
        case OcclusionKind::oval: return oval_occlude(mask, spec.ratio_lo, spec.ratio_hi, rng);
        case OcclusionKind::shift: return shift_occlude(mask, spec.shift_lo, spec.shift_hi, rng);
        case OcclusionKind::object: return object_occlude(mask, rng);
    }
    throw std::logic_error("occlude: bad kind");
}

struct DoubleOcclusion {
    BinaryMask partial;       // complete minus both occluders
    BinaryMask intermediate;  // complete minus the first occluder only
};

// Two independent occlusions O1, O2: the partial mask accounts for both,
// the intermediate for one, so partial <= intermediate <= complete.
inline DoubleOcclusion double_occlude(const BinaryMask& complete, const OcclusionSpec& spec, Rng& rng) {
    detail::check_nonempty(complete);
    const OcclusionResult o1 = occlude(complete, spec, rng);
    const OcclusionResult o2 = occlude(complete, spec, rng);
    DoubleOcclusion out;
    out.intermediate = o1.occluded_mask;
    out.partial = mask_difference(o1.occluded_mask, o2.occluder);
    return out;
}

// Rectangle occlusion tuned to a target rate: bisection on the rectangle
// scale around a sampled centroid until |achieved - target| <= tol, retrying
// with a fresh centroid while the pixel quantization of one geometry cannot
// meet the tolerance. Returns the best result found.
inline OcclusionResult occlude_to_rate(const BinaryMask& mask, double target_rate, double tol,
                                       Rng& rng, int max_tries = 16) {
    detail::check_nonempty(mask);
    if (!(target_rate > 0.0 && target_rate < 1.0))
        throw std::invalid_argument("occlude_to_rate: target must be in (0,1)");
    if (max_tries < 1) throw std::invalid_argument("occlude_to_rate: max_tries must be >= 1");

    OcclusionResult best;
    double best_err = 2.0;
    for (int attempt = 0; attempt < max_tries; ++attempt) {
        const auto [cx, cy] = detail::sample_fg_pixel(mask, rng);
        // Scale 2 covers the whole bbox from any interior centroid.
        double lo = 0.0, hi = 2.0;
        for (int it = 0; it < 48; ++it) {
            const double mid = 0.5 * (lo + hi);
            const OcclusionResult r = rect_occlude_at(mask, cx, cy, mid, mid);
            const double err = std::abs(r.achieved_rate - target_rate);
            if (err < best_err) {
                best_err = err;
                best = r;
            }
            if (r.achieved_rate < target_rate)
                lo = mid;
            else
                hi = mid;
        }
        if (best_err <= tol) break;
    }
    return best;
}

}  // namespace imd
