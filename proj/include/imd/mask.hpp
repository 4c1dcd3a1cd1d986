#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

namespace imd {

// Pixel conventions, fixed project-wide: row-major storage, x grows right,
// y grows down, (x, y) addresses column x of row y.

struct BBox {
    int x0 = 0, y0 = 0;  // inclusive
    int x1 = 0, y1 = 0;  // exclusive

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool operator==(const BBox&) const = default;
};

// W x H binary grid; the universal currency of the framework.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height)
        : width_(width), height_(height), data_(check_dims(width, height), 0) {}
    BinaryMask(int width, int height, std::vector<std::uint8_t> data)
        : width_(width), height_(height), data_(std::move(data)) {
        check_dims(width, height);
        if (data_.size() != static_cast<std::size_t>(width_) * height_)
            throw std::invalid_argument("BinaryMask: data length != width*height");
        for (auto v : data_)
            if (v > 1) throw std::invalid_argument("BinaryMask: element not in {0,1}");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    const std::vector<std::uint8_t>& data() const { return data_; }

    std::uint8_t at(int x, int y) const { return data_[idx(x, y)]; }
    void set(int x, int y, bool v) { data_[idx(x, y)] = v ? 1 : 0; }
    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width_ && y >= 0 && y < height_;
    }

    std::size_t area() const {
        std::size_t n = 0;
        for (auto v : data_) n += v;
        return n;
    }
    bool empty_fg() const { return area() == 0; }

    bool same_dims(const BinaryMask& o) const {
        return width_ == o.width_ && height_ == o.height_;
    }
    bool operator==(const BinaryMask&) const = default;

private:
    static std::size_t check_dims(int w, int h) {
        if (w < 1 || h < 1) throw std::invalid_argument("BinaryMask: width/height must be >= 1");
        return static_cast<std::size_t>(w) * h;
    }
    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

    int width_ = 0, height_ = 0;
    std::vector<std::uint8_t> data_;
};

// W x H real-valued map in [0,1]: voting intermediates and segmenter logits.
class ProbMask {
public:
    ProbMask() = default;
    ProbMask(int width, int height)
        : width_(width), height_(height) {
        if (width < 1 || height < 1) throw std::invalid_argument("ProbMask: width/height must be >= 1");
        data_.assign(static_cast<std::size_t>(width) * height, 0.0);
    }
    ProbMask(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (width < 1 || height < 1) throw std::invalid_argument("ProbMask: width/height must be >= 1");
        if (data_.size() != static_cast<std::size_t>(width_) * height_)
            throw std::invalid_argument("ProbMask: data length != width*height");
        for (double v : data_)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ProbMask: value outside [0,1]");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<double>& data() const { return data_; }
    double at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    bool same_dims(const ProbMask& o) const {
        return width_ == o.width_ && height_ == o.height_;
    }
    bool operator==(const ProbMask&) const = default;

private:
    int width_ = 0, height_ = 0;
    std::vector<double> data_;
};

namespace detail {
inline void require_same_dims(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (!a.same_dims(b))
        throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Set algebra
// ---------------------------------------------------------------------------

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "mask_union");
    BinaryMask out = a;
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            if (b.at(x, y)) out.set(x, y, true);
    return out;
}

inline BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "mask_intersect");
    BinaryMask out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            out.set(x, y, a.at(x, y) && b.at(x, y));
    return out;
}

// a minus b.
inline BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "mask_difference");
    BinaryMask out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            out.set(x, y, a.at(x, y) && !b.at(x, y));
    return out;
}

inline BinaryMask mask_xor(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "mask_xor");
    BinaryMask out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x)
            out.set(x, y, a.at(x, y) != b.at(x, y));
    return out;
}

inline bool is_subset(const BinaryMask& sub, const BinaryMask& super) {
    detail::require_same_dims(sub, super, "is_subset");
    for (int y = 0; y < sub.height(); ++y)
        for (int x = 0; x < sub.width(); ++x)
            if (sub.at(x, y) && !super.at(x, y)) return false;
    return true;
}

inline std::size_t intersection_area(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "intersection_area");
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a.data()[i] & b.data()[i];
    return n;
}

// Foreground translated by (dx, dy); pixels shifted off-canvas are dropped.
inline BinaryMask translate(const BinaryMask& m, int dx, int dy) {
    BinaryMask out(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(x, y)) {
                const int nx = x + dx, ny = y + dy;
                if (out.in_bounds(nx, ny)) out.set(nx, ny, true);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Overlap metrics
// ---------------------------------------------------------------------------

// |a n b| / |a u b|. Two empty masks compare as identical: 1.0.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a.data()[i] & b.data()[i];
        uni += a.data()[i] | b.data()[i];
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// 2|a n b| / (|a| + |b|); 1.0 when both are empty.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    detail::require_same_dims(a, b, "dice");
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a.data()[i] & b.data()[i];
        total += a.data()[i] + b.data()[i];
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Averaging, thresholding, geometry
// ---------------------------------------------------------------------------

// Per-pixel arithmetic mean of a nonempty list of same-size masks.
inline ProbMask mean_masks(const std::vector<BinaryMask>& masks) {
    if (masks.empty()) throw std::invalid_argument("mean_masks: empty list");
    const auto& first = masks.front();
    std::vector<double> acc(first.size(), 0.0);
    for (const auto& m : masks) {
        detail::require_same_dims(first, m, "mean_masks");
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.data()[i];
    }
    const double n = static_cast<double>(masks.size());
    for (double& v : acc) v /= n;
    return ProbMask(first.width(), first.height(), std::move(acc));
}

// Pixel = 1 iff p >= tau. The comparison is inclusive, so tau = 0.5 with an
// even vote count lands ties on foreground.
inline BinaryMask threshold(const ProbMask& p, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("threshold: tau outside [0,1]");
    BinaryMask out(p.width(), p.height());
    for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x)
            out.set(x, y, p.at(x, y) >= tau);
    return out;
}

// Tight axis-aligned box over the foreground. Throws on an empty mask.
inline BBox bbox_of(const BinaryMask& mask) {
    int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw std::invalid_argument("bbox_of: empty mask");
    return BBox{x0, y0, x1 + 1, y1 + 1};
}

// Row of a probability map, left to right.
inline std::vector<double> cross_section(const ProbMask& p, int row) {
    if (row < 0 || row >= p.height()) throw std::out_of_range("cross_section: row out of range");
    std::vector<double> out(static_cast<std::size_t>(p.width()));
    for (int x = 0; x < p.width(); ++x) out[static_cast<std::size_t>(x)] = p.at(x, row);
    return out;
}

// True iff v splits at some index into a non-decreasing prefix and a
// non-increasing suffix, where each step may go against the required
// direction by at most tol.
inline bool is_unimodal(const std::vector<double>& v, double tol) {
    if (tol < 0) throw std::invalid_argument("is_unimodal: tol must be >= 0");
    const std::size_t n = v.size();
    if (n < 3) return true;
    // Longest tolerant non-decreasing prefix and non-increasing suffix.
    std::size_t rise_end = 0;
    while (rise_end + 1 < n && v[rise_end + 1] >= v[rise_end] - tol) ++rise_end;
    std::size_t fall_begin = n - 1;
    while (fall_begin > 0 && v[fall_begin - 1] >= v[fall_begin] - tol) --fall_begin;
    return fall_begin <= rise_end;
}

// ---------------------------------------------------------------------------
// Connected components (4-connectivity throughout)
// ---------------------------------------------------------------------------

struct ComponentLabels {
    std::vector<int> labels;      // -1 background, else component id
    std::vector<std::size_t> sizes;  // size per component id
    int count = 0;
};

inline ComponentLabels label_components(const BinaryMask& mask) {
    ComponentLabels out;
    out.labels.assign(mask.size(), -1);
    const int w = mask.width(), h = mask.height();
    std::vector<std::pair<int, int>> stack;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            const std::size_t si = static_cast<std::size_t>(sy) * w + sx;
            if (!mask.data()[si] || out.labels[si] >= 0) continue;
            const int id = out.count++;
            out.sizes.push_back(0);
            stack.push_back({sx, sy});
            out.labels[si] = id;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                ++out.sizes[static_cast<std::size_t>(id)];
                constexpr int dx[4] = {1, -1, 0, 0};
                constexpr int dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    const int nx = x + dx[d], ny = y + dy[d];
                    if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                    const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                    if (mask.data()[ni] && out.labels[ni] < 0) {
                        out.labels[ni] = id;
                        stack.push_back({nx, ny});
                    }
                }
            }
        }
    }
    return out;
}

inline bool is_4connected(const BinaryMask& mask) {
    return label_components(mask).count <= 1;
}

// The 4-connected component of `mask` with maximal overlap with
// `seed_region`; if no component overlaps, the globally largest one.
// Ties break toward the lower component id (scan order), which keeps the
// result deterministic. An empty mask maps to an empty mask.
inline BinaryMask largest_component_containing(const BinaryMask& mask, const BinaryMask& seed_region) {
    detail::require_same_dims(mask, seed_region, "largest_component_containing");
    const auto comps = label_components(mask);
    if (comps.count == 0) return BinaryMask(mask.width(), mask.height());

    std::vector<std::size_t> overlap(static_cast<std::size_t>(comps.count), 0);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (comps.labels[i] >= 0 && seed_region.data()[i])
            ++overlap[static_cast<std::size_t>(comps.labels[i])];

    int best = 0;
    bool any_overlap = false;
    for (int id = 0; id < comps.count; ++id)
        if (overlap[static_cast<std::size_t>(id)] > overlap[static_cast<std::size_t>(best)]) best = id;
    any_overlap = overlap[static_cast<std::size_t>(best)] > 0;
    if (!any_overlap) {
        best = 0;
        for (int id = 0; id < comps.count; ++id)
            if (comps.sizes[static_cast<std::size_t>(id)] > comps.sizes[static_cast<std::size_t>(best)]) best = id;
    }

    BinaryMask out(mask.width(), mask.height());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (comps.labels[static_cast<std::size_t>(y) * mask.width() + x] == best) out.set(x, y, true);
    return out;
}

// ---------------------------------------------------------------------------
// Morphology (Chebyshev / 8-neighbour structuring element)
// ---------------------------------------------------------------------------

inline BinaryMask dilate_cheby(const BinaryMask& m, int radius) {
    if (radius <= 0) return m;
    BinaryMask out(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            bool hit = false;
            for (int oy = -radius; oy <= radius && !hit; ++oy)
                for (int ox = -radius; ox <= radius && !hit; ++ox) {
                    const int nx = x + ox, ny = y + oy;
                    if (m.in_bounds(nx, ny) && m.at(nx, ny)) hit = true;
                }
            out.set(x, y, hit);
        }
    return out;
}

inline BinaryMask erode_cheby(const BinaryMask& m, int radius) {
    if (radius <= 0) return m;
    BinaryMask out(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(x, y)) continue;
            bool keep = true;
            for (int oy = -radius; oy <= radius && keep; ++oy)
                for (int ox = -radius; ox <= radius && keep; ++ox) {
                    const int nx = x + ox, ny = y + oy;
                    if (!m.in_bounds(nx, ny) || !m.at(nx, ny)) keep = false;
                }
            out.set(x, y, keep);
        }
    return out;
}

// Multi-source 4-neighbour BFS distance from `sources` over the full grid.
// Distance 0 on source pixels.
inline std::vector<int> bfs_distance(const BinaryMask& sources) {
    const int w = sources.width(), h = sources.height();
    std::vector<int> dist(sources.size(), -1);
    std::queue<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (sources.at(x, y)) {
                dist[static_cast<std::size_t>(y) * w + x] = 0;
                q.push({x, y});
            }
    while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop();
        const int d = dist[static_cast<std::size_t>(y) * w + x];
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int nx = x + dx[k], ny = y + dy[k];
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            auto& nd = dist[static_cast<std::size_t>(ny) * w + nx];
            if (nd < 0) {
                nd = d + 1;
                q.push({nx, ny});
            }
        }
    }
    return dist;
}

}  // namespace imd
