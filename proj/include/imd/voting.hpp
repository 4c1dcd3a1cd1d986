#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "imd/mask.hpp"

namespace imd {

// Fuses N per-sample masks/logit maps into the next condition mask.
//
// Only mask_mean is pinned by the voting rule (pixel on iff the vote share
// reaches tau, inclusive); the other three are this project's reading of the
// strategy ablation:
//   mask_vote   - strict per-pixel majority of the binary masks;
//   logits_mean - mean of the logit maps reaches tau;
//   logits_vote - share of samples whose logit reaches 0.5 reaches tau.
enum class VotingKind { logits_vote, logits_mean, mask_vote, mask_mean };

inline const char* to_string(VotingKind k) {
    switch (k) {
        case VotingKind::logits_vote: return "logits_vote";
        case VotingKind::logits_mean: return "logits_mean";
        case VotingKind::mask_vote: return "mask_vote";
        case VotingKind::mask_mean: return "mask_mean";
    }
    return "?";
}

inline VotingKind voting_kind_from_string(const std::string& s) {
    if (s == "logits_vote") return VotingKind::logits_vote;
    if (s == "logits_mean") return VotingKind::logits_mean;
    if (s == "mask_vote") return VotingKind::mask_vote;
    if (s == "mask_mean") return VotingKind::mask_mean;
    throw std::invalid_argument("unknown voting strategy: " + s);
}

struct VotingStrategy {
    VotingKind kind = VotingKind::logits_vote;
    double tau = 0.5;

    void validate() const {
        if (!(tau >= 0.0 && tau <= 1.0))
            throw std::invalid_argument("VotingStrategy: tau outside [0,1]");
    }
};

inline BinaryMask fuse(const std::vector<BinaryMask>& masks, const std::vector<ProbMask>& logits,
                       const VotingStrategy& strategy) {
    strategy.validate();
    if (masks.empty()) throw std::invalid_argument("fuse: empty sample list");
    if (logits.size() != masks.size())
        throw std::invalid_argument("fuse: masks/logits length mismatch");
    const int w = masks.front().width(), h = masks.front().height();
    for (const auto& m : masks)
        if (m.width() != w || m.height() != h) throw std::invalid_argument("fuse: dimension mismatch");
    for (const auto& l : logits)
        if (l.width() != w || l.height() != h) throw std::invalid_argument("fuse: dimension mismatch");

    const double n = static_cast<double>(masks.size());
    BinaryMask out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            switch (strategy.kind) {
                case VotingKind::mask_mean: {
                    double count = 0;
                    for (const auto& m : masks) count += m.at(x, y);
                    out.set(x, y, count / n >= strategy.tau);
                    break;
                }
                case VotingKind::mask_vote: {
                    double count = 0;
                    for (const auto& m : masks) count += m.at(x, y);
                    out.set(x, y, count > n / 2.0);
                    break;
                }
                case VotingKind::logits_mean: {
                    double sum = 0;
                    for (const auto& l : logits) sum += l.at(x, y);
                    out.set(x, y, sum / n >= strategy.tau);
                    break;
                }
                case VotingKind::logits_vote: {
                    double count = 0;
                    for (const auto& l : logits) count += l.at(x, y) >= 0.5 ? 1.0 : 0.0;
                    out.set(x, y, count / n >= strategy.tau);
                    break;
                }
            }
        }
    }
    return out;
}

}  // namespace imd
