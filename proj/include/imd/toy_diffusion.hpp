#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "imd/rng.hpp"

namespace imd::toy {

// Desk-scale conditional denoising-diffusion trainer on flattened masks:
// DDPM forward process, epsilon-prediction objective, sinusoidal time
// embedding, a learned scalar gate on the condition embedding, and an
// auxiliary pre-diffusion mask head supervised with Dice + BCE. Gradients
// are hand-derived and guarded by a finite-difference check.

// ---------------------------------------------------------------------------
// Noise schedule and forward process
// ---------------------------------------------------------------------------

struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alpha_bar;  // length steps+1, alpha_bar[0] = 1, strictly decreasing

    void validate() const {
        if (steps < 1 || alpha_bar.size() != static_cast<std::size_t>(steps) + 1)
            throw std::invalid_argument("NoiseSchedule: bad size");
        if (alpha_bar[0] != 1.0) throw std::invalid_argument("NoiseSchedule: alpha_bar[0] != 1");
        for (int t = 1; t <= steps; ++t)
            if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1]))
                throw std::invalid_argument("NoiseSchedule: alpha_bar not strictly decreasing in (0,1]");
    }
};

enum class ScheduleKind { linear, cosine };

// Linear: per-step betas on the usual [1e-4, 0.02] grid rescaled by 1000/Tg
// so the terminal alpha_bar stays in the same regime at any step count.
// Cosine: squared-cosine alpha_bar with per-step beta clipped at 0.999.
inline NoiseSchedule make_schedule(int steps, ScheduleKind kind) {
    if (steps < 1) throw std::invalid_argument("make_schedule: steps must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
    if (kind == ScheduleKind::linear) {
        const double scale = 1000.0 / steps;
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps == 1 ? 0.5 : static_cast<double>(t - 1) / (steps - 1);
            const double beta = std::min(0.999, scale * (1e-4 + (0.02 - 1e-4) * frac));
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
    } else {
        const auto f = [steps](double t) {
            const double u = (t / steps + 0.008) / 1.008 * (3.14159265358979323846 / 2.0);
            const double c = std::cos(u);
            return c * c;
        };
        const double f0 = f(0.0);
        for (int t = 1; t <= steps; ++t) {
            const double beta = std::min(0.999, 1.0 - f(static_cast<double>(t)) / f(static_cast<double>(t - 1)));
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
        }
        (void)f0;
    }
    s.validate();
    return s;
}

// x_tau = sqrt(alpha_bar_tau) x0 + sqrt(1 - alpha_bar_tau) eps. tau = 0 is
// the identity (alpha_bar[0] = 1).
inline std::vector<double> forward_noise(const std::vector<double>& x0, int tau,
                                         const std::vector<double>& eps, const NoiseSchedule& sched) {
    sched.validate();
    if (tau < 0 || tau > sched.steps) throw std::invalid_argument("forward_noise: tau out of range");
    if (eps.size() != x0.size()) throw std::invalid_argument("forward_noise: shape mismatch");
    const double ab = sched.alpha_bar[static_cast<std::size_t>(tau)];
    const double ca = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = ca * x0[i] + cn * eps[i];
    return out;
}

// Interleaved sin/cos at geometric frequencies; values in [-1, 1].
inline std::vector<double> time_embedding(int tau, int embed_dim) {
    if (embed_dim < 2 || embed_dim % 2 != 0)
        throw std::invalid_argument("time_embedding: embed_dim must be even and >= 2");
    const int half = embed_dim / 2;
    std::vector<double> out(static_cast<std::size_t>(embed_dim));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        out[static_cast<std::size_t>(2 * i)] = std::sin(tau * freq);
        out[static_cast<std::size_t>(2 * i + 1)] = std::cos(tau * freq);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Linear {
    int out_dim = 0, in_dim = 0;
    std::vector<double> w;  // row-major out_dim x in_dim
    std::vector<double> b;  // out_dim

    static Linear zeros(int out_dim, int in_dim) {
        Linear l;
        l.out_dim = out_dim;
        l.in_dim = in_dim;
        l.w.assign(static_cast<std::size_t>(out_dim) * in_dim, 0.0);
        l.b.assign(static_cast<std::size_t>(out_dim), 0.0);
        return l;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        if (x.size() != static_cast<std::size_t>(in_dim))
            throw std::invalid_argument("Linear: input shape mismatch");
        std::vector<double> y(static_cast<std::size_t>(out_dim));
        for (int r = 0; r < out_dim; ++r) {
            double acc = b[static_cast<std::size_t>(r)];
            const double* row = &w[static_cast<std::size_t>(r) * in_dim];
            for (int c = 0; c < in_dim; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
            y[static_cast<std::size_t>(r)] = acc;
        }
        return y;
    }
};

struct ToyDims {
    int pixels = 256;     // flattened mask length (16 x 16)
    int cond_dim = 64;    // partial-token size D
    int embed_dim = 32;   // time embedding size, even
    int hidden = 256;     // trunk width
};

// Parameter set of the conditional epsilon-predictor:
//   encoder: concat(partial image, condition mask) -> partial token c_p
//   gate:    time embedding -> scalar multiplier on c_p (diffusion path only)
//   trunk:   [x_tau, gate * c_p, e_tau] -> predicted noise
//   mask head: ungated c_p -> pre-diffusion mask logits
struct ToyDenoiser {
    ToyDims dims;
    Linear encoder;    // cond_dim x 2*pixels
    Linear gate;       // 1 x embed_dim
    Linear trunk1;     // hidden x (pixels + cond_dim + embed_dim)
    Linear trunk2;     // hidden x hidden
    Linear trunk3;     // pixels x hidden
    Linear mask_head;  // pixels x cond_dim

    static ToyDenoiser zeros(const ToyDims& dims) {
        ToyDenoiser m;
        m.dims = dims;
        m.encoder = Linear::zeros(dims.cond_dim, 2 * dims.pixels);
        m.gate = Linear::zeros(1, dims.embed_dim);
        m.trunk1 = Linear::zeros(dims.hidden, dims.pixels + dims.cond_dim + dims.embed_dim);
        m.trunk2 = Linear::zeros(dims.hidden, dims.hidden);
        m.trunk3 = Linear::zeros(dims.pixels, dims.hidden);
        m.mask_head = Linear::zeros(dims.pixels, dims.cond_dim);
        return m;
    }
};

using ToyGradients = ToyDenoiser;  // same shapes, holds d(loss)/d(param)

// Named parameter groups, in a fixed order shared by Adam and the gradcheck.
inline std::vector<std::pair<std::string, std::vector<double>*>> param_groups(ToyDenoiser& m) {
    return {
        {"encoder.w", &m.encoder.w},     {"encoder.b", &m.encoder.b},
        {"gate.w", &m.gate.w},           {"gate.b", &m.gate.b},
        {"trunk1.w", &m.trunk1.w},       {"trunk1.b", &m.trunk1.b},
        {"trunk2.w", &m.trunk2.w},       {"trunk2.b", &m.trunk2.b},
        {"trunk3.w", &m.trunk3.w},       {"trunk3.b", &m.trunk3.b},
        {"mask_head.w", &m.mask_head.w}, {"mask_head.b", &m.mask_head.b},
    };
}

// Uniform(+-1/sqrt(fan_in)) init; the gate bias starts at 1 so the condition
// path is open before training.
inline ToyDenoiser init_denoiser(const ToyDims& dims, std::uint64_t seed) {
    ToyDenoiser m = ToyDenoiser::zeros(dims);
    Rng rng(seed);
    const auto fill = [&rng](Linear& l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
        for (auto& v : l.w) v = rng.uniform(-s, s);
    };
    fill(m.encoder);
    fill(m.gate);
    fill(m.trunk1);
    fill(m.trunk2);
    fill(m.trunk3);
    fill(m.mask_head);
    m.gate.b[0] = 1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardCache {
    std::vector<double> input;   // 2P concat of partial image and condition
    std::vector<double> e_tau;   // time embedding
    std::vector<double> c_p;     // partial token (post-tanh)
    double gate_value = 0.0;
    std::vector<double> z;       // trunk input [x_tau, gate*c_p, e_tau]
    std::vector<double> h1, h2;  // trunk activations (post-tanh)
    std::vector<double> eps_hat;
    std::vector<double> mask_logits;
};

inline ForwardCache denoiser_forward(const ToyDenoiser& m, const std::vector<double>& x_tau,
                                     const std::vector<double>& partial_image,
                                     const std::vector<double>& condition_mask, int tau) {
    const auto P = static_cast<std::size_t>(m.dims.pixels);
    if (x_tau.size() != P || partial_image.size() != P || condition_mask.size() != P)
        throw std::invalid_argument("denoiser_forward: shape mismatch");

    ForwardCache fc;
    fc.input.reserve(2 * P);
    fc.input.insert(fc.input.end(), partial_image.begin(), partial_image.end());
    fc.input.insert(fc.input.end(), condition_mask.begin(), condition_mask.end());

    fc.e_tau = time_embedding(tau, m.dims.embed_dim);

    fc.c_p = m.encoder.apply(fc.input);
    for (auto& v : fc.c_p) v = std::tanh(v);

    fc.gate_value = m.gate.apply(fc.e_tau)[0];

    fc.z.reserve(P + fc.c_p.size() + fc.e_tau.size());
    fc.z.insert(fc.z.end(), x_tau.begin(), x_tau.end());
    for (double v : fc.c_p) fc.z.push_back(fc.gate_value * v);
    fc.z.insert(fc.z.end(), fc.e_tau.begin(), fc.e_tau.end());

    fc.h1 = m.trunk1.apply(fc.z);
    for (auto& v : fc.h1) v = std::tanh(v);
    fc.h2 = m.trunk2.apply(fc.h1);
    for (auto& v : fc.h2) v = std::tanh(v);
    fc.eps_hat = m.trunk3.apply(fc.h2);

    fc.mask_logits = m.mask_head.apply(fc.c_p);  // reads the ungated token
    return fc;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Squared L2 norm of the prediction error, summed over dimensions
// (per-sample; callers average over the batch).
inline double loss_eps(const std::vector<double>& eps_hat, const std::vector<double>& eps) {
    if (eps_hat.size() != eps.size()) throw std::invalid_argument("loss_eps: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps_hat[i] - eps[i];
        acc += d * d;
    }
    return acc;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Soft Dice (smoothing 1) plus lambda_ce * mean BCE against a binary target.
inline double loss_mask(const std::vector<double>& logits, const std::vector<double>& target,
                        double lambda_ce) {
    if (logits.size() != target.size()) throw std::invalid_argument("loss_mask: shape mismatch");
    if (lambda_ce < 0.0) throw std::invalid_argument("loss_mask: lambda_ce < 0");
    const double smooth = 1.0;
    double sum_pm = 0.0, sum_p = 0.0, sum_m = 0.0, ce = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = sigmoid(logits[i]);
        const double mval = target[i];
        sum_pm += p * mval;
        sum_p += p;
        sum_m += mval;
        // numerically stable BCE in logit form
        const double z = logits[i];
        ce += std::max(z, 0.0) - z * mval + std::log1p(std::exp(-std::abs(z)));
    }
    const double dice = 1.0 - (2.0 * sum_pm + smooth) / (sum_p + sum_m + smooth);
    return dice + lambda_ce * ce / static_cast<double>(logits.size());
}

// d loss_mask / d logits, same conventions as loss_mask.
inline std::vector<double> loss_mask_grad(const std::vector<double>& logits,
                                          const std::vector<double>& target, double lambda_ce) {
    if (logits.size() != target.size()) throw std::invalid_argument("loss_mask_grad: shape mismatch");
    const double smooth = 1.0;
    const auto n = static_cast<double>(logits.size());
    double sum_pm = 0.0, sum_p = 0.0, sum_m = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = sigmoid(logits[i]);
        sum_pm += p[i] * target[i];
        sum_p += p[i];
        sum_m += target[i];
    }
    const double denom = sum_p + sum_m + smooth;
    std::vector<double> g(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double ddice_dp = -(2.0 * target[i] * denom - (2.0 * sum_pm + smooth)) / (denom * denom);
        g[i] = ddice_dp * p[i] * (1.0 - p[i]) + lambda_ce * (p[i] - target[i]) / n;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Backward pass (hand-derived)
// ---------------------------------------------------------------------------

struct TrainSample {
    std::vector<double> complete;       // target mask, also the diffusion x0
    std::vector<double> partial_image;
    std::vector<double> condition;      // condition mask
    int tau = 1;
    std::vector<double> eps;            // injected noise
};

struct TrainConfig {
    double lambda_ce = 1.0;
    double learning_rate = 1e-3;
    int batch_size = 8;
    int epochs = 30;
    // Adam moments, standard defaults.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (lambda_ce < 0.0) throw std::invalid_argument("TrainConfig: lambda_ce < 0");
    }
};

struct BackwardResult {
    ToyGradients grads;
    double loss_eps_mean = 0.0;
    double loss_mask_mean = 0.0;
    double total() const { return loss_eps_mean + loss_mask_mean; }
};

namespace detail {
inline void add_outer(Linear& acc, const std::vector<double>& delta, const std::vector<double>& x,
                      double scale) {
    for (int r = 0; r < acc.out_dim; ++r) {
        const double dr = delta[static_cast<std::size_t>(r)] * scale;
        double* row = &acc.w[static_cast<std::size_t>(r) * acc.in_dim];
        for (int c = 0; c < acc.in_dim; ++c) row[c] += dr * x[static_cast<std::size_t>(c)];
        acc.b[static_cast<std::size_t>(r)] += dr;
    }
}

inline std::vector<double> transpose_apply(const Linear& l, const std::vector<double>& delta) {
    std::vector<double> out(static_cast<std::size_t>(l.in_dim), 0.0);
    for (int r = 0; r < l.out_dim; ++r) {
        const double dr = delta[static_cast<std::size_t>(r)];
        const double* row = &l.w[static_cast<std::size_t>(r) * l.in_dim];
        for (int c = 0; c < l.in_dim; ++c) out[static_cast<std::size_t>(c)] += row[c] * dr;
    }
    return out;
}
}  // namespace detail

// Exact gradients of mean(loss_eps) + mean(loss_mask) over the batch with
// respect to every weight. Samples are accumulated in index order so the
// result is bit-reproducible.
inline BackwardResult backward(const ToyDenoiser& m, const std::vector<TrainSample>& batch,
                               const NoiseSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    BackwardResult res;
    res.grads = ToyDenoiser::zeros(m.dims);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const auto P = static_cast<std::size_t>(m.dims.pixels);

    for (const auto& sample : batch) {
        if (sample.complete.size() != P || sample.eps.size() != P)
            throw std::invalid_argument("backward: sample shape mismatch");
        const auto x_tau = forward_noise(sample.complete, sample.tau, sample.eps, sched);
        const ForwardCache fc =
            denoiser_forward(m, x_tau, sample.partial_image, sample.condition, sample.tau);

        res.loss_eps_mean += inv_b * loss_eps(fc.eps_hat, sample.eps);
        res.loss_mask_mean += inv_b * loss_mask(fc.mask_logits, sample.complete, cfg.lambda_ce);

        // eps path: d/d eps_hat of sum (eps_hat - eps)^2
        std::vector<double> d3(P);
        for (std::size_t i = 0; i < P; ++i) d3[i] = 2.0 * (fc.eps_hat[i] - sample.eps[i]);

        detail::add_outer(res.grads.trunk3, d3, fc.h2, inv_b);
        std::vector<double> d2 = detail::transpose_apply(m.trunk3, d3);
        for (std::size_t i = 0; i < d2.size(); ++i) d2[i] *= 1.0 - fc.h2[i] * fc.h2[i];

        detail::add_outer(res.grads.trunk2, d2, fc.h1, inv_b);
        std::vector<double> d1 = detail::transpose_apply(m.trunk2, d2);
        for (std::size_t i = 0; i < d1.size(); ++i) d1[i] *= 1.0 - fc.h1[i] * fc.h1[i];

        detail::add_outer(res.grads.trunk1, d1, fc.z, inv_b);
        const std::vector<double> dz = detail::transpose_apply(m.trunk1, d1);

        // Split dz: [x_tau | gate * c_p | e_tau]; only the middle block
        // carries parameters further back.
        const auto D = static_cast<std::size_t>(m.dims.cond_dim);
        std::vector<double> d_gated(D);
        for (std::size_t i = 0; i < D; ++i) d_gated[i] = dz[P + i];

        double d_gate = 0.0;
        std::vector<double> dc_p(D, 0.0);
        for (std::size_t i = 0; i < D; ++i) {
            d_gate += d_gated[i] * fc.c_p[i];
            dc_p[i] = d_gated[i] * fc.gate_value;
        }
        detail::add_outer(res.grads.gate, std::vector<double>{d_gate}, fc.e_tau, inv_b);

        // mask path: reads the ungated token
        const std::vector<double> dlogits =
            loss_mask_grad(fc.mask_logits, sample.complete, cfg.lambda_ce);
        detail::add_outer(res.grads.mask_head, dlogits, fc.c_p, inv_b);
        const std::vector<double> dc_p_mask = detail::transpose_apply(m.mask_head, dlogits);
        for (std::size_t i = 0; i < D; ++i) dc_p[i] += dc_p_mask[i];

        // encoder: through tanh
        std::vector<double> d_pre(D);
        for (std::size_t i = 0; i < D; ++i) d_pre[i] = dc_p[i] * (1.0 - fc.c_p[i] * fc.c_p[i]);
        detail::add_outer(res.grads.encoder, d_pre, fc.input, inv_b);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    ToyDenoiser m, v;
    long step = 0;

    static AdamState zeros(const ToyDims& dims) {
        return AdamState{ToyDenoiser::zeros(dims), ToyDenoiser::zeros(dims), 0};
    }
};

// Standard bias-corrected Adam update, applied in place.
inline void adam_step(ToyDenoiser& model, const ToyGradients& grads, AdamState& state,
                      const TrainConfig& cfg) {
    cfg.validate();
    ++state.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    auto params = param_groups(model);
    auto g_model = param_groups(const_cast<ToyGradients&>(grads));
    auto m_state = param_groups(state.m);
    auto v_state = param_groups(state.v);
    for (std::size_t gi = 0; gi < params.size(); ++gi) {
        auto& p = *params[gi].second;
        const auto& g = *g_model[gi].second;
        auto& mm = *m_state[gi].second;
        auto& vv = *v_state[gi].second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            mm[i] = b1 * mm[i] + (1.0 - b1) * g[i];
            vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = mm[i] / corr1;
            const double vhat = vv[i] / corr2;
            p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

using EpsModel = std::function<std::vector<double>(const std::vector<double>& x_tau, int tau)>;

// Ancestral DDPM chain from a given x_T. With `deterministic` the posterior
// variance is dropped, which inverts the forward process exactly under a
// consistent epsilon oracle.
inline std::vector<double> ddpm_denoise_from(std::vector<double> x, const EpsModel& eps_model,
                                             const NoiseSchedule& sched, Rng& rng,
                                             bool deterministic = false) {
    sched.validate();
    for (int tau = sched.steps; tau >= 1; --tau) {
        const double ab_t = sched.alpha_bar[static_cast<std::size_t>(tau)];
        const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(tau - 1)];
        const double alpha = ab_t / ab_prev;
        const double beta = 1.0 - alpha;
        const std::vector<double> eps_hat = eps_model(x, tau);
        if (eps_hat.size() != x.size()) throw std::invalid_argument("ddpm: eps model shape mismatch");
        const double scale = 1.0 / std::sqrt(alpha);
        const double eps_coef = beta / std::sqrt(1.0 - ab_t);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = scale * (x[i] - eps_coef * eps_hat[i]);
        if (tau > 1 && !deterministic) {
            const double var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
            const double sd = std::sqrt(var);
            for (auto& v : x) v += sd * rng.normal();
        }
    }
    return x;
}

// Full conditional sample: start from standard normal noise, denoise under
// the model, clamp to [0,1].
inline std::vector<double> ddpm_sample(const ToyDenoiser& m, const std::vector<double>& partial_image,
                                       const std::vector<double>& condition,
                                       const NoiseSchedule& sched, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(m.dims.pixels));
    for (auto& v : x) v = rng.normal();
    const EpsModel eps_model = [&](const std::vector<double>& xt, int tau) {
        return denoiser_forward(m, xt, partial_image, condition, tau).eps_hat;
    };
    x = ddpm_denoise_from(std::move(x), eps_model, sched, rng, false);
    for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
    return x;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    int epoch = 0;
    double loss_eps = 0.0;
    double loss_mask = 0.0;
    double total = 0.0;
};

inline std::vector<TrainLogRow> train(ToyDenoiser& model, const std::vector<TrainSample>& dataset,
                                      const NoiseSchedule& sched, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    AdamState adam = AdamState::zeros(model.dims);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<TrainLogRow> log;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates off the shared stream keeps runs reproducible.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        TrainLogRow row;
        row.epoch = epoch;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<TrainSample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i)
                batch.push_back(dataset[order[i]]);
            const BackwardResult res = backward(model, batch, sched, cfg);
            adam_step(model, res.grads, adam, cfg);
            row.loss_eps += res.loss_eps_mean;
            row.loss_mask += res.loss_mask_mean;
            ++batches;
        }
        row.loss_eps /= batches;
        row.loss_mask /= batches;
        row.total = row.loss_eps + row.loss_mask;
        log.push_back(row);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double worst = 0.0;
    bool pass(double tol) const { return worst < tol; }
};

// Central finite differences of the batch loss against the analytic
// gradients. samples_per_group < 0 checks every weight of every group.
inline GradCheckReport gradcheck(const ToyDims& dims, int batch_size, std::uint64_t seed,
                                 double h = 1e-5, int samples_per_group = -1) {
    Rng rng(seed);
    ToyDenoiser model = init_denoiser(dims, rng.next_u64());
    const NoiseSchedule sched = make_schedule(40, ScheduleKind::cosine);
    TrainConfig cfg;
    cfg.lambda_ce = 1.0;

    std::vector<TrainSample> batch;
    for (int b = 0; b < batch_size; ++b) {
        TrainSample s;
        s.complete.resize(static_cast<std::size_t>(dims.pixels));
        s.partial_image.resize(static_cast<std::size_t>(dims.pixels));
        s.condition.resize(static_cast<std::size_t>(dims.pixels));
        s.eps.resize(static_cast<std::size_t>(dims.pixels));
        for (int i = 0; i < dims.pixels; ++i) {
            const bool fg = rng.bernoulli(0.5);
            s.complete[static_cast<std::size_t>(i)] = fg ? 1.0 : 0.0;
            const bool visible = fg && rng.bernoulli(0.6);
            s.partial_image[static_cast<std::size_t>(i)] = visible ? 0.8 : 0.0;
            s.condition[static_cast<std::size_t>(i)] = visible ? 1.0 : 0.0;
            s.eps[static_cast<std::size_t>(i)] = rng.normal();
        }
        s.tau = static_cast<int>(rng.uniform_int(1, sched.steps));
        batch.push_back(std::move(s));
    }

    const auto total_loss = [&](const ToyDenoiser& m) {
        double acc = 0.0;
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        for (const auto& s : batch) {
            const auto x_tau = forward_noise(s.complete, s.tau, s.eps, sched);
            const ForwardCache fc = denoiser_forward(m, x_tau, s.partial_image, s.condition, s.tau);
            acc += inv_b * (loss_eps(fc.eps_hat, s.eps) + loss_mask(fc.mask_logits, s.complete, cfg.lambda_ce));
        }
        return acc;
    };

    BackwardResult analytic = backward(model, batch, sched, cfg);

    GradCheckReport report;
    auto params = param_groups(model);
    auto grads = param_groups(analytic.grads);
    for (std::size_t gi = 0; gi < params.size(); ++gi) {
        GradCheckGroup group;
        group.name = params[gi].first;
        auto& p = *params[gi].second;
        const auto& g = *grads[gi].second;
        std::vector<std::size_t> indices;
        if (samples_per_group < 0 || static_cast<std::size_t>(samples_per_group) >= p.size()) {
            indices.resize(p.size());
            std::iota(indices.begin(), indices.end(), 0);
        } else {
            for (int i = 0; i < samples_per_group; ++i)
                indices.push_back(static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(p.size()) - 1)));
        }
        for (const auto idx : indices) {
            const double saved = p[idx];
            p[idx] = saved + h;
            const double lp = total_loss(model);
            p[idx] = saved - h;
            const double lm = total_loss(model);
            p[idx] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double rel = std::abs(g[idx] - numeric) /
                               (std::abs(g[idx]) + std::abs(numeric) + 1e-12);
            group.max_rel_err = std::max(group.max_rel_err, rel);
            ++group.checked;
        }
        report.worst = std::max(report.worst, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline nlohmann::json checkpoint_to_json(const ToyDenoiser& model) {
    nlohmann::json j;
    j["version"] = 1;
    j["dims"] = {{"pixels", model.dims.pixels},
                 {"cond_dim", model.dims.cond_dim},
                 {"embed_dim", model.dims.embed_dim},
                 {"hidden", model.dims.hidden}};
    auto groups = param_groups(const_cast<ToyDenoiser&>(model));
    for (const auto& [name, vec] : groups) j["params"][name] = *vec;
    return j;
}

inline ToyDenoiser checkpoint_from_json(const nlohmann::json& j) {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("checkpoint: unsupported version");
    ToyDims dims;
    dims.pixels = j.at("dims").at("pixels").get<int>();
    dims.cond_dim = j.at("dims").at("cond_dim").get<int>();
    dims.embed_dim = j.at("dims").at("embed_dim").get<int>();
    dims.hidden = j.at("dims").at("hidden").get<int>();
    ToyDenoiser model = ToyDenoiser::zeros(dims);
    for (auto& [name, vec] : param_groups(model)) {
        const auto stored = j.at("params").at(name).get<std::vector<double>>();
        if (stored.size() != vec->size()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
        *vec = stored;
    }
    return model;
}

inline void save_checkpoint(const ToyDenoiser& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << checkpoint_to_json(model).dump() << "\n";
}

inline ToyDenoiser load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return checkpoint_from_json(j);
}

}  // namespace imd::toy
