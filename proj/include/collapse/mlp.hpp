#pragma once
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "collapse/mat.hpp"
#include "collapse/nc_metrics.hpp"
#include "collapse/rng.hpp"

namespace collapse {

enum class Dtype { f32, f64 };
enum class WdScope { last_layer_and_gamma, all_layers };
enum class ForwardMode { train, full_batch_eval };

struct MlpConfig {
    std::vector<int> layer_widths;  // input d ... feature dim ... C
    bool use_bn = false;            // one BN after the last ReLU, before the final linear
    bool use_biases = false;        // hidden-layer biases; final layer and BN never have one
    double var_eps = 1e-5;          // added to the batch variance before sqrt
    Dtype dtype = Dtype::f64;

    int num_layers() const { return int(layer_widths.size()) - 1; }
    int input_dim() const { return layer_widths.front(); }
    int feature_dim() const { return layer_widths[layer_widths.size() - 2]; }
    int num_classes() const { return layer_widths.back(); }

    void validate() const {
        require(layer_widths.size() >= 2, "MlpConfig: need at least input and output widths");
        for (int w : layer_widths) require(w >= 1, "MlpConfig: widths must be positive");
    }
};

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    AdamParams adam;
    double lr = 1e-3;
    int epochs = 300;
    double lr_decay = 0.1;  // applied at epochs ceil(E/4), ceil(2E/4), ceil(3E/4)
    double wd_lambda = 0.0;
    WdScope wd_scope = WdScope::last_layer_and_gamma;
    int batch_size = 128;
    std::uint64_t seed = 0;
    std::optional<double> freeze_gamma_to;  // per-entry constant; excluded from updates
    int metric_every = 5;
    bool centering = true;  // centering flag for NcReport snapshots
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;      // unregularized average CE over the full dataset
    double reg_loss = 0.0;  // loss + WD penalty
    double accuracy = 0.0;
    NcReport nc;
    double alpha = 0.0;
    double beta = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct DivergenceError : std::runtime_error {
    int epoch;
    explicit DivergenceError(int e)
        : std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(e)),
          epoch(e) {}
};

template <class Real>
struct BnStatsT {
    std::vector<Real> mu;
    std::vector<Real> sigma;  // sqrt(population variance + var_eps)
    double var_eps = 0.0;
};

using BnStats = BnStatsT<double>;

// Batch normalization without bias: out = (x - mu) / sqrt(var + eps) * gamma,
// with the biased (divide-by-batch) variance. Requires batch >= 2; a
// zero-variance dimension with var_eps == 0 is a degenerate batch.
template <class Real>
std::pair<Mat<Real>, BnStatsT<Real>> bn_forward(const Mat<Real>& x, const std::vector<Real>& gamma,
                                                double var_eps) {
    require(x.rows >= 2, "bn_forward: batch must have at least 2 rows");
    require(x.cols == gamma.size(), "bn_forward: gamma length mismatch");
    require(var_eps >= 0.0, "bn_forward: var_eps must be non-negative");

    const std::size_t b = x.rows, d = x.cols;
    BnStatsT<Real> stats;
    stats.var_eps = var_eps;
    stats.mu.assign(d, Real(0));
    stats.sigma.assign(d, Real(0));

    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < d; ++k) stats.mu[k] += x(i, k);
    for (std::size_t k = 0; k < d; ++k) stats.mu[k] /= Real(b);

    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            Real t = x(i, k) - stats.mu[k];
            stats.sigma[k] += t * t;
        }
    for (std::size_t k = 0; k < d; ++k) {
        Real var = stats.sigma[k] / Real(b);
        if (var <= Real(0) && var_eps == 0.0)
            throw std::runtime_error("bn_forward: degenerate batch (zero variance in dimension " +
                                     std::to_string(k) + " with var_eps = 0)");
        stats.sigma[k] = std::sqrt(var + Real(var_eps));
    }

    Mat<Real> out(b, d);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < d; ++k)
            out(i, k) = (x(i, k) - stats.mu[k]) / stats.sigma[k] * gamma[k];
    return {std::move(out), std::move(stats)};
}

template <class Real>
struct MlpT {
    MlpConfig config;
    std::vector<Mat<Real>> weights;             // [out x in] per layer
    std::vector<std::vector<Real>> biases;      // hidden layers only (empty if disabled)
    std::vector<Real> gamma;                    // BN scale (empty if no BN)
    std::uint64_t rng_seed = 0;
};

using Mlp = MlpT<double>;

// Zero-mean Gaussian init scaled by sqrt(2 / fan_in); gamma starts at ones.
// The init stream is substream 0 of the seed so training's shuffle stream
// never interleaves with it.
template <class Real>
MlpT<Real> make_mlp(const MlpConfig& config, std::uint64_t seed) {
    config.validate();
    MlpT<Real> m;
    m.config = config;
    m.rng_seed = seed;
    Rng rng = Rng::substream(seed, 0);
    const int L = config.num_layers();
    for (int l = 0; l < L; ++l) {
        const std::size_t in = std::size_t(config.layer_widths[std::size_t(l)]);
        const std::size_t out = std::size_t(config.layer_widths[std::size_t(l) + 1]);
        Mat<Real> w(out, in);
        const double scale = std::sqrt(2.0 / double(in));
        for (auto& v : w.data) v = Real(rng.normal() * scale);
        m.weights.push_back(std::move(w));
        if (config.use_biases && l < L - 1) m.biases.emplace_back(out, Real(0));
    }
    if (config.use_bn) m.gamma.assign(std::size_t(config.feature_dim()), Real(1));
    return m;
}

template <class Real>
struct ForwardTrace {
    Mat<Real> input;
    std::vector<Mat<Real>> pre;   // hidden pre-activations
    std::vector<Mat<Real>> act;   // hidden post-ReLU activations
    Mat<Real> bn_xhat;            // normalized input of the BN layer
    BnStatsT<Real> bn_stats;
    Mat<Real> features;           // input of the final linear layer
    Mat<Real> logits;
};

// Forward pass. Features are the post-BN (or post-ReLU when no BN) input of
// the final linear layer; in full_batch_eval mode BN statistics are computed
// over the entire provided set in one pass (the computation is identical, the
// mode documents intent and no running statistics exist).
template <class Real>
ForwardTrace<Real> forward(const MlpT<Real>& m, const Mat<Real>& x, ForwardMode /*mode*/) {
    require(x.cols == std::size_t(m.config.input_dim()), "forward: input width mismatch");

    ForwardTrace<Real> t;
    t.input = x;
    const int L = m.config.num_layers();
    const Mat<Real>* a = &t.input;
    for (int l = 0; l < L - 1; ++l) {
        Mat<Real> z;
        matmul_abt(*a, m.weights[std::size_t(l)], z);
        if (m.config.use_biases) {
            const auto& b = m.biases[std::size_t(l)];
            for (std::size_t i = 0; i < z.rows; ++i)
                for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += b[j];
        }
        t.pre.push_back(z);
        for (auto& v : z.data) v = v > Real(0) ? v : Real(0);
        t.act.push_back(std::move(z));
        a = &t.act.back();
    }

    if (m.config.use_bn) {
        auto [out, stats] = bn_forward(*a, m.gamma, m.config.var_eps);
        t.bn_stats = std::move(stats);
        t.bn_xhat = Mat<Real>(out.rows, out.cols);
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t k = 0; k < out.cols; ++k)
                t.bn_xhat(i, k) = ((*a)(i, k) - t.bn_stats.mu[k]) / t.bn_stats.sigma[k];
        t.features = std::move(out);
    } else {
        t.features = *a;
    }

    matmul_abt(t.features, m.weights.back(), t.logits);
    return t;
}

// Average cross-entropy via log-sum-exp with max subtraction.
template <class Real>
double ce_loss(const Mat<Real>& logits, const std::vector<int>& labels) {
    require(logits.rows == labels.size(), "ce_loss: label count mismatch");
    require(all_finite(logits), "ce_loss: non-finite logits");
    const std::size_t c = logits.cols;
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        require(labels[i] >= 0 && std::size_t(labels[i]) < c, "ce_loss: label out of range");
        const Real* z = logits.row(i);
        Real mx = z[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(double(z[j] - mx));
        total += double(mx) + std::log(s) - double(z[std::size_t(labels[i])]);
    }
    return total / double(logits.rows);
}

// WD penalty: (lambda/2)(||gamma||^2 + ||W_L||_F^2), extended over all weight
// matrices under the all_layers scope. Biases are never penalized.
template <class Real>
double wd_penalty(const MlpT<Real>& m, double lambda, WdScope scope) {
    require(lambda >= 0.0, "wd_penalty: lambda must be non-negative");
    double s = double(frobenius_norm2(m.weights.back()));
    if (scope == WdScope::all_layers)
        for (std::size_t l = 0; l + 1 < m.weights.size(); ++l)
            s += double(frobenius_norm2(m.weights[l]));
    for (Real g : m.gamma) s += double(g) * double(g);
    return 0.5 * lambda * s;
}

template <class Real>
double regularized_loss(double ce, const MlpT<Real>& m, double lambda, WdScope scope) {
    return ce + wd_penalty(m, lambda, scope);
}

template <class Real>
struct Gradients {
    std::vector<Mat<Real>> weights;
    std::vector<std::vector<Real>> biases;
    std::vector<Real> gamma;
};

// Reverse-mode gradients of the regularized loss. The BN backward treats the
// batch mean and variance as functions of the batch (exact Jacobian).
template <class Real>
Gradients<Real> backward(const MlpT<Real>& m, const ForwardTrace<Real>& t,
                         const std::vector<int>& labels, double lambda, WdScope scope) {
    const std::size_t batch = t.logits.rows;
    const std::size_t C = t.logits.cols;
    require(batch == labels.size(), "backward: label count mismatch");

    Gradients<Real> g;
    g.weights.resize(m.weights.size());
    g.biases.resize(m.biases.size());

    // d(avg CE)/d logits = (softmax - onehot) / batch
    Mat<Real> dlogits(batch, C);
    for (std::size_t i = 0; i < batch; ++i) {
        const Real* z = t.logits.row(i);
        Real mx = z[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < C; ++j) s += std::exp(double(z[j] - mx));
        for (std::size_t j = 0; j < C; ++j)
            dlogits(i, j) = Real(std::exp(double(z[j] - mx)) / s / double(batch));
        dlogits(i, std::size_t(labels[i])) -= Real(1.0 / double(batch));
    }

    matmul_atb(dlogits, t.features, g.weights.back());
    if (lambda > 0.0)
        for (std::size_t k = 0; k < g.weights.back().size(); ++k)
            g.weights.back().data[k] += Real(lambda) * m.weights.back().data[k];

    Mat<Real> dfeat;
    matmul_ab(dlogits, m.weights.back(), dfeat);

    Mat<Real> dact;  // gradient w.r.t. the last hidden activation
    if (m.config.use_bn) {
        const std::size_t d = dfeat.cols;
        g.gamma.assign(d, Real(0));
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t k = 0; k < d; ++k) g.gamma[k] += dfeat(i, k) * t.bn_xhat(i, k);
        if (lambda > 0.0)
            for (std::size_t k = 0; k < d; ++k) g.gamma[k] += Real(lambda) * m.gamma[k];

        // dL/dx_i = gamma/sigma * (gi - mean(g) - xhat_i * mean(g .* xhat))
        std::vector<Real> gmean(d, Real(0)), gxmean(d, Real(0));
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                gmean[k] += dfeat(i, k);
                gxmean[k] += dfeat(i, k) * t.bn_xhat(i, k);
            }
        for (std::size_t k = 0; k < d; ++k) {
            gmean[k] /= Real(batch);
            gxmean[k] /= Real(batch);
        }
        dact = Mat<Real>(batch, d);
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t k = 0; k < d; ++k)
                dact(i, k) = m.gamma[k] / t.bn_stats.sigma[k] *
                             (dfeat(i, k) - gmean[k] - t.bn_xhat(i, k) * gxmean[k]);
    } else {
        dact = std::move(dfeat);
    }

    const int L = m.config.num_layers();
    for (int l = L - 2; l >= 0; --l) {
        // dz = dact .* relu'(pre)
        Mat<Real>& dz = dact;
        const Mat<Real>& pre = t.pre[std::size_t(l)];
        for (std::size_t k = 0; k < dz.size(); ++k)
            if (pre.data[k] <= Real(0)) dz.data[k] = Real(0);

        const Mat<Real>& below = l == 0 ? t.input : t.act[std::size_t(l) - 1];
        matmul_atb(dz, below, g.weights[std::size_t(l)]);
        if (lambda > 0.0 && scope == WdScope::all_layers)
            for (std::size_t k = 0; k < g.weights[std::size_t(l)].size(); ++k)
                g.weights[std::size_t(l)].data[k] += Real(lambda) * m.weights[std::size_t(l)].data[k];
        if (m.config.use_biases) {
            auto& db = g.biases[std::size_t(l)];
            db.assign(dz.cols, Real(0));
            for (std::size_t i = 0; i < dz.rows; ++i)
                for (std::size_t j = 0; j < dz.cols; ++j) db[j] += dz(i, j);
        }
        if (l > 0) {
            Mat<Real> next;
            matmul_ab(dz, m.weights[std::size_t(l)], next);
            dact = std::move(next);
        }
    }
    return g;
}

namespace detail {

template <class Real>
struct AdamState {
    std::vector<Mat<Real>> w_m, w_v;
    std::vector<std::vector<Real>> b_m, b_v;
    std::vector<Real> g_m, g_v;
    long step = 0;

    explicit AdamState(const MlpT<Real>& m) {
        for (const auto& w : m.weights) {
            w_m.emplace_back(w.rows, w.cols);
            w_v.emplace_back(w.rows, w.cols);
        }
        for (const auto& b : m.biases) {
            b_m.emplace_back(b.size(), Real(0));
            b_v.emplace_back(b.size(), Real(0));
        }
        g_m.assign(m.gamma.size(), Real(0));
        g_v.assign(m.gamma.size(), Real(0));
    }

    void apply(Real* p, Real* mbuf, Real* vbuf, const Real* grad, std::size_t n, double lr,
               const AdamParams& ap, double bc1, double bc2) {
        for (std::size_t i = 0; i < n; ++i) {
            mbuf[i] = Real(ap.beta1) * mbuf[i] + Real(1 - ap.beta1) * grad[i];
            vbuf[i] = Real(ap.beta2) * vbuf[i] + Real(1 - ap.beta2) * grad[i] * grad[i];
            double mhat = double(mbuf[i]) / bc1;
            double vhat = double(vbuf[i]) / bc2;
            p[i] -= Real(lr * mhat / (std::sqrt(vhat) + ap.eps));
        }
    }

    void update(MlpT<Real>& m, const Gradients<Real>& g, double lr, const AdamParams& ap,
                bool gamma_frozen) {
        ++step;
        const double bc1 = 1.0 - std::pow(ap.beta1, double(step));
        const double bc2 = 1.0 - std::pow(ap.beta2, double(step));
        for (std::size_t l = 0; l < m.weights.size(); ++l)
            apply(m.weights[l].data.data(), w_m[l].data.data(), w_v[l].data.data(),
                  g.weights[l].data.data(), m.weights[l].size(), lr, ap, bc1, bc2);
        for (std::size_t l = 0; l < m.biases.size(); ++l)
            apply(m.biases[l].data(), b_m[l].data(), b_v[l].data(), g.biases[l].data(),
                  m.biases[l].size(), lr, ap, bc1, bc2);
        if (!m.gamma.empty() && !gamma_frozen)
            apply(m.gamma.data(), g_m.data(), g_v.data(), g.gamma.data(), m.gamma.size(), lr, ap,
                  bc1, bc2);
    }
};

}  // namespace detail

template <class Real>
double accuracy(const Mat<Real>& logits, const std::vector<int>& labels) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const Real* z = logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (z[j] > z[best]) best = j;
        if (int(best) == labels[i]) ++hit;
    }
    return double(hit) / double(logits.rows);
}

template <class Real>
EpochRecord evaluate_epoch(const MlpT<Real>& m, const Mat<Real>& x, const std::vector<int>& labels,
                           const TrainConfig& cfg, int epoch) {
    ForwardTrace<Real> t = forward(m, x, ForwardMode::full_batch_eval);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = ce_loss(t.logits, labels);
    rec.reg_loss = regularized_loss(rec.loss, m, cfg.wd_lambda, cfg.wd_scope);
    rec.accuracy = accuracy(t.logits, labels);

    MatD feat(t.features.rows, t.features.cols);
    for (std::size_t k = 0; k < feat.size(); ++k) feat.data[k] = double(t.features.data[k]);
    MatD wlast(m.weights.back().rows, m.weights.back().cols);
    for (std::size_t k = 0; k < wlast.size(); ++k) wlast.data[k] = double(m.weights.back().data[k]);

    FeatureSet fs = FeatureSet::from(feat, labels, m.config.num_classes());
    WeightView wv(std::move(wlast));
    rec.nc = summarize(fs, wv, cfg.centering);
    NormStats ns = norm_stats(fs, wv);
    rec.alpha = ns.alpha;
    rec.beta = ns.beta;
    return rec;
}

// Mini-batch Adam with coupled L2 weight decay. Records an initial snapshot,
// one every metric_every epochs and one after the final epoch, all of them
// computed with full-dataset BN statistics. The learning rate is multiplied
// by lr_decay at epochs ceil(E/4), ceil(2E/4), ceil(3E/4). A trailing batch
// of size 1 is dropped.
template <class Real>
TrainHistory train(MlpT<Real>& m, const Mat<Real>& x, const std::vector<int>& labels,
                   const TrainConfig& cfg) {
    require(cfg.epochs >= 0, "train: negative epoch count");
    require(cfg.batch_size >= 2, "train: batch_size must be at least 2");
    require(cfg.lr > 0.0, "train: lr must be positive");
    require(x.rows == labels.size(), "train: label count mismatch");

    if (cfg.freeze_gamma_to) {
        require(m.config.use_bn, "train: freeze_gamma_to requires a BN model");
        require(*cfg.freeze_gamma_to > 0.0, "train: frozen gamma constant must be positive");
        std::fill(m.gamma.begin(), m.gamma.end(), Real(*cfg.freeze_gamma_to));
    }

    TrainHistory history;
    history.push_back(evaluate_epoch(m, x, labels, cfg, 0));
    if (cfg.epochs == 0) return history;

    Rng shuffle_rng = Rng::substream(cfg.seed, 1);
    detail::AdamState<Real> adam(m);
    double lr = cfg.lr;
    const int E = cfg.epochs;
    const int b1 = (E + 3) / 4, b2 = (2 * E + 3) / 4, b3 = (3 * E + 3) / 4;

    std::vector<std::size_t> order(x.rows);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= E; ++epoch) {
        if (epoch == b1) lr *= cfg.lr_decay;
        if (epoch == b2) lr *= cfg.lr_decay;
        if (epoch == b3) lr *= cfg.lr_decay;

        shuffle_rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
            if (stop - start < 2) break;  // drop a trailing batch of size 1
            Mat<Real> xb(stop - start, x.cols);
            std::vector<int> yb(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                std::copy(x.row(order[i]), x.row(order[i]) + x.cols, xb.row(i - start));
                yb[i - start] = labels[order[i]];
            }
            ForwardTrace<Real> t = forward(m, xb, ForwardMode::train);
            if (!all_finite(t.logits)) throw DivergenceError(epoch);
            double ce = ce_loss(t.logits, yb);
            double reg = regularized_loss(ce, m, cfg.wd_lambda, cfg.wd_scope);
            if (!std::isfinite(reg)) throw DivergenceError(epoch);
            Gradients<Real> g = backward(m, t, yb, cfg.wd_lambda, cfg.wd_scope);
            adam.update(m, g, lr, cfg.adam, cfg.freeze_gamma_to.has_value());
        }

        if ((cfg.metric_every > 0 && epoch % cfg.metric_every == 0) || epoch == E)
            history.push_back(evaluate_epoch(m, x, labels, cfg, epoch));
    }
    return history;
}

// Central-difference check of backward() over every parameter. The finite
// differences go through forward + loss only, so they are independent of the
// reverse-mode path they certify. 64-bit models only.
template <class Real>
double grad_check(const MlpT<Real>& model, const Mat<Real>& x, const std::vector<int>& labels,
                  double lambda, WdScope scope, double step = 1e-5) {
    static_assert(std::is_same_v<Real, double>, "grad_check requires the 64-bit dtype");
    MlpT<Real> m = model;
    ForwardTrace<Real> t = forward(m, x, ForwardMode::train);
    Gradients<Real> g = backward(m, t, labels, lambda, scope);

    auto loss_at = [&]() {
        ForwardTrace<Real> ft = forward(m, x, ForwardMode::train);
        return regularized_loss(ce_loss(ft.logits, labels), m, lambda, scope);
    };
    auto check_one = [&](Real& p, double analytic, double& worst) {
        const Real save = p;
        p = save + Real(step);
        double up = loss_at();
        p = save - Real(step);
        double dn = loss_at();
        p = save;
        double fd = (up - dn) / (2.0 * step);
        double rel = std::fabs(analytic - fd) /
                     std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
        worst = std::max(worst, rel);
    };

    double worst = 0.0;
    for (std::size_t l = 0; l < m.weights.size(); ++l)
        for (std::size_t k = 0; k < m.weights[l].size(); ++k)
            check_one(m.weights[l].data[k], double(g.weights[l].data[k]), worst);
    for (std::size_t l = 0; l < m.biases.size(); ++l)
        for (std::size_t k = 0; k < m.biases[l].size(); ++k)
            check_one(m.biases[l][k], double(g.biases[l][k]), worst);
    for (std::size_t k = 0; k < m.gamma.size(); ++k)
        check_one(m.gamma[k], double(g.gamma[k]), worst);
    return worst;
}

}  // namespace collapse
