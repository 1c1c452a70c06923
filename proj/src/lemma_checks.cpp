#include "collapse/lemma_checks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "collapse/bounds.hpp"
#include "collapse/mlp.hpp"
#include "collapse/rng.hpp"

namespace collapse {

namespace {

void record(LemmaCheckResult& r, double lhs, double bound, double slack = kLemmaSlack) {
    r.worst_margin = std::max(r.worst_margin, lhs - bound);
    if (lhs > bound + slack) ++r.violations;
}

VecD random_values(Rng& rng, int n, double spread) {
    VecD xs(n);
    for (double& x : xs) x = rng.normal() * spread;
    return xs;
}

double mean_of(const VecD& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / double(xs.size());
}

// Visits subset (delta, subset mean) pairs: exhaustive for n <= 12, sampled
// otherwise. Proper nonempty subsets only.
template <class Fn>
void for_subsets(const VecD& xs, Rng& rng, Fn&& fn) {
    const int n = int(xs.size());
    if (n <= 12) {
        const std::size_t full = (std::size_t(1) << n) - 1;
        std::vector<double> sums(full + 1, 0.0);
        for (std::size_t mask = 1; mask <= full; ++mask) {
            const std::size_t low = mask & (~mask + 1);
            const int idx = std::countr_zero(mask);
            sums[mask] = sums[mask ^ low] + xs[std::size_t(idx)];
            if (mask == full) continue;
            const int size = std::popcount(mask);
            fn(double(size) / double(n), sums[mask] / double(size));
        }
    } else {
        for (int t = 0; t < 10000; ++t) {
            int size = 0;
            double sum = 0.0;
            for (int i = 0; i < n; ++i)
                if (rng.uniform() < 0.5) {
                    ++size;
                    sum += xs[std::size_t(i)];
                }
            if (size == 0 || size == n) continue;
            fn(double(size) / double(n), sum / double(size));
        }
    }
}

VecD random_unit(Rng& rng, int d) {
    VecD u(d);
    double n = 0.0;
    while (n <= 1e-12) {
        for (double& v : u) v = rng.normal();
        n = norm2(u);
    }
    for (double& v : u) v /= n;
    return u;
}

}  // namespace

LemmaCheckResult check_jensen_subset(long trials, int n_max, std::uint64_t seed) {
    require(n_max >= 2 && n_max <= 24, "check_jensen_subset: n_max must lie in [2, 24]");
    LemmaCheckResult r;
    r.lemma_id = "jensen_subset";
    {
        std::ostringstream cfg;
        cfg << "n_max=" << n_max << ",seed=" << seed;
        r.config = cfg.str();
    }
    const int cs[3] = {3, 4, 10};
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int n = 2 + int(rng.uniform_index(std::uint64_t(n_max - 1)));
        VecD xs = random_values(rng, n, rng.uniform(0.3, 2.0));
        const double xt = mean_of(xs);

        // f(x) = x^2, 2-strongly convex everywhere.
        {
            double gap = 0.0;
            for (double x : xs) gap += x * x;
            gap = std::max(gap / double(n) - xt * xt, 0.0);
            for_subsets(xs, rng, [&](double delta, double sub_mean) {
                const double bound = std::sqrt(2.0 * gap * (1.0 - delta) / (2.0 * delta));
                record(r, std::fabs(sub_mean - xt), bound);
            });
        }
        // f(x) = log(1 + (C-1) e^x), modulus from the observed range.
        {
            const int C = cs[rng.uniform_index(3)];
            auto f = [&](double x) { return std::log1p((double(C) - 1.0) * std::exp(x)); };
            double gap = 0.0;
            for (double x : xs) gap += f(x);
            gap = std::max(gap / double(n) - f(xt), 0.0);
            const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
            const double m = strong_convexity_modulus(C, *lo, *hi);
            for_subsets(xs, rng, [&](double delta, double sub_mean) {
                const double bound = std::sqrt(2.0 * gap * (1.0 - delta) / (m * delta));
                record(r, std::fabs(sub_mean - xt), bound);
            });
        }
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_jensen_variance_gap(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "jensen_variance_gap";
    r.config = "seed=" + std::to_string(seed);
    const int cs[3] = {3, 4, 10};
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int n = 2 + int(rng.uniform_index(22));
        VecD xs = random_values(rng, n, rng.uniform(0.3, 2.0));
        const double xt = mean_of(xs);
        double variance = 0.0;
        for (double x : xs) variance += (x - xt) * (x - xt);
        variance /= double(n);

        {
            double gap = 0.0;
            for (double x : xs) gap += x * x;
            gap = std::max(gap / double(n) - xt * xt, 0.0);
            record(r, variance, 2.0 * gap / 2.0);
        }
        {
            const int C = cs[rng.uniform_index(3)];
            auto f = [&](double x) { return std::log1p((double(C) - 1.0) * std::exp(x)); };
            double gap = 0.0;
            for (double x : xs) gap += f(x);
            gap = std::max(gap / double(n) - f(xt), 0.0);
            const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
            const double m = strong_convexity_modulus(C, *lo, *hi);
            record(r, variance, 2.0 * gap / m);
        }
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_exp_subset(long trials, int n_max, std::uint64_t seed) {
    require(n_max >= 2 && n_max <= 24, "check_exp_subset: n_max must lie in [2, 24]");
    LemmaCheckResult r;
    r.lemma_id = "exp_subset";
    {
        std::ostringstream cfg;
        cfg << "n_max=" << n_max << ",seed=" << seed;
        r.config = cfg.str();
    }
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int n = 2 + int(rng.uniform_index(std::uint64_t(n_max - 1)));
        VecD xs = random_values(rng, n, rng.uniform(0.3, 2.0));
        const double xt = mean_of(xs);
        double gap = 0.0;
        for (double x : xs) gap += std::exp(x);
        gap = std::max(gap / double(n) - std::exp(xt), 0.0);
        for_subsets(xs, rng, [&](double delta, double sub_mean) {
            const double bound = xt + std::sqrt(2.0 * gap / (delta * std::exp(xt)));
            record(r, sub_mean, bound);
        });
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_intra_conversion(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "intra_conversion";
    r.config = "seed=" + std::to_string(seed);
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int d = 2 + int(rng.uniform_index(6));
        const int n = 2 + int(rng.uniform_index(31));

        // Conforming instance: vectors biased along a common direction so that
        // c = <u, mean v> lands in [alpha/sqrt(2), alpha]; draws outside the
        // window are rejected and counted.
        VecD u = random_unit(rng, d);
        MatD v(n, d);
        double c = 0.0, alpha = 0.0;
        bool accepted = false;
        for (int attempt = 0; attempt < 200 && !accepted; ++attempt) {
            const double eta = rng.uniform(0.0, 0.35);
            for (int i = 0; i < n; ++i) {
                const double s = rng.uniform(0.6, 1.4);
                for (int k = 0; k < d; ++k)
                    v(std::size_t(i), std::size_t(k)) = s * u[std::size_t(k)] + eta * rng.normal();
            }
            double sq = 0.0;
            VecD mean(std::size_t(d), 0.0);
            bool nondegenerate = true;
            for (int i = 0; i < n; ++i) {
                const double nn = norm2(v.row(std::size_t(i)), std::size_t(d));
                nondegenerate = nondegenerate && nn > 1e-12;
                sq += nn * nn;
                for (int k = 0; k < d; ++k) mean[std::size_t(k)] += v(std::size_t(i), std::size_t(k));
            }
            for (double& m : mean) m /= double(n);
            alpha = std::sqrt(sq / double(n));
            c = dot(u.data(), mean.data(), std::size_t(d));
            accepted = nondegenerate && c >= alpha / std::sqrt(2.0) && c <= alpha;
            if (!accepted) ++r.rejected;
        }
        if (!accepted) continue;

        VecD tbar(std::size_t(d), 0.0);
        VecD mean(std::size_t(d), 0.0);
        for (int i = 0; i < n; ++i) {
            const double nn = norm2(v.row(std::size_t(i)), std::size_t(d));
            for (int k = 0; k < d; ++k) {
                tbar[std::size_t(k)] += v(std::size_t(i), std::size_t(k)) / nn;
                mean[std::size_t(k)] += v(std::size_t(i), std::size_t(k));
            }
        }
        for (double& x : tbar) x /= double(n);
        for (double& x : mean) x /= double(n);

        record(r, 2.0 * (c / alpha) * (c / alpha) - 1.0, norm2(tbar));

        // Corollary form: u = mean/||mean||, c = ||mean||.
        const double mn = norm2(mean);
        if (mn >= alpha / std::sqrt(2.0) && mn <= alpha)
            record(r, 2.0 * (mn / alpha) * (mn / alpha) - 1.0, norm2(tbar));
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_inter_divide(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "inter_divide";
    r.config = "seed=" + std::to_string(seed);
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int d = 2 + int(rng.uniform_index(7));
        const int n = 2 + int(rng.uniform_index(31));
        const double alpha = rng.uniform(0.5, 2.0);
        const double beta = rng.uniform(0.5, 2.0);

        // Conforming instance: tightly aligned features (so the mean norm
        // stays within eps/beta of alpha) and a weight vector with a negative
        // mean alignment. Acceptance: eps <= 0.05 alpha beta and c < 0.
        VecD g = random_unit(rng, d);
        MatD h(n, d);
        VecD w(d);
        VecD hmean(d);
        double eps = 0.0, c = 0.0;
        bool accepted = false;
        for (int attempt = 0; attempt < 200 && !accepted; ++attempt) {
            const double theta_max = rng.uniform(0.0, 0.2);
            hmean.assign(std::size_t(d), 0.0);
            for (int i = 0; i < n; ++i) {
                VecD q = random_unit(rng, d);
                const double gq = dot(q.data(), g.data(), std::size_t(d));
                double qn = 0.0;
                for (int k = 0; k < d; ++k) {
                    q[std::size_t(k)] -= gq * g[std::size_t(k)];
                    qn += q[std::size_t(k)] * q[std::size_t(k)];
                }
                qn = std::sqrt(qn);
                const double theta = rng.uniform(0.0, theta_max);
                const double radius = alpha * rng.uniform(0.95, 1.0);
                for (int k = 0; k < d; ++k) {
                    const double dir = std::cos(theta) * g[std::size_t(k)] +
                                       (qn > 1e-12 ? std::sin(theta) * q[std::size_t(k)] / qn : 0.0);
                    h(std::size_t(i), std::size_t(k)) = radius * dir;
                    hmean[std::size_t(k)] += radius * dir / double(n);
                }
            }
            const double hn = norm2(hmean);
            eps = beta * std::max(alpha - hn, 0.0);

            w = random_unit(rng, d);
            c = dot(w.data(), hmean.data(), std::size_t(d));
            if (c > 0.0) {
                for (double& x : w) x = -x;
                c = -c;
            }
            const double wscale = beta * rng.uniform(0.5, 1.0);
            for (double& x : w) x *= wscale;
            c *= wscale;
            accepted = eps <= 0.05 * alpha * beta && c < -1e-10;
            if (!accepted) ++r.rejected;
        }
        if (!accepted) continue;

        VecD tbar(std::size_t(d), 0.0);
        for (int i = 0; i < n; ++i) {
            const double nn = norm2(h.row(std::size_t(i)), std::size_t(d));
            for (int k = 0; k < d; ++k) tbar[std::size_t(k)] += h(std::size_t(i), std::size_t(k)) / (nn * double(n));
        }
        const double coswt =
            dot(w.data(), tbar.data(), std::size_t(d)) / (norm2(w) * norm2(tbar));
        const double bound = -c / (alpha * beta) + 4.0 * std::cbrt(eps / (alpha * beta));
        record(r, coswt, bound);
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_bn_norm(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "bn_norm";
    r.config = "seed=" + std::to_string(seed);
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int d = 1 + int(rng.uniform_index(64));
        const int batches = 1 + int(rng.uniform_index(4));
        std::vector<double> gamma(d);
        for (double& gv : gamma) gv = rng.normal() * 1.5;

        double sq = 0.0;
        long total = 0;
        for (int b = 0; b < batches; ++b) {
            const int rows = 2 + int(rng.uniform_index(255));
            MatD x(rows, d);
            for (double& v : x.data) v = rng.normal() * rng.uniform(0.5, 3.0);
            auto [out, stats] = bn_forward(x, gamma, 0.0);
            for (int i = 0; i < rows; ++i) {
                const double nn = norm2(out.row(std::size_t(i)), std::size_t(d));
                sq += nn * nn;
            }
            total += rows;
        }
        const double quad_mean = std::sqrt(sq / double(total));
        const double gnorm = norm2(gamma.data(), gamma.size());
        record(r, std::fabs(quad_mean - gnorm), 0.0);
        ++r.trials;
    }
    return r;
}

double intra_class_bruteforce(const FeatureSet& fs, int c, bool centering) {
    const MatD& m = fs.cls(c);
    VecD center = centering ? fs.global_mean() : VecD(m.cols, 0.0);
    MatD v(m.rows, m.cols);
    VecD norms(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) v(i, j) = m(i, j) - center[j];
        norms[i] = norm2(v.row(i), m.cols);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.rows; ++j)
            s += dot(v.row(i), v.row(j), m.cols) / (norms[i] * norms[j]);
    return s / double(m.rows * m.rows);
}

double inter_class_bruteforce(const FeatureSet& fs, int c, int c2, bool centering) {
    const MatD& a = fs.cls(c);
    const MatD& b = fs.cls(c2);
    VecD center = centering ? fs.global_mean() : VecD(a.cols, 0.0);
    MatD va(a.rows, a.cols), vb(b.rows, b.cols);
    VecD na(a.rows), nb(b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) va(i, j) = a(i, j) - center[j];
        na[i] = norm2(va.row(i), a.cols);
    }
    for (std::size_t i = 0; i < b.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) vb(i, j) = b(i, j) - center[j];
        nb[i] = norm2(vb.row(i), b.cols);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j)
            s += dot(va.row(i), vb.row(j), a.cols) / (na[i] * nb[j]);
    return s / double(a.rows * b.rows);
}

LemmaCheckResult check_metric_identity(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "metric_identity";
    r.config = "seed=" + std::to_string(seed);
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        const int C = 2 + int(rng.uniform_index(4));
        const int n = 2 + int(rng.uniform_index(8));
        const int d = 2 + int(rng.uniform_index(5));
        std::vector<MatD> classes(std::size_t(C), MatD(n, d));
        for (auto& m : classes)
            for (double& v : m.data) v = rng.normal() + 0.2;
        FeatureSet fs{std::move(classes)};

        for (int centering = 0; centering < 2; ++centering) {
            for (int c = 0; c < C; ++c)
                record(r, std::fabs(intra_class(fs, c, centering) -
                                    intra_class_bruteforce(fs, c, centering)),
                       1e-10, 0.0);
            record(r, std::fabs(inter_class(fs, 0, 1, centering) -
                                inter_class_bruteforce(fs, 0, 1, centering)),
                   1e-10, 0.0);
        }
        ++r.trials;
    }
    return r;
}

LemmaCheckResult check_grad_fidelity(long trials, std::uint64_t seed) {
    LemmaCheckResult r;
    r.lemma_id = "grad_fidelity";
    r.config = "seed=" + std::to_string(seed);
    for (long t = 0; t < trials; ++t) {
        Rng rng = Rng::substream(seed, std::uint64_t(t));
        MlpConfig cfg;
        cfg.layer_widths = {4, 6, 5, 3};
        cfg.use_bn = (t % 2) == 0;
        cfg.use_biases = (t % 4) >= 2;
        cfg.var_eps = 1e-5;
        Mlp model = make_mlp<double>(cfg, rng.next_u64());
        for (auto& b : model.biases)
            for (double& v : b) v = 0.1 * rng.normal();

        // Central differences need the loss smooth across the probe step, so
        // draws that leave a pre-activation within 20 steps of the ReLU kink
        // are rejected.
        const double step = 1e-5;
        const int batch = 5 + int(rng.uniform_index(4));
        MatD x(std::size_t(batch), 4);
        std::vector<int> y(batch);
        bool smooth = false;
        for (int attempt = 0; attempt < 100 && !smooth; ++attempt) {
            for (double& v : x.data) v = rng.normal();
            for (int& v : y) v = int(rng.uniform_index(3));
            ForwardTrace<double> tr = forward(model, x, ForwardMode::train);
            smooth = true;
            for (const auto& pre : tr.pre)
                for (double v : pre.data) smooth = smooth && std::fabs(v) > 20.0 * step;
            if (!smooth) ++r.rejected;
        }
        if (!smooth) continue;

        const double lambda = (t % 2) == 0 ? 0.1 : 0.0;
        const WdScope scope = (t % 4) >= 2 ? WdScope::all_layers : WdScope::last_layer_and_gamma;
        const double err = grad_check(model, x, y, lambda, scope, step);
        record(r, err, 1e-4, 0.0);
        ++r.trials;
    }
    return r;
}

MinLossReport verify_min_loss(int num_classes, int dim, int restarts, std::uint64_t seed,
                              double alpha, double beta) {
    require(num_classes >= 2, "verify_min_loss: C must be at least 2");
    require(dim >= num_classes - 1, "verify_min_loss: dim too small for the target geometry");

    const int C = num_classes;
    const double wcap = std::sqrt(double(C)) * beta;   // ||W||_F cap
    const double hcap = std::sqrt(double(C)) * alpha;  // ||H||_F cap (quadratic mean alpha)

    MinLossReport rep;
    rep.num_classes = C;
    rep.dim = dim;
    rep.alpha = alpha;
    rep.beta = beta;
    rep.restarts = restarts;
    rep.m = min_loss_m(C, alpha * beta);

    double best = 1e300;
    MatD best_h;

    for (int rs = 0; rs < restarts; ++rs) {
        Rng rng = Rng::substream(seed, std::uint64_t(rs));
        MatD w(C, dim), h(C, dim);
        for (double& v : w.data) v = rng.normal();
        for (double& v : h.data) v = rng.normal();

        auto project = [&](MatD& m, double cap) {
            const double n = std::sqrt(frobenius_norm2(m));
            if (n > cap)
                for (double& v : m.data) v *= cap / n;
        };
        project(w, wcap);
        project(h, hcap);

        double lr = 0.5;
        for (int it = 0; it < 4000; ++it) {
            if (it == 1500 || it == 3000) lr *= 0.2;
            MatD gw(C, dim), gh(C, dim);
            double loss = 0.0;
            for (int c = 0; c < C; ++c) {
                VecD z(C);
                for (int j = 0; j < C; ++j)
                    z[std::size_t(j)] = dot(w.row(std::size_t(j)), h.row(std::size_t(c)), std::size_t(dim));
                double mx = z[0];
                for (double v : z) mx = std::max(mx, v);
                double s = 0.0;
                for (double v : z) s += std::exp(v - mx);
                loss += mx + std::log(s) - z[std::size_t(c)];
                for (int j = 0; j < C; ++j) {
                    const double p = std::exp(z[std::size_t(j)] - mx) / s - (j == c ? 1.0 : 0.0);
                    for (int k = 0; k < dim; ++k) {
                        gw(std::size_t(j), std::size_t(k)) += p * h(std::size_t(c), std::size_t(k)) / double(C);
                        gh(std::size_t(c), std::size_t(k)) += p * w(std::size_t(j), std::size_t(k)) / double(C);
                    }
                }
            }
            loss /= double(C);
            for (std::size_t k = 0; k < w.size(); ++k) w.data[k] -= lr * gw.data[k];
            for (std::size_t k = 0; k < h.size(); ++k) h.data[k] -= lr * gh.data[k];
            project(w, wcap);
            project(h, hcap);
        }

        double loss = 0.0;
        for (int c = 0; c < C; ++c) {
            VecD z(C);
            for (int j = 0; j < C; ++j)
                z[std::size_t(j)] = dot(w.row(std::size_t(j)), h.row(std::size_t(c)), std::size_t(dim));
            double mx = z[0];
            for (double v : z) mx = std::max(mx, v);
            double s = 0.0;
            for (double v : z) s += std::exp(v - mx);
            loss += mx + std::log(s) - z[std::size_t(c)];
        }
        loss /= double(C);
        if (loss < best) {
            best = loss;
            best_h = h;
        }
    }

    rep.best_loss = best;
    rep.worst_pair_cos_dev = 0.0;
    for (int c = 0; c < C; ++c)
        for (int c2 = c + 1; c2 < C; ++c2) {
            const double cos = dot(best_h.row(std::size_t(c)), best_h.row(std::size_t(c2)), std::size_t(dim)) /
                               (norm2(best_h.row(std::size_t(c)), std::size_t(dim)) *
                                norm2(best_h.row(std::size_t(c2)), std::size_t(dim)));
            rep.worst_pair_cos_dev =
                std::max(rep.worst_pair_cos_dev, std::fabs(cos + 1.0 / (double(C) - 1.0)));
        }
    return rep;
}

std::vector<LemmaCheckResult> run_all_lemma_checks(std::uint64_t seed, long trials) {
    std::vector<LemmaCheckResult> out;
    out.push_back(check_jensen_subset(trials, 12, seed));
    out.push_back(check_jensen_variance_gap(trials, seed + 1));
    out.push_back(check_exp_subset(trials, 12, seed + 2));
    out.push_back(check_intra_conversion(trials, seed + 3));
    out.push_back(check_inter_divide(std::max(trials / 10, 1L), seed + 4));
    out.push_back(check_bn_norm(std::max(trials / 50, 1L), seed + 5));
    return out;
}

}  // namespace collapse
