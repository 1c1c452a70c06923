#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "collapse/bounds.hpp"
#include "collapse/lemma_checks.hpp"
#include "collapse/mlp.hpp"
#include "collapse/rng.hpp"
#include "doctest.h"

using namespace collapse;

TEST_CASE("jensen subset engine reports zero violations") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        LemmaCheckResult r = check_jensen_subset(300, 12, seed);
        CHECK(r.trials == 300);
        CHECK(r.ok());
    }
}

TEST_CASE("jensen subset bound on {0, 0, 3} with f = x^2") {
    const VecD xs = {0.0, 0.0, 3.0};
    const double xt = 1.0;
    double gap = 0.0;
    for (double x : xs) gap += x * x / 3.0;
    gap -= xt * xt;  // = 2
    const double m = 2.0;
    // all proper subsets by hand
    const std::vector<std::vector<int>> subsets = {{0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}};
    for (const auto& s : subsets) {
        double mean = 0.0;
        for (int i : s) mean += xs[std::size_t(i)] / double(s.size());
        const double delta = double(s.size()) / 3.0;
        const double bound = std::sqrt(2.0 * gap * (1.0 - delta) / (m * delta));
        CHECK(std::fabs(mean - xt) <= bound + 1e-9);
    }
}

TEST_CASE("constant values give a zero Jensen gap and exact subset means") {
    const VecD xs(7, 1.3);
    double gap = 0.0;
    for (double x : xs) gap += x * x / 7.0;
    gap -= 1.3 * 1.3;
    CHECK(std::fabs(gap) < 1e-12);
}

TEST_CASE("a wrong strong-convexity modulus is caught") {
    // xs = {-a, a}: the singleton subset mean deviates by exactly the bound
    // under the true modulus m = 2; inflating the modulus breaks it.
    const double a = 0.8;
    const double gap = a * a;  // mean of squares minus square of mean
    const double delta = 0.5;
    const double true_bound = std::sqrt(2.0 * gap * (1.0 - delta) / (2.0 * delta));
    CHECK(std::fabs(a - true_bound) < 1e-12);
    const double broken_bound = std::sqrt(2.0 * gap * (1.0 - delta) / (200.0 * delta));
    CHECK(a > broken_bound + 1e-9);  // the check would flag this as a violation
}

TEST_CASE("variance-gap engine reports zero violations and is tight for x^2") {
    LemmaCheckResult r = check_jensen_variance_gap(300, 1);
    CHECK(r.ok());

    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + int(rng.uniform_index(10));
        VecD xs(n);
        for (double& x : xs) x = rng.normal();
        double xt = 0.0;
        for (double x : xs) xt += x / double(n);
        double variance = 0.0, gap = 0.0;
        for (double x : xs) {
            variance += (x - xt) * (x - xt) / double(n);
            gap += x * x / double(n);
        }
        gap -= xt * xt;
        CHECK(std::fabs(variance - 2.0 * gap / 2.0) < 1e-12);  // equality for f = x^2
    }
}

TEST_CASE("exp subset engine and its arithmetic example") {
    LemmaCheckResult r = check_exp_subset(300, 12, 3);
    CHECK(r.ok());

    // xs = {0, 1}, subset {1}, delta = 1/2
    const double xt = 0.5;
    const double gap = (1.0 + std::exp(1.0)) / 2.0 - std::exp(0.5);
    const double bound = xt + std::sqrt(2.0 * gap / (0.5 * std::exp(0.5)));
    CHECK(1.0 <= bound + 1e-9);
}

TEST_CASE("intra conversion engine, identity case and boundary") {
    LemmaCheckResult r = check_intra_conversion(300, 4);
    CHECK(r.ok());
    CHECK(r.trials == 300);

    // all v_i = alpha * u: c = alpha, both sides 1
    const double alpha = 1.7;
    const double c = alpha;
    CHECK(2.0 * (c / alpha) * (c / alpha) - 1.0 == doctest::Approx(1.0));
    // boundary c = alpha/sqrt(2): the right-hand side vanishes
    CHECK(2.0 * 0.5 - 1.0 == doctest::Approx(0.0));
}

TEST_CASE("inter divide engine and the antiparallel example") {
    LemmaCheckResult r = check_inter_divide(300, 5);
    CHECK(r.ok());
    CHECK(r.trials == 300);

    // all h_i equal with norm alpha, w antiparallel with norm beta:
    // cos(w, tbar) = -1, c = -alpha beta, eps = 0, bound = +1
    const double alpha = 1.2, beta = 0.7;
    const double c = -alpha * beta;
    const double bound = -c / (alpha * beta) + 0.0;
    CHECK(-1.0 <= bound + 1e-9);
}

TEST_CASE("bn norm engine passes and the sample-variance fault is caught") {
    LemmaCheckResult r = check_bn_norm(50, 6);
    CHECK(r.ok());

    // Deliberate fault: normalizing with the unbiased (n-1) variance breaks
    // the norm identity beyond the 1e-9 tolerance.
    Rng rng(7);
    const int n = 16, d = 4;
    MatD x(n, d);
    for (double& v : x.data) v = rng.normal();
    VecD gamma(d);
    for (double& g : gamma) g = 1.0 + rng.uniform();
    VecD mu(d, 0.0), var(d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) mu[std::size_t(k)] += x(std::size_t(i), std::size_t(k)) / n;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) {
            double t = x(std::size_t(i), std::size_t(k)) - mu[std::size_t(k)];
            var[std::size_t(k)] += t * t / double(n - 1);  // wrong estimator
        }
    double sq = 0.0;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) {
            double h = (x(std::size_t(i), std::size_t(k)) - mu[std::size_t(k)]) /
                       std::sqrt(var[std::size_t(k)]) * gamma[std::size_t(k)];
            sq += h * h;
        }
    const double quad_mean = std::sqrt(sq / n);
    CHECK(std::fabs(quad_mean - norm2(gamma)) > 1e-9);
}

TEST_CASE("metric identity and gradient fidelity engines pass") {
    CHECK(check_metric_identity(50, 8).ok());
    LemmaCheckResult g = check_grad_fidelity(10, 9);
    CHECK(g.ok());
    CHECK(g.trials == 10);
}

TEST_CASE("constrained minimization lands on the closed-form minimum") {
    MinLossReport r = verify_min_loss(3, 3, 8, 10);
    CHECK(r.best_loss >= r.m - 1e-6);
    CHECK(r.best_loss <= r.m + 1e-3);
    CHECK(r.worst_pair_cos_dev <= 1e-2);  // minimizer features form the ETF
}

TEST_CASE("zero norm caps force the uniform-logit loss") {
    MinLossReport r = verify_min_loss(3, 3, 2, 11, 0.0, 0.0);
    CHECK(r.m == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(r.best_loss == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("subset sampling path handles N above the exhaustive cap") {
    LemmaCheckResult r = check_jensen_subset(20, 24, 12);
    CHECK(r.ok());
    LemmaCheckResult e = check_exp_subset(20, 24, 13);
    CHECK(e.ok());
}

TEST_CASE("every engine is violation-free across seeds 0..9") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CHECK(check_jensen_subset(60, 12, seed).ok());
        CHECK(check_jensen_variance_gap(60, seed).ok());
        CHECK(check_exp_subset(60, 12, seed).ok());
        CHECK(check_intra_conversion(60, seed).ok());
        CHECK(check_inter_divide(30, seed).ok());
        CHECK(check_bn_norm(6, seed).ok());
        CHECK(check_metric_identity(10, seed).ok());
    }
}
