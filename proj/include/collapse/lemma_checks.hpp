#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "collapse/mat.hpp"
#include "collapse/nc_metrics.hpp"

namespace collapse {

struct LemmaCheckResult {
    std::string lemma_id;
    long trials = 0;
    long violations = 0;
    double worst_margin = -1e300;  // max over trials of (lhs - permitted bound)
    long rejected = 0;             // draws the conforming-instance sampler discarded
    std::string config;

    bool ok() const { return violations == 0; }
};

// Numerical slack added on the bound side of every inequality.
constexpr double kLemmaSlack = 1e-9;

// Strongly convex Jensen subset bound: for any subset S with delta = |S|/N,
// |mean_S - mean| <= sqrt(2 eps (1-delta) / (m delta)). Exhaustive subsets for
// N <= 12, sampled subsets above. Runs with f(x) = x^2 and the logistic-type
// loss curve.
LemmaCheckResult check_jensen_subset(long trials, int n_max, std::uint64_t seed);

// Variance form of the Jensen gap: (1/N) sum (x_i - mean)^2 <= 2 eps / m.
LemmaCheckResult check_jensen_variance_gap(long trials, std::uint64_t seed);

// Exponential-function subset bound: mean_S <= mean + sqrt(2 eps / (delta e^mean)).
LemmaCheckResult check_exp_subset(long trials, int n_max, std::uint64_t seed);

// Conversion from aligned dot products to the norm of the mean normalized
// vector: ||mean_i v_i/||v_i|| || >= 2 (c/alpha)^2 - 1 for c = <u, mean v> in
// [alpha/sqrt(2), alpha], plus the corollary form u = mean/||mean||.
LemmaCheckResult check_intra_conversion(long trials, std::uint64_t seed);

// Upper bound on cos(w, mean normalized h) for negatively aligned w under
// tight norm conditions: cos <= -c/(alpha beta) + 4 (eps/(alpha beta))^(1/3).
LemmaCheckResult check_inter_divide(long trials, std::uint64_t seed);

// Quadratic-mean norm identity after bias-free BN at var_eps = 0, including
// multi-batch partitions of unequal sizes.
LemmaCheckResult check_bn_norm(long trials, std::uint64_t seed);

// O(N^2) double-loop cosine averages; the independent oracle the metric
// implementation is checked against.
double intra_class_bruteforce(const FeatureSet& fs, int c, bool centering);
double inter_class_bruteforce(const FeatureSet& fs, int c, int c2, bool centering);

// Random feature sets: double-loop intra/inter agree with the
// normalized-mean implementation within 1e-10.
LemmaCheckResult check_metric_identity(long trials, std::uint64_t seed);

// Randomized MLPs with and without BN: backward vs central finite
// differences, max relative error below 1e-4 at 64-bit.
LemmaCheckResult check_grad_fidelity(long trials, std::uint64_t seed);

struct MinLossReport {
    int num_classes = 0;
    int dim = 0;
    double alpha = 1.0;
    double beta = 1.0;
    int restarts = 0;
    double best_loss = 0.0;
    double m = 0.0;  // closed-form minimum for the same norms
    // max over class pairs of |cos(h_c, h_c') + 1/(C-1)| at the best minimizer
    double worst_pair_cos_dev = 0.0;
};

// Projected-gradient minimization of the average CE over (W, {h_c}) with
// ||W||_F <= sqrt(C) beta and quadratic feature norm <= alpha (one sample per
// class). Confirms the closed-form minimum and the ETF geometry of the
// minimizer.
MinLossReport verify_min_loss(int num_classes, int dim, int restarts, std::uint64_t seed,
                              double alpha = 1.0, double beta = 1.0);

// Everything above with the default configuration; used by the verify command.
std::vector<LemmaCheckResult> run_all_lemma_checks(std::uint64_t seed, long trials = 10000);

}  // namespace collapse
