#pragma once
#include <string>

#include "collapse/mat.hpp"

namespace collapse {

struct BoundParams {
    int num_classes = 3;       // C >= 3
    double norm_product = 1.0; // alpha * beta
    double epsilon = 0.0;      // loss gap >= 0
    double delta = 0.1;        // fraction in (0, 1)
    double kappa = 1.0;        // unspecified small positive constant
    double lambda = 0.0;       // weight decay

    void validate_T21() const;
    void validate_T23() const;
};

struct BoundTriple {
    double intra_lb = 1.0;
    double nc3_lb = 1.0;
    double inter_ub = -1.0;
};

struct BoundReport {
    BoundParams params;
    double m = 0.0;
    double m_reg = 0.0;
    double gamma_star = 0.0;
    double rho = 0.0;
    double modulus = 0.0;
    BoundTriple t21;
    BoundTriple t23;
    bool t21_nontrivial = false;  // lower bounds above -1 and upper bound below 1
    bool t23_nontrivial = false;
};

// Minimum achievable average CE loss under the norm constraints:
// m = log(1 + (C-1) exp(-C/(C-1) * alpha*beta)). Decreasing in the product,
// log C at zero.
double min_loss_m(int num_classes, double norm_product);

// Minimum over [x_lo, x_hi] of the curvature (C-1)e^x / (1+(C-1)e^x)^2.
// The curvature is unimodal with peak 1/4 at x = -log(C-1), so the minimum
// sits at an endpoint.
double strong_convexity_modulus(int num_classes, double x_lo, double x_hi);

// Proximity bounds in terms of measured norms (explicit-constant form).
BoundTriple bounds_T21(const BoundParams& p);

// f_lambda(g) = log(1 + (C-1) exp(-C/(C-1) g)) + lambda_eff * g
double f_lambda(double gamma, int num_classes, double lambda_eff);

// Minimizer of f_lambda: gamma* = (C-1)/C * log((C - (C-1) lambda_eff) / lambda_eff),
// defined for 0 < lambda_eff < 1.
double gamma_star(int num_classes, double lambda_eff);

// Minimum achievable regularized loss, using lambda_eff = sqrt(C) * lambda:
// m_reg = log(1 - (C-1)/sqrt(C) lambda) + (C-1)/sqrt(C) lambda * log(sqrt(C)/lambda - (C-1)).
double min_reg_loss(int num_classes, double lambda);

// rho = (C e / lambda)^(kappa C); strictly decreasing in lambda.
double rho(int num_classes, double lambda, double kappa);

// Proximity bounds in terms of (lambda, epsilon) alone (BN + WD form).
BoundTriple bounds_T23(int num_classes, double lambda, double epsilon, double delta, double kappa);

struct EpsilonFromRun {
    double epsilon = 0.0;
    bool assumption_violated = false;  // measured loss sits below the theoretical minimum
};

// eps = max(L - reference, 0); flags L < reference - 1e-6 as a measurement
// inconsistency instead of clamping it away silently.
EpsilonFromRun epsilon_from_run(double loss, double reference_minimum);

// Evaluates every theoretical quantity for one parameter set. Values are kept
// raw; vacuity (bound outside [-1, 1]) is reported through the flags and in
// the JSON, never hidden by clamping.
BoundReport evaluate_bounds(const BoundParams& p);

std::string bound_report_to_json(const BoundReport& r);

}  // namespace collapse
