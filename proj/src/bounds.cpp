#include "collapse/bounds.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace collapse {

void BoundParams::validate_T21() const {
    require(num_classes >= 3, "bounds: C must be at least 3");
    require(norm_product > 0.0, "bounds: alpha*beta must be positive");
    require(epsilon >= 0.0, "bounds: epsilon must be non-negative");
    require(delta > 0.0 && delta < 1.0, "bounds: delta must lie in (0, 1)");
    require(kappa > 0.0, "bounds: kappa must be positive");
}

void BoundParams::validate_T23() const {
    require(num_classes >= 3, "bounds: C must be at least 3");
    require(epsilon >= 0.0, "bounds: epsilon must be non-negative");
    require(delta > 0.0 && delta < 1.0, "bounds: delta must lie in (0, 1)");
    require(kappa > 0.0, "bounds: kappa must be positive");
    require(lambda > 0.0, "bounds: lambda must be positive");
    require(lambda < 1.0 / std::sqrt(double(num_classes)),
            "bounds: precondition lambda < 1/sqrt(C) violated");
    require(epsilon < lambda, "bounds: precondition epsilon < lambda violated");
}

double min_loss_m(int num_classes, double norm_product) {
    require(num_classes >= 2, "min_loss_m: C must be at least 2");
    require(norm_product >= 0.0, "min_loss_m: norm product must be non-negative");
    const double c = double(num_classes);
    return std::log1p((c - 1.0) * std::exp(-c / (c - 1.0) * norm_product));
}

namespace {

double logistic_curvature(int num_classes, double x) {
    // (C-1)e^x / (1+(C-1)e^x)^2, evaluated through the stable reciprocal form
    // 1 / (y + 2 + 1/y) with y = (C-1)e^x.
    const double y = (double(num_classes) - 1.0) * std::exp(x);
    if (y == 0.0 || !std::isfinite(y)) return 0.0;
    return 1.0 / (y + 2.0 + 1.0 / y);
}

}  // namespace

double strong_convexity_modulus(int num_classes, double x_lo, double x_hi) {
    require(num_classes >= 2, "strong_convexity_modulus: C must be at least 2");
    require(x_lo <= x_hi, "strong_convexity_modulus: empty interval");
    return std::min(logistic_curvature(num_classes, x_lo), logistic_curvature(num_classes, x_hi));
}

BoundTriple bounds_T21(const BoundParams& p) {
    p.validate_T21();
    const double c = double(p.num_classes);
    const double ab = p.norm_product;
    const double e_k = std::exp(p.kappa * c * ab);
    const double gap = p.epsilon * (1.0 - p.delta) / p.delta;

    BoundTriple b;
    b.intra_lb = 1.0 - (c - 1.0) / (c * ab) * std::sqrt(128.0 * gap * e_k);
    b.nc3_lb = 1.0 - 2.0 * std::sqrt(2.0 * gap * e_k);
    const double root = std::sqrt(2.0 * p.epsilon / p.delta);
    b.inter_ub = -1.0 / (c - 1.0) + c / (c - 1.0) * (e_k / ab) * root +
                 4.0 * std::cbrt(2.0 * e_k / ab * root) + std::sqrt(e_k / ab * root);
    return b;
}

double f_lambda(double gamma, int num_classes, double lambda_eff) {
    const double c = double(num_classes);
    return std::log1p((c - 1.0) * std::exp(-c / (c - 1.0) * gamma)) + lambda_eff * gamma;
}

double gamma_star(int num_classes, double lambda_eff) {
    require(lambda_eff > 0.0, "gamma_star: lambda_eff must be positive");
    require(lambda_eff <= 1.0, "gamma_star: out of domain (lambda_eff must not exceed 1)");
    const double c = double(num_classes);
    return (c - 1.0) / c * std::log((c - (c - 1.0) * lambda_eff) / lambda_eff);
}

double min_reg_loss(int num_classes, double lambda) {
    require(lambda >= 0.0, "min_reg_loss: lambda must be non-negative");
    const double c = double(num_classes);
    const double sc = std::sqrt(c);
    require(lambda * sc <= 1.0, "min_reg_loss: requires lambda <= 1/sqrt(C)");
    if (lambda == 0.0) return 0.0;  // norms are unconstrained; the infimum is 0
    // Direct evaluation of f at its minimizer. The log term enters with a
    // minus sign: 1 + (C-1)exp(-C/(C-1) g*) equals 1/(1 - (C-1)lambda_eff/C),
    // so the value stays positive for every admissible lambda.
    return -std::log1p(-(c - 1.0) / sc * lambda) +
           (c - 1.0) / sc * lambda * std::log(sc / lambda - (c - 1.0));
}

double rho(int num_classes, double lambda, double kappa) {
    require(lambda > 0.0, "rho: lambda must be positive");
    require(kappa >= 0.0, "rho: kappa must be non-negative");
    const double c = double(num_classes);
    return std::pow(c * std::exp(1.0) / lambda, kappa * c);
}

BoundTriple bounds_T23(int num_classes, double lambda, double epsilon, double delta, double kappa) {
    BoundParams p;
    p.num_classes = num_classes;
    p.lambda = lambda;
    p.epsilon = epsilon;
    p.delta = delta;
    p.kappa = kappa;
    p.validate_T23();

    const double c = double(num_classes);
    const double r = rho(num_classes, lambda, kappa);
    const double gap = epsilon * (1.0 - delta) / delta;

    BoundTriple b;
    b.intra_lb = 1.0 - (c - 1.0) / c * std::sqrt(128.0 * r * gap);
    b.nc3_lb = 1.0 - 2.0 * std::sqrt(2.0 * r * gap);
    const double root = std::sqrt(2.0 * epsilon / delta);
    b.inter_ub = -1.0 / (c - 1.0) + c * r / (c - 1.0) * root + 4.0 * std::cbrt(r * root) +
                 std::sqrt(r * root);
    return b;
}

EpsilonFromRun epsilon_from_run(double loss, double reference_minimum) {
    EpsilonFromRun r;
    r.epsilon = std::max(loss - reference_minimum, 0.0);
    r.assumption_violated = loss < reference_minimum - 1e-6;
    return r;
}

BoundReport evaluate_bounds(const BoundParams& p) {
    BoundReport r;
    r.params = p;
    r.m = min_loss_m(p.num_classes, p.norm_product);
    r.m_reg = min_reg_loss(p.num_classes, p.lambda);
    r.gamma_star = gamma_star(p.num_classes, std::sqrt(double(p.num_classes)) * p.lambda);
    r.rho = rho(p.num_classes, p.lambda, p.kappa);
    const double c = double(p.num_classes);
    const double span = c * c / (c - 1.0) * p.norm_product;
    r.modulus = strong_convexity_modulus(p.num_classes, -span, span);
    r.t21 = bounds_T21(p);
    r.t23 = bounds_T23(p.num_classes, p.lambda, p.epsilon, p.delta, p.kappa);
    r.t21_nontrivial = r.t21.intra_lb > -1.0 && r.t21.nc3_lb > -1.0 && r.t21.inter_ub < 1.0;
    r.t23_nontrivial = r.t23.intra_lb > -1.0 && r.t23.nc3_lb > -1.0 && r.t23.inter_ub < 1.0;
    return r;
}

std::string bound_report_to_json(const BoundReport& r) {
    nlohmann::ordered_json j;
    j["params"] = {{"C", r.params.num_classes}, {"norm_product", r.params.norm_product},
                   {"epsilon", r.params.epsilon}, {"delta", r.params.delta},
                   {"kappa", r.params.kappa},    {"lambda", r.params.lambda}};
    j["m"] = r.m;
    j["m_reg"] = r.m_reg;
    j["gamma_star"] = r.gamma_star;
    j["rho"] = r.rho;
    j["modulus"] = r.modulus;
    auto triple = [](const BoundTriple& t) {
        return nlohmann::ordered_json{
            {"intra_lb", t.intra_lb},
            {"nc3_lb", t.nc3_lb},
            {"inter_ub", t.inter_ub},
            {"vacuous",
             {{"intra_lb", !(t.intra_lb > -1.0)},
              {"nc3_lb", !(t.nc3_lb > -1.0)},
              {"inter_ub", !(t.inter_ub < 1.0)}}}};
    };
    j["T21"] = triple(r.t21);
    j["T23"] = triple(r.t23);
    j["T21"]["nontrivial"] = r.t21_nontrivial;
    j["T23"]["nontrivial"] = r.t23_nontrivial;
    return j.dump(2);
}

}  // namespace collapse
