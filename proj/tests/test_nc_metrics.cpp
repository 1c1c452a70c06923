#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "collapse/dataset.hpp"
#include "collapse/lemma_checks.hpp"
#include "collapse/mlp.hpp"
#include "collapse/nc_metrics.hpp"
#include "collapse/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace collapse;

namespace {

FeatureSet fixture_features(const EtfFixture& fx) { return FeatureSet(fx.features); }

MatD random_mat(Rng& rng, std::size_t r, std::size_t c) {
    MatD m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Orthonormal basis via Gram-Schmidt on a random square matrix.
MatD random_rotation(Rng& rng, std::size_t d) {
    MatD q = random_mat(rng, d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double p = dot(q.row(i), q.row(j), d);
            for (std::size_t k = 0; k < d; ++k) q(i, k) -= p * q(j, k);
        }
        double n = norm2(q.row(i), d);
        for (std::size_t k = 0; k < d; ++k) q(i, k) /= n;
    }
    return q;
}

MatD apply_rotation(const MatD& m, const MatD& q) {
    MatD out;
    matmul_abt(m, q, out);  // rows times orthonormal rows: an isometry
    return out;
}

}  // namespace

TEST_CASE("intra of identical vectors is one") {
    MatD cls(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        cls(i, 0) = 1.0;
        cls(i, 1) = 2.0;
        cls(i, 2) = -1.0;
    }
    FeatureSet fs({cls});
    CHECK(intra_class(fs, 0, false) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("intra of two orthogonal unit vectors is one half") {
    MatD cls(2, 2, 0.0);
    cls(0, 0) = 1.0;
    cls(1, 1) = 1.0;
    FeatureSet fs({cls});
    CHECK(intra_class(fs, 0, false) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("intra equals the O(N^2) double loop") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        MatD cls = random_mat(rng, 9, 5);
        MatD other = random_mat(rng, 9, 5);
        FeatureSet fs({cls, other});
        for (bool centering : {false, true}) {
            CHECK(std::fabs(intra_class(fs, 0, centering) -
                            intra_class_bruteforce(fs, 0, centering)) < 1e-10);
            CHECK(std::fabs(inter_class(fs, 0, 1, centering) -
                            inter_class_bruteforce(fs, 0, 1, centering)) < 1e-10);
        }
    }
}

TEST_CASE("inter on the clean ETF fixture hits -1/(C-1)") {
    EtfFixture fx = gen_simplex_etf(4, 6, 5, 0.0, 1);
    FeatureSet fs = fixture_features(fx);
    for (int c = 0; c < 4; ++c)
        for (int c2 = c + 1; c2 < 4; ++c2)
            CHECK(std::fabs(inter_class(fs, c, c2, false) + 1.0 / 3.0) < 1e-12);
}

TEST_CASE("a mirrored class gives inter = -intra") {
    Rng rng(5);
    MatD cls(6, 4);
    for (std::size_t i = 0; i < 6; ++i) {
        VecD v(4);
        double n = 0.0;
        for (double& x : v) x = rng.normal();
        n = norm2(v);
        for (std::size_t k = 0; k < 4; ++k) cls(i, k) = v[k] / n;
    }
    MatD mirror(6, 4);
    for (std::size_t k = 0; k < cls.size(); ++k) mirror.data[k] = -cls.data[k];
    FeatureSet fs({cls, mirror});
    CHECK(inter_class(fs, 0, 1, false) ==
          doctest::Approx(-intra_class(fs, 0, false)).epsilon(1e-12));
}

TEST_CASE("nc3 is one when weights equal the class means") {
    EtfFixture fx = gen_simplex_etf(4, 6, 3, 0.0, 2);
    FeatureSet fs = fixture_features(fx);
    WeightView wv(fx.vertices);
    for (int c = 0; c < 4; ++c) CHECK(nc3_cos(wv, fs, c) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nc3 ignores the scale of the class mean") {
    Rng rng(7);
    MatD w = random_mat(rng, 3, 5);
    MatD cls1 = random_mat(rng, 4, 5);
    MatD cls2 = random_mat(rng, 4, 5);
    MatD cls3 = random_mat(rng, 4, 5);
    WeightView wv(w);
    FeatureSet fs({cls1, cls2, cls3});
    double base = nc3_cos(wv, fs, 1);

    MatD scaled = cls2;
    for (double& v : scaled.data) v *= 7.0;
    FeatureSet fs2({cls1, scaled, cls3});
    CHECK(nc3_cos(wv, fs2, 1) == doctest::Approx(base).epsilon(1e-12));

    // direct dot/norm oracle
    VecD mean = fs.class_mean(1);
    VecD wc(5);
    for (std::size_t k = 0; k < 5; ++k) wc[k] = wv.centered(1, k);
    CHECK(base == doctest::Approx(dot(wc, mean) / (norm2(wc) * norm2(mean))).epsilon(1e-12));
}

TEST_CASE("summarize on the clean fixture reports the collapse targets") {
    for (int c : {3, 4, 10}) {
        EtfFixture fx = gen_simplex_etf(c, c + 1, 4, 0.0, 3);
        FeatureSet fs = fixture_features(fx);
        WeightView wv(fx.vertices);
        NcReport r = summarize(fs, wv, false);
        CHECK(std::fabs(r.min_intra - 1.0) < 1e-12);
        CHECK(std::fabs(r.max_inter + 1.0 / (double(c) - 1.0)) < 1e-12);
        CHECK(r.avg_nc3 == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("min_intra is attained at an injected outlier class") {
    Rng rng(9);
    EtfFixture fx = gen_simplex_etf(4, 6, 8, 0.01, 4);
    std::vector<MatD> classes = fx.features;
    classes[2] = random_mat(rng, 8, 6);  // scattered class
    FeatureSet fs(classes);
    WeightView wv(fx.vertices);
    NcReport r = summarize(fs, wv, false);
    CHECK(r.min_intra == doctest::Approx(r.intra[2]));
    for (int c : {0, 1, 3}) CHECK(r.intra[std::size_t(c)] > r.intra[2]);
}

TEST_CASE("summaries are invariant under class permutation") {
    Rng rng(11);
    std::vector<MatD> classes;
    for (int c = 0; c < 4; ++c) classes.push_back(random_mat(rng, 6, 5));
    MatD w = random_mat(rng, 4, 5);

    NcReport a = summarize(FeatureSet(classes), WeightView(w), true);

    std::vector<MatD> perm = {classes[2], classes[0], classes[3], classes[1]};
    MatD wperm(4, 5);
    const int order[4] = {2, 0, 3, 1};
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < 5; ++k) wperm(i, k) = w(std::size_t(order[i]), k);
    NcReport b = summarize(FeatureSet(perm), WeightView(wperm), true);

    CHECK(a.min_intra == doctest::Approx(b.min_intra).epsilon(1e-12));
    CHECK(a.max_inter == doctest::Approx(b.max_inter).epsilon(1e-12));
    CHECK(a.avg_intra == doctest::Approx(b.avg_intra).epsilon(1e-12));
    CHECK(a.avg_inter == doctest::Approx(b.avg_inter).epsilon(1e-12));
    CHECK(a.avg_nc3 == doctest::Approx(b.avg_nc3).epsilon(1e-12));
    CHECK(a.alpha == doctest::Approx(b.alpha).epsilon(1e-12));
}

TEST_CASE("norm statistics") {
    // all unit-norm features -> alpha = 1
    MatD u(3, 4, 0.0);
    u(0, 0) = 1.0;
    u(1, 1) = 1.0;
    u(2, 2) = -1.0;
    FeatureSet fs({u, u});
    // identity rows padded to d: |W|_F = sqrt(C) -> beta = 1
    MatD w(2, 4, 0.0);
    w(0, 0) = 1.0;
    w(1, 1) = 1.0;
    NormStats ns = norm_stats(fs, WeightView(w));
    CHECK(ns.alpha == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ns.beta == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ns.alpha_c[0] == doctest::Approx(1.0));
    // alpha^2 = mean of alpha_c^2
    double s = 0.0;
    for (double a : ns.alpha_c) s += a * a;
    CHECK(ns.alpha == doctest::Approx(std::sqrt(s / 2.0)).epsilon(1e-13));
}

TEST_CASE("BN features give alpha = |gamma|") {
    MlpConfig cfg;
    cfg.layer_widths = {5, 8, 3};
    cfg.use_bn = true;
    cfg.var_eps = 0.0;
    Mlp m = make_mlp<double>(cfg, 13);
    Rng rng(14);
    MatD x = random_mat(rng, 30, 5);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) y[i] = int(i) % 3;
    auto t = forward(m, x, ForwardMode::full_batch_eval);
    FeatureSet fs = FeatureSet::from(t.features, y, 3);
    NormStats ns = norm_stats(fs, WeightView(m.weights.back()));
    CHECK(std::fabs(ns.alpha - norm2(m.gamma.data(), m.gamma.size())) < 1e-9);
}

TEST_CASE("metrics are invariant under a joint orthogonal rotation") {
    Rng rng(15);
    std::vector<MatD> classes;
    for (int c = 0; c < 3; ++c) classes.push_back(random_mat(rng, 5, 6));
    MatD w = random_mat(rng, 3, 6);
    MatD q = random_rotation(rng, 6);

    NcReport a = summarize(FeatureSet(classes), WeightView(w), true);
    std::vector<MatD> rot;
    for (const MatD& m : classes) rot.push_back(apply_rotation(m, q));
    NcReport b = summarize(FeatureSet(rot), WeightView(apply_rotation(w, q)), true);

    CHECK(a.min_intra == doctest::Approx(b.min_intra).epsilon(1e-9));
    CHECK(a.max_inter == doctest::Approx(b.max_inter).epsilon(1e-9));
    CHECK(a.avg_nc3 == doctest::Approx(b.avg_nc3).epsilon(1e-9));
    CHECK(a.beta == doctest::Approx(b.beta).epsilon(1e-9));
}

TEST_CASE("centering hardly matters for bias-free BN features") {
    MlpConfig cfg;
    cfg.layer_widths = {6, 10, 4};
    cfg.use_bn = true;
    cfg.var_eps = 0.0;
    Mlp m = make_mlp<double>(cfg, 17);
    Rng rng(18);
    MatD x = random_mat(rng, 40, 6);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) y[i] = int(i) % 4;
    auto t = forward(m, x, ForwardMode::full_batch_eval);
    FeatureSet fs = FeatureSet::from(t.features, y, 4);

    CHECK(norm2(fs.global_mean()) <= 1e-9);
    WeightView wv(m.weights.back());
    NcReport on = summarize(fs, wv, true);
    NcReport off = summarize(fs, wv, false);
    CHECK(std::fabs(on.min_intra - off.min_intra) < 1e-6);
    CHECK(std::fabs(on.max_inter - off.max_inter) < 1e-6);
}

TEST_CASE("all reported cosines stay inside [-1, 1]") {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<MatD> classes;
        const int c = 2 + int(rng.uniform_index(4));
        for (int i = 0; i < c; ++i) classes.push_back(random_mat(rng, 4, 5));
        NcReport r = summarize(FeatureSet(classes), WeightView(random_mat(rng, std::size_t(c), 5)),
                               trial % 2 == 0);
        for (double v : r.intra) CHECK((v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12));
        for (const auto& e : r.inter) CHECK((e[2] >= -1.0 - 1e-12 && e[2] <= 1.0 + 1e-12));
        for (double v : r.nc3) CHECK((v >= -1.0 - 1e-12 && v <= 1.0 + 1e-12));
    }
}

TEST_CASE("degenerate feature vectors raise an error naming the class and index") {
    MatD cls(3, 2, 0.0);
    cls(0, 0) = 1.0;
    cls(1, 0) = 2.0;  // row 2 stays zero
    FeatureSet fs({cls});
    CHECK_THROWS_WITH_AS(intra_class(fs, 0, false), doctest::Contains("class 0, index 2"),
                         std::runtime_error);
}

TEST_CASE("unbalanced or out-of-range labels are rejected") {
    MatD feats(4, 3, 1.0);
    CHECK_THROWS_AS(FeatureSet::from(feats, {0, 0, 0, 1}, 2), std::runtime_error);
    CHECK_THROWS_AS(FeatureSet::from(feats, {0, 1, 0, 2}, 2), std::runtime_error);
}

TEST_CASE("NcReport serializes to the fixed schema") {
    EtfFixture fx = gen_simplex_etf(3, 4, 2, 0.0, 5);
    NcReport r = summarize(fixture_features(fx), WeightView(fx.vertices), false);
    auto j = nlohmann::json::parse(nc_report_to_json(r));
    for (const char* key : {"centering", "C", "N", "intra", "inter", "nc3", "min_intra",
                            "max_inter", "avg_intra", "avg_inter", "alpha", "beta", "alpha_c",
                            "beta_c"})
        CHECK(j.contains(key));
    CHECK(j["C"] == 3);
    CHECK(j["N"] == 2);
    CHECK(j["intra"].size() == 3);
    CHECK(j["inter"].size() == 3);  // unordered pairs
    CHECK(j["inter"][0].size() == 3);
    CHECK(std::fabs(j["min_intra"].get<double>() - 1.0) < 1e-12);
}
