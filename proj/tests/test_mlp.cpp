#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "collapse/bounds.hpp"
#include "collapse/dataset.hpp"
#include "collapse/mlp.hpp"
#include "collapse/model_io.hpp"
#include "collapse/nc_metrics.hpp"
#include "collapse/rng.hpp"
#include "doctest.h"

using namespace collapse;

namespace {

MatD random_mat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    MatD m(r, c);
    for (double& v : m.data) v = rng.normal() * scale;
    return m;
}

double quad_mean_row_norm(const MatD& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        double n = norm2(m.row(i), m.cols);
        s += n * n;
    }
    return std::sqrt(s / double(m.rows));
}

}  // namespace

TEST_CASE("bn_forward standardizes a single column") {
    MatD x(2, 1);
    x(0, 0) = 1.0;
    x(1, 0) = 3.0;
    auto [out, stats] = bn_forward(x, {2.0}, 0.0);
    CHECK(out(0, 0) == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(out(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(stats.mu[0] == doctest::Approx(2.0));
    CHECK(stats.sigma[0] == doctest::Approx(1.0));  // population std
    CHECK(quad_mean_row_norm(out) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("bn_forward rejects a degenerate batch at var_eps = 0") {
    MatD x(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        x(i, 0) = 1.5;
        x(i, 1) = double(i);
    }
    CHECK_THROWS_WITH_AS(bn_forward(x, {1.0, 1.0}, 0.0), doctest::Contains("degenerate batch"),
                         std::runtime_error);
    CHECK_NOTHROW(bn_forward(x, {1.0, 1.0}, 1e-5));
}

TEST_CASE("bn_forward quadratic mean of output norms equals |gamma|") {
    Rng rng(11);
    MatD x = random_mat(rng, 7, 5, 2.3);
    std::vector<double> gamma(5);
    for (double& g : gamma) g = rng.normal();
    auto [out, stats] = bn_forward(x, gamma, 0.0);
    CHECK(std::fabs(quad_mean_row_norm(out) - norm2(gamma.data(), 5)) < 1e-12);
}

TEST_CASE("bn_forward requires batch of at least two rows") {
    MatD x(1, 2, 1.0);
    CHECK_THROWS_AS(bn_forward(x, {1.0, 1.0}, 0.0), std::runtime_error);
}

TEST_CASE("forward through an identity single-layer model") {
    MlpConfig cfg;
    cfg.layer_widths = {2, 2};
    Mlp m = make_mlp<double>(cfg, 0);
    m.weights[0].fill(0.0);
    m.weights[0](0, 0) = 1.0;
    m.weights[0](1, 1) = 1.0;
    MatD x(1, 2);
    x(0, 0) = 1.0;
    x(0, 1) = -2.0;
    auto t = forward(m, x, ForwardMode::full_batch_eval);
    CHECK(t.logits(0, 0) == 1.0);
    CHECK(t.logits(0, 1) == -2.0);
    CHECK(t.features(0, 0) == 1.0);
    CHECK(t.features(0, 1) == -2.0);
}

TEST_CASE("forward with BN: feature norms follow |gamma| over the full set") {
    MlpConfig cfg;
    cfg.layer_widths = {6, 8, 4};
    cfg.use_bn = true;
    cfg.var_eps = 0.0;
    Mlp m = make_mlp<double>(cfg, 3);
    Rng rng(4);
    for (double& g : m.gamma) g = 0.5 + rng.uniform();
    MatD x = random_mat(rng, 40, 6);
    auto t = forward(m, x, ForwardMode::full_batch_eval);
    CHECK(std::fabs(quad_mean_row_norm(t.features) - norm2(m.gamma.data(), m.gamma.size())) <
          1e-12);
}

TEST_CASE("forward maps a zero batch to zero features and logits without biases") {
    MlpConfig cfg;
    cfg.layer_widths = {3, 5, 4, 2};
    Mlp m = make_mlp<double>(cfg, 7);
    MatD x(4, 3, 0.0);
    auto t = forward(m, x, ForwardMode::full_batch_eval);
    for (double v : t.features.data) CHECK(v == 0.0);
    for (double v : t.logits.data) CHECK(v == 0.0);
}

TEST_CASE("forward rejects mismatched input width") {
    MlpConfig cfg;
    cfg.layer_widths = {3, 2};
    Mlp m = make_mlp<double>(cfg, 0);
    MatD x(2, 4, 1.0);
    CHECK_THROWS_AS(forward(m, x, ForwardMode::train), std::runtime_error);
}

TEST_CASE("ce_loss of uniform logits is log C") {
    MatD z(3, 4, 0.7);
    CHECK(ce_loss(z, {0, 2, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("ce_loss vanishes under a huge true-class margin") {
    MatD z(2, 3, 0.0);
    z(0, 1) = 1000.0;
    z(1, 2) = 1000.0;
    CHECK(ce_loss(z, {1, 2}) <= 1e-12);
}

TEST_CASE("ce_loss matches a naive two-pass softmax oracle") {
    Rng rng(5);
    MatD z = random_mat(rng, 3, 3, 2.0);
    std::vector<int> y = {2, 0, 1};
    double naive = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double denom = 0.0;
        for (std::size_t j = 0; j < 3; ++j) denom += std::exp(z(i, j));
        naive += -std::log(std::exp(z(i, std::size_t(y[std::size_t(i)]))) / denom);
    }
    naive /= 3.0;
    CHECK(std::fabs(ce_loss(z, y) - naive) < 1e-12);
}

TEST_CASE("ce_loss is invariant to per-sample logit shifts") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        MatD z = random_mat(rng, 4, 5, 1.5);
        std::vector<int> y(4);
        for (int& v : y) v = int(rng.uniform_index(5));
        double base = ce_loss(z, y);
        MatD shifted = z;
        for (std::size_t i = 0; i < z.rows; ++i) {
            double c = rng.uniform(-3.0, 3.0);
            for (std::size_t j = 0; j < z.cols; ++j) shifted(i, j) += c;
        }
        CHECK(std::fabs(ce_loss(shifted, y) - base) < 1e-12);
    }
}

TEST_CASE("ce_loss rejects non-finite logits and bad labels") {
    MatD z(1, 2, 0.0);
    z(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(ce_loss(z, {0}), std::runtime_error);
    MatD ok(1, 2, 0.0);
    CHECK_THROWS_AS(ce_loss(ok, {2}), std::runtime_error);
}

TEST_CASE("regularized_loss arithmetic") {
    MlpConfig cfg;
    cfg.layer_widths = {1, 1};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 0);
    m.gamma = {2.0};           // |gamma|^2 = 4
    m.weights[0](0, 0) = 3.0;  // |W|_F^2 = 9
    CHECK(regularized_loss(1.0, m, 0.0, WdScope::last_layer_and_gamma) == 1.0);
    CHECK(regularized_loss(1.0, m, 0.1, WdScope::last_layer_and_gamma) ==
          doctest::Approx(1.65).epsilon(1e-14));
}

TEST_CASE("all-layers scope adds the earlier Frobenius norms") {
    MlpConfig cfg;
    cfg.layer_widths = {4, 6, 5, 3};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 9);
    const double lambda = 0.03;
    double earlier = 0.0;
    for (std::size_t l = 0; l + 1 < m.weights.size(); ++l) earlier += frobenius_norm2(m.weights[l]);
    const double last = regularized_loss(0.4, m, lambda, WdScope::last_layer_and_gamma);
    const double all = regularized_loss(0.4, m, lambda, WdScope::all_layers);
    CHECK(all == doctest::Approx(last + 0.5 * lambda * earlier).epsilon(1e-13));
}

TEST_CASE("weight decay contributes exactly lambda * parameter to the gradient") {
    MlpConfig cfg;
    cfg.layer_widths = {4, 6, 3};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 13);
    Rng rng(14);
    MatD x = random_mat(rng, 6, 4);
    std::vector<int> y = {0, 1, 2, 0, 1, 2};
    auto t = forward(m, x, ForwardMode::train);
    const double lambda = 0.07;
    auto g0 = backward(m, t, y, 0.0, WdScope::last_layer_and_gamma);
    auto g1 = backward(m, t, y, lambda, WdScope::last_layer_and_gamma);
    for (std::size_t k = 0; k < m.weights.back().size(); ++k)
        CHECK(g1.weights.back().data[k] - g0.weights.back().data[k] ==
              doctest::Approx(lambda * m.weights.back().data[k]).epsilon(1e-12));
    for (std::size_t k = 0; k < m.gamma.size(); ++k)
        CHECK(g1.gamma[k] - g0.gamma[k] == doctest::Approx(lambda * m.gamma[k]).epsilon(1e-12));
    // earlier layers untouched under the layer-peeled scope
    for (std::size_t k = 0; k < m.weights[0].size(); ++k)
        CHECK(g1.weights[0].data[k] == g0.weights[0].data[k]);
}

TEST_CASE("backward matches central differences on a BN model") {
    MlpConfig cfg;
    cfg.layer_widths = {4, 6, 5, 3};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 21);
    Rng rng(22);
    MatD x = random_mat(rng, 7, 4);
    std::vector<int> y(7);
    for (int& v : y) v = int(rng.uniform_index(3));
    CHECK(grad_check(m, x, y, 0.05, WdScope::all_layers, 1e-5) < 1e-4);
}

TEST_CASE("gradient vanishes at a saturated one-hot stationary point") {
    MlpConfig cfg;
    cfg.layer_widths = {3, 3};
    Mlp m = make_mlp<double>(cfg, 0);
    m.weights[0].fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) m.weights[0](i, i) = 500.0;
    MatD x(3, 3, 0.0);
    for (std::size_t i = 0; i < 3; ++i) x(i, i) = 2.0;  // margin 1000
    std::vector<int> y = {0, 1, 2};
    auto t = forward(m, x, ForwardMode::train);
    auto g = backward(m, t, y, 0.0, WdScope::last_layer_and_gamma);
    CHECK(std::sqrt(frobenius_norm2(g.weights[0])) < 1e-8);
}

TEST_CASE("grad_check on a linear model agrees with finite differences to round-off") {
    MlpConfig cfg;
    cfg.layer_widths = {2, 2};
    Mlp m = make_mlp<double>(cfg, 1);
    MatD x(4, 2);
    Rng rng(2);
    for (double& v : x.data) v = rng.normal();
    std::vector<int> y = {0, 1, 1, 0};
    CHECK(grad_check(m, x, y, 0.0, WdScope::last_layer_and_gamma, 1e-5) < 1e-6);
}

TEST_CASE("train with zero epochs only records the initial state") {
    Dataset ds = gen_conic_hull(6, 4, 20, 3);
    MlpConfig cfg;
    cfg.layer_widths = {6, 8, 4};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 5);
    const auto before = m.weights;
    TrainConfig tc;
    tc.epochs = 0;
    TrainHistory h = train(m, ds.x, ds.y, tc);
    REQUIRE(h.size() == 1);
    CHECK(h[0].epoch == 0);
    for (std::size_t l = 0; l < before.size(); ++l)
        for (std::size_t k = 0; k < before[l].size(); ++k)
            CHECK(m.weights[l].data[k] == before[l].data[k]);
}

TEST_CASE("train is bit-deterministic for a fixed seed") {
    Dataset ds = gen_conic_hull(6, 4, 25, 7);
    MlpConfig cfg;
    cfg.layer_widths = {6, 10, 4};
    cfg.use_bn = true;
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 16;
    tc.wd_lambda = 1e-3;
    tc.seed = 42;
    tc.metric_every = 2;

    Mlp m1 = make_mlp<double>(cfg, tc.seed);
    Mlp m2 = make_mlp<double>(cfg, tc.seed);
    TrainHistory h1 = train(m1, ds.x, ds.y, tc);
    TrainHistory h2 = train(m2, ds.x, ds.y, tc);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].epoch == h2[i].epoch);
        CHECK(h1[i].loss == h2[i].loss);
        CHECK(h1[i].reg_loss == h2[i].reg_loss);
        CHECK(h1[i].accuracy == h2[i].accuracy);
        CHECK(h1[i].alpha == h2[i].alpha);
        CHECK(h1[i].nc.min_intra == h2[i].nc.min_intra);
    }
    for (std::size_t l = 0; l < m1.weights.size(); ++l)
        for (std::size_t k = 0; k < m1.weights[l].size(); ++k)
            CHECK(m1.weights[l].data[k] == m2.weights[l].data[k]);
}

TEST_CASE("train records at the metric cadence plus the final epoch") {
    Dataset ds = gen_conic_hull(5, 2, 16, 9);
    MlpConfig cfg;
    cfg.layer_widths = {5, 6, 2};
    Mlp m = make_mlp<double>(cfg, 1);
    TrainConfig tc;
    tc.epochs = 7;
    tc.metric_every = 3;
    tc.batch_size = 8;
    TrainHistory h = train(m, ds.x, ds.y, tc);
    std::vector<int> epochs;
    for (const auto& r : h) epochs.push_back(r.epoch);
    CHECK(epochs == std::vector<int>{0, 3, 6, 7});
}

TEST_CASE("train throws a divergence error carrying the epoch") {
    Dataset ds = gen_conic_hull(5, 2, 16, 11);
    MlpConfig cfg;
    cfg.layer_widths = {5, 6, 6, 2};
    Mlp m = make_mlp<double>(cfg, 1);
    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 1e120;
    tc.batch_size = 8;
    try {
        train(m, ds.x, ds.y, tc);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch >= 1);
        CHECK(e.epoch <= 3);
    }
}

TEST_CASE("frozen gamma never moves and scales as constant * sqrt(d)") {
    Dataset ds = gen_conic_hull(6, 3, 20, 13);
    MlpConfig cfg;
    cfg.layer_widths = {6, 16, 3};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 2);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    tc.wd_lambda = 5e-3;
    tc.freeze_gamma_to = 0.25;
    train(m, ds.x, ds.y, tc);
    for (double g : m.gamma) CHECK(g == 0.25);
    double gnorm = norm2(std::vector<double>(m.gamma.begin(), m.gamma.end()));
    CHECK(gnorm == doctest::Approx(0.25 * std::sqrt(16.0)).epsilon(1e-14));
}

TEST_CASE("training fits a small conic hull dataset") {
    Dataset ds = gen_conic_hull(8, 4, 50, 17);
    MlpConfig cfg;
    cfg.layer_widths = {8, 16, 16, 4};
    cfg.use_bn = true;
    Mlp m = make_mlp<double>(cfg, 3);
    TrainConfig tc;
    tc.epochs = 150;
    tc.batch_size = 16;
    tc.wd_lambda = 1e-3;
    tc.metric_every = 0;
    tc.lr = 1e-2;
    TrainHistory h = train(m, ds.x, ds.y, tc);
    CHECK(h.back().accuracy >= 0.95);
    CHECK(h.back().loss < h.front().loss);
}

TEST_CASE("average CE loss never undercuts the closed-form floor") {
    // property over random model states: L >= m(C, alpha * beta) - 1e-9
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int c = 3 + int(rng.uniform_index(3));
        const int d = c + int(rng.uniform_index(4));
        MlpConfig cfg;
        cfg.layer_widths = {4, d, c};
        cfg.use_bn = trial % 2 == 0;
        Mlp m = make_mlp<double>(cfg, rng.next_u64());
        const int n = c * (2 + int(rng.uniform_index(5)));
        MatD x = random_mat(rng, std::size_t(n), 4);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(i) % c;

        auto t = forward(m, x, ForwardMode::full_batch_eval);
        const double loss = ce_loss(t.logits, y);
        FeatureSet fs = FeatureSet::from(t.features, y, c);
        WeightView wv(m.weights.back());
        NormStats ns = norm_stats(fs, wv);
        CHECK(loss >= min_loss_m(c, ns.alpha * ns.beta) - 1e-9);
    }
}

TEST_CASE("BN norm identity survives uneven batch partitions") {
    Rng rng(37);
    const int d = 9;
    std::vector<double> gamma(d);
    for (double& g : gamma) g = rng.normal();
    const std::vector<int> sizes = {32, 32, 17};
    double sq = 0.0;
    int total = 0;
    for (int rows : sizes) {
        MatD x(rows, d);
        for (double& v : x.data) v = rng.normal() * 2.0;
        auto [out, stats] = bn_forward(x, gamma, 0.0);
        for (int i = 0; i < rows; ++i) {
            double n = norm2(out.row(std::size_t(i)), std::size_t(d));
            sq += n * n;
        }
        total += rows;
    }
    CHECK(std::fabs(std::sqrt(sq / total) - norm2(gamma.data(), gamma.size())) <= 1e-9);
}

TEST_CASE("float32 training stays finite and deterministic") {
    Dataset ds = gen_conic_hull(6, 3, 20, 19);
    MlpConfig cfg;
    cfg.layer_widths = {6, 8, 3};
    cfg.use_bn = true;
    cfg.dtype = Dtype::f32;
    Mat<float> x(ds.x.rows, ds.x.cols);
    for (std::size_t k = 0; k < x.size(); ++k) x.data[k] = float(ds.x.data[k]);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    MlpT<float> m1 = make_mlp<float>(cfg, 4);
    MlpT<float> m2 = make_mlp<float>(cfg, 4);
    TrainHistory h1 = train(m1, x, ds.y, tc);
    TrainHistory h2 = train(m2, x, ds.y, tc);
    CHECK(std::isfinite(h1.back().loss));
    CHECK(h1.back().loss == h2.back().loss);
}

TEST_CASE("model checkpoints round-trip exactly") {
    MlpConfig cfg;
    cfg.layer_widths = {5, 7, 4};
    cfg.use_bn = true;
    cfg.use_biases = true;
    Mlp m = make_mlp<double>(cfg, 77);
    Rng rng(78);
    for (double& g : m.gamma) g = rng.normal();
    for (auto& b : m.biases)
        for (double& v : b) v = rng.normal();

    const std::string path = "test_model_ckpt.json";
    save_model(m, path);
    Mlp back = load_model<double>(path);
    CHECK(back.config.layer_widths == m.config.layer_widths);
    CHECK(back.config.use_bn == m.config.use_bn);
    CHECK(back.rng_seed == m.rng_seed);
    for (std::size_t l = 0; l < m.weights.size(); ++l)
        for (std::size_t k = 0; k < m.weights[l].size(); ++k)
            CHECK(back.weights[l].data[k] == m.weights[l].data[k]);
    for (std::size_t k = 0; k < m.gamma.size(); ++k) CHECK(back.gamma[k] == m.gamma[k]);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_model<double>("does_not_exist.json"), std::runtime_error);
}
