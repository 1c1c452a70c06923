#include "collapse/nc_metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace collapse {

namespace {
constexpr double kDegenerateNorm = 1e-12;
}

FeatureSet::FeatureSet(std::vector<MatD> per_class) : classes_(std::move(per_class)) {
    require(!classes_.empty(), "FeatureSet: no classes");
    for (const auto& m : classes_) {
        require(m.rows == classes_[0].rows && m.cols == classes_[0].cols,
                "FeatureSet: classes must be balanced with equal dimension");
        require(m.rows >= 1, "FeatureSet: empty class");
    }
}

FeatureSet FeatureSet::from(const MatD& features, const std::vector<int>& labels, int num_classes) {
    require(num_classes >= 1, "FeatureSet: num_classes must be positive");
    require(features.rows == labels.size(), "FeatureSet: label count mismatch");
    std::vector<std::size_t> counts(std::size_t(num_classes), 0);
    for (int y : labels) {
        require(y >= 0 && y < num_classes, "FeatureSet: label out of range");
        ++counts[std::size_t(y)];
    }
    for (std::size_t c = 1; c < counts.size(); ++c)
        require(counts[c] == counts[0], "FeatureSet: unbalanced labels");

    std::vector<MatD> per(std::size_t(num_classes), MatD(counts[0], features.cols));
    std::vector<std::size_t> fill(std::size_t(num_classes), 0);
    for (std::size_t i = 0; i < features.rows; ++i) {
        auto c = std::size_t(labels[i]);
        std::copy(features.row(i), features.row(i) + features.cols, per[c].row(fill[c]));
        ++fill[c];
    }
    return FeatureSet(std::move(per));
}

VecD FeatureSet::class_mean(int c) const {
    const MatD& m = cls(c);
    VecD mean(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) mean[j] += m(i, j);
    for (double& v : mean) v /= double(m.rows);
    return mean;
}

VecD FeatureSet::global_mean() const {
    VecD mean(std::size_t(dim()), 0.0);
    std::size_t total = 0;
    for (const auto& m : classes_) {
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j) mean[j] += m(i, j);
        total += m.rows;
    }
    for (double& v : mean) v /= double(total);
    return mean;
}

VecD FeatureSet::mean_normalized(int c, bool centering) const {
    const MatD& m = cls(c);
    VecD center = centering ? global_mean() : VecD(m.cols, 0.0);
    VecD acc(m.cols, 0.0);
    VecD v(m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) v[j] = m(i, j) - center[j];
        double n = norm2(v);
        if (n <= kDegenerateNorm)
            throw std::runtime_error("degenerate feature vector in class " + std::to_string(c) +
                                     ", index " + std::to_string(i));
        for (std::size_t j = 0; j < m.cols; ++j) acc[j] += v[j] / n;
    }
    for (double& x : acc) x /= double(m.rows);
    return acc;
}

WeightView::WeightView(MatD weights) : w(std::move(weights)) {
    require(w.rows >= 1 && w.cols >= 1, "WeightView: empty matrix");
    mean_row.assign(w.cols, 0.0);
    for (std::size_t c = 0; c < w.rows; ++c)
        for (std::size_t j = 0; j < w.cols; ++j) mean_row[j] += w(c, j);
    for (double& v : mean_row) v /= double(w.rows);

    centered = MatD(w.rows, w.cols);
    beta_c.assign(w.rows, 0.0);
    for (std::size_t c = 0; c < w.rows; ++c) {
        for (std::size_t j = 0; j < w.cols; ++j) centered(c, j) = w(c, j) - mean_row[j];
        beta_c[c] = norm2(centered.row(c), w.cols);
    }
    beta = std::sqrt(frobenius_norm2(w) / double(w.rows));
}

double NcReport::inter_at(int c, int c2) const {
    for (const auto& e : inter)
        if ((int(e[0]) == c && int(e[1]) == c2) || (int(e[0]) == c2 && int(e[1]) == c)) return e[2];
    throw std::runtime_error("NcReport: pair not found");
}

double intra_class(const FeatureSet& fs, int c, bool centering) {
    VecD t = fs.mean_normalized(c, centering);
    double n = norm2(t);
    return n * n;
}

double inter_class(const FeatureSet& fs, int c, int c2, bool centering) {
    require(c != c2, "inter_class: classes must differ");
    VecD tc = fs.mean_normalized(c, centering);
    VecD tc2 = fs.mean_normalized(c2, centering);
    return dot(tc, tc2);
}

double nc3_cos(const WeightView& wv, const FeatureSet& fs, int c) {
    require(c >= 0 && c < fs.num_classes() && std::size_t(c) < wv.w.rows, "nc3_cos: class out of range");
    VecD hc = fs.class_mean(c);
    double hn = norm2(hc);
    double wn = wv.beta_c[std::size_t(c)];
    require(hn > kDegenerateNorm && wn > kDegenerateNorm, "nc3_cos: degenerate norm");
    return dot(wv.centered.row(std::size_t(c)), hc.data(), hc.size()) / (wn * hn);
}

NormStats norm_stats(const FeatureSet& fs, const WeightView& wv) {
    NormStats s;
    const int C = fs.num_classes();
    s.alpha_c.assign(std::size_t(C), 0.0);
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        const MatD& m = fs.cls(c);
        double ss = 0.0;
        for (std::size_t i = 0; i < m.rows; ++i) {
            double n = norm2(m.row(i), m.cols);
            ss += n * n;
        }
        s.alpha_c[std::size_t(c)] = std::sqrt(ss / double(m.rows));
        total += ss;
    }
    s.alpha = std::sqrt(total / double(C * fs.per_class()));
    s.beta = wv.beta;
    s.beta_c = wv.beta_c;
    return s;
}

NcReport summarize(const FeatureSet& fs, const WeightView& wv, bool centering) {
    const int C = fs.num_classes();
    require(C >= 2, "summarize: needs at least two classes");

    NcReport r;
    r.centering = centering;
    r.num_classes = C;
    r.per_class = fs.per_class();

    auto t = std::vector<VecD>(std::size_t(C));
    for (int c = 0; c < C; ++c) t[std::size_t(c)] = fs.mean_normalized(c, centering);

    r.intra.resize(std::size_t(C));
    r.nc3.resize(std::size_t(C));
    for (int c = 0; c < C; ++c) {
        double n = norm2(t[std::size_t(c)]);
        r.intra[std::size_t(c)] = n * n;
        r.nc3[std::size_t(c)] = nc3_cos(wv, fs, c);
    }

    r.min_intra = *std::min_element(r.intra.begin(), r.intra.end());
    r.avg_intra = 0.0;
    for (double v : r.intra) r.avg_intra += v;
    r.avg_intra /= double(C);

    r.max_inter = -std::numeric_limits<double>::infinity();
    r.avg_inter = 0.0;
    for (int c = 0; c < C; ++c) {
        for (int c2 = c + 1; c2 < C; ++c2) {
            double v = dot(t[std::size_t(c)], t[std::size_t(c2)]);
            r.inter.push_back({double(c), double(c2), v});
            r.max_inter = std::max(r.max_inter, v);
            r.avg_inter += v;
        }
    }
    r.avg_inter /= double(C * (C - 1) / 2);

    r.avg_nc3 = 0.0;
    for (double v : r.nc3) r.avg_nc3 += v;
    r.avg_nc3 /= double(C);

    NormStats ns = norm_stats(fs, wv);
    r.alpha = ns.alpha;
    r.beta = ns.beta;
    r.alpha_c = ns.alpha_c;
    r.beta_c = ns.beta_c;
    return r;
}

std::string nc_report_to_json(const NcReport& r) {
    nlohmann::ordered_json j;
    j["centering"] = r.centering;
    j["C"] = r.num_classes;
    j["N"] = r.per_class;
    j["intra"] = r.intra;
    auto inter = nlohmann::ordered_json::array();
    for (const auto& e : r.inter) inter.push_back({int(e[0]), int(e[1]), e[2]});
    j["inter"] = inter;
    j["nc3"] = r.nc3;
    j["min_intra"] = r.min_intra;
    j["max_inter"] = r.max_inter;
    j["avg_intra"] = r.avg_intra;
    j["avg_inter"] = r.avg_inter;
    j["alpha"] = r.alpha;
    j["beta"] = r.beta;
    j["alpha_c"] = r.alpha_c;
    j["beta_c"] = r.beta_c;
    return j.dump(2);
}

}  // namespace collapse
