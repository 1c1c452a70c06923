#include "collapse/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "collapse/mlp.hpp"
#include "collapse/rng.hpp"

namespace collapse {

namespace {

int bits_needed(int num_classes) {
    int k = 0;
    while ((1 << k) < num_classes) ++k;
    return std::max(k, 1);
}

// Accumulates rejection-sampled draws until every class holds exactly n_per
// samples. max_attempts = 100 x requested total, enforced by the callers.
struct BalancedCollector {
    int dim, num_classes, n_per;
    std::vector<MatD> per_class;
    std::vector<int> counts;
    long long filled = 0;

    BalancedCollector(int d, int c, int n)
        : dim(d), num_classes(c), n_per(n), per_class(std::size_t(c), MatD(std::size_t(n), std::size_t(d))),
          counts(std::size_t(c), 0) {}

    bool offer(const VecD& x, int label) {
        int& cnt = counts[std::size_t(label)];
        if (cnt >= n_per) return false;
        std::copy(x.begin(), x.end(), per_class[std::size_t(label)].row(std::size_t(cnt)));
        ++cnt;
        ++filled;
        return true;
    }

    bool full() const { return filled == (long long)num_classes * n_per; }

    Dataset finish(std::uint64_t seed, std::string descriptor) const {
        Dataset ds;
        ds.num_classes = num_classes;
        ds.n_per_class = n_per;
        ds.dim = dim;
        ds.seed = seed;
        ds.generator = std::move(descriptor);
        ds.x = MatD(std::size_t(num_classes) * std::size_t(n_per), std::size_t(dim));
        ds.y.resize(ds.x.rows);
        std::size_t r = 0;
        for (int c = 0; c < num_classes; ++c)
            for (int i = 0; i < n_per; ++i, ++r) {
                std::copy(per_class[std::size_t(c)].row(std::size_t(i)),
                          per_class[std::size_t(c)].row(std::size_t(i)) + dim, ds.x.row(r));
                ds.y[r] = c;
            }
        return ds;
    }
};

}  // namespace

int argmax_lowest(const double* z, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

int conic_hull_label(const double* x, const MatD& normals, int num_classes) {
    int code = 0;
    const int k = int(normals.rows);
    for (int j = 0; j < k; ++j) {
        const double s = dot(normals.row(std::size_t(j)), x, normals.cols);
        code = (code << 1) | (s >= 0.0 ? 1 : 0);
    }
    if (code < num_classes) return code;
    return (code - num_classes) % num_classes;
}

Dataset gen_conic_hull(int dim, int num_classes, int n_per_class, std::uint64_t seed) {
    require(dim >= 2, "gen_conic_hull: dim must be at least 2");
    require(num_classes >= 2, "gen_conic_hull: need at least 2 classes");
    require(n_per_class >= 1, "gen_conic_hull: n_per_class must be positive");

    Rng rng(seed);
    const int k = bits_needed(num_classes);
    MatD normals(k, dim);
    for (int j = 0; j < k; ++j) {
        double n = 0.0;
        while (n <= 1e-12) {
            for (int t = 0; t < dim; ++t) normals(std::size_t(j), std::size_t(t)) = rng.normal();
            n = norm2(normals.row(std::size_t(j)), std::size_t(dim));
        }
        for (int t = 0; t < dim; ++t) normals(std::size_t(j), std::size_t(t)) /= n;
    }

    BalancedCollector coll(dim, num_classes, n_per_class);
    const long long max_attempts = 100LL * num_classes * n_per_class;
    VecD x(dim);
    for (long long attempt = 0; attempt < max_attempts && !coll.full(); ++attempt) {
        for (double& v : x) v = rng.normal();
        coll.offer(x, conic_hull_label(x.data(), normals, num_classes));
    }
    if (!coll.full())
        throw std::runtime_error(
            "gen_conic_hull: a class received too few samples within max_attempts; re-seed the "
            "hyperplanes");

    std::ostringstream desc;
    desc << "conic_hull(d=" << dim << ",C=" << num_classes << ",n_per=" << n_per_class << ")";
    return coll.finish(seed, desc.str());
}

Dataset gen_mlp_labeled(int dim, int num_classes, int n_per_class, std::uint64_t seed,
                        std::vector<int> gen_widths) {
    require(dim >= 1, "gen_mlp_labeled: dim must be positive");
    require(num_classes >= 2, "gen_mlp_labeled: need at least 2 classes");
    require(n_per_class >= 1, "gen_mlp_labeled: n_per_class must be positive");
    if (gen_widths.empty()) gen_widths = {dim, 16, num_classes};
    require(gen_widths.front() == dim, "gen_mlp_labeled: generator input width mismatch");
    require(gen_widths.back() == num_classes, "gen_mlp_labeled: generator output width mismatch");

    MlpConfig cfg;
    cfg.layer_widths = gen_widths;
    Mlp generator = make_mlp<double>(cfg, Rng::substream(seed, 7).next_u64());

    BalancedCollector coll(dim, num_classes, n_per_class);
    Rng rng(seed);
    const long long max_attempts = 100LL * num_classes * n_per_class;
    const int chunk = 256;
    MatD xs(chunk, dim);
    long long attempts = 0;
    while (!coll.full() && attempts < max_attempts) {
        const int take = int(std::min<long long>(chunk, max_attempts - attempts));
        for (int i = 0; i < take; ++i)
            for (int t = 0; t < dim; ++t) xs(std::size_t(i), std::size_t(t)) = rng.normal();
        MatD block(take, dim);
        std::copy(xs.data.begin(), xs.data.begin() + (long long)take * dim, block.data.begin());
        ForwardTrace<double> tr = forward(generator, block, ForwardMode::full_batch_eval);
        VecD row(dim);
        for (int i = 0; i < take; ++i) {
            const int label = argmax_lowest(tr.logits.row(std::size_t(i)), num_classes);
            std::copy(block.row(std::size_t(i)), block.row(std::size_t(i)) + dim, row.begin());
            coll.offer(row, label);
        }
        attempts += take;
    }
    if (!coll.full())
        throw std::runtime_error(
            "gen_mlp_labeled: class imbalance unfixable within max_attempts; re-seed the generator");

    std::ostringstream desc;
    desc << "mlp_labeled(d=" << dim << ",C=" << num_classes << ",n_per=" << n_per_class
         << ",widths=";
    for (std::size_t i = 0; i < gen_widths.size(); ++i)
        desc << (i ? "-" : "") << gen_widths[i];
    desc << ")";
    return coll.finish(seed, desc.str());
}

EtfFixture gen_simplex_etf(int num_classes, int dim, int n_per_class, double noise_eta,
                           std::uint64_t seed, double scale) {
    require(num_classes >= 2, "gen_simplex_etf: need at least 2 classes");
    require(dim >= num_classes - 1, "gen_simplex_etf: requires d >= C - 1");
    require(n_per_class >= 1, "gen_simplex_etf: n_per_class must be positive");
    require(noise_eta >= 0.0, "gen_simplex_etf: noise must be non-negative");

    const int C = num_classes;
    // Centered anchors sqrt(C/(C-1)) (I - 11^T/C) live in the complement of
    // the all-ones direction; the Helmert basis maps them isometrically into
    // R^(C-1) before zero-padding to R^d.
    MatD centered(C, C);
    const double s = std::sqrt(double(C) / double(C - 1));
    for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
            centered(std::size_t(i), std::size_t(j)) = s * ((i == j ? 1.0 : 0.0) - 1.0 / double(C));

    MatD helmert(C - 1, C);
    for (int r = 1; r < C; ++r) {
        const double inv = 1.0 / std::sqrt(double(r) * double(r + 1));
        for (int j = 0; j < r; ++j) helmert(std::size_t(r - 1), std::size_t(j)) = inv;
        helmert(std::size_t(r - 1), std::size_t(r)) = -double(r) * inv;
    }

    EtfFixture fx;
    fx.num_classes = C;
    fx.n_per_class = n_per_class;
    fx.dim = dim;
    fx.eta = noise_eta;
    fx.scale = scale;
    fx.vertices = MatD(std::size_t(C), std::size_t(dim));
    for (int c = 0; c < C; ++c)
        for (int r = 0; r < C - 1; ++r)
            fx.vertices(std::size_t(c), std::size_t(r)) =
                dot(helmert.row(std::size_t(r)), centered.row(std::size_t(c)), std::size_t(C));

    Rng rng(seed);
    fx.features.assign(std::size_t(C), MatD(std::size_t(n_per_class), std::size_t(dim)));
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < n_per_class; ++i)
            for (int t = 0; t < dim; ++t)
                fx.features[std::size_t(c)](std::size_t(i), std::size_t(t)) =
                    scale * fx.vertices(std::size_t(c), std::size_t(t)) +
                    noise_eta * rng.normal();
    return fx;
}

namespace {

constexpr char kMagic[4] = {'N', 'C', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                          (unsigned char)(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, std::uint32_t(v));
    put_u32(os, std::uint32_t(v >> 32));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("load_dataset: truncated file while reading ") + what +
                                 " at offset " + std::to_string(std::streamoff(is.tellg())));
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint64_t lo = get_u32(is, what);
    std::uint64_t hi = get_u32(is, what);
    return lo | hi << 32;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "save_dataset: cannot open " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, std::uint32_t(ds.num_classes));
    put_u64(os, std::uint64_t(ds.n_per_class));
    put_u32(os, std::uint32_t(ds.dim));
    put_u32(os, std::uint32_t(ds.generator.size()));
    os.write(ds.generator.data(), std::streamsize(ds.generator.size()));
    put_u64(os, ds.seed);
    for (double v : ds.x.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
    for (int y : ds.y) put_u32(os, std::uint32_t(y));
    require(bool(os), "save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "load_dataset: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_dataset: bad magic at offset 0 in " + path);
    const std::uint32_t version = get_u32(is, "version");
    if (version != kVersion)
        throw std::runtime_error("load_dataset: unsupported version " + std::to_string(version));

    Dataset ds;
    ds.num_classes = int(get_u32(is, "num_classes"));
    ds.n_per_class = int(get_u64(is, "n_per_class"));
    ds.dim = int(get_u32(is, "dim"));
    const std::uint32_t desc_len = get_u32(is, "descriptor length");
    ds.generator.resize(desc_len);
    if (desc_len && !is.read(ds.generator.data(), desc_len))
        throw std::runtime_error("load_dataset: truncated descriptor at offset " +
                                 std::to_string(std::streamoff(is.tellg())));
    ds.seed = get_u64(is, "seed");

    require(ds.num_classes >= 1 && ds.n_per_class >= 1 && ds.dim >= 1,
            "load_dataset: corrupt header in " + path);
    const std::size_t rows = std::size_t(ds.num_classes) * std::size_t(ds.n_per_class);
    ds.x = MatD(rows, std::size_t(ds.dim));
    for (double& v : ds.x.data) {
        std::uint64_t bits = get_u64(is, "sample data");
        std::memcpy(&v, &bits, 8);
    }
    ds.y.resize(rows);
    for (int& y : ds.y) {
        y = int(get_u32(is, "labels"));
        require(y >= 0 && y < ds.num_classes, "load_dataset: label out of range in " + path);
    }
    return ds;
}

void export_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ofstream os(path);
    require(bool(os), "export_dataset_csv: cannot open " + path);
    for (int j = 0; j < ds.dim; ++j) os << "x" << j << ",";
    os << "label\n";
    char buf[40];
    for (std::size_t i = 0; i < ds.x.rows; ++i) {
        for (int j = 0; j < ds.dim; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.x(i, std::size_t(j)));
            os << buf << ",";
        }
        os << ds.y[i] << "\n";
    }
    require(bool(os), "export_dataset_csv: write failed for " + path);
}

}  // namespace collapse
