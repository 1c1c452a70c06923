#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "collapse/mat.hpp"

namespace collapse {

struct Dataset {
    MatD x;                  // [C * n_per x d]
    std::vector<int> y;      // labels in [0, C)
    int num_classes = 0;
    int n_per_class = 0;
    int dim = 0;
    std::uint64_t seed = 0;
    std::string generator;   // descriptor, e.g. "conic_hull(d=16,C=4,n_per=2000)"
};

struct EtfFixture {
    MatD vertices;           // [C x d], unit rows, pairwise cosine -1/(C-1)
    std::vector<MatD> features;  // per class: vertex * scale + eta * noise
    int num_classes = 0;
    int n_per_class = 0;
    int dim = 0;
    double eta = 0.0;
    double scale = 1.0;
};

// Sign-code label for the conic hull construction. The first normal carries
// the most significant bit (sign(n^T x) >= 0 -> bit 1); codes beyond C are
// folded round-robin onto the first classes.
int conic_hull_label(const double* x, const MatD& normals, int num_classes);

// Label rule for generator logits: argmax with ties resolved to the lowest
// index.
int argmax_lowest(const double* z, int n);

// Gaussian inputs cut into classes by ceil(log2 C) random hyperplanes through
// the origin; rejection-samples until every class holds exactly n_per_class.
Dataset gen_conic_hull(int dim, int num_classes, int n_per_class, std::uint64_t seed);

// Labels from a small randomly initialized ReLU MLP (argmax logits, ties to
// the lowest index). gen_widths is the full width chain; empty selects
// {dim, 16, num_classes}.
Dataset gen_mlp_labeled(int dim, int num_classes, int n_per_class, std::uint64_t seed,
                        std::vector<int> gen_widths = {});

// Simplex ETF vertices embedded in R^d (d >= C-1) plus Gaussian-perturbed
// per-class samples.
EtfFixture gen_simplex_etf(int num_classes, int dim, int n_per_class, double noise_eta,
                           std::uint64_t seed, double scale = 1.0);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// One sample per row, label in the last column.
void export_dataset_csv(const Dataset& ds, const std::string& path);

}  // namespace collapse
