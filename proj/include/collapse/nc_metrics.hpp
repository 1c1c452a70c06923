#pragma once
#include <array>
#include <string>
#include <vector>

#include "collapse/mat.hpp"

namespace collapse {

// Last-layer features grouped by class. Balanced: every class holds the same
// number of vectors.
class FeatureSet {
  public:
    FeatureSet(std::vector<MatD> per_class);

    // Groups rows of `features` by label. Requires balanced labels in [0, C).
    static FeatureSet from(const MatD& features, const std::vector<int>& labels, int num_classes);

    int num_classes() const { return int(classes_.size()); }
    int per_class() const { return int(classes_.empty() ? 0 : classes_[0].rows); }
    int dim() const { return int(classes_.empty() ? 0 : classes_[0].cols); }

    const MatD& cls(int c) const { return classes_.at(std::size_t(c)); }

    VecD class_mean(int c) const;
    VecD global_mean() const;

    // Mean normalized vector of class c, optionally after subtracting the
    // global mean. Throws if any vector norm falls below the degeneracy
    // tolerance (1e-12), naming the offending (class, index).
    VecD mean_normalized(int c, bool centering) const;

  private:
    std::vector<MatD> classes_;
};

// Final-layer weight matrix [C x d] with centered rows and norm statistics.
struct WeightView {
    MatD w;                  // rows w_c
    VecD mean_row;           // w~
    MatD centered;           // rows w_c - w~; rows sum to zero
    double beta = 0.0;       // ||W||_F / sqrt(C)
    VecD beta_c;             // ||centered row c||

    explicit WeightView(MatD weights);
};

struct NormStats {
    double alpha = 0.0;
    double beta = 0.0;
    VecD alpha_c;
    VecD beta_c;
};

struct NcReport {
    bool centering = false;
    int num_classes = 0;
    int per_class = 0;
    VecD intra;                                   // per class
    std::vector<std::array<double, 3>> inter;     // (c, c', value) over unordered pairs
    VecD nc3;                                     // per class
    double min_intra = 0.0, max_inter = 0.0;
    double avg_intra = 0.0, avg_inter = 0.0, avg_nc3 = 0.0;
    double alpha = 0.0, beta = 0.0;
    VecD alpha_c, beta_c;

    double inter_at(int c, int c2) const;
};

// Average pairwise cosine similarity inside class c. Computed through the
// mean-normalized-vector identity: intra_c = ||t_c||^2 with
// t_c = (1/N) sum_i h_i/||h_i|| (after optional global-mean subtraction).
double intra_class(const FeatureSet& fs, int c, bool centering);

// Average pairwise cosine similarity across classes c != c':
// inter = t_c . t_c'.
double inter_class(const FeatureSet& fs, int c, int c2, bool centering);

// cos of the centered classifier row and the raw class feature mean.
double nc3_cos(const WeightView& wv, const FeatureSet& fs, int c);

NormStats norm_stats(const FeatureSet& fs, const WeightView& wv);

NcReport summarize(const FeatureSet& fs, const WeightView& wv, bool centering);

// Serialized per the fixed report schema (keys: centering, C, N, intra,
// inter, nc3, min_intra, max_inter, avg_intra, avg_inter, alpha, beta,
// alpha_c, beta_c).
std::string nc_report_to_json(const NcReport& report);

}  // namespace collapse
