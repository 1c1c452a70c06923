#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "collapse/dataset.hpp"
#include "collapse/mlp.hpp"

namespace collapse {

struct DatasetSpec {
    std::string kind = "conic_hull";  // conic_hull | mlp_labeled | file
    int dim = 16;
    int num_classes = 4;
    int n_per_class = 2000;
    std::uint64_t seed = 1;
    std::string path;                 // for kind == file
    std::vector<int> gen_widths;      // mlp_labeled generator chain (optional)
};

struct ModelSpec {
    std::vector<int> hidden = {32, 32, 32};  // hidden widths; full chain is d, hidden..., C
    bool use_bn = true;
    bool use_biases = false;
    double var_eps = 1e-5;
    Dtype dtype = Dtype::f64;
};

struct ExperimentSpec {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train;
    std::vector<double> sweep_wd = {1e-4, 1e-3, 5e-3, 1e-2};
    std::vector<bool> sweep_bn = {true, false};
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::vector<double> frozen_gammas = {0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0};
    double kappa = 1.0;
    double delta = 0.1;
    std::string out_dir = "out";
    int jobs = 1;

    void validate() const;
};

ExperimentSpec spec_from_json_file(const std::string& path);
ExperimentSpec spec_from_json_text(const std::string& text);
std::string spec_to_json(const ExperimentSpec& spec);

// One CSV row per recorded epoch. Optional fields serialize as empty cells.
struct RunRow {
    std::string run_id;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    bool bn = false;
    std::optional<double> frozen_gamma;
    int epoch = 0;
    double loss = 0.0, reg_loss = 0.0, accuracy = 0.0;
    double min_intra = 0.0, max_inter = 0.0;
    double avg_intra = 0.0, avg_inter = 0.0, avg_nc3 = 0.0;
    double alpha = 0.0, beta = 0.0;
    double eps_t21 = 0.0;
    std::optional<double> eps_t23, intra_lb_t23, inter_ub_t23;
    std::optional<double> gamma_norm;  // BN runs: ||gamma|| for the norm-identity column
};

extern const char* const kRunCsvHeader;

std::string run_row_to_csv(const RunRow& row);
std::vector<RunRow> load_run_csv(const std::string& path);

struct CellOutcome {
    std::string run_id;
    bool failed = false;
    int failed_epoch = -1;
    std::string error;
    std::vector<RunRow> rows;
    NcReport final_nc;  // per-class detail backing the bound-consistency check
    Mlp trained;        // final parameters, widened to 64-bit for checkpointing
};

// Trains one grid cell. lambda/bn/frozen/seed override the spec defaults.
CellOutcome run_cell(const ExperimentSpec& spec, const Dataset& ds, double lambda, bool bn,
                     std::optional<double> frozen_gamma, std::uint64_t seed);

Dataset make_dataset(const DatasetSpec& spec);

// Subcommand entry points. Each writes deterministic artifacts under
// spec.out_dir and returns a process exit status.
int cmd_generate(const ExperimentSpec& spec);
int cmd_train(const ExperimentSpec& spec);
int cmd_sweep(const ExperimentSpec& spec);
int cmd_track(const ExperimentSpec& spec);
int cmd_freeze_gamma(const ExperimentSpec& spec);
int cmd_bounds(const std::string& run_csv_path, double kappa, double delta,
               const std::string& out_path);
int cmd_verify(std::uint64_t seed, long trials);

}  // namespace collapse
