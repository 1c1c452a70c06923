#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "collapse/experiment.hpp"
#include "collapse/plot.hpp"

namespace {

struct CommonOpts {
    std::string config;
    std::string out;
    bool seed_set = false;
    std::uint64_t seed = 0;
    int jobs = 0;
    double wd = -1.0;
    int bn = -1;  // -1 untouched, 0 off, 1 on
    int epochs = -1;
    int metric_every = -1;
    std::string dtype;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "run seed (falls back to COLLAPSE_LAB_SEED)")
        ->each([&](const std::string&) { o.seed_set = true; });
    cmd->add_option("--jobs", o.jobs, "parallel sweep cells");
    cmd->add_option("--wd", o.wd, "weight decay value");
    auto* bn_on = cmd->add_flag("--bn", "enable batch normalization");
    auto* bn_off = cmd->add_flag("--no-bn", "disable batch normalization");
    bn_on->each([&](const std::string&) { o.bn = 1; });
    bn_off->each([&](const std::string&) { o.bn = 0; });
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--metric-every", o.metric_every, "record cadence in epochs");
    cmd->add_option("--dtype", o.dtype, "f32 or f64");
}

collapse::ExperimentSpec resolve(const CommonOpts& o) {
    collapse::ExperimentSpec spec;
    if (!o.config.empty()) spec = collapse::spec_from_json_file(o.config);
    if (!o.out.empty()) spec.out_dir = o.out;
    if (o.seed_set) {
        spec.train.seed = o.seed;
    } else if (const char* env = std::getenv("COLLAPSE_LAB_SEED")) {
        spec.train.seed = std::stoull(env);
    }
    if (o.jobs > 0) spec.jobs = o.jobs;
    if (o.wd >= 0.0) spec.train.wd_lambda = o.wd;
    if (o.bn == 0) spec.model.use_bn = false;
    if (o.bn == 1) spec.model.use_bn = true;
    if (o.epochs >= 0) spec.train.epochs = o.epochs;
    if (o.metric_every >= 0) spec.train.metric_every = o.metric_every;
    if (o.dtype == "f32") spec.model.dtype = collapse::Dtype::f32;
    if (o.dtype == "f64") spec.model.dtype = collapse::Dtype::f64;
    spec.validate();
    return spec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collapse-lab: bias-free MLP training and neural-collapse measurement"};
    app.require_subcommand(1);

    CommonOpts gen_o, train_o, sweep_o, track_o, freeze_o;
    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    add_common(gen, gen_o);
    auto* train = app.add_subcommand("train", "train one model and write records + checkpoint");
    add_common(train, train_o);
    auto* sweep = app.add_subcommand("sweep", "train the wd x bn x seed grid");
    add_common(sweep, sweep_o);
    auto* track = app.add_subcommand("track", "single run with metric cadence for loss tracking");
    add_common(track, track_o);
    auto* freeze = app.add_subcommand("freeze-gamma", "sweep over frozen BN scale constants");
    add_common(freeze, freeze_o);

    std::string bounds_csv, bounds_out = "-";
    double kappa = 1.0, delta = 0.1;
    auto* bounds = app.add_subcommand("bounds", "evaluate proximity bounds for finished runs");
    bounds->add_option("csv", bounds_csv, "run record CSV")->required();
    bounds->add_option("--kappa", kappa, "bound constant kappa");
    bounds->add_option("--delta", delta, "class fraction delta");
    bounds->add_option("--out", bounds_out, "output JSON path ('-' for stdout)");

    std::vector<std::string> plot_csvs;
    std::string plot_kind = "sweep", plot_out = ".";
    auto* plot = app.add_subcommand("plot", "render SVG figures from run CSVs");
    plot->add_option("csv", plot_csvs, "run record CSVs")->required();
    plot->add_option("--kind", plot_kind, "sweep, track or freeze");
    plot->add_option("--out", plot_out, "output directory");

    std::uint64_t verify_seed = 0;
    long verify_trials = 10000;
    auto* verify = app.add_subcommand("verify", "run lemma, gradient and metric-identity checks");
    verify->add_option("--seed", verify_seed, "base seed");
    verify->add_option("--trials", verify_trials, "trials per check");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return collapse::cmd_generate(resolve(gen_o));
        if (train->parsed()) return collapse::cmd_train(resolve(train_o));
        if (sweep->parsed()) return collapse::cmd_sweep(resolve(sweep_o));
        if (track->parsed()) return collapse::cmd_track(resolve(track_o));
        if (freeze->parsed()) {
            collapse::ExperimentSpec spec = resolve(freeze_o);
            if (freeze_o.wd < 0.0 && spec.train.wd_lambda == 0.0) spec.train.wd_lambda = 0.005;
            return collapse::cmd_freeze_gamma(spec);
        }
        if (bounds->parsed()) return collapse::cmd_bounds(bounds_csv, kappa, delta, bounds_out);
        if (plot->parsed()) {
            for (const std::string& f : collapse::cmd_plot(plot_csvs, plot_kind, plot_out))
                std::printf("plot: wrote %s\n", f.c_str());
            return 0;
        }
        if (verify->parsed()) return collapse::cmd_verify(verify_seed, verify_trials);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
