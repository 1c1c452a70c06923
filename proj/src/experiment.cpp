#include "collapse/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "collapse/bounds.hpp"
#include "collapse/lemma_checks.hpp"
#include "collapse/model_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace collapse {

void ExperimentSpec::validate() const {
    require(!seeds.empty(), "spec: seeds list must not be empty");
    for (double wd : sweep_wd) require(wd > 0.0, "spec: sweep wd values must be positive");
    require(dataset.num_classes >= 2, "spec: dataset needs at least 2 classes");
    require(jobs >= 1, "spec: jobs must be positive");
    for (double g : frozen_gammas) require(g > 0.0, "spec: frozen gamma constants must be positive");

    if (dataset.kind == "mlp_labeled") {
        // the label generator must be strictly smaller than the model trained on it
        std::vector<int> gen = dataset.gen_widths;
        if (gen.empty()) gen = {dataset.dim, 16, dataset.num_classes};
        std::vector<int> chain;
        chain.push_back(dataset.dim);
        for (int h : model.hidden) chain.push_back(h);
        chain.push_back(dataset.num_classes);
        auto params = [](const std::vector<int>& w) {
            long p = 0;
            for (std::size_t i = 0; i + 1 < w.size(); ++i) p += long(w[i]) * w[i + 1];
            return p;
        };
        require(gen.size() <= chain.size() && params(gen) < params(chain),
                "spec: the mlp_labeled generator must be strictly smaller than the training model");
    }
}

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

Dtype dtype_from_string(const std::string& s) {
    if (s == "f32" || s == "float32") return Dtype::f32;
    if (s == "f64" || s == "float64") return Dtype::f64;
    throw std::runtime_error("config: unknown dtype '" + s + "'");
}

WdScope scope_from_string(const std::string& s) {
    if (s == "last_layer_and_gamma") return WdScope::last_layer_and_gamma;
    if (s == "all_layers") return WdScope::all_layers;
    throw std::runtime_error("config: unknown wd_scope '" + s + "'");
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int k = int(std::min<std::size_t>(std::size_t(jobs), n));
    pool.reserve(std::size_t(k));
    for (int i = 0; i < k; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "cannot open " + path);
    os << text;
    require(bool(os), "write failed for " + path);
}

void dump_resolved_config(const ExperimentSpec& spec) {
    fs::create_directories(spec.out_dir);
    write_text_file(spec.out_dir + "/config.json", spec_to_json(spec) + "\n");
}

}  // namespace

ExperimentSpec spec_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(std::string("config: parse error: ") + e.what());
    }
    ExperimentSpec s;
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        s.dataset.kind = d.value("kind", s.dataset.kind);
        s.dataset.dim = d.value("dim", s.dataset.dim);
        s.dataset.num_classes = d.value("num_classes", s.dataset.num_classes);
        s.dataset.n_per_class = d.value("n_per_class", s.dataset.n_per_class);
        s.dataset.seed = d.value("seed", s.dataset.seed);
        s.dataset.path = d.value("path", s.dataset.path);
        if (d.contains("gen_widths")) s.dataset.gen_widths = d["gen_widths"].get<std::vector<int>>();
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        if (m.contains("hidden")) s.model.hidden = m["hidden"].get<std::vector<int>>();
        s.model.use_bn = m.value("use_bn", s.model.use_bn);
        s.model.use_biases = m.value("use_biases", s.model.use_biases);
        s.model.var_eps = m.value("var_eps", s.model.var_eps);
        if (m.contains("dtype")) s.model.dtype = dtype_from_string(m["dtype"].get<std::string>());
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        s.train.lr = t.value("lr", s.train.lr);
        s.train.epochs = t.value("epochs", s.train.epochs);
        s.train.lr_decay = t.value("lr_decay", s.train.lr_decay);
        s.train.wd_lambda = t.value("wd", s.train.wd_lambda);
        if (t.contains("wd_scope")) s.train.wd_scope = scope_from_string(t["wd_scope"].get<std::string>());
        s.train.batch_size = t.value("batch_size", s.train.batch_size);
        s.train.seed = t.value("seed", s.train.seed);
        s.train.metric_every = t.value("metric_every", s.train.metric_every);
        s.train.centering = t.value("centering", s.train.centering);
        if (t.contains("freeze_gamma_to") && !t["freeze_gamma_to"].is_null())
            s.train.freeze_gamma_to = t["freeze_gamma_to"].get<double>();
        if (t.contains("adam")) {
            const auto& a = t["adam"];
            s.train.adam.beta1 = a.value("beta1", s.train.adam.beta1);
            s.train.adam.beta2 = a.value("beta2", s.train.adam.beta2);
            s.train.adam.eps = a.value("eps", s.train.adam.eps);
        }
    }
    if (j.contains("sweep")) {
        const auto& w = j["sweep"];
        if (w.contains("wd")) s.sweep_wd = w["wd"].get<std::vector<double>>();
        if (w.contains("bn")) s.sweep_bn = w["bn"].get<std::vector<bool>>();
        if (w.contains("seeds")) s.seeds = w["seeds"].get<std::vector<std::uint64_t>>();
        if (w.contains("frozen_gammas")) s.frozen_gammas = w["frozen_gammas"].get<std::vector<double>>();
    }
    if (j.contains("bounds")) {
        s.kappa = j["bounds"].value("kappa", s.kappa);
        s.delta = j["bounds"].value("delta", s.delta);
    }
    s.out_dir = j.value("out", s.out_dir);
    s.jobs = j.value("jobs", s.jobs);
    s.validate();
    return s;
}

ExperimentSpec spec_from_json_file(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return spec_from_json_text(ss.str());
}

std::string spec_to_json(const ExperimentSpec& s) {
    nlohmann::ordered_json j;
    j["dataset"] = {{"kind", s.dataset.kind},       {"dim", s.dataset.dim},
                    {"num_classes", s.dataset.num_classes}, {"n_per_class", s.dataset.n_per_class},
                    {"seed", s.dataset.seed},       {"path", s.dataset.path},
                    {"gen_widths", s.dataset.gen_widths}};
    j["model"] = {{"hidden", s.model.hidden},
                  {"use_bn", s.model.use_bn},
                  {"use_biases", s.model.use_biases},
                  {"var_eps", s.model.var_eps},
                  {"dtype", s.model.dtype == Dtype::f32 ? "f32" : "f64"}};
    j["train"] = {{"lr", s.train.lr},
                  {"epochs", s.train.epochs},
                  {"lr_decay", s.train.lr_decay},
                  {"wd", s.train.wd_lambda},
                  {"wd_scope", s.train.wd_scope == WdScope::all_layers ? "all_layers"
                                                                       : "last_layer_and_gamma"},
                  {"batch_size", s.train.batch_size},
                  {"seed", s.train.seed},
                  {"metric_every", s.train.metric_every},
                  {"centering", s.train.centering},
                  {"adam",
                   {{"beta1", s.train.adam.beta1}, {"beta2", s.train.adam.beta2}, {"eps", s.train.adam.eps}}}};
    if (s.train.freeze_gamma_to)
        j["train"]["freeze_gamma_to"] = *s.train.freeze_gamma_to;
    else
        j["train"]["freeze_gamma_to"] = nullptr;
    j["sweep"] = {{"wd", s.sweep_wd}, {"bn", s.sweep_bn}, {"seeds", s.seeds},
                  {"frozen_gammas", s.frozen_gammas}};
    j["bounds"] = {{"kappa", s.kappa}, {"delta", s.delta}};
    j["out"] = s.out_dir;
    j["jobs"] = s.jobs;
    return j.dump(2);
}

const char* const kRunCsvHeader =
    "run_id,seed,lambda,bn,frozen_gamma,epoch,loss,reg_loss,accuracy,min_intra,max_inter,"
    "avg_intra,avg_inter,avg_nc3,alpha,beta,eps_T21,eps_T23,intra_lb_T23,inter_ub_T23,gamma_norm";

std::string run_row_to_csv(const RunRow& r) {
    std::ostringstream os;
    auto opt = [&](const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); };
    os << r.run_id << ',' << r.seed << ',' << fmt17(r.lambda) << ',' << (r.bn ? 1 : 0) << ','
       << opt(r.frozen_gamma) << ',' << r.epoch << ',' << fmt17(r.loss) << ',' << fmt17(r.reg_loss)
       << ',' << fmt17(r.accuracy) << ',' << fmt17(r.min_intra) << ',' << fmt17(r.max_inter) << ','
       << fmt17(r.avg_intra) << ',' << fmt17(r.avg_inter) << ',' << fmt17(r.avg_nc3) << ','
       << fmt17(r.alpha) << ',' << fmt17(r.beta) << ',' << fmt17(r.eps_t21) << ','
       << opt(r.eps_t23) << ',' << opt(r.intra_lb_t23) << ',' << opt(r.inter_ub_t23) << ','
       << opt(r.gamma_norm);
    return os.str();
}

std::vector<RunRow> load_run_csv(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "load_run_csv: cannot open " + path);
    std::string line;
    require(bool(std::getline(is, line)), "load_run_csv: empty file " + path);
    require(line == kRunCsvHeader, "load_run_csv: schema mismatch in " + path);

    std::vector<RunRow> rows;
    long line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        require(cells.size() == 21,
                "load_run_csv: wrong cell count at line " + std::to_string(line_no));
        RunRow r;
        auto opt = [](const std::string& sv) -> std::optional<double> {
            if (sv.empty()) return std::nullopt;
            return std::stod(sv);
        };
        r.run_id = cells[0];
        r.seed = std::stoull(cells[1]);
        r.lambda = std::stod(cells[2]);
        r.bn = cells[3] == "1";
        r.frozen_gamma = opt(cells[4]);
        r.epoch = std::stoi(cells[5]);
        r.loss = std::stod(cells[6]);
        r.reg_loss = std::stod(cells[7]);
        r.accuracy = std::stod(cells[8]);
        r.min_intra = std::stod(cells[9]);
        r.max_inter = std::stod(cells[10]);
        r.avg_intra = std::stod(cells[11]);
        r.avg_inter = std::stod(cells[12]);
        r.avg_nc3 = std::stod(cells[13]);
        r.alpha = std::stod(cells[14]);
        r.beta = std::stod(cells[15]);
        r.eps_t21 = std::stod(cells[16]);
        r.eps_t23 = opt(cells[17]);
        r.intra_lb_t23 = opt(cells[18]);
        r.inter_ub_t23 = opt(cells[19]);
        r.gamma_norm = opt(cells[20]);
        rows.push_back(std::move(r));
    }
    return rows;
}

Dataset make_dataset(const DatasetSpec& spec) {
    if (spec.kind == "conic_hull")
        return gen_conic_hull(spec.dim, spec.num_classes, spec.n_per_class, spec.seed);
    if (spec.kind == "mlp_labeled")
        return gen_mlp_labeled(spec.dim, spec.num_classes, spec.n_per_class, spec.seed,
                               spec.gen_widths);
    if (spec.kind == "file") return load_dataset(spec.path);
    throw std::runtime_error("config: unknown dataset kind '" + spec.kind + "'");
}

namespace {

std::string make_run_id(double lambda, bool bn, std::optional<double> frozen, std::uint64_t seed) {
    std::ostringstream id;
    if (frozen)
        id << "fg" << fmt_short(*frozen) << "_wd" << fmt_short(lambda);
    else
        id << "wd" << fmt_short(lambda) << "_bn" << (bn ? 1 : 0);
    id << "_seed" << seed;
    return id.str();
}

template <class Real>
CellOutcome run_cell_impl(const ExperimentSpec& spec, const Dataset& ds, double lambda, bool bn,
                          std::optional<double> frozen_gamma, std::uint64_t seed) {
    CellOutcome out;
    out.run_id = make_run_id(lambda, bn, frozen_gamma, seed);

    MlpConfig mcfg;
    mcfg.layer_widths.push_back(ds.dim);
    for (int h : spec.model.hidden) mcfg.layer_widths.push_back(h);
    mcfg.layer_widths.push_back(ds.num_classes);
    mcfg.use_bn = bn;
    mcfg.use_biases = spec.model.use_biases;
    mcfg.var_eps = spec.model.var_eps;
    mcfg.dtype = spec.model.dtype;

    TrainConfig tcfg = spec.train;
    tcfg.wd_lambda = lambda;
    tcfg.seed = seed;
    tcfg.freeze_gamma_to = frozen_gamma;

    Mat<Real> x(ds.x.rows, ds.x.cols);
    for (std::size_t k = 0; k < x.size(); ++k) x.data[k] = Real(ds.x.data[k]);

    MlpT<Real> model = make_mlp<Real>(mcfg, seed);
    TrainHistory history;
    try {
        history = train(model, x, ds.y, tcfg);
    } catch (const DivergenceError& e) {
        out.failed = true;
        out.failed_epoch = e.epoch;
        out.error = e.what();
        return out;
    } catch (const std::runtime_error& e) {
        // e.g. a degenerate feature state surfacing through the metrics;
        // failed cells never abort a sweep
        out.failed = true;
        out.error = e.what();
        return out;
    }

    const int C = ds.num_classes;
    const double sqrt_c = std::sqrt(double(C));
    std::optional<double> m_reg;
    if (lambda > 0.0 && lambda < 1.0 / sqrt_c) m_reg = min_reg_loss(C, lambda);
    std::optional<double> gnorm;
    if (bn) gnorm = norm2(std::vector<double>(model.gamma.begin(), model.gamma.end()));

    for (const EpochRecord& rec : history) {
        RunRow row;
        row.run_id = out.run_id;
        row.seed = seed;
        row.lambda = lambda;
        row.bn = bn;
        row.frozen_gamma = frozen_gamma;
        row.epoch = rec.epoch;
        row.loss = rec.loss;
        row.reg_loss = rec.reg_loss;
        row.accuracy = rec.accuracy;
        row.min_intra = rec.nc.min_intra;
        row.max_inter = rec.nc.max_inter;
        row.avg_intra = rec.nc.avg_intra;
        row.avg_inter = rec.nc.avg_inter;
        row.avg_nc3 = rec.nc.avg_nc3;
        row.alpha = rec.alpha;
        row.beta = rec.beta;
        row.eps_t21 = epsilon_from_run(rec.loss, min_loss_m(C, rec.alpha * rec.beta)).epsilon;
        if (m_reg) {
            const double eps = epsilon_from_run(rec.reg_loss, *m_reg).epsilon;
            row.eps_t23 = eps;
            if (eps < lambda) {
                BoundTriple b = bounds_T23(C, lambda, eps, spec.delta, spec.kappa);
                row.intra_lb_t23 = b.intra_lb;
                row.inter_ub_t23 = b.inter_ub;
            }
        }
        row.gamma_norm = gnorm;
        out.rows.push_back(std::move(row));
    }
    out.final_nc = history.back().nc;

    out.trained.config = model.config;
    out.trained.rng_seed = model.rng_seed;
    for (const auto& w : model.weights) {
        MatD wd(w.rows, w.cols);
        for (std::size_t k = 0; k < w.size(); ++k) wd.data[k] = double(w.data[k]);
        out.trained.weights.push_back(std::move(wd));
    }
    for (const auto& b : model.biases) out.trained.biases.emplace_back(b.begin(), b.end());
    out.trained.gamma.assign(model.gamma.begin(), model.gamma.end());
    return out;
}

CellOutcome run_cell_dispatch(const ExperimentSpec& spec, const Dataset& ds, double lambda, bool bn,
                              std::optional<double> frozen_gamma, std::uint64_t seed) {
    if (spec.model.dtype == Dtype::f32)
        return run_cell_impl<float>(spec, ds, lambda, bn, frozen_gamma, seed);
    return run_cell_impl<double>(spec, ds, lambda, bn, frozen_gamma, seed);
}

struct GridCell {
    double lambda;
    bool bn;
    std::optional<double> frozen_gamma;
    std::uint64_t seed;
};

// Runs cells in parallel and writes rows plus per-run final NC reports in
// grid order regardless of completion order.
std::vector<CellOutcome> run_grid(const ExperimentSpec& spec, const Dataset& ds,
                                  const std::vector<GridCell>& cells) {
    std::vector<CellOutcome> outcomes(cells.size());
    parallel_for(cells.size(), spec.jobs, [&](std::size_t i) {
        const GridCell& c = cells[i];
        outcomes[i] = run_cell_dispatch(spec, ds, c.lambda, c.bn, c.frozen_gamma, c.seed);
    });
    return outcomes;
}

void write_outcomes(const ExperimentSpec& spec, const std::vector<CellOutcome>& outcomes,
                    const std::string& csv_name, bool final_rows_only = false) {
    fs::create_directories(spec.out_dir + "/nc");
    std::ostringstream csv;
    csv << kRunCsvHeader << '\n';
    for (const CellOutcome& out : outcomes) {
        if (out.failed) continue;
        if (final_rows_only) {
            csv << run_row_to_csv(out.rows.back()) << '\n';
        } else {
            for (const RunRow& row : out.rows) csv << run_row_to_csv(row) << '\n';
        }
        write_text_file(spec.out_dir + "/nc/" + out.run_id + ".json",
                        nc_report_to_json(out.final_nc) + "\n");
    }
    write_text_file(spec.out_dir + "/" + csv_name, csv.str());
}

nlohmann::ordered_json summary_json(const std::vector<CellOutcome>& outcomes) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    // medians of final min_intra / max_inter grouped over seeds
    std::map<std::string, std::vector<std::pair<double, double>>> groups;
    std::map<std::string, std::pair<double, bool>> group_key;
    for (const CellOutcome& out : outcomes) {
        nlohmann::ordered_json c;
        c["run_id"] = out.run_id;
        c["failed"] = out.failed;
        if (out.failed) {
            c["failed_epoch"] = out.failed_epoch;
            c["error"] = out.error;
        } else {
            const RunRow& last = out.rows.back();
            c["lambda"] = last.lambda;
            c["bn"] = last.bn;
            c["seed"] = last.seed;
            c["final_min_intra"] = last.min_intra;
            c["final_max_inter"] = last.max_inter;
            c["final_loss"] = last.loss;
            c["final_accuracy"] = last.accuracy;
            std::ostringstream key;
            key << "wd" << fmt_short(last.lambda) << "_bn" << (last.bn ? 1 : 0);
            if (last.frozen_gamma) key << "_fg" << fmt_short(*last.frozen_gamma);
            groups[key.str()].push_back({last.min_intra, last.max_inter});
            group_key[key.str()] = {last.lambda, last.bn};
        }
        cells.push_back(c);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    nlohmann::ordered_json medians = nlohmann::ordered_json::array();
    for (const auto& [key, vals] : groups) {
        std::vector<double> mi, mx;
        for (const auto& [a, b] : vals) {
            mi.push_back(a);
            mx.push_back(b);
        }
        medians.push_back({{"group", key},
                           {"lambda", group_key[key].first},
                           {"bn", group_key[key].second},
                           {"runs", vals.size()},
                           {"median_final_min_intra", median(mi)},
                           {"median_final_max_inter", median(mx)}});
    }
    return nlohmann::ordered_json{{"cells", cells}, {"medians", medians}};
}

}  // namespace

CellOutcome run_cell(const ExperimentSpec& spec, const Dataset& ds, double lambda, bool bn,
                     std::optional<double> frozen_gamma, std::uint64_t seed) {
    return run_cell_dispatch(spec, ds, lambda, bn, frozen_gamma, seed);
}

int cmd_generate(const ExperimentSpec& spec) {
    dump_resolved_config(spec);
    Dataset ds = make_dataset(spec.dataset);
    save_dataset(ds, spec.out_dir + "/dataset.ncds");
    export_dataset_csv(ds, spec.out_dir + "/dataset.csv");
    std::printf("generate: %s -> %s/dataset.ncds (%zu samples)\n", ds.generator.c_str(),
                spec.out_dir.c_str(), ds.x.rows);
    return 0;
}

int cmd_train(const ExperimentSpec& spec) {
    dump_resolved_config(spec);
    Dataset ds = make_dataset(spec.dataset);
    CellOutcome out = run_cell(spec, ds, spec.train.wd_lambda, spec.model.use_bn,
                               spec.train.freeze_gamma_to, spec.train.seed);
    if (out.failed) {
        std::fprintf(stderr, "train: %s\n", out.error.c_str());
        return 1;
    }
    write_outcomes(spec, {out}, "train.csv");
    save_model(out.trained, spec.out_dir + "/model.json");
    const RunRow& last = out.rows.back();
    std::printf("train: %s final loss=%.6g acc=%.4f min_intra=%.4f max_inter=%.4f\n",
                out.run_id.c_str(), last.loss, last.accuracy, last.min_intra, last.max_inter);
    return 0;
}

int cmd_sweep(const ExperimentSpec& spec) {
    require(!spec.sweep_wd.empty(), "sweep: wd list must not be empty");
    require(!spec.sweep_bn.empty(), "sweep: bn list must not be empty");
    dump_resolved_config(spec);
    Dataset ds = make_dataset(spec.dataset);

    std::vector<GridCell> cells;
    for (double wd : spec.sweep_wd)
        for (bool bn : spec.sweep_bn)
            for (std::uint64_t seed : spec.seeds) cells.push_back({wd, bn, std::nullopt, seed});

    std::vector<CellOutcome> outcomes = run_grid(spec, ds, cells);
    write_outcomes(spec, outcomes, "sweep.csv");
    write_text_file(spec.out_dir + "/sweep_summary.json", summary_json(outcomes).dump(2) + "\n");

    long failed = 0;
    for (const auto& out : outcomes) failed += out.failed ? 1 : 0;
    std::printf("sweep: %zu cells, %ld failed -> %s/sweep.csv\n", cells.size(), failed,
                spec.out_dir.c_str());
    return 0;
}

int cmd_track(const ExperimentSpec& spec) {
    dump_resolved_config(spec);
    Dataset ds = make_dataset(spec.dataset);
    CellOutcome out = run_cell(spec, ds, spec.train.wd_lambda, spec.model.use_bn,
                               spec.train.freeze_gamma_to, spec.train.seed);
    if (out.failed) {
        std::fprintf(stderr, "track: %s\n", out.error.c_str());
        return 1;
    }
    write_outcomes(spec, {out}, "track.csv");
    std::printf("track: %s %zu records -> %s/track.csv\n", out.run_id.c_str(), out.rows.size(),
                spec.out_dir.c_str());
    return 0;
}

int cmd_freeze_gamma(const ExperimentSpec& spec) {
    require(!spec.frozen_gammas.empty(), "freeze-gamma: frozen_gammas list must not be empty");
    dump_resolved_config(spec);
    Dataset ds = make_dataset(spec.dataset);

    std::vector<GridCell> cells;
    for (double fg : spec.frozen_gammas)
        for (std::uint64_t seed : spec.seeds)
            cells.push_back({spec.train.wd_lambda, true, fg, seed});

    std::vector<CellOutcome> outcomes = run_grid(spec, ds, cells);
    write_outcomes(spec, outcomes, "freeze_gamma.csv", /*final_rows_only=*/true);
    write_text_file(spec.out_dir + "/freeze_gamma_summary.json",
                    summary_json(outcomes).dump(2) + "\n");

    long failed = 0;
    for (const auto& out : outcomes) failed += out.failed ? 1 : 0;
    std::printf("freeze-gamma: %zu cells, %ld failed -> %s/freeze_gamma.csv\n", cells.size(),
                failed, spec.out_dir.c_str());
    return 0;
}

int cmd_bounds(const std::string& run_csv_path, double kappa, double delta,
               const std::string& out_path) {
    std::vector<RunRow> rows = load_run_csv(run_csv_path);
    require(!rows.empty(), "bounds: no rows in " + run_csv_path);

    // final row per run id, in first-seen order
    std::vector<std::string> order;
    std::map<std::string, RunRow> finals;
    for (const RunRow& r : rows) {
        if (!finals.count(r.run_id)) order.push_back(r.run_id);
        auto it = finals.find(r.run_id);
        if (it == finals.end() || r.epoch >= it->second.epoch) finals[r.run_id] = r;
    }

    const fs::path nc_dir = fs::path(run_csv_path).parent_path() / "nc";
    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    for (const std::string& id : order) {
        const RunRow& r = finals[id];
        const int C = [&] {
            const fs::path ncp = nc_dir / (id + ".json");
            if (fs::exists(ncp)) {
                std::ifstream is(ncp);
                nlohmann::json nj;
                is >> nj;
                return nj.at("C").get<int>();
            }
            throw std::runtime_error("bounds: missing per-run report " + ncp.string() +
                                     " (needed for the class count and consistency check)");
        }();

        require(r.lambda > 0.0 && r.lambda < 1.0 / std::sqrt(double(C)),
                "bounds: run " + id + " violates lambda < 1/sqrt(C)");

        const double m_reg = min_reg_loss(C, r.lambda);
        EpsilonFromRun eps = epsilon_from_run(r.reg_loss, m_reg);
        const double m = min_loss_m(C, r.alpha * r.beta);
        EpsilonFromRun eps21 = epsilon_from_run(r.loss, m);

        nlohmann::ordered_json rep;
        rep["run_id"] = id;
        rep["C"] = C;
        rep["lambda"] = r.lambda;
        rep["kappa"] = kappa;
        rep["delta"] = delta;
        rep["final_epoch"] = r.epoch;
        rep["loss"] = r.loss;
        rep["reg_loss"] = r.reg_loss;
        rep["alpha"] = r.alpha;
        rep["beta"] = r.beta;
        rep["m"] = m;
        rep["m_reg"] = m_reg;
        rep["eps_T21"] = eps21.epsilon;
        rep["eps_T21_assumption_violated"] = eps21.assumption_violated;
        rep["eps_T23"] = eps.epsilon;
        rep["eps_T23_assumption_violated"] = eps.assumption_violated;
        rep["rho"] = rho(C, r.lambda, kappa);

        BoundParams p;
        p.num_classes = C;
        p.norm_product = r.alpha * r.beta;
        p.epsilon = eps21.epsilon;
        p.delta = delta;
        p.kappa = kappa;
        p.lambda = r.lambda;
        BoundTriple t21 = bounds_T21(p);
        rep["T21"] = {{"intra_lb", t21.intra_lb},
                      {"nc3_lb", t21.nc3_lb},
                      {"inter_ub", t21.inter_ub},
                      {"vacuous",
                       {{"intra_lb", !(t21.intra_lb > -1.0)},
                        {"nc3_lb", !(t21.nc3_lb > -1.0)},
                        {"inter_ub", !(t21.inter_ub < 1.0)}}}};

        if (eps.epsilon < r.lambda) {
            BoundTriple t23 = bounds_T23(C, r.lambda, eps.epsilon, delta, kappa);
            rep["T23"] = {{"intra_lb", t23.intra_lb},
                          {"nc3_lb", t23.nc3_lb},
                          {"inter_ub", t23.inter_ub},
                          {"vacuous",
                           {{"intra_lb", !(t23.intra_lb > -1.0)},
                            {"nc3_lb", !(t23.nc3_lb > -1.0)},
                            {"inter_ub", !(t23.inter_ub < 1.0)}}}};

            // empirical (1-delta)-fraction consistency from the per-run report
            std::ifstream is((nc_dir / (id + ".json")).string());
            nlohmann::json nj;
            is >> nj;
            const auto intra = nj.at("intra").get<std::vector<double>>();
            const auto inter = nj.at("inter");
            long classes_ok = 0;
            for (double v : intra) classes_ok += v >= t23.intra_lb ? 1 : 0;
            long pairs_ok = 0;
            for (const auto& e : inter) pairs_ok += e.at(2).get<double>() <= t23.inter_ub ? 1 : 0;
            const long need_classes = (long)std::ceil((1.0 - delta) * double(C));
            const long need_pairs = (long)std::ceil((1.0 - delta) * double(inter.size()));
            rep["consistency"] = {
                {"classes_total", intra.size()},
                {"classes_meeting_intra_lb", classes_ok},
                {"classes_required", need_classes},
                {"pairs_total", inter.size()},
                {"pairs_meeting_inter_ub", pairs_ok},
                {"pairs_required", need_pairs},
                {"intra_ok", !(t23.intra_lb > -1.0) || classes_ok >= need_classes},
                {"inter_ok", !(t23.inter_ub < 1.0) || pairs_ok >= need_pairs}};
        } else {
            rep["T23"] = {{"skipped", "precondition epsilon < lambda does not hold"}};
        }
        reports.push_back(rep);
    }

    const std::string text = reports.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") {
        std::fputs(text.c_str(), stdout);
    } else {
        write_text_file(out_path, text);
        std::printf("bounds: %zu run(s) -> %s\n", reports.size(), out_path.c_str());
    }
    return 0;
}

int cmd_verify(std::uint64_t seed, long trials) {
    std::vector<LemmaCheckResult> results = run_all_lemma_checks(seed, trials);
    results.push_back(check_metric_identity(100, seed + 6));
    results.push_back(check_grad_fidelity(20, seed + 7));

    MinLossReport ml = verify_min_loss(3, 3, 50, seed + 8);
    const bool ml_ok = ml.best_loss >= ml.m - 1e-6 && ml.best_loss <= ml.m + 1e-3 &&
                       ml.worst_pair_cos_dev <= 1e-2;

    std::printf("%-22s %10s %10s %14s %10s\n", "check", "trials", "violations", "worst_margin",
                "rejected");
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-22s %10ld %10ld %14.3e %10ld\n", r.lemma_id.c_str(), r.trials, r.violations,
                    r.worst_margin, r.rejected);
        ok = ok && r.ok();
    }
    std::printf("%-22s %10d %10d %14.3e %10s   (best %.9f vs m %.9f, etf dev %.2e)\n",
                "min_loss_pgd", ml.restarts, ml_ok ? 0 : 1, ml.best_loss - ml.m, "-", ml.best_loss,
                ml.m, ml.worst_pair_cos_dev);
    ok = ok && ml_ok;
    std::printf(ok ? "verify: all checks passed\n" : "verify: FAILED\n");
    return ok ? 0 : 1;
}

}  // namespace collapse
