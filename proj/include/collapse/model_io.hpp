#pragma once
#include <fstream>
#include <string>

#include "collapse/mlp.hpp"
#include "json.hpp"

namespace collapse {

// Versioned JSON checkpoint: config, row-major 64-bit weight matrices, gamma,
// seed. Parameters are stored as doubles regardless of the runtime dtype.
template <class Real>
void save_model(const MlpT<Real>& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["config"] = {{"layer_widths", m.config.layer_widths},
                   {"use_bn", m.config.use_bn},
                   {"use_biases", m.config.use_biases},
                   {"var_eps", m.config.var_eps},
                   {"dtype", m.config.dtype == Dtype::f32 ? "f32" : "f64"}};
    j["seed"] = m.rng_seed;
    auto ws = nlohmann::ordered_json::array();
    for (const auto& w : m.weights) {
        std::vector<double> flat(w.data.begin(), w.data.end());
        ws.push_back({{"rows", w.rows}, {"cols", w.cols}, {"data", flat}});
    }
    j["weights"] = ws;
    auto bs = nlohmann::ordered_json::array();
    for (const auto& b : m.biases) bs.push_back(std::vector<double>(b.begin(), b.end()));
    j["hidden_biases"] = bs;
    j["gamma"] = std::vector<double>(m.gamma.begin(), m.gamma.end());

    std::ofstream os(path);
    require(bool(os), "save_model: cannot open " + path);
    os << j.dump(2) << "\n";
    require(bool(os), "save_model: write failed for " + path);
}

template <class Real>
MlpT<Real> load_model(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "load_model: cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("load_model: parse error in " + path + ": " + e.what());
    }
    require(j.value("version", 0) == 1, "load_model: unsupported checkpoint version");

    MlpT<Real> m;
    const auto& jc = j.at("config");
    m.config.layer_widths = jc.at("layer_widths").get<std::vector<int>>();
    m.config.use_bn = jc.at("use_bn").get<bool>();
    m.config.use_biases = jc.at("use_biases").get<bool>();
    m.config.var_eps = jc.at("var_eps").get<double>();
    m.config.dtype = jc.at("dtype").get<std::string>() == "f32" ? Dtype::f32 : Dtype::f64;
    m.config.validate();
    m.rng_seed = j.at("seed").get<std::uint64_t>();

    for (const auto& jw : j.at("weights")) {
        Mat<Real> w(jw.at("rows").get<std::size_t>(), jw.at("cols").get<std::size_t>());
        const auto flat = jw.at("data").get<std::vector<double>>();
        require(flat.size() == w.size(), "load_model: weight payload size mismatch");
        for (std::size_t k = 0; k < flat.size(); ++k) w.data[k] = Real(flat[k]);
        m.weights.push_back(std::move(w));
    }
    for (const auto& jb : j.at("hidden_biases")) {
        const auto flat = jb.get<std::vector<double>>();
        m.biases.emplace_back(flat.begin(), flat.end());
    }
    const auto g = j.at("gamma").get<std::vector<double>>();
    m.gamma.assign(g.begin(), g.end());

    require(m.weights.size() == std::size_t(m.config.num_layers()),
            "load_model: layer count mismatch");
    for (int l = 0; l < m.config.num_layers(); ++l)
        require(m.weights[std::size_t(l)].rows == std::size_t(m.config.layer_widths[std::size_t(l) + 1]) &&
                    m.weights[std::size_t(l)].cols == std::size_t(m.config.layer_widths[std::size_t(l)]),
                "load_model: weight shape mismatch at layer " + std::to_string(l));
    return m;
}

}  // namespace collapse
