#include "collapse/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "collapse/experiment.hpp"
#include "collapse/mat.hpp"

namespace fs = std::filesystem;

namespace collapse {

namespace {

constexpr double kW = 640, kH = 440;
constexpr double kL = 70, kR = 70, kT = 40, kB = 50;

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Series {
    std::string label;
    std::string color;
    std::vector<double> x, y, ylo, yhi;  // ylo/yhi optional band
};

struct Axis {
    double lo = 0.0, hi = 1.0;
    bool log = false;

    double place(double v, double a, double b) const {
        double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo))
                       : (v - lo) / (hi - lo);
        return a + t * (b - a);
    }
};

std::vector<double> ticks(const Axis& ax) {
    std::vector<double> out;
    if (ax.log) {
        for (int e = int(std::floor(std::log10(ax.lo))); e <= int(std::ceil(std::log10(ax.hi))); ++e) {
            double v = std::pow(10.0, e);
            if (v >= ax.lo * 0.999 && v <= ax.hi * 1.001) out.push_back(v);
        }
    } else {
        const double span = ax.hi - ax.lo;
        const double step = std::pow(10.0, std::floor(std::log10(span / 4.0)));
        double s = step;
        if (span / s > 8) s *= 2;
        if (span / s > 8) s *= 2.5;
        for (double v = std::ceil(ax.lo / s) * s; v <= ax.hi + 1e-12 * span; v += s)
            out.push_back(v);
    }
    return out;
}

// Minimal deterministic SVG line plot with optional right-hand log axis.
std::string render_svg(const std::string& title, const std::string& xlabel, const Axis& xaxis,
                       const std::string& ylabel, const Axis& yaxis,
                       const std::vector<Series>& series, const std::string& y2label = "",
                       const Axis* y2axis = nullptr, const std::vector<Series>& series2 = {}) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
    s << "<!-- data table\n";
    for (const auto& sv : {series, series2})
        for (const Series& ss : sv) {
            s << "series " << ss.label << ":";
            for (std::size_t i = 0; i < ss.x.size(); ++i)
                s << " (" << num(ss.x[i]) << "," << num(ss.y[i]) << ")";
            s << "\n";
        }
    s << "-->\n";
    s << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";

    auto px = [&](double v) { return xaxis.place(v, kL, kW - kR); };
    auto py = [&](double v) { return yaxis.place(v, kH - kB, kT); };

    s << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n";

    for (double t : ticks(xaxis)) {
        s << "<line x1=\"" << num(px(t)) << "\" y1=\"" << kH - kB << "\" x2=\"" << num(px(t))
          << "\" y2=\"" << kH - kB + 5 << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << num(px(t)) << "\" y=\"" << kH - kB + 18
          << "\" text-anchor=\"middle\" font-size=\"11\">" << num(t) << "</text>\n";
    }
    for (double t : ticks(yaxis)) {
        s << "<line x1=\"" << kL - 5 << "\" y1=\"" << num(py(t)) << "\" x2=\"" << kL << "\" y2=\""
          << num(py(t)) << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << kL - 8 << "\" y=\"" << num(py(t) + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << num(t) << "</text>\n";
    }
    s << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel << "</text>\n";
    s << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << (kT + kH - kB) / 2 << ")\">" << ylabel << "</text>\n";

    auto draw = [&](const Series& ss, const Axis& ya) {
        auto pyy = [&](double v) { return ya.place(v, kH - kB, kT); };
        if (!ss.ylo.empty()) {
            s << "<polygon fill=\"" << ss.color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < ss.x.size(); ++i)
                s << num(px(ss.x[i])) << "," << num(pyy(ss.yhi[i])) << " ";
            for (std::size_t i = ss.x.size(); i-- > 0;)
                s << num(px(ss.x[i])) << "," << num(pyy(ss.ylo[i])) << " ";
            s << "\"/>\n";
        }
        s << "<polyline fill=\"none\" stroke=\"" << ss.color << "\" stroke-width=\"1.8\" points=\"";
        for (std::size_t i = 0; i < ss.x.size(); ++i)
            s << num(px(ss.x[i])) << "," << num(pyy(ss.y[i])) << " ";
        s << "\"/>\n";
        for (std::size_t i = 0; i < ss.x.size(); ++i)
            s << "<circle cx=\"" << num(px(ss.x[i])) << "\" cy=\"" << num(pyy(ss.y[i]))
              << "\" r=\"2.5\" fill=\"" << ss.color << "\"/>\n";
    };
    for (const Series& ss : series) draw(ss, yaxis);

    if (y2axis) {
        s << "<line x1=\"" << kW - kR << "\" y1=\"" << kT << "\" x2=\"" << kW - kR << "\" y2=\""
          << kH - kB << "\" stroke=\"black\"/>\n";
        for (double t : ticks(*y2axis)) {
            const double yy = y2axis->place(t, kH - kB, kT);
            s << "<line x1=\"" << kW - kR << "\" y1=\"" << num(yy) << "\" x2=\"" << kW - kR + 5
              << "\" y2=\"" << num(yy) << "\" stroke=\"black\"/>\n";
            s << "<text x=\"" << kW - kR + 8 << "\" y=\"" << num(yy + 4)
              << "\" text-anchor=\"start\" font-size=\"11\">" << num(t) << "</text>\n";
        }
        s << "<text x=\"" << kW - 14 << "\" y=\"" << (kT + kH - kB) / 2
          << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(90 " << kW - 14 << " "
          << (kT + kH - kB) / 2 << ")\">" << y2label << "</text>\n";
        for (const Series& ss : series2) draw(ss, *y2axis);
    }

    double ly = kT + 8;
    for (const auto& sv : {series, series2})
        for (const Series& ss : sv) {
            s << "<line x1=\"" << kL + 10 << "\" y1=\"" << num(ly) << "\" x2=\"" << kL + 34
              << "\" y2=\"" << num(ly) << "\" stroke=\"" << ss.color << "\" stroke-width=\"2\"/>\n";
            s << "<text x=\"" << kL + 40 << "\" y=\"" << num(ly + 4) << "\" font-size=\"11\">"
              << ss.label << "</text>\n";
            ly += 16;
        }
    s << "</svg>\n";
    return s.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "plot: cannot open " + path);
    os << text;
    require(bool(os), "plot: write failed for " + path);
}

std::map<std::string, RunRow> final_rows(const std::vector<RunRow>& rows) {
    std::map<std::string, RunRow> finals;
    for (const RunRow& r : rows) {
        auto it = finals.find(r.run_id);
        if (it == finals.end() || r.epoch >= it->second.epoch) finals[r.run_id] = r;
    }
    return finals;
}

struct Stat {
    double median, lo, hi;
};

Stat stat_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return {n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]), v.front(), v.back()};
}

std::string plot_grouped(const std::vector<RunRow>& rows, const std::string& metric_name,
                         bool use_gamma_norm, const std::string& path) {
    // group final rows: x = lambda (or ||gamma||), series = bn on/off
    std::map<std::pair<bool, double>, std::vector<double>> groups;
    for (const auto& [id, r] : final_rows(rows)) {
        double x;
        if (use_gamma_norm) {
            require(r.gamma_norm.has_value(), "plot: freeze layout needs the gamma_norm column");
            x = *r.gamma_norm;
        } else {
            x = r.lambda;
        }
        const double y = metric_name == "min_intra" ? r.min_intra : r.max_inter;
        groups[{r.bn, x}].push_back(y);
    }
    require(!groups.empty(), "plot: no data rows");

    std::map<bool, Series> by_bn;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (auto& [key, vals] : groups) {
        Series& ss = by_bn[key.first];
        ss.label = key.first ? "bn" : "no-bn";
        ss.color = key.first ? "#1b9e77" : "#d95f02";
        const Stat st = stat_of(vals);
        ss.x.push_back(key.second);
        ss.y.push_back(st.median);
        ss.ylo.push_back(st.lo);
        ss.yhi.push_back(st.hi);
        xlo = std::min(xlo, key.second);
        xhi = std::max(xhi, key.second);
        ylo = std::min(ylo, st.lo);
        yhi = std::max(yhi, st.hi);
    }
    std::vector<Series> series;
    for (auto& [bn, ss] : by_bn) series.push_back(ss);

    Axis xaxis{xlo, xhi, !use_gamma_norm};
    if (xlo == xhi) {
        xaxis.lo = xlo * 0.5;
        xaxis.hi = xhi * 2.0;
    }
    const double pad = std::max(0.05 * (yhi - ylo), 1e-3);
    Axis yaxis{ylo - pad, yhi + pad, false};
    const std::string title = metric_name + (use_gamma_norm ? " vs |gamma|" : " vs weight decay");
    write_file(path, render_svg(title, use_gamma_norm ? "|gamma|" : "weight decay", xaxis,
                                metric_name, yaxis, series));
    return path;
}

std::string plot_track(const std::vector<RunRow>& rows, const std::string& path) {
    require(!rows.empty(), "plot: no data rows");
    Series mi{"min_intra", "#1b9e77", {}, {}, {}, {}};
    Series mx{"max_inter", "#d95f02", {}, {}, {}, {}};
    Series loss{"loss (log)", "#7570b3", {}, {}, {}, {}};
    double llo = 1e300, lhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const RunRow& r : rows) {
        mi.x.push_back(r.epoch);
        mi.y.push_back(r.min_intra);
        mx.x.push_back(r.epoch);
        mx.y.push_back(r.max_inter);
        loss.x.push_back(r.epoch);
        const double lv = std::max(r.loss, 1e-12);
        loss.y.push_back(lv);
        llo = std::min(llo, lv);
        lhi = std::max(lhi, lv);
        ylo = std::min({ylo, r.min_intra, r.max_inter});
        yhi = std::max({yhi, r.min_intra, r.max_inter});
    }
    Axis xaxis{mi.x.front(), std::max(mi.x.back(), mi.x.front() + 1.0), false};
    const double pad = std::max(0.05 * (yhi - ylo), 1e-3);
    Axis yaxis{ylo - pad, yhi + pad, false};
    Axis y2{llo * 0.9, lhi * 1.1, true};
    if (llo == lhi) {
        y2.lo = llo * 0.5;
        y2.hi = lhi * 2.0;
    }
    write_file(path, render_svg("cosine measures vs loss during training", "epoch", xaxis,
                                "cosine similarity", yaxis, {mi, mx}, "training loss", &y2, {loss}));
    return path;
}

}  // namespace

std::vector<std::string> cmd_plot(const std::vector<std::string>& csv_paths,
                                  const std::string& kind, const std::string& out_dir) {
    require(kind == "sweep" || kind == "track" || kind == "freeze",
            "plot: unknown kind '" + kind + "' (expected sweep, track or freeze)");
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    for (const std::string& csv : csv_paths) {
        std::vector<RunRow> rows = load_run_csv(csv);
        require(!rows.empty(), "plot: no data rows in " + csv);
        const std::string stem = (fs::path(out_dir) / fs::path(csv).stem()).string();
        if (kind == "track") {
            written.push_back(plot_track(rows, stem + "_nc_vs_loss.svg"));
        } else {
            const bool freeze = kind == "freeze";
            written.push_back(plot_grouped(rows, "min_intra", freeze, stem + "_min_intra.svg"));
            written.push_back(plot_grouped(rows, "max_inter", freeze, stem + "_max_inter.svg"));
        }
    }
    return written;
}

}  // namespace collapse
