#include "evokg/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "evokg/errors.hpp"
#include "json.hpp"

namespace evokg {
namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

std::string svg_open(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  return os.str();
}

// Axis frame with 5 y ticks over [lo, hi].
std::string axes(double lo, double hi, const std::string& x_label, const std::string& y_label) {
  std::ostringstream os;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    const double y = y0 - (y0 - y1) * i / 4.0;
    os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << x0 << "\" y2=\"" << y
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v) << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n"
     << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (y0 + y1) / 2 << ")\">" << escape(y_label) << "</text>\n";
  return os.str();
}

std::string legend(const std::vector<std::string>& names) {
  std::ostringstream os;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    const double x = kWidth - kRight + 15;
    os << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[i % 7]
       << "\"/>\n<text x=\"" << x + 18 << "\" y=\"" << y + 1 << "\">" << escape(names[i]) << "</text>\n";
  }
  return os.str();
}

std::pair<double, double> padded_range(double lo, double hi, bool from_zero) {
  if (from_zero) lo = std::min(lo, 0.0);
  if (!(hi > lo)) hi = lo + 1.0;
  return {lo, hi};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string md_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  os << '|';
  for (const auto& h : header) os << ' ' << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) {
    os << '|';
    for (const auto& c : r) os << ' ' << c << " |";
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("csv: missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  const auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      t.header = split(line);
      first = false;
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw DataError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (first) throw DataError(path.string() + ": empty csv");
  return t;
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series) {
  if (series.empty()) throw DataError("line chart: no series");
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("line chart: x and y lengths differ in '" + s.name + "'");
    for (double v : s.x) xlo = std::min(xlo, v), xhi = std::max(xhi, v);
    for (double v : s.y) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  if (!std::isfinite(xlo)) throw DataError("line chart: all series are empty");
  std::tie(xlo, xhi) = padded_range(xlo, xhi, false);
  std::tie(ylo, yhi) = padded_range(ylo, yhi, true);
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const auto px = [&](double v) { return x0 + (x1 - x0) * (v - xlo) / (xhi - xlo); };
  const auto py = [&](double v) { return y0 - (y0 - y1) * (v - ylo) / (yhi - ylo); };

  std::ostringstream os;
  os << svg_open(title) << axes(ylo, yhi, x_label, y_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = xlo + (xhi - xlo) * i / 4.0;
    os << "<text x=\"" << px(v) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << fmt(v) << "</text>\n";
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.name);
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << kPalette[i % 7] << "\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) os << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
    os << "\"/>\n";
  }
  os << legend(names) << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& groups,
                          const std::vector<std::string>& series, const std::vector<std::vector<double>>& values) {
  if (groups.empty() || series.empty()) throw DataError("bar chart: nothing to plot");
  if (values.size() != series.size()) throw ShapeError("bar chart: one value row per series expected");
  double hi = 0.0;
  for (const auto& row : values) {
    if (row.size() != groups.size()) throw ShapeError("bar chart: one value per group expected");
    for (double v : row) hi = std::max(hi, v);
  }
  if (hi <= 0) hi = 1.0;
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  const double group_w = (x1 - x0) / static_cast<double>(groups.size());
  const double bar_w = group_w * 0.8 / static_cast<double>(series.size());

  std::ostringstream os;
  os << svg_open(title) << axes(0.0, hi, "", "");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = x0 + group_w * static_cast<double>(g) + group_w * 0.1;
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double h = (y0 - y1) * values[s][g] / hi;
      os << "<rect x=\"" << gx + bar_w * static_cast<double>(s) << "\" y=\"" << y0 - h << "\" width=\"" << bar_w
         << "\" height=\"" << h << "\" fill=\"" << kPalette[s % 7] << "\"><title>" << escape(series[s]) << ' '
         << fmt(values[s][g]) << "</title></rect>\n";
    }
    os << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">"
       << escape(groups[g]) << "</text>\n";
  }
  os << legend(series) << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> generate_report(std::span<const std::filesystem::path> inputs,
                                                   const std::filesystem::path& out_dir) {
  if (inputs.empty()) throw ConfigError("report: no input files");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::ostringstream md;
  md << "# Run report\n\n";

  std::vector<std::string> metric_groups;
  std::vector<std::vector<double>> metric_values(4);
  std::vector<std::vector<std::string>> metric_rows;
  std::size_t plot_index = 0;
  const auto emit = [&](const std::string& stem, const std::string& svg) {
    const auto path = out_dir / (stem + ".svg");
    write_text(path, svg);
    written.push_back(path);
    md << "![" << stem << "](" << path.filename().string() << ")\n\n";
  };

  for (const auto& in : inputs) {
    const std::string ext = in.extension().string();
    const std::string stem = in.stem().string();
    if (ext == ".csv") {
      const CsvTable t = read_csv(in);
      if (t.header.empty()) throw DataError(in.string() + ": no header");
      if (t.header.front() == "epoch") {
        std::vector<Series> series;
        for (std::size_t c = 1; c < t.header.size(); ++c) {
          const std::string& name = t.header[c];
          if (name == "seconds" || name == "steps" || name == "grad_norm") continue;
          Series s{name, {}, {}};
          for (const auto& row : t.rows) {
            if (row[c].empty()) continue;
            s.x.push_back(parse_double(row[0], in.string()));
            s.y.push_back(parse_double(row[c], in.string()));
          }
          if (!s.x.empty()) series.push_back(std::move(s));
        }
        if (series.empty()) throw DataError(in.string() + ": training curve has no rows");
        emit("curve_" + std::to_string(plot_index++) + "_" + stem, line_chart_svg("Training curve: " + stem, "epoch",
                                                                                  "value", series));
      } else if (t.header.front() == "task") {
        for (const auto& row : t.rows) {
          const std::string group = row[t.column("task")] + "/" + row[t.column("split")] + "/" +
                                    row[t.column("mode")] + "/" + row[t.column("setting")];
          metric_groups.push_back(group);
          const char* cols[] = {"mrr", "hits1", "hits3", "hits10"};
          std::vector<std::string> md_row{group, row[t.column("count")]};
          for (int k = 0; k < 4; ++k) {
            metric_values[k].push_back(parse_double(row[t.column(cols[k])], in.string()));
            md_row.push_back(fmt(metric_values[k].back()));
          }
          metric_rows.push_back(std::move(md_row));
        }
      } else {
        throw DataError(in.string() + ": unrecognised csv (expected a training curve or metric table)");
      }
    } else if (ext == ".json") {
      std::ifstream f(in);
      if (!f) throw DataError("cannot read " + in.string());
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::parse_error& e) {
        throw DataError(in.string() + ": " + e.what());
      }
      if (j.is_object() && j.contains("timings")) {
        std::vector<std::string> phases;
        std::vector<double> secs;
        for (const auto& [phase, v] : j["timings"].items()) {
          phases.push_back(phase);
          secs.push_back(v.get<double>());
        }
        if (phases.empty()) throw DataError(in.string() + ": manifest has no timings");
        emit("timings_" + std::to_string(plot_index++), bar_chart_svg("Phase timings (s)", phases, {"seconds"}, {secs}));
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < phases.size(); ++i) rows.push_back({phases[i], fmt(secs[i])});
        md << "## Timings (" << escape(in.filename().string()) << ")\n\n" << md_table({"phase", "seconds"}, rows) << '\n';
      } else if (j.is_array()) {
        std::vector<Series> series;
        for (const auto& rep : j) {
          Series s{rep.at("task").get<std::string>() + "/" + rep.at("mode").get<std::string>(), {}, {}};
          for (const auto& ts : rep.at("per_timestamp")) {
            s.x.push_back(ts.at("timestamp").get<double>());
            s.y.push_back(ts.at("mrr").get<double>());
          }
          if (!s.x.empty()) series.push_back(std::move(s));
        }
        if (series.empty()) throw DataError(in.string() + ": no per-timestamp rows");
        emit("per_timestamp_" + std::to_string(plot_index++) + "_" + stem,
             line_chart_svg("MRR per timestamp", "snapshot", "MRR", series));
      } else {
        throw DataError(in.string() + ": unrecognised json (expected a manifest or metric report)");
      }
    } else {
      throw DataError(in.string() + ": unsupported input type");
    }
  }
  if (!metric_groups.empty()) {
    emit("metrics", bar_chart_svg("Ranking metrics", metric_groups, {"MRR", "Hits@1", "Hits@3", "Hits@10"},
                                  metric_values));
    md << "## Metrics\n\n" << md_table({"report", "queries", "MRR", "Hits@1", "Hits@3", "Hits@10"}, metric_rows)
       << '\n';
  }
  const auto summary = out_dir / "summary.md";
  write_text(summary, md.str());
  written.push_back(summary);
  return written;
}

}  // namespace evokg
