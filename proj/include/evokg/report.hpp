#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evokg {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or throws DataError.
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series);

// values[s][g]: bar for series s in group g.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& groups,
                          const std::vector<std::string>& series, const std::vector<std::vector<double>>& values);

// Accepts training-curve CSVs, metric CSVs, per-timestamp metric JSON and run manifests.
// Writes one SVG per plot plus summary.md into out_dir and returns the written paths.
std::vector<std::filesystem::path> generate_report(std::span<const std::filesystem::path> inputs,
                                                   const std::filesystem::path& out_dir);

}  // namespace evokg
