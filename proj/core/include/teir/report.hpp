#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace teir {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal standalone SVG line chart.
std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series);

// Reads a finished run directory and writes eval_matrix.csv, ar_f.csv,
// fisher.csv, loss.csv, ted_task<t>.csv and SVG plots into `out`. Throws
// IoError naming the first missing artifact.
void write_report(const std::filesystem::path& run_dir, const std::filesystem::path& out);

}  // namespace teir
