#include "teir/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "teir/error.hpp"
#include "teir/evaluation.hpp"

namespace teir {
namespace {

namespace fs = std::filesystem;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("missing artifact " + p.string());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  require(p);
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_num(const std::string& s, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(file.string() + ": bad number '" + s + "'");
  }
}

}  // namespace

std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kW = 640, kH = 400, kL = 70, kR = 150, kT = 40, kB = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) {
      if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(title) << "</text>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double xv = x0 + (x1 - x0) * i / 4.0;
    svg << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
        << num(yv) << "</text>\n"
        << "<text x=\"" << px(xv) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">"
        << num(xv) << "</text>\n";
  }
  svg << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\">" << escape_xml(x_label) << "</text>\n"
      << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 16 " << (kT + kH - kB) / 2 << ")\">" << escape_xml(y_label)
      << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(series[s].x.size(), series[s].y.size()); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      svg << num(px(series[s].x[i])) << ',' << num(py(series[s].y[i])) << ' ';
    }
    svg << "\"/>\n";
    const double ly = kT + 16.0 * static_cast<double>(s);
    svg << "<line x1=\"" << kW - kR + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 30
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kW - kR + 35 << "\" y=\"" << ly + 4 << "\">"
        << escape_xml(series[s].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_report(const fs::path& run_dir, const fs::path& out) {
  if (!fs::is_directory(run_dir)) throw IoError("missing run directory " + run_dir.string());
  const fs::path eval_path = run_dir / "eval_matrix.csv";
  const fs::path fisher_path = run_dir / "diagnostics" / "fisher.csv";
  const fs::path loss_path = run_dir / "diagnostics" / "loss.csv";
  require(eval_path);
  require(fisher_path);
  require(loss_path);
  const EvalMatrix m = EvalMatrix::read_csv(eval_path);
  const std::size_t rows = m.task_rows();
  if (rows == 0) throw IoError("empty eval matrix in " + eval_path.string());
  fs::create_directories(out);

  m.write_csv(out / "eval_matrix.csv");
  std::string arf = "j,direction,ar,forgetting\n";
  std::vector<Series> ar_series, f_series;
  for (Direction dir : kDirections) {
    Series ar{to_string(dir), {}, {}}, fg{to_string(dir), {}, {}};
    for (std::size_t j = 0; j < rows; ++j) {
      if (!m.has_row(j, dir)) continue;
      const double a = average_recall(m, j, dir);
      std::string f_text = "";
      if (j >= 1) {
        const double f = forgetting(m, j, dir);
        f_text = num(f);
        fg.x.push_back(static_cast<double>(j));
        fg.y.push_back(f);
      }
      arf += std::to_string(j) + "," + to_string(dir) + "," + num(a) + "," + f_text + "\n";
      ar.x.push_back(static_cast<double>(j));
      ar.y.push_back(a);
    }
    ar_series.push_back(std::move(ar));
    f_series.push_back(std::move(fg));
  }
  write_file(out / "ar_f.csv", arf);
  write_file(out / "ar.svg", render_line_plot("Average Recall@1", "task j", "AR_j", ar_series));
  write_file(out / "forgetting.svg",
             render_line_plot("Forgetting", "task j", "F_j", f_series));

  fs::copy_file(fisher_path, out / "fisher.csv", fs::copy_options::overwrite_existing);
  Series fisher{"fisher trace", {}, {}};
  for (const auto& r : read_csv_rows(fisher_path)) {
    if (r.size() < 2) throw FormatError(fisher_path.string() + ": short row");
    fisher.x.push_back(parse_num(r[0], fisher_path));
    fisher.y.push_back(parse_num(r[1], fisher_path));
  }
  write_file(out / "fisher.svg",
             render_line_plot("Fisher trace per task", "task", "trace", {fisher}));

  fs::copy_file(loss_path, out / "loss.csv", fs::copy_options::overwrite_existing);
  double global_epoch = 0;
  Series loss{"mean loss", {}, {}};
  for (const auto& r : read_csv_rows(loss_path)) {
    if (r.size() < 3) throw FormatError(loss_path.string() + ": short row");
    loss.x.push_back(global_epoch++);
    loss.y.push_back(parse_num(r[2], loss_path));
  }
  write_file(out / "loss.svg", render_line_plot("Training loss", "epoch", "loss", {loss}));

  std::size_t ted_files = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    const fs::path ted = run_dir / "diagnostics" / ("ted_task" + std::to_string(t) + ".csv");
    if (!fs::exists(ted)) continue;
    ++ted_files;
    fs::copy_file(ted, out / ted.filename(), fs::copy_options::overwrite_existing);
    Series hist{"task " + std::to_string(t), {}, {}};
    for (const auto& r : read_csv_rows(ted)) {
      if (r.size() < 3 || r[0] == "-inf" || r[1] == "inf") continue;
      const double left = parse_num(r[0], ted), right = parse_num(r[1], ted);
      hist.x.push_back(0.5 * (left + right));
      hist.y.push_back(parse_num(r[2], ted));
    }
    write_file(out / ("ted_task" + std::to_string(t) + ".svg"),
               render_line_plot("Token embedding distribution, task " + std::to_string(t),
                                "value", "count", {hist}));
  }
  if (ted_files == 0) throw IoError("missing artifact " + (run_dir / "diagnostics").string() +
                                    "/ted_task*.csv");
}

}  // namespace teir
