#include "skipgrid/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skipgrid/checkpoint.hpp"
#include "skipgrid/error.hpp"

namespace fs = std::filesystem;

namespace skipgrid {

namespace {

std::string rate_or_na(const std::optional<float>& r) {
  return r ? format_rate(*r) : "N/A";
}

// reference losses carry four decimals, matching the published table
std::string paper_loss_str(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", static_cast<double>(v));
  return buf;
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

std::vector<std::string> row_cells(const RunResult& r) {
  std::vector<std::string> cells;
  cells.push_back(format_rate(r.row.attn));
  cells.push_back(format_rate(r.row.res1));
  cells.push_back(rate_or_na(r.row.res2));
  cells.push_back(rate_or_na(r.row.res4));
  cells.push_back(std::to_string(r.row.iters));
  if (r.status == "completed") {
    cells.push_back(format_float_exact(r.final_val_loss));
    cells.push_back(r.reference_loss ? paper_loss_str(*r.reference_loss) : "");
    cells.push_back(r.delta ? format_float_exact(*r.delta) : "");
  } else {
    cells.push_back(sanitize_cell(r.status));
    cells.push_back(r.reference_loss ? paper_loss_str(*r.reference_loss) : "");
    cells.push_back("");
  }
  return cells;
}

const std::vector<std::string> kHeader = {"Attn", "Res1", "Res2",      "Res4",
                                          "Iters", "Loss", "PaperLoss", "Delta"};

}  // namespace

std::vector<std::string> results_csv_rows(const std::vector<RunResult>& results) {
  std::vector<std::string> rows;
  for (const RunResult& r : results) {
    const auto cells = row_cells(r);
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ',';
      line += cells[i];
    }
    rows.push_back(line);
  }
  return rows;
}

void emit_report(const std::vector<RunResult>& results, const std::string& out_dir) {
  if (results.empty()) throw Error::contract("emit_report needs at least one result");

  {
    std::ofstream csv(fs::path(out_dir) / "results.csv", std::ios::trunc);
    if (!csv.is_open()) throw Error::io("cannot write results.csv in " + out_dir);
    for (std::size_t i = 0; i < kHeader.size(); ++i) csv << (i ? "," : "") << kHeader[i];
    csv << '\n';
    for (const std::string& line : results_csv_rows(results)) csv << line << '\n';
  }

  {
    std::vector<std::vector<std::string>> table;
    table.push_back(kHeader);
    for (const RunResult& r : results) table.push_back(row_cells(r));
    std::vector<std::size_t> width(kHeader.size(), 0);
    for (const auto& row : table)
      for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());

    std::ofstream txt(fs::path(out_dir) / "results.txt", std::ios::trunc);
    if (!txt.is_open()) throw Error::io("cannot write results.txt in " + out_dir);
    for (const auto& row : table) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        txt << row[i] << std::string(width[i] - row[i].size(), ' ');
        txt << (i + 1 < row.size() ? "  " : "");
      }
      txt << '\n';
    }
  }

  for (const RunResult& r : results) {
    if (r.curve_path.empty() || !fs::exists(r.curve_path)) continue;
    const CurveSeries curve = parse_curve_csv(r.curve_path);
    const std::string svg_path =
        (fs::path(out_dir) / "curves" / (r.row_id + ".svg")).string();
    write_curve_svg(curve, r.row_id, svg_path);
  }
}

CurveSeries parse_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw Error::io("cannot open curve file: " + path);
  CurveSeries c;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw Error::data("malformed curve row: " + line);
    c.iterations.push_back(std::stol(cells[0]));
    c.train_loss.push_back(std::strtof(cells[1].c_str(), nullptr));
    c.val_loss.push_back(std::strtof(cells[2].c_str(), nullptr));
  }
  if (c.iterations.empty()) throw Error::data("curve file has no rows: " + path);
  return c;
}

void write_curve_svg(const CurveSeries& curve, const std::string& title,
                     const std::string& path) {
  const double width = 640, height = 420;
  const double ml = 64, mr = 16, mt = 34, mb = 46;  // margins
  const double pw = width - ml - mr, ph = height - mt - mb;

  double x_max = 1, y_min = curve.train_loss[0], y_max = curve.train_loss[0];
  for (std::size_t i = 0; i < curve.iterations.size(); ++i) {
    x_max = std::max(x_max, static_cast<double>(curve.iterations[i]));
    for (float v : {curve.train_loss[i], curve.val_loss[i]}) {
      y_min = std::min(y_min, static_cast<double>(v));
      y_max = std::max(y_max, static_cast<double>(v));
    }
  }
  if (y_max - y_min < 1e-6) y_max = y_min + 1e-6;
  const double pad = 0.05 * (y_max - y_min);
  y_min -= pad;
  y_max += pad;

  auto sx = [&](double it) { return ml + pw * (it / x_max); };
  auto sy = [&](double v) { return mt + ph * (1.0 - (v - y_min) / (y_max - y_min)); };
  auto polyline = [&](const std::vector<float>& ys, const char* color) {
    std::string pts;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", sx(static_cast<double>(curve.iterations[i])),
                    sy(static_cast<double>(ys[i])));
      pts += buf;
    }
    return "  <polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "  <text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n";

  // axes
  svg << "  <line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = x_max * i / 5.0;
    const double fy = y_min + (y_max - y_min) * i / 5.0;
    char xb[64], yb[64];
    std::snprintf(xb, sizeof xb, "%.0f", fx);
    std::snprintf(yb, sizeof yb, "%.3f", fy);
    svg << "  <line x1=\"" << sx(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(fx) << "\" y2=\""
        << mt + ph + 4 << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xb
        << "</text>\n"
        << "  <line x1=\"" << ml - 4 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml << "\" y2=\""
        << sy(fy) << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << ml - 8 << "\" y=\"" << sy(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yb
        << "</text>\n";
  }
  svg << "  <text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">iteration</text>\n"
      << "  <text x=\"16\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
      << mt + ph / 2 << ")\">loss</text>\n";

  svg << polyline(curve.train_loss, "#1f77b4") << polyline(curve.val_loss, "#d62728");
  svg << "  <rect x=\"" << ml + pw - 120 << "\" y=\"" << mt + 6
      << "\" width=\"112\" height=\"38\" fill=\"white\" stroke=\"#999\"/>\n"
      << "  <line x1=\"" << ml + pw - 112 << "\" y1=\"" << mt + 18 << "\" x2=\"" << ml + pw - 88
      << "\" y2=\"" << mt + 18 << "\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n"
      << "  <text x=\"" << ml + pw - 82 << "\" y=\"" << mt + 22
      << "\" font-family=\"sans-serif\" font-size=\"11\">train</text>\n"
      << "  <line x1=\"" << ml + pw - 112 << "\" y1=\"" << mt + 34 << "\" x2=\"" << ml + pw - 88
      << "\" y2=\"" << mt + 34 << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n"
      << "  <text x=\"" << ml + pw - 82 << "\" y=\"" << mt + 38
      << "\" font-family=\"sans-serif\" font-size=\"11\">val</text>\n";
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw Error::io("cannot write svg: " + path);
  out << svg.str();
}

}  // namespace skipgrid
