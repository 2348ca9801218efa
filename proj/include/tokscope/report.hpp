#pragma once

// Artifact rendering: CSV serialization with shortest round-trip doubles,
// minimal SVG polyline plots, and the report generator that turns a run
// directory's result.json + CSV curves into SVGs and a pass/fail summary.

#include <tokscope/io.hpp>

#include <charconv>
#include <filesystem>

namespace tokscope {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_from_cells(
    const std::vector<std::string>& headers,
    const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < headers.size(); ++i) {
    if (i) out += ',';
    out += headers[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    require(row.size() == headers.size(), "csv: ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

inline std::string csv_from_rows(const std::vector<std::string>& headers,
                                 const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < headers.size(); ++i) {
    if (i) out += ',';
    out += headers[i];
  }
  out += '\n';
  for (const auto& row : rows) {
    require(row.size() == headers.size(), "csv: ragged row");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> headers;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < headers.size(); ++i)
      if (headers[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("csv: missing column `" + name + "`");
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      table.headers = cells;
      first = false;
      continue;
    }
    std::vector<double> row;
    for (const std::string& cell : cells) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      require(res.ec == std::errc(), "csv: bad number `" + cell + "`");
      row.push_back(v);
    }
    require(row.size() == table.headers.size(), "csv: ragged data row");
    table.rows.push_back(std::move(row));
  }
  require(!table.headers.empty(), "csv: empty input");
  return table;
}

struct SvgSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Fixed-size polyline plot; deterministic output for deterministic input.
inline std::string render_svg(const std::vector<SvgSeries>& series,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::string& title) {
  const double W = 640.0, H = 480.0, ml = 70.0, mr = 20.0, mt = 40.0, mb = 50.0;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), "svg: series length mismatch");
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!(xmin <= xmax)) {
    xmin = 0.0;
    xmax = 1.0;
  }
  if (!(ymin <= ymax)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax - xmin < 1e-300) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-300) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const auto px = [&](double v) {
    return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  const auto py = [&](double v) {
    return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b"};
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
         "height=\"480\" viewBox=\"0 0 640 480\">\n";
  svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
         title + "</text>\n";
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(H - mb) +
         "\" x2=\"" + format_double(W - mr) + "\" y2=\"" +
         format_double(H - mb) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt) +
         "\" x2=\"" + format_double(ml) + "\" y2=\"" + format_double(H - mb) +
         "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = xmin + (xmax - xmin) * k / 4.0;
    const double fy = ymin + (ymax - ymin) * k / 4.0;
    svg += "<text x=\"" + format_double(px(fx)) + "\" y=\"" +
           format_double(H - mb + 18.0) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + format_double(fx) +
           "</text>\n";
    svg += "<text x=\"" + format_double(ml - 6.0) + "\" y=\"" +
           format_double(py(fy) + 3.0) +
           "\" text-anchor=\"end\" font-size=\"10\">" + format_double(fy) +
           "</text>\n";
  }
  svg += "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-size=\"12\">" +
         x_label + "</text>\n";
  svg += "<text x=\"16\" y=\"240\" text-anchor=\"middle\" font-size=\"12\" "
         "transform=\"rotate(-90 16 240)\">" +
         y_label + "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 6];
    std::string pts;
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) pts += ' ';
      pts += format_double(px(series[s].x[i])) + "," +
             format_double(py(series[s].y[i]));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    svg += "<text x=\"" + format_double(W - mr - 4.0) + "\" y=\"" +
           format_double(mt + 14.0 + 14.0 * static_cast<double>(s)) +
           "\" text-anchor=\"end\" font-size=\"11\" fill=\"" + color + "\">" +
           series[s].label + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

struct ReportOutcome {
  std::vector<std::string> svg_files;
  std::string summary;
};

// Consumes <run_dir>/result.json: renders every entry of "curves" whose CSV
// has data rows to an SVG, and summarizes the "assertions" array.
inline ReportOutcome render_report(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(run_dir);
  const ordered_json result =
      ordered_json::parse(read_text_file((dir / "result.json").string()));
  ReportOutcome out;

  if (result.contains("curves")) {
    for (const auto& curve : result.at("curves")) {
      const std::string name = curve.at("name").get<std::string>();
      const std::string csv_file = curve.at("csv").get<std::string>();
      const CsvTable table =
          parse_csv(read_text_file((dir / csv_file).string()));
      if (table.rows.empty()) continue;
      const int xcol = table.column(curve.at("x").get<std::string>());
      std::vector<SvgSeries> series;
      for (const auto& ycol_name : curve.at("y")) {
        SvgSeries s;
        s.label = ycol_name.get<std::string>();
        const int ycol = table.column(s.label);
        for (const auto& row : table.rows) {
          s.x.push_back(row[xcol]);
          s.y.push_back(row[ycol]);
        }
        series.push_back(std::move(s));
      }
      const std::string svg = render_svg(
          series, curve.at("x").get<std::string>(),
          curve.at("y").size() == 1 ? curve.at("y")[0].get<std::string>() : "value",
          name);
      const std::string svg_name = name + ".svg";
      write_text_file((dir / svg_name).string(), svg);
      out.svg_files.push_back(svg_name);
    }
  }

  std::string summary;
  if (result.contains("assertions")) {
    for (const auto& a : result.at("assertions")) {
      const bool passed = a.at("passed").get<bool>();
      summary += passed ? "PASS  " : "FAIL  ";
      summary += a.at("name").get<std::string>();
      if (a.contains("detail"))
        summary += "  (" + a.at("detail").get<std::string>() + ")";
      summary += '\n';
    }
  }
  if (summary.empty()) summary = "no assertions recorded\n";
  write_text_file((dir / "summary.txt").string(), summary);
  out.summary = summary;
  return out;
}

}  // namespace tokscope
