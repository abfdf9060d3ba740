#include "kspoc/io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "kspoc/errors.hpp"

#ifndef KSPOC_VERSION
#define KSPOC_VERSION "0.0.0"
#endif

namespace kspoc {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void Table::add(std::vector<Cell> cells) {
  if (cells.size() != columns.size()) {
    throw ConfigError("table " + schema + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(columns.size()));
  }
  std::vector<std::string> row;
  row.reserve(cells.size());
  for (auto& c : cells) row.push_back(c.text());
  rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
  std::string out = "# schema: " + schema + "\n";
  for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c];
    out += '\n';
  }
  return out;
}

std::vector<double> Table::column(const std::string& name) const {
  std::size_t idx = columns.size();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == name) idx = c;
  }
  if (idx == columns.size()) throw ConfigError("table " + schema + " has no column '" + name + "'");
  std::vector<double> out;
  for (const auto& row : rows) {
    const std::string& s = row[idx];
    if (s == "inf") out.push_back(HUGE_VAL);
    else if (s == "-inf") out.push_back(-HUGE_VAL);
    else if (s == "nan") out.push_back(std::nan(""));
    else {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size()) throw ConfigError("column '" + name + "' has non-numeric cell '" + s + "'");
      out.push_back(v);
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Table read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  Table t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# schema: ", 0) == 0) t.schema = line.substr(10);
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (!header) {
      t.columns = cells;
      header = true;
    } else {
      if (cells.size() != t.columns.size()) throw ConfigError(path.string() + ": ragged row '" + line + "'");
      t.rows.push_back(cells);
    }
  }
  if (!header) throw ConfigError(path.string() + ": no header row");
  return t;
}

std::string code_version() { return std::string("kspoc ") + KSPOC_VERSION; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace kspoc
