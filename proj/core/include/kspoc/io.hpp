#ifndef KSPOC_IO_HPP
#define KSPOC_IO_HPP

// CSV tables with a versioned schema comment and atomic file writes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kspoc {

// %.17g, so every double round-trips; non-finite values print as inf / -inf / nan.
std::string format_double(double v);

class Cell {
 public:
  Cell(double v) : text_(format_double(v)) {}
  Cell(int v) : text_(std::to_string(v)) {}
  Cell(long v) : text_(std::to_string(v)) {}
  Cell(long long v) : text_(std::to_string(v)) {}
  Cell(unsigned v) : text_(std::to_string(v)) {}
  Cell(unsigned long v) : text_(std::to_string(v)) {}
  Cell(unsigned long long v) : text_(std::to_string(v)) {}
  Cell(bool v) : text_(v ? "true" : "false") {}
  Cell(const char* v) : text_(v) {}
  Cell(std::string v) : text_(std::move(v)) {}
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

struct Table {
  std::string schema;  // "<name>/<version>", written as the first comment line
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  Table() = default;
  Table(std::string schema_, std::vector<std::string> columns_)
      : schema(std::move(schema_)), columns(std::move(columns_)) {}

  void add(std::vector<Cell> cells);
  std::string to_csv() const;
  // Numeric view of one column; throws if a cell is not a number.
  std::vector<double> column(const std::string& name) const;
};

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

Table read_csv(const std::filesystem::path& path);

// Build identification recorded in manifests.
std::string code_version();
// UTC timestamp, ISO 8601.
std::string utc_timestamp();

}  // namespace kspoc

#endif  // KSPOC_IO_HPP
