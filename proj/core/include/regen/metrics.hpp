#pragma once

// Append-only metrics CSV. The header is fixed for a given class count; cells
// that were not measured on a row are left empty. Numbers are printed with
// "%.9g" so identical runs produce identical bytes.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace regen::metrics {

inline constexpr int kSchemaVersion = 1;

std::vector<std::string> header(int num_classes);

struct Row {
  long iteration = 0;
  std::string phase;
  std::map<std::string, double> values;  // column name -> value

  Row& set(const std::string& column, double v) {
    values[column] = v;
    return *this;
  }
  std::optional<double> get(const std::string& column) const;
};

class CsvWriter {
 public:
  // Creates the file with a header, or appends to an existing file whose
  // header matches.
  CsvWriter(const std::filesystem::path& path, int num_classes);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void write(const Row& row);

 private:
  std::vector<std::string> header_;
  std::FILE* file_ = nullptr;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Last row carrying an "miou" value, if any.
  const Row* last_eval() const;
};

Table read_csv(const std::filesystem::path& path);

std::string format_number(double v);

}  // namespace regen::metrics
