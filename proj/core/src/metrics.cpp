#include "regen/metrics.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace regen::metrics {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

}  // namespace

std::vector<std::string> header(int num_classes) {
  std::vector<std::string> h = {"iteration", "phase",    "lr",        "loss_total", "l_p",
                                "l_c",       "l_kld",    "l_f",       "l_adv",      "l_d",
                                "seg_total", "seg_tgt",  "seg_gen",   "seg_p",      "seg_f",
                                "seg_kld",   "holdout_ce", "miou",    "pixel_acc"};
  for (int c = 0; c < num_classes; ++c) h.push_back("iou_" + std::to_string(c));
  return h;
}

std::optional<double> Row::get(const std::string& column) const {
  auto it = values.find(column);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, int num_classes)
    : header_(header(num_classes)) {
  const bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (exists) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (first != join(header_)) {
      throw std::runtime_error("metrics: header mismatch in " + path.string());
    }
  }
  file_ = std::fopen(path.c_str(), "ab");
  if (!file_) throw std::runtime_error("metrics: cannot open " + path.string());
  if (!exists) {
    std::fputs((join(header_) + "\n").c_str(), file_);
    std::fflush(file_);
  }
}

CsvWriter::~CsvWriter() {
  if (file_) std::fclose(file_);
}

void CsvWriter::write(const Row& row) {
  std::vector<std::string> cells;
  cells.reserve(header_.size());
  for (const auto& col : header_) {
    if (col == "iteration") {
      cells.push_back(std::to_string(row.iteration));
    } else if (col == "phase") {
      cells.push_back(row.phase);
    } else if (auto v = row.get(col)) {
      cells.push_back(format_number(*v));
    } else {
      cells.emplace_back();
    }
  }
  for (const auto& [k, _] : row.values) {
    if (std::find(header_.begin(), header_.end(), k) == header_.end()) {
      throw std::invalid_argument("metrics: unknown column '" + k + "'");
    }
  }
  std::fputs((join(cells) + "\n").c_str(), file_);
  std::fflush(file_);
}

const Row* Table::last_eval() const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->get("miou")) return &*it;
  }
  return nullptr;
}

Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics: missing " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics: empty file " + path.string());
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error("metrics: malformed row in " + path.string());
    }
    Row r;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (t.header[i] == "iteration") {
        r.iteration = std::stol(cells[i]);
      } else if (t.header[i] == "phase") {
        r.phase = cells[i];
      } else if (!cells[i].empty()) {
        r.values[t.header[i]] = std::strtod(cells[i].c_str(), nullptr);
      }
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace regen::metrics
