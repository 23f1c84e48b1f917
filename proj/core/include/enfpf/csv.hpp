#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "enfpf/errors.hpp"

namespace enfpf {

/// Column-labelled numeric table with CSV output (UTF-8, header row, '.' decimals).
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(const std::vector<double>& row) {
    if (row.size() != columns.size()) throw ContractViolation("row width mismatch");
    rows.push_back(row);
  }

  void write(std::ostream& os) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      os << (c ? "," : "") << columns[c];
    os << "\n";
    os.precision(17);
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
      os << "\n";
    }
  }

  void write_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ContractViolation("cannot open " + path + " for writing");
    write(os);
  }

  /// Element-wise mean of equally shaped tables.
  static Table mean(const std::vector<Table>& tables) {
    if (tables.empty()) throw ContractViolation("mean of zero tables");
    Table out = tables.front();
    for (std::size_t i = 1; i < tables.size(); ++i) {
      const Table& t = tables[i];
      if (t.rows.size() != out.rows.size()) throw ContractViolation("table shape mismatch");
      for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.rows[r].size(); ++c) out.rows[r][c] += t.rows[r][c];
    }
    for (auto& row : out.rows)
      for (double& v : row) v /= double(tables.size());
    return out;
  }

  double at(std::size_t row, const std::string& column) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c] == column) return rows.at(row).at(c);
    throw ContractViolation("no column " + column);
  }
};

}  // namespace enfpf
