#include "idea/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "idea/common.hpp"

namespace idea {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Eigen::Index CsvTable::col(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<Eigen::Index>(j);
  throw IoError("csv column '" + name + "' not found");
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& data, const std::vector<bool>& int_cols) {
  if (data.cols() != static_cast<Eigen::Index>(header.size()))
    throw ContractViolation("write_csv: header width does not match data");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  out << '\n';
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (j) out << ',';
      if (j < static_cast<Eigen::Index>(int_cols.size()) && int_cols[static_cast<std::size_t>(j)])
        out << static_cast<long long>(data(i, j));
      else
        out << fmt17(data(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  CsvTable table;
  table.header = split_line(line);
  const std::size_t width = table.header.size();
  std::vector<double> values;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != width)
      throw IoError("'" + path + "' row " + std::to_string(rows + 1) + " has " +
                    std::to_string(fields.size()) + " fields, expected " + std::to_string(width));
    for (const auto& f : fields) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw IoError("'" + path + "': cannot parse '" + f + "' as a number");
      values.push_back(v);
    }
    ++rows;
  }
  table.data.resize(rows, static_cast<Eigen::Index>(width));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < table.data.cols(); ++j)
      table.data(i, j) = values[static_cast<std::size_t>(i * table.data.cols() + j)];
  return table;
}

}  // namespace idea
