#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace idea {

// Formats a double with 17 significant digits (round-trip exact).
std::string fmt17(double v);

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd data;

  // Column index for a header name; throws IoError if absent.
  Eigen::Index col(const std::string& name) const;
};

// Writes comma-separated UTF-8 with Unix newlines and a header row.
// `int_cols[j]` formats column j as a plain integer instead of %.17g.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& data, const std::vector<bool>& int_cols = {});

// Strict reader: every row must have exactly the header's column count.
CsvTable read_csv(const std::string& path);

}  // namespace idea
