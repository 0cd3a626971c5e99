#pragma once

// Dense matrix CSV exchange. One row per line, comma separated, full matrix,
// preceded by a header line `# symmetric n=<n>` (or `# basis n=<n>` for
// orthonormal bases). Values are written with 17 significant digits so a
// write/read cycle is exact.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "covkl/errors.hpp"
#include "covkl/linalg.hpp"

namespace covkl::io {

/// Formats a double with 17 significant digits ("%.17g"); infinities as inf/-inf.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct DenseCsv {
  std::string kind;
  Matrix data;
};

inline void write_dense_csv(std::ostream& os, const std::string& kind, const Matrix& m) {
  os << "# " << kind << " n=" << m.rows() << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline DenseCsv read_dense_csv(std::istream& is, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw InvalidArgument(source + ": empty matrix file");
  static const std::regex header(R"(^#\s*([A-Za-z_]+)\s+n=(\d+)\s*$)");
  std::smatch match;
  if (!std::regex_match(line, match, header)) {
    throw InvalidArgument(source + ": bad header '" + line + "' (expected '# symmetric n=<n>')");
  }
  DenseCsv out;
  out.kind = match[1].str();
  const long n = std::stol(match[2].str());
  if (n < 1) throw InvalidArgument(source + ": n must be >= 1");
  out.data.resize(n, n);
  long row = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (row >= n) throw InvalidArgument(source + ": more than n data rows");
    std::stringstream ss(line);
    std::string cell;
    long col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= n) throw InvalidArgument(source + ": row " + std::to_string(row) + " has more than n columns");
      try {
        std::size_t used = 0;
        out.data(row, col) = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw InvalidArgument(source + ": cannot parse '" + cell + "' at row " + std::to_string(row));
      }
      ++col;
    }
    if (col != n) throw DimensionMismatch(source + ": row " + std::to_string(row), n, col);
    ++row;
  }
  if (row != n) throw DimensionMismatch(source + ": row count", n, row);
  return out;
}

inline void write_symmetric_csv(const std::string& path, const SymmetricMatrix& s) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_dense_csv(os, "symmetric", s.dense());
}

inline void write_basis_csv(const std::string& path, const OrthonormalBasis& v) {
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_dense_csv(os, "basis", v.matrix());
}

/// Reads a symmetric matrix and verifies symmetry on load.
inline SymmetricMatrix read_symmetric_csv(std::istream& is, const std::string& source = "<stream>") {
  DenseCsv csv = read_dense_csv(is, source);
  if (csv.kind != "symmetric") {
    throw InvalidArgument(source + ": expected a '# symmetric' header, got '# " + csv.kind + "'");
  }
  return SymmetricMatrix::checked(csv.data);
}

inline SymmetricMatrix read_symmetric_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open '" + path + "'");
  return read_symmetric_csv(is, path);
}

inline OrthonormalBasis read_basis_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot open '" + path + "'");
  return OrthonormalBasis(read_dense_csv(is, path).data);
}

}  // namespace covkl::io
