#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace gcnbid::grid {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Undirected line between two 0-based bus indices, stored with a < b.
struct Line {
  int a = 0;
  int b = 0;

  static Line make(int u, int v) { return u < v ? Line{u, v} : Line{v, u}; }
  auto operator<=>(const Line&) const = default;
};

class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CaseParseError : public GridError {
 public:
  CaseParseError(std::size_t line_no, const std::string& what);
  std::size_t line_number() const { return line_no_; }

 private:
  std::size_t line_no_;
};

/// Bus-system topology. Lines are kept sorted and unique; the object is
/// immutable once built.
class GridTopology {
 public:
  GridTopology() = default;
  /// Throws GridError on out-of-range endpoints, self-loops or duplicates.
  GridTopology(int n_buses, std::vector<Line> lines, std::map<int, int> generator_buses);

  int n_buses() const { return n_buses_; }
  const std::vector<Line>& lines() const { return lines_; }
  /// unit index (0-based) -> bus index (0-based)
  const std::map<int, int>& generator_buses() const { return generator_buses_; }
  bool has_line(Line l) const;

  bool operator==(const GridTopology&) const = default;

 private:
  int n_buses_ = 0;
  std::vector<Line> lines_;
  std::map<int, int> generator_buses_;
};

/// Symmetric 0/1 matrix with zero diagonal.
struct AdjacencyMatrix {
  Matrix entries;
};

/// D^-1/2 (A + I) D^-1/2. Keeps a sparse copy for propagation.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;
  explicit NormalizedAdjacency(Matrix dense);

  const Matrix& dense() const { return dense_; }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& sparse() const { return sparse_; }
  Eigen::Index size() const { return dense_.rows(); }

 private:
  Matrix dense_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> sparse_;
};

GridTopology parse_case(const std::string& text);
GridTopology load_case(const std::filesystem::path& path);
/// Inverse of parse_case; bus and unit labels are written 1-based.
std::string serialize_case(const GridTopology& topo);

AdjacencyMatrix build_adjacency(const GridTopology& topo);
NormalizedAdjacency normalize_adjacency(const AdjacencyMatrix& adj);

/// Returns a copy of `topo` without `lines`. Throws GridError if any listed
/// line is absent.
GridTopology remove_lines(const GridTopology& topo, const std::vector<Line>& lines);

/// Parses "3-4, 8-6" (1-based labels) into 0-based lines.
std::vector<Line> parse_line_list(const std::string& text);

}  // namespace gcnbid::grid
