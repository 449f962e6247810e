#include "gcnbid/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace gcnbid::grid {

CaseParseError::CaseParseError(std::size_t line_no, const std::string& what)
    : GridError(fmt::format("line {}: {}", line_no, what)), line_no_(line_no) {}

GridTopology::GridTopology(int n_buses, std::vector<Line> lines,
                           std::map<int, int> generator_buses)
    : n_buses_(n_buses), lines_(std::move(lines)), generator_buses_(std::move(generator_buses)) {
  if (n_buses_ <= 0) throw GridError("bus count must be positive");
  for (auto& l : lines_) {
    if (l.a == l.b) throw GridError(fmt::format("self-loop on bus {}", l.a + 1));
    l = Line::make(l.a, l.b);
    if (l.a < 0 || l.b >= n_buses_)
      throw GridError(fmt::format("line {}-{} outside [1, {}]", l.a + 1, l.b + 1, n_buses_));
  }
  std::sort(lines_.begin(), lines_.end());
  auto dup = std::adjacent_find(lines_.begin(), lines_.end());
  if (dup != lines_.end())
    throw GridError(fmt::format("duplicate line {}-{}", dup->a + 1, dup->b + 1));
  for (const auto& [unit, bus] : generator_buses_) {
    if (unit < 0) throw GridError("negative unit index");
    if (bus < 0 || bus >= n_buses_)
      throw GridError(fmt::format("unit {} on bus {} outside [1, {}]", unit + 1, bus + 1, n_buses_));
  }
}

bool GridTopology::has_line(Line l) const {
  return std::binary_search(lines_.begin(), lines_.end(), Line::make(l.a, l.b));
}

NormalizedAdjacency::NormalizedAdjacency(Matrix dense) : dense_(std::move(dense)) {
  sparse_ = dense_.sparseView();
  sparse_.makeCompressed();
}

namespace {

std::string strip(std::string s) {
  if (auto hash = s.find('#'); hash != std::string::npos) s.erase(hash);
  auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_int(const std::string& tok, int& out) {
  try {
    std::size_t used = 0;
    out = std::stoi(tok, &used);
    return used == tok.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_pair(const std::string& tok, int& a, int& b) {
  auto dash = tok.find('-');
  if (dash == std::string::npos || dash == 0) return false;
  return parse_int(strip(tok.substr(0, dash)), a) && parse_int(strip(tok.substr(dash + 1)), b);
}

}  // namespace

GridTopology parse_case(const std::string& text) {
  enum class Section { none, lines, generators } section = Section::none;
  int n_buses = -1;
  std::vector<Line> lines;
  std::map<int, int> gens;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string row = strip(raw);
    if (row.empty()) continue;

    std::istringstream fields(row);
    std::string head;
    fields >> head;
    if (head == "buses") {
      std::string count;
      fields >> count;
      if (!parse_int(count, n_buses) || n_buses <= 0)
        throw CaseParseError(line_no, "expected 'buses <n>' with n > 0");
      continue;
    }
    if (head == "lines" && row == "lines") {
      section = Section::lines;
      continue;
    }
    if (head == "generators" && row == "generators") {
      section = Section::generators;
      continue;
    }
    if (n_buses < 0) throw CaseParseError(line_no, "'buses <n>' header must come first");

    if (section == Section::lines) {
      int a = 0, b = 0;
      if (!parse_pair(row, a, b)) throw CaseParseError(line_no, fmt::format("bad line '{}'", row));
      if (a < 1 || a > n_buses || b < 1 || b > n_buses)
        throw CaseParseError(line_no, fmt::format("bus index out of range in '{}'", row));
      if (a == b) throw CaseParseError(line_no, fmt::format("self-loop '{}'", row));
      Line l = Line::make(a - 1, b - 1);
      if (std::find(lines.begin(), lines.end(), l) != lines.end())
        throw CaseParseError(line_no, fmt::format("duplicate line '{}'", row));
      lines.push_back(l);
    } else if (section == Section::generators) {
      std::string bus_tok, extra;
      int unit = 0, bus = 0;
      fields >> bus_tok;
      if (!parse_int(head, unit) || !parse_int(bus_tok, bus) || (fields >> extra))
        throw CaseParseError(line_no, fmt::format("expected 'unit bus', got '{}'", row));
      if (unit < 1) throw CaseParseError(line_no, "unit index must be >= 1");
      if (bus < 1 || bus > n_buses)
        throw CaseParseError(line_no, fmt::format("bus index out of range in '{}'", row));
      if (!gens.emplace(unit - 1, bus - 1).second)
        throw CaseParseError(line_no, fmt::format("unit {} listed twice", unit));
    } else {
      throw CaseParseError(line_no, fmt::format("unexpected '{}' outside a section", row));
    }
  }
  if (n_buses < 0) throw CaseParseError(line_no, "missing 'buses <n>' header");
  return GridTopology(n_buses, std::move(lines), std::move(gens));
}

GridTopology load_case(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GridError(fmt::format("cannot open case file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_case(buf.str());
}

std::string serialize_case(const GridTopology& topo) {
  std::string out = fmt::format("buses {}\nlines\n", topo.n_buses());
  for (const auto& l : topo.lines()) out += fmt::format("{}-{}\n", l.a + 1, l.b + 1);
  out += "generators\n";
  for (const auto& [unit, bus] : topo.generator_buses()) out += fmt::format("{} {}\n", unit + 1, bus + 1);
  return out;
}

AdjacencyMatrix build_adjacency(const GridTopology& topo) {
  const int n = topo.n_buses();
  Matrix a = Matrix::Zero(n, n);
  for (const auto& l : topo.lines()) {
    a(l.a, l.b) = 1.0;
    a(l.b, l.a) = 1.0;
  }
  return {std::move(a)};
}

NormalizedAdjacency normalize_adjacency(const AdjacencyMatrix& adj) {
  const Matrix& a = adj.entries;
  if (a.rows() != a.cols()) throw GridError("adjacency matrix must be square");
  if (a.size() > 0 && (a - a.transpose()).cwiseAbs().maxCoeff() > 0.0)
    throw GridError("adjacency matrix must be symmetric");

  const Eigen::Index n = a.rows();
  Matrix a_hat = a + Matrix::Identity(n, n);
  Eigen::VectorXd inv_sqrt_deg = a_hat.rowwise().sum().array().rsqrt();
  Matrix norm(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      norm(i, j) = a_hat(i, j) * inv_sqrt_deg(i) * inv_sqrt_deg(j);
  return NormalizedAdjacency(std::move(norm));
}

GridTopology remove_lines(const GridTopology& topo, const std::vector<Line>& lines) {
  std::vector<Line> kept = topo.lines();
  for (const auto& raw : lines) {
    Line l = Line::make(raw.a, raw.b);
    auto it = std::find(kept.begin(), kept.end(), l);
    if (it == kept.end())
      throw GridError(fmt::format("cannot remove nonexistent line {}-{}", l.a + 1, l.b + 1));
    kept.erase(it);
  }
  return GridTopology(topo.n_buses(), std::move(kept), topo.generator_buses());
}

std::vector<Line> parse_line_list(const std::string& text) {
  std::vector<Line> out;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = strip(tok);
    if (tok.empty()) continue;
    int a = 0, b = 0;
    if (!parse_pair(tok, a, b) || a < 1 || b < 1)
      throw GridError(fmt::format("bad line token '{}'", tok));
    out.push_back(Line::make(a - 1, b - 1));
  }
  return out;
}

}  // namespace gcnbid::grid
