#pragma once

// Shared fixtures and independent reference computations for the tests.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <span>
#include <tuple>
#include <unistd.h>
#include <vector>

#include "npll/knowledge_graph.hpp"
#include "npll/scoring.hpp"

namespace npll::test {

using Rows = std::vector<std::tuple<std::string, std::string, std::string>>;

inline KnowledgeGraph make_kg(const Rows& facts, const Rows& train = {}, const Rows& valid = {},
                              const Rows& test = {}) {
  KnowledgeGraph::Builder b;
  auto add = [&](Split s, const Rows& rows) {
    for (const auto& [h, r, t] : rows) b.add(s, h, r, t);
  };
  add(Split::facts, facts);
  add(Split::train, train);
  add(Split::valid, valid);
  add(Split::test, test);
  return std::move(b).build();
}

inline Triple triple(const KnowledgeGraph& kg, const std::string& h, const std::string& r, const std::string& t) {
  return {kg.entities().find(h), kg.relations().find(r), kg.entities().find(t)};
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("npll_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_dataset(const std::filesystem::path& dir, const std::string& facts, const std::string& train,
                          const std::string& valid, const std::string& test) {
  std::filesystem::create_directories(dir);
  write_file(dir / "facts.txt", facts);
  write_file(dir / "train.txt", train);
  write_file(dir / "valid.txt", valid);
  write_file(dir / "test.txt", test);
}

/// Straight loop evaluation of u · tanh(e_h^T W e_t + V [e_h; e_t] + b),
/// reading the flat parameter vector through the layout offsets only.
inline double reference_raw(const ScoringParams& p, const Triple& t) {
  const auto& L = p.layout();
  const auto data = p.data();
  const std::size_t d = L.dim, k = L.slices;
  const double* eh = data.data() + L.entity_offset(t.head);
  const double* et = data.data() + L.entity_offset(t.tail);
  double raw = 0.0;
  for (std::size_t s = 0; s < k; ++s) {
    const double* W = data.data() + L.w_offset(t.rel, s);
    double pre = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) pre += eh[i] * W[i * d + j] * et[j];
    }
    const double* V = data.data() + L.v_offset(t.rel) + s * 2 * d;
    for (std::size_t i = 0; i < d; ++i) pre += V[i] * eh[i] + V[d + i] * et[i];
    pre += data[L.b_offset(t.rel) + s];
    raw += data[L.u_offset(t.rel) + s] * std::tanh(pre);
  }
  return raw;
}

/// Fourth-order central difference of f along every coordinate of `x`:
/// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h. Truncation and rounding
/// error both stay near 1e-12 at the default step.
inline std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f,
                                            double step = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    auto at = [&](double offset) {
      x[i] = keep + offset;
      return f();
    };
    const double d = -at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step);
    x[i] = keep;
    g[i] = d / (12 * step);
  }
  return g;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

}  // namespace npll::test
