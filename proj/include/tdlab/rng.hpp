#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace tdlab {

/// SplitMix64 finalizer. Used to derive independent stream seeds from a
/// master seed and a tuple of integer tags, so every random draw is a pure
/// function of (seed, tags) and never of execution order.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

// FNV-1a, for turning names (experiment ids, stream labels) into tags.
constexpr std::uint64_t hash_name(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Fills rows [0, m.rows()) with i.i.d. N(0, 1) entries. Row i comes from its
/// own generator seeded by derive_seed(seed, {i}), so a matrix with more rows
/// extends one with fewer rows: prefixes are nested across sizes.
inline void fill_gaussian_rows(Eigen::Ref<Eigen::MatrixXd> m, std::uint64_t seed) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::mt19937_64 gen(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = nd(gen);
  }
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols,
                                       std::uint64_t seed) {
  Eigen::MatrixXd m(rows, cols);
  fill_gaussian_rows(m, seed);
  return m;
}

/// Entry i drawn from the stream of row i; nested across lengths.
inline Eigen::VectorXd gaussian_vector(Eigen::Index n, std::uint64_t seed,
                                       double stddev = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::mt19937_64 gen(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    std::normal_distribution<double> nd(0.0, stddev);
    v(i) = nd(gen);
  }
  return v;
}

}  // namespace tdlab
