#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace intentctx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Non-owning view of a named parameter tensor. Bias vectors are stored as 1×n matrices.
struct TensorRef {
  std::string name;
  Matrix* value;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// FNV-1a, used for content hashes that must be stable across platforms.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return out;
}

}  // namespace intentctx
