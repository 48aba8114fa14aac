#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace psfl {

// Error taxonomy. Call sites throw the narrowest type that applies.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MeasurementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProfileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PlanningError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent sub-streams from one master seed so
// that unrelated components never share RNG state.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag,
                              std::uint64_t id = 0) {
  return splitmix64(splitmix64(seed ^ tag) + id);
}

// Stream tags for mix_seed.
namespace seed_tag {
inline constexpr std::uint64_t data = 0x64617461ULL;       // training data
inline constexpr std::uint64_t test_data = 0x74657374ULL;  // held-out data
inline constexpr std::uint64_t partition = 0x70617274ULL;
inline constexpr std::uint64_t model = 0x6d6f646cULL;
inline constexpr std::uint64_t fleet = 0x666c6565ULL;
inline constexpr std::uint64_t plan = 0x706c616eULL;
inline constexpr std::uint64_t random_cluster = 0x72636c75ULL;
inline constexpr std::uint64_t jitter = 0x6a697474ULL;
}  // namespace seed_tag

// Minimal row-major dense matrix. Enough for MLP batches and activations.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  const double* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return data.size(); }
};

}  // namespace psfl
