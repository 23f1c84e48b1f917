#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

#include <Eigen/Core>

namespace enfpf {

// Counter-based generator: a stream is keyed by (seed, id...) so that draws for
// (member, cycle, substep) are independent of evaluation order and thread count.
// splitmix64 keying/stream, Box-Muller normals; no libc++-dependent distributions,
// so output is identical across platforms.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

  CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream_ids)
      : CounterRng(seed) {
    for (std::uint64_t id : stream_ids) absorb(id);
  }

  /// Fold another id into the stream key.
  void absorb(std::uint64_t id) { state_ = mix(state_ ^ mix(id + kGolden)); }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform on (0, 1), both endpoints excluded.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream tags keep noise sources from colliding in key space.
namespace rng_stream {
constexpr std::uint64_t kStateNoise = 101;
constexpr std::uint64_t kPredictedObsNoise = 102;
constexpr std::uint64_t kObservationNoise = 103;
constexpr std::uint64_t kInitialEnsemble = 104;
constexpr std::uint64_t kAttractorPool = 105;
constexpr std::uint64_t kReplicate = 106;
constexpr std::uint64_t kReference = 107;
constexpr std::uint64_t kOracle = 108;
}  // namespace rng_stream

}  // namespace enfpf
