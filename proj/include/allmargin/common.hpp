#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace allmargin {

enum class ErrorCode {
  shape_mismatch,
  index_out_of_range,
  invalid_argument,
  dimension_too_large,
  undefined_at_misclassified,
  requires_smooth_activation,
  degenerate_input,
  theorem_precondition_violated,
  frozen_layer_complexity,
  architecture_mismatch,
  empty_dataset,
  unknown_kind,
  bad_magic,
  truncated_file,
  count_mismatch,
  io_error,
  invalid_config,
  malformed_input,
};

std::string to_string(ErrorCode code);

// All library failures carry a machine-readable code plus a human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(to_string(code) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Portable deterministic generator. The engine is mt19937_64 (fully specified
// by the standard); the mappings to real numbers are done here instead of via
// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi); // [lo, hi)
  double normal();                      // standard normal, Box-Muller
  std::size_t index(std::size_t n);     // uniform in [0, n)
  bool bernoulli(double p);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; derives independent stream seeds from (base, index).
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

// Fisher-Yates with Rng::index, so permutations are identical on every platform.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

// Deterministic pairwise summation; the reduction tree depends only on size.
double pairwise_sum(std::span<const double> values);

double norm2(std::span<const double> v);

// Shortest text that parses back to the same double; "inf", "-inf", "nan" otherwise.
std::string format_double(double v);

// Worker count: explicit value if > 0, else ALLMARGIN_THREADS, else 1.
unsigned resolve_threads(unsigned requested);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write results
// by index, so output never depends on scheduling.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace allmargin
