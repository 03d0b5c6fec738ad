#pragma once

// Finite-difference verification of every backward pass at double precision.

#include <cstdint>
#include <string>
#include <vector>

namespace cardioseg {

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double step = 1e-5;               // central-difference step for layers
  double layer_threshold = 1e-4;
  double loss_threshold = 1e-6;     // scalar pixel loss away from branch boundaries
  bool include_network = true;      // end-to-end check on a small network
  /// Denominator floor for the network check. Conv biases feeding batch norm
  /// have an exact gradient of 0, where the difference quotient is pure
  /// round-off (~1e-10); 1e-4 makes those entries an absolute 1e-8 test.
  double network_floor = 1e-4;
  /// Test hook: name of an op whose analytical gradient is deliberately
  /// perturbed ("conv2d", "batch_norm", ...). Empty for a normal run.
  std::string inject_fault;
};

struct OpCheck {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  std::size_t evaluations = 0;
  bool passed() const { return max_rel_error < threshold; }
};

struct GradcheckReport {
  std::vector<OpCheck> ops;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> offenders() const;
  /// One line per op: name, max relative error, threshold, PASS/FAIL.
  std::string format() const;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

GradcheckReport run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace cardioseg
