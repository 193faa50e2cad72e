#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kvret/autograd.hpp"

namespace kvret::ag {

/// Builds a scalar loss on `tape` from the bound parameter leaves. Must be
/// deterministic (no dropout) for the comparison to be meaningful.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative errors are computed as |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-6;
  /// Coordinates checked per tensor; 0 checks every coordinate, otherwise a
  /// seeded uniform sample without replacement.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t failures = 0;
  bool passed = true;
  /// "tensor[i] coord j: analytic a, numeric n" for the worst coordinate.
  std::string worst;
};

/// Compares backward() against central differences (f(θ+δ) − f(θ−δ)) / 2δ.
/// `params` are perturbed in place and restored before returning.
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace kvret::ag
