#include "kvret/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace kvret::ag {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  return f(tape, vars).value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor>& params, const GradCheckOptions& options) {
  if (options.step <= 0) throw ContractError("grad_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.gradient(v));
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<std::size_t> coords(params[t].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      const double orig = params[t][c];
      params[t][c] = orig + options.step;
      const double up = evaluate(f, params);
      params[t][c] = orig - options.step;
      const double down = evaluate(f, params);
      params[t][c] = orig;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][c];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      ++report.coordinates_checked;
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (!(rel <= options.tolerance)) ++report.failures;
      if (rel > report.max_relative_error || std::isnan(rel)) {
        report.max_relative_error = std::isnan(rel) ? INFINITY : rel;
        std::ostringstream os;
        os << "tensor[" << t << "] coord " << c << ": analytic " << a << ", numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = report.failures == 0;
  return report;
}

}  // namespace kvret::ag
