#include "h4w/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace h4w::ad {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, false));
  return f(tape, leaves).item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opts) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
  Var out = f(tape, leaves);
  tape.backward(out);
  const double floor = opts.noise_factor * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(out.item())) / opts.h;

  GradCheckReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const std::vector<double> analytic = tape.grad(leaves[b]);
    const std::size_t n = inputs[b].size();
    std::size_t count = opts.max_entries_per_block == 0 ? n : std::min(n, opts.max_entries_per_block);
    BlockReport br;
    double max_diff = 0.0, max_num = 0.0, max_ana = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = count == n ? k : (k * n) / count;
      const double orig = probe[b][i];
      auto at = [&](double step) {
        probe[b][i] = orig + step;
        const double v = evaluate(f, probe);
        probe[b][i] = orig;
        return v;
      };
      const double h = opts.h;
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_num = std::max(max_num, std::abs(numeric));
      max_ana = std::max(max_ana, std::abs(analytic[i]));
    }
    const double denom = std::max({max_num, max_ana, floor, 1e-300});
    br.rel_error = (max_num == 0.0 && max_ana == 0.0) ? 0.0 : max_diff / denom;
    br.max_abs_analytic = max_ana;
    br.probed = count;
    report.max_rel_error = std::max(report.max_rel_error, br.rel_error);
    report.blocks.push_back(br);
  }
  report.passed = report.max_rel_error < opts.tol;
  return report;
}

std::string describe(const GradCheckReport& report) {
  std::ostringstream os;
  os << (report.passed ? "pass" : "FAIL") << " max_rel=" << report.max_rel_error;
  for (std::size_t b = 0; b < report.blocks.size(); ++b)
    os << " [" << b << ": rel=" << report.blocks[b].rel_error << " n=" << report.blocks[b].probed << "]";
  return os.str();
}

}  // namespace h4w::ad
