#include "sbir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sbir {

namespace {

double eval_at(const LossFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  Tensor loss = fn(tape, inputs);
  return loss.item();
}

}  // namespace

FdReport finite_diff_check(const LossFn& loss_fn,
                           const std::vector<Tensor>& inputs, double step,
                           double tolerance) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_diff_check: step must be > 0");
  }

  // Analytic pass: watch every input on a fresh tape.
  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(inputs.size());
  for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
  Tensor loss = loss_fn(tape, watched);
  Gradients grads = tape.backward(loss);

  FdReport report;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    Tensor analytic = grads.at(watched[which]);
    std::vector<double> base = inputs[which].values();
    for (std::size_t i = 0; i < base.size(); ++i) {
      std::vector<Tensor> probe = inputs;
      std::vector<double> bumped = base;

      bumped[i] = base[i] + step;
      probe[which] = Tensor(inputs[which].shape(), bumped);
      double up = eval_at(loss_fn, probe);

      bumped[i] = base[i] - step;
      probe[which] = Tensor(inputs[which].shape(), bumped);
      double down = eval_at(loss_fn, probe);

      double numeric = (up - down) / (2.0 * step);
      double a = analytic.values()[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      double rel = std::fabs(a - numeric) / denom;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace sbir
