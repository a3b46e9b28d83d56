#include "skpn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace skpn {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& params,
                           double eps, double tol, double floor) {
  const Tensor leaf = params.detach(true);
  const Tensor loss = f(leaf);
  const Tensor repeat = f(params.detach(true));
  if (loss.item() != repeat.item()) {
    throw std::runtime_error("grad_check: loss builder is not deterministic");
  }
  const std::vector<Tensor> wrt{leaf};
  const Tensor analytic = backward(loss, wrt).front();

  const auto base = params.data();
  std::vector<double> probe(base.begin(), base.end());
  auto eval_at = [&](std::size_t i, double value) {
    probe[i] = value;
    const double out = f(Tensor::from_data(params.shape(), probe)).item();
    probe[i] = base[i];
    return out;
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double numeric = (eval_at(i, base[i] + eps) - eval_at(i, base[i] - eps)) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (rel > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = rel;
      report.worst_index = static_cast<std::int64_t>(i);
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace skpn
