#include "drift/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace drift::nn {

namespace {

double evaluate(const LossBuilder& loss, ParamStore<double>& params) {
  Tape<double> tape;
  tape.set_grl_transparent(true);
  return tape.value(loss(tape, params)).item();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& loss, ParamStore<double>& params,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  Gradients<double> analytic;
  {
    Tape<double> tape;
    tape.set_grl_transparent(true);
    Var root = loss(tape, params);
    report.grl_exempted = tape.contains_grl();
    analytic = tape.backward(root);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    for (std::size_t k = 0; k < params[p].value.size(); ++k) coords.emplace_back(p, k);
  }
  if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opts.max_coords);
  }

  for (auto [p, k] : coords) {
    double& x = params[p].value[k];
    const double orig = x;
    const double h = opts.step * std::max(std::abs(orig), 1.0);
    x = orig + h;
    const double fp = evaluate(loss, params);
    x = orig - h;
    const double fm = evaluate(loss, params);
    x = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.by_param.empty() ? 0.0 : analytic[p][k];
    const double abs_err = std::abs(a - numeric);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), opts.scale_floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err >= report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_param = p;
      report.worst_index = k;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Var(Tape<double>&, Var)>& f,
                           const Tensor<double>& point, const GradCheckOptions& opts) {
  ParamStore<double> store;
  store.add("x", point);
  return grad_check(
      [&f](Tape<double>& tape, ParamStore<double>& ps) { return f(tape, tape.parameter(ps, 0)); },
      store, opts);
}

}  // namespace drift::nn
