#include "mpcfg/grad_check.hpp"

#include <cmath>
#include <sstream>

namespace mpcfg {

namespace {

double eval_loss(const GradLossFn& loss_fn,
                 const std::vector<std::pair<std::string, Tensor*>>& params) {
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& [name, p] : params) leaves.push_back(t.leaf(*p, false));
  return t.value(loss_fn(t, leaves)).item();
}

}  // namespace

GradCheckReport grad_check(const GradLossFn& loss_fn,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           double h, double tol) {
  // One backward pass for all analytic gradients.
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& [name, p] : params) leaves.push_back(t.leaf(*p, true));
  Var loss = loss_fn(t, leaves);
  t.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var v : leaves) analytic.push_back(t.grad(v));

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi].second;
    GradCheckEntry entry;
    entry.name = params[pi].first;
    for (long i = 0; i < p->numel(); ++i) {
      double orig = p->at(i);
      p->at(i) = orig + h;
      double lp = eval_loss(loss_fn, params);
      p->at(i) = orig - h;
      double lm = eval_loss(loss_fn, params);
      p->at(i) = orig;

      double num = (lp - lm) / (2.0 * h);
      double ana = analytic[pi].at(i);
      double mag = std::max(std::abs(ana), std::abs(num));
      double err;
      bool absolute = mag < 1e-6;
      bool ok;
      if (absolute) {
        err = std::abs(ana - num);
        ok = err <= 1e-8;
      } else {
        err = std::abs(ana - num) / mag;
        ok = err <= tol;
        report.max_rel_err = std::max(report.max_rel_err, err);
      }
      bool worse = (!ok && entry.ok) || (ok == entry.ok && err > entry.error);
      if (i == 0 || worse) {
        entry.error = err;
        entry.absolute = absolute;
        entry.coordinate = i;
        entry.analytic = ana;
        entry.numeric = num;
      }
      if (!ok) entry.ok = false;
    }
    if (!entry.ok) report.ok = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    os << (e.ok ? "ok   " : "FAIL ") << e.name << ": " << (e.absolute ? "abs" : "rel")
       << " err " << e.error << " at flat index " << e.coordinate << " (analytic "
       << e.analytic << ", numeric " << e.numeric << ")\n";
  }
  os << (ok ? "all parameters pass" : "gradient check FAILED");
  return os.str();
}

}  // namespace mpcfg
