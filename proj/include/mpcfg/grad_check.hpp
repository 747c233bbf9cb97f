#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mpcfg/tape.hpp"

namespace mpcfg {

struct GradCheckEntry {
  std::string name;
  double error = 0.0;     // relative error, or absolute error when `absolute`
  bool absolute = false;  // analytic magnitude < 1e-6 at the worst coordinate
  long coordinate = -1;   // flat index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool ok = true;
  double max_rel_err = 0.0;  // over coordinates compared relatively

  std::string summary() const;
};

// Builds the scalar loss on the given tape. The leaf handles correspond
// one-to-one (and in order) to the parameters passed to grad_check; the
// callback must route all parameter usage through them.
using GradLossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central-difference gradient verification. For each parameter
// coordinate: analytic gradient from one backward pass vs
// (f(x+h) - f(x-h)) / 2h. Comparison is relative against
// max(|analytic|, |numeric|); when both magnitudes are below 1e-6 the
// absolute difference is checked against 1e-8 instead (avoids 0/0).
// Parameters are restored to their original values afterwards.
GradCheckReport grad_check(const GradLossFn& loss_fn,
                           const std::vector<std::pair<std::string, Tensor*>>& params,
                           double h = 1e-4, double tol = 1e-4);

}  // namespace mpcfg
