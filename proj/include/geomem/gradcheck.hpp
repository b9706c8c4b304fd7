#ifndef GEOMEM_GRADCHECK_HPP_
#define GEOMEM_GRADCHECK_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geomem/autodiff.hpp"

namespace geomem {

struct GradCheckEntry {
  std::string name;
  double worst_rel = 0.0;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_rel = 0.0;
  std::string worst_name;

  bool pass(double tol) const { return worst_rel < tol; }
};

// Central differences against gradients already stored in the parameters.
// `forward` must be a pure, deterministic function of the current parameter
// values (no tape, no gradient writes). Near-zero denominators fall back to
// an absolute comparison via the floor: central differences cannot resolve
// absolute errors below roughly ulp(f)/eps (forward roundoff divided by the
// step), which is ~1e-9 for a double-precision loss of order one at
// eps = 1e-5. The floor of 1e-5 therefore checks gradients smaller than the
// floor against an absolute tolerance of tol * floor = 1e-9, right at that
// resolution limit, instead of amplifying FD noise into a spurious relative
// error.
template <class S>
GradCheckReport gradcheck_fd(const std::function<double()>& forward,
                             const std::vector<ParameterT<S>*>& params, double eps = 1e-5,
                             double denom_floor = 1e-5) {
  GradCheckReport rep;
  for (auto* p : params) {
    GradCheckEntry e;
    e.name = p->name;
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      const S keep = p->value[i];
      p->value[i] = keep + static_cast<S>(eps);
      const double fp = forward();
      p->value[i] = keep - static_cast<S>(eps);
      const double fm = forward();
      p->value[i] = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericalError("gradcheck: non-finite value while probing " + p->name);
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = static_cast<double>(p->gradient[i]);
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), denom_floor});
      if (rel > e.worst_rel) {
        e.worst_rel = rel;
        e.worst_index = i;
        e.analytic = an;
        e.numeric = fd;
      }
    }
    if (e.worst_rel > rep.worst_rel) {
      rep.worst_rel = e.worst_rel;
      rep.worst_name = e.name;
    }
    rep.entries.push_back(e);
  }
  return rep;
}

}  // namespace geomem

#endif  // GEOMEM_GRADCHECK_HPP_
