#ifndef LORB_GRADCHECK_HPP_
#define LORB_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "lorb/tensor.hpp"

namespace lorb {

// A scalar-valued function of a set of tensors. Must rebuild its graph from
// the current tensor values on every call and be deterministic.
using ScalarFn =
    std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Central finite differences against tape gradients. Perturbs every element
// of every requires_grad input by +/-eps and returns the worst relative
// error, with the denominator floored at 1 so near-zero gradients are
// compared absolutely.
inline double check_gradients(const ScalarFn& f, std::vector<Tensor> inputs,
                              double eps = 1e-5) {
  for (Tensor& t : inputs) t.clear_grad();
  Tape tape;
  Tensor out = f(tape, inputs);
  tape.backward(out);

  // Snapshot analytic gradients; an absent grad on an unused input is zero.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.requires_grad() && t.has_grad()) {
      analytic.push_back(t.grad());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& t = inputs[i];
    if (!t.requires_grad()) continue;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double saved = t.data()[j];
      t.data()[j] = saved + eps;
      Tape tp(false);
      const double fp = f(tp, inputs).item();
      t.data()[j] = saved - eps;
      Tape tm(false);
      const double fm = f(tm, inputs).item();
      t.data()[j] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace lorb

#endif  // LORB_GRADCHECK_HPP_
