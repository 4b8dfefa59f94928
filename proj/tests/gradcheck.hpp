#ifndef SIVS_TESTS_GRADCHECK_HPP
#define SIVS_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "sivs/tensor.hpp"

// Finite-difference gradient oracle. `build` re-evaluates the scalar loss
// from the current parameter values; it is called once under a live tape for
// the analytic gradients and then twice per parameter element for central
// differences (no tape active, so those calls are pure forward passes).
// Errors are relative for large gradients and absolute below magnitude 1.

namespace sivs::testing {

template <typename BuildLoss>
double max_grad_err(BuildLoss build, const std::vector<Tensor<double>*>& params,
                    double h = 1e-5) {
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    for (auto* p : params) p->zero_grad();
    Tensor<double> loss = build();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad_vec());

  double max_err = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>* p = params[pi];
    for (std::int64_t i = 0; i < p->size(); ++i) {
      const double orig = p->data()[i];
      p->data()[i] = orig + h;
      const double lp = build().value();
      p->data()[i] = orig - h;
      const double lm = build().value();
      p->data()[i] = orig;
      const double num = (lp - lm) / (2 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace sivs::testing

#endif
