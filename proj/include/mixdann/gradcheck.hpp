#pragma once

#include <functional>

#include "mixdann/tensor.hpp"

namespace mixdann {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h = 1e-5);

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor). The floor keeps an all-zero
/// pair from dividing by zero.
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace mixdann
