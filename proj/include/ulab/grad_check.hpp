#pragma once

// Finite-difference verification of the autodiff primitives, evaluated in
// double precision.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab {

// Names accepted by grad_check, e.g. "matmul", "layer_norm", "identity".
std::vector<std::string> grad_check_ops();

// Number of input tensors the named op expects.
int grad_check_arity(std::string_view op);

// Compares the reverse-mode gradient of a scalar reduction of `op` against
// central differences with step `h`. Non-scalar outputs are reduced as
// sum(out * W) with W ~ N(0, 1) (rounded to multiples of 1/64) drawn from `weight_seed`. Returns
//   max_i |analytic_i - fd_i| / max(|analytic_i|, |fd_i|, 1e-8)
// over every coordinate of every differentiable input.
double grad_check(std::string_view op, std::span<const TensorD> inputs, double h,
                  std::uint64_t weight_seed = 0);

// Random inputs of a representative shape for `op`, for seed sweeps.
std::vector<TensorD> grad_check_inputs(std::string_view op, std::uint64_t seed);

}  // namespace ulab
