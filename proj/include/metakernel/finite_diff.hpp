#pragma once

#include <functional>

#include "metakernel/tensor.hpp"

namespace mk {

/// Max over coordinates of |g_analytic - g_fd| / max(1, |g_fd|), where g_fd
/// is the central difference of f and g_analytic comes from one backward pass.
/// f must build a scalar on the active tape from its argument. Clears the
/// active tape. eps must lie in (0, 1e-2].
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps);

/// Same check over every coordinate of several parameter tensors; f() closes
/// over the parameters and rebuilds the scalar loss on each call.
double finite_diff_check_params(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params, double eps);

}  // namespace mk
