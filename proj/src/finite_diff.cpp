#include "metakernel/finite_diff.hpp"

#include <cmath>
#include <vector>

#include "metakernel/autodiff.hpp"

namespace mk {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0) || eps > 1e-2) {
    throw ValueError("finite_diff: eps must lie in (0, 1e-2]");
  }
}

double fd_error(const std::function<double()>& eval, Tensor param,
                std::span<const double> analytic, double eps) {
  double worst = 0.0;
  auto vals = param.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    vals[i] = saved + eps;
    const double up = eval();
    vals[i] = saved - eps;
    const double down = eval();
    vals[i] = saved;
    const double g_fd = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - g_fd) / std::max(1.0, std::abs(g_fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x, double eps) {
  check_eps(eps);
  Tensor probe = x.clone();
  probe.set_requires_grad(true);

  Tape::active().clear();
  Tensor loss = f(probe);
  backward(loss);
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());
  Tape::active().clear();

  NoGradGuard no_grad;
  auto eval = [&] { return f(probe).value(); };
  return fd_error(eval, probe, analytic, eps);
}

double finite_diff_check_params(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& params, double eps) {
  check_eps(eps);
  Tape::active().clear();
  for (Tensor p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
  Tape::active().clear();

  NoGradGuard no_grad;
  auto eval = [&] { return f().value(); };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    worst = std::max(worst, fd_error(eval, params[k], analytic[k], eps));
  }
  return worst;
}

}  // namespace mk
