#include "peftbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace peftbench {

double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps, std::size_t max_entries)
{
    if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
    Tensor probe(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    Tensor loss = f(probe);
    if (loss.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
    backward(loss);
    std::vector<double> analytic(x.numel(), 0.0);
    if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

    std::size_t n = x.numel();
    std::size_t step = (max_entries == 0 || max_entries >= n) ? 1 : n / max_entries;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += step) {
        Tensor plus(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
        Tensor minus = plus.clone();
        plus.mutable_values()[i] += eps;
        minus.mutable_values()[i] -= eps;
        double numeric = (f(plus).item() - f(minus).item()) / (2.0 * eps);
        double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace peftbench
