#include "polarfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace polarfuse {

double fd_gradcheck(const std::function<double(const ParamStore&)>& f,
                    const ParamStore& params, const ParamStore& analytic_grads, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_gradcheck: h must be positive");

    ParamStore theta = params;
    double worst = 0.0;
    for (const auto& [name, grad_entry] : analytic_grads) {
        Tensor& value = theta.get(name);
        if (!value.same_dims(grad_entry.value))
            throw std::invalid_argument("fd_gradcheck: grad dims for '" + name +
                                        "' do not match parameter");
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + h;
            const double fp = f(theta);
            value[i] = saved - h;
            const double fm = f(theta);
            value[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("fd_gradcheck: non-finite f evaluation at '" + name +
                                         "'[" + std::to_string(i) + "]");
            const double fd = (fp - fm) / (2.0 * h);
            const double analytic = grad_entry.value[i];
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
            worst = std::max(worst, std::abs(fd - analytic) / denom);
        }
    }
    return worst;
}

}  // namespace polarfuse
