#pragma once

// Central finite-difference gradient checker shared by the unit and
// acceptance suites. Perturbs every element of every tensor; the loss
// callback must be a pure function of the parameter store.

#include <functional>
#include <string>

#include "finchat/tinylm.hpp"

namespace finchat::testing {

struct FdReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::int64_t checked_elements = 0;
};

inline FdReport finite_difference_check(ParamStore& params,
                                        const std::function<double(const ParamStore&)>& loss_of,
                                        const ParamStore& analytic, double h = 1e-4) {
    FdReport report;
    for (const std::string& name : params.names()) {
        Mat& tensor = params.at(name);
        const Mat& grad = analytic.at(name);
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            const double saved = tensor.data()[i];
            tensor.data()[i] = saved + h;
            const double f_plus = loss_of(params);
            tensor.data()[i] = saved - h;
            const double f_minus = loss_of(params);
            tensor.data()[i] = saved;

            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double a = grad.data()[i];
            const double rel = std::abs(a - fd) / std::max(1e-6, std::abs(a) + std::abs(fd));
            ++report.checked_elements;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_tensor = name;
            }
        }
    }
    return report;
}

}  // namespace finchat::testing
