#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/tensor.hpp"

namespace dreamtext {

// Adam with bias correction. The moment buffers are keyed by position in the
// parameter list, so the list order must stay fixed for the lifetime of the
// state (checkpoints rely on this too).
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params, double beta1 = 0.9,
                                 double beta2 = 0.999, double eps = 1e-8) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.eps = eps;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const Tensor& p : params) {
        st.m.emplace_back(p.data().size(), 0.0);
        st.v.emplace_back(p.data().size(), 0.0);
    }
    return st;
}

inline void adam_step(std::vector<Tensor>& params, AdamState& st, double lr) {
    if (params.size() != st.m.size())
        throw std::invalid_argument("adam_step: state holds " + std::to_string(st.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    st.step_count += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = params[p];
        if (st.m[p].size() != param.data().size())
            throw std::invalid_argument("adam_step: parameter " + std::to_string(p) +
                                        " size changed since state creation");
        const std::vector<double>& g = param.grad();
        std::vector<double>& m = st.m[p];
        std::vector<double>& v = st.v[p];
        double* w = param.data().data();
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// Central-difference gradient of a scalar-valued function. This is the test
// oracle for backward(): it only ever evaluates f forward, so it stays
// independent of the tape machinery it is used to check.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Tensor probe = x.detach();
    Tensor grad = Tensor::zeros(x.shape());
    for (int i = 0; i < probe.numel(); ++i) {
        const double orig = probe.data()[static_cast<std::size_t>(i)];
        probe.data()[static_cast<std::size_t>(i)] = orig + h;
        const double fp = f(probe);
        probe.data()[static_cast<std::size_t>(i)] = orig - h;
        const double fm = f(probe);
        probe.data()[static_cast<std::size_t>(i)] = orig;
        grad.data()[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace dreamtext
