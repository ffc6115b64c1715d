#include "capl/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

Adam::Adam(std::vector<View> views) : views_(std::move(views)) {
    m_.resize(views_.size());
    v_.resize(views_.size());
    for (std::size_t i = 0; i < views_.size(); ++i) {
        m_[i].assign(views_[i].n, 0.0);
        v_[i].assign(views_[i].n, 0.0);
    }
}

void Adam::step(const std::vector<std::vector<double>>& grads, double lr,
                const std::vector<bool>* active) {
    if (grads.size() != views_.size())
        throw std::invalid_argument("Adam: gradient registry mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, double(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, double(t_));
    for (std::size_t i = 0; i < views_.size(); ++i) {
        if (active && !(*active)[i]) continue;
        if (grads[i].size() != views_[i].n)
            throw std::invalid_argument("Adam: gradient size mismatch for " + views_[i].name);
        double* p = views_[i].data;
        double* m = m_[i].data();
        double* v = v_[i].data();
        const double* g = grads[i].data();
        for (std::size_t j = 0; j < views_[i].n; ++j) {
            m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
            v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + kEpsilon);
        }
    }
}

void Adam::restore(std::size_t t, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
    if (m.size() != views_.size() || v.size() != views_.size())
        throw std::invalid_argument("Adam: restore registry mismatch");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace capl
