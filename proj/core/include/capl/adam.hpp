#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace capl {

/// Adam over a fixed registry of parameter views. Views alias storage owned
/// elsewhere (network/discriminator tensors, learnable weights); the
/// optimizer owns only its moment buffers.
class Adam {
public:
    struct View {
        std::string name;
        double* data = nullptr;
        std::size_t n = 0;
    };

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    Adam() = default;
    explicit Adam(std::vector<View> views);

    /// One update with gradients aligned to the view registry. Views whose
    /// entry in `active` is false are skipped entirely: no parameter,
    /// moment, or counter interaction (frozen parameters stay bit-identical).
    void step(const std::vector<std::vector<double>>& grads, double lr,
              const std::vector<bool>* active = nullptr);

    std::size_t step_count() const { return t_; }
    const std::vector<View>& views() const { return views_; }
    const std::vector<double>& moment1(std::size_t view) const { return m_[view]; }
    const std::vector<double>& moment2(std::size_t view) const { return v_[view]; }
    void restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    std::vector<View> views_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace capl
