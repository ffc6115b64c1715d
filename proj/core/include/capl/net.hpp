#pragma once

#include <string>
#include <vector>

#include "capl/rng.hpp"
#include "capl/tensor.hpp"

namespace capl {

/// 3x3 convolution, zero padding 1, stride 1; spatial size is preserved.
/// Forward and backward are hand-written; no autograd anywhere.
struct Conv2D {
    Tensor w;  // (out_ch, in_ch, 3, 3)
    Tensor b;  // (out_ch)

    Conv2D() = default;
    Conv2D(std::size_t in_ch, std::size_t out_ch, Rng rng);

    std::size_t in_channels() const { return w.extent(1); }
    std::size_t out_channels() const { return w.extent(0); }

    Tensor forward(const Tensor& x) const;

    struct Grads {
        Tensor w, b, x;
    };
    /// dy is the gradient at the output; x must be the forward input.
    Grads backward(const Tensor& x, const Tensor& dy, bool need_dx = true) const;
};

inline constexpr double kNetLeakySlope = 0.1;

Tensor leaky_relu(const Tensor& z, double slope = kNetLeakySlope);
Tensor leaky_relu_backward(const Tensor& z, const Tensor& da, double slope = kNetLeakySlope);

/// Channelwise softmax per pixel on a (C,H,W) map, max-subtracted.
Tensor softmax_channels(const Tensor& z);
/// Given probabilities p and dL/dp, returns dL/dz.
Tensor softmax_channels_backward(const Tensor& p, const Tensor& dp);

Tensor tanh_map(const Tensor& z);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);

/// Prediction maps of one image plus the pre-head decoder features the
/// discriminators and the prototype construction consume.
struct BranchOutputs {
    Tensor np_prob;  // (2,H,W), rows sum to 1
    Tensor hv;       // (2,H,W), in (-1,1)
    Tensor nc_prob;  // (7,H,W), rows sum to 1
    Tensor np_feat;  // (8,H,W)
    Tensor hv_feat;  // (8,H,W)
    Tensor nc_feat;  // (8,H,W)  F_nc
};

/// Desk-scale three-branch network: a shared two-conv encoder (3->8->16)
/// and three two-conv decoder heads, NP (2-channel softmax), HV (2-channel
/// tanh) and NC (7-channel softmax including background).
class TinyHoverNet {
public:
    static constexpr std::size_t kEnc1 = 8, kEnc2 = 16, kDec = 8;
    static constexpr std::size_t kNpOut = 2, kHvOut = 2, kNcOut = 7;

    Conv2D enc1, enc2;
    Conv2D np_a, np_b;
    Conv2D hv_a, hv_b;
    Conv2D nc_a, nc_b;

    TinyHoverNet() = default;
    explicit TinyHoverNet(Rng rng);

    struct Cache {
        Tensor image;
        Tensor z1, a1, z2, a2;
        Tensor np_za, hv_za, nc_za;
        BranchOutputs out;
    };

    BranchOutputs forward(const Tensor& image) const;
    Cache forward_cached(const Tensor& image) const;

    /// Upstream gradients for the backward pass. Prediction gradients are
    /// with respect to the post-activation maps; feature gradients (from
    /// adversarial terms, already sign-flipped by the caller when reversal
    /// applies) may be empty tensors.
    struct UpstreamGrads {
        Tensor d_np_prob, d_hv, d_nc_prob;
        Tensor d_np_feat, d_hv_feat, d_nc_feat;
    };

    /// Parameter gradients aligned with params(); index order is stable.
    std::vector<Tensor> backward(const Cache& cache, const UpstreamGrads& up) const;

    struct ParamRef {
        std::string name;
        Tensor* tensor;
    };
    std::vector<ParamRef> params();
    std::vector<std::pair<std::string, const Tensor*>> params() const;

    std::size_t param_count() const;
};

}  // namespace capl
