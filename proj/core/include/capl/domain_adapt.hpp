#pragma once

#include <vector>

#include "capl/losses.hpp"
#include "capl/rng.hpp"
#include "capl/tensor.hpp"

namespace capl {

/// Domain identity of one image; encoded 1 for source, 0 for target in the
/// adversarial BCE.
enum class DomainLabel { target = 0, source = 1 };

/// Binary per-pixel membership map of one nucleus class, derived from the
/// NC-branch prediction argmax. Empty masks flag classes absent from the
/// image, which are skipped by all subsequent adaptation.
struct ClassMask {
    int class_id = 0;
    Tensor mask;  // (H,W), values {0,1}
    bool is_empty = true;
};

/// Class-masked NC feature map F_pt, the per-class prototype fed to the
/// class discriminator.
struct PrototypeFeature {
    int class_id = 0;
    Tensor features;  // (C,H,W), exactly zero wherever the mask is zero
    bool is_empty = true;
};

/// Per-class binary maps from a (N+1,H,W) probability map, channel 0 being
/// background. mask_c(x) = 1 iff argmax of the channels at x equals c; ties
/// break toward the lowest channel index. Returns masks for classes 1..N.
std::vector<ClassMask> class_masks_from_prediction(const Tensor& p_nc);

PrototypeFeature prototype_features(const Tensor& f_nc, const ClassMask& m);

/// Mean binary cross entropy of discriminator outputs against a constant
/// domain label. Outputs must lie strictly inside (0,1).
LossValue adversarial_bce(const Tensor& d_out, DomainLabel label);

/// Per-pixel two-layer scoring head (C -> hidden -> 1) with a logistic
/// output. One instance per nucleus class plus one each for the NP and HV
/// branches.
class PixelDiscriminator {
public:
    static constexpr double kLeakySlope = 0.1;

    Tensor w1;  // (hidden, in_ch)
    Tensor b1;  // (hidden)
    Tensor w2;  // (hidden) second-layer weights, scalar output
    Tensor b2;  // (1)

    PixelDiscriminator() = default;
    PixelDiscriminator(std::size_t in_ch, std::size_t hidden, Rng rng);

    std::size_t in_channels() const { return w1.extent(1); }
    std::size_t hidden() const { return w1.extent(0); }

    struct Forward {
        Tensor out;    // (H,W), strictly in (0,1)
        Tensor a1;     // (hidden,H,W) post-activation cache
        Tensor input;  // (C,H,W) copy for the backward pass
    };
    Forward forward(const Tensor& features) const;

    struct Grads {
        Tensor w1, b1, w2, b2;
        Tensor features;  // (C,H,W), gradient reaching the feature extractor
    };
    Grads backward(const Forward& f, const Tensor& d_out) const;

    std::vector<Tensor*> params() { return {&w1, &b1, &w2, &b2}; }
    std::vector<const Tensor*> params() const { return {&w1, &b1, &w2, &b2}; }
};

/// Learnable per-class trade-off weights, parameterized as omega = exp(s)
/// and clamped to [1e-3, 1e3] so a runaway optimizer cannot zero out or
/// blow up the adversarial term.
struct LearnableClassWeights {
    static constexpr double kMinOmega = 1e-3;
    static constexpr double kMaxOmega = 1e3;
    static constexpr double kRegularizer = 0.01;  // lambda_w

    std::vector<double> s;  // unconstrained, one per class

    explicit LearnableClassWeights(std::size_t n_classes = 0) : s(n_classes, 0.0) {}

    double omega(std::size_t c) const;
    /// d omega / d s; zero where the clamp is active.
    double omega_grad(std::size_t c) const;
};

/// Class-aware adversarial loss:
///
///   value = sum over non-empty classes of omega_c * BCE(D_c(F_pt^c), label)
///           + lambda_w * sum over non-empty classes of s_c
///
/// Empty classes contribute exactly zero and produce no gradient anywhere.
struct ClassAwareAdvLoss {
    double value = 0.0;
    std::vector<double> adv_per_class;          // BCE_c, 0 for skipped classes
    std::vector<bool> active;                   // one flag per class
    std::vector<PixelDiscriminator::Grads> disc_grads;  // valid where active
    std::vector<double> s_grads;                // zero where inactive
    std::vector<Tensor> feature_grads;          // grad wrt F_pt^c where active
};

ClassAwareAdvLoss class_aware_adv_loss(const std::vector<PrototypeFeature>& prototypes,
                                       const std::vector<PixelDiscriminator>& discs,
                                       const LearnableClassWeights& w,
                                       DomainLabel label);

/// L_dis = L_NC^ca + L_NP^adv + L_HV^adv.
double total_discriminator_loss(double nc_ca, double np_adv, double hv_adv);

/// L_s1 = L_F + L_dis.
double stage1_loss(double supervised, double discriminator);

/// Backward half of the gradient reversal layer: forward is the identity,
/// backward returns -lambda * upstream.
Tensor gradient_reversal(const Tensor& upstream_grad, double lambda);

}  // namespace capl
