#include "capl/domain_adapt.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

std::vector<ClassMask> class_masks_from_prediction(const Tensor& p_nc) {
    if (p_nc.rank() != 3 || p_nc.extent(0) < 2)
        throw std::invalid_argument("class_masks_from_prediction: expected (N+1,H,W) input");
    const std::size_t channels = p_nc.extent(0);
    const std::size_t h = p_nc.extent(1), w = p_nc.extent(2);
    const std::size_t plane = h * w;

    for (std::size_t px = 0; px < plane; ++px) {
        double s = 0.0;
        for (std::size_t c = 0; c < channels; ++c) s += p_nc[c * plane + px];
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("class_masks_from_prediction: input not normalized");
    }

    std::vector<ClassMask> masks(channels - 1);
    for (std::size_t c = 1; c < channels; ++c) {
        masks[c - 1].class_id = int(c);
        masks[c - 1].mask = Tensor({h, w});
    }
    for (std::size_t px = 0; px < plane; ++px) {
        std::size_t best = 0;
        double best_v = p_nc[px];
        for (std::size_t c = 1; c < channels; ++c) {
            double v = p_nc[c * plane + px];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        if (best > 0) {
            masks[best - 1].mask[px] = 1.0;
            masks[best - 1].is_empty = false;
        }
    }
    return masks;
}

PrototypeFeature prototype_features(const Tensor& f_nc, const ClassMask& m) {
    PrototypeFeature out;
    out.class_id = m.class_id;
    out.is_empty = m.is_empty;
    out.features = hadamard(f_nc, m.mask);
    return out;
}

LossValue adversarial_bce(const Tensor& d_out, DomainLabel label) {
    const double y = label == DomainLabel::source ? 1.0 : 0.0;
    const double n = double(d_out.size());
    LossValue out;
    out.grad = Tensor(d_out.shape());
    double acc = 0.0;
    for (std::size_t i = 0; i < d_out.size(); ++i) {
        double p = d_out[i];
        if (!(p > 0.0 && p < 1.0))
            throw std::invalid_argument("adversarial_bce: discriminator output outside (0,1)");
        acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        out.grad[i] = -(y / p - (1.0 - y) / (1.0 - p)) / n;
    }
    out.value = acc / n;
    return out;
}

PixelDiscriminator::PixelDiscriminator(std::size_t in_ch, std::size_t hidden, Rng rng) {
    w1 = Tensor({hidden, in_ch});
    b1 = Tensor({hidden});
    w2 = Tensor({hidden});
    b2 = Tensor({1});
    const double scale1 = std::sqrt(2.0 / double(in_ch));
    const double scale2 = std::sqrt(2.0 / double(hidden));
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] = rng.next_normal() * scale1;
    for (std::size_t i = 0; i < w2.size(); ++i) w2[i] = rng.next_normal() * scale2;
}

PixelDiscriminator::Forward PixelDiscriminator::forward(const Tensor& features) const {
    if (features.rank() != 3 || features.extent(0) != in_channels())
        throw std::invalid_argument("PixelDiscriminator: feature channel mismatch");
    const std::size_t c_in = in_channels(), hid = hidden();
    const std::size_t h = features.extent(1), w = features.extent(2);
    const std::size_t plane = h * w;

    Forward f;
    f.input = features;
    f.a1 = Tensor({hid, h, w});
    f.out = Tensor({h, w});
    for (std::size_t px = 0; px < plane; ++px) {
        double z2 = b2[0];
        for (std::size_t j = 0; j < hid; ++j) {
            double z1 = b1[j];
            for (std::size_t c = 0; c < c_in; ++c)
                z1 += w1[j * c_in + c] * features[c * plane + px];
            double a = z1 > 0.0 ? z1 : kLeakySlope * z1;
            f.a1[j * plane + px] = a;
            z2 += w2[j] * a;
        }
        f.out[px] = 1.0 / (1.0 + std::exp(-z2));
    }
    return f;
}

PixelDiscriminator::Grads PixelDiscriminator::backward(const Forward& f,
                                                       const Tensor& d_out) const {
    const std::size_t c_in = in_channels(), hid = hidden();
    const std::size_t plane = f.out.size();
    if (d_out.size() != plane)
        throw std::invalid_argument("PixelDiscriminator: upstream gradient shape mismatch");

    Grads g;
    g.w1 = Tensor(w1.shape());
    g.b1 = Tensor(b1.shape());
    g.w2 = Tensor(w2.shape());
    g.b2 = Tensor(b2.shape());
    g.features = Tensor(f.input.shape());

    for (std::size_t px = 0; px < plane; ++px) {
        const double p = f.out[px];
        const double dz2 = d_out[px] * p * (1.0 - p);
        if (dz2 == 0.0) continue;
        g.b2[0] += dz2;
        for (std::size_t j = 0; j < hid; ++j) {
            const double a = f.a1[j * plane + px];
            g.w2[j] += dz2 * a;
            double dz1 = dz2 * w2[j];
            if (a <= 0.0) dz1 *= kLeakySlope;  // a and z1 share sign for slope > 0
            g.b1[j] += dz1;
            for (std::size_t c = 0; c < c_in; ++c) {
                g.w1[j * c_in + c] += dz1 * f.input[c * plane + px];
                g.features[c * plane + px] += dz1 * w1[j * c_in + c];
            }
        }
    }
    return g;
}

double LearnableClassWeights::omega(std::size_t c) const {
    double w = std::exp(s.at(c));
    if (w < kMinOmega) return kMinOmega;
    if (w > kMaxOmega) return kMaxOmega;
    return w;
}

double LearnableClassWeights::omega_grad(std::size_t c) const {
    double w = std::exp(s.at(c));
    return (w < kMinOmega || w > kMaxOmega) ? 0.0 : w;
}

ClassAwareAdvLoss class_aware_adv_loss(const std::vector<PrototypeFeature>& prototypes,
                                       const std::vector<PixelDiscriminator>& discs,
                                       const LearnableClassWeights& w,
                                       DomainLabel label) {
    const std::size_t n = prototypes.size();
    if (discs.size() != n || w.s.size() != n)
        throw std::invalid_argument("class_aware_adv_loss: discriminator/class count mismatch");

    ClassAwareAdvLoss out;
    out.adv_per_class.assign(n, 0.0);
    out.active.assign(n, false);
    out.disc_grads.resize(n);
    out.s_grads.assign(n, 0.0);
    out.feature_grads.resize(n);

    for (std::size_t c = 0; c < n; ++c) {
        if (prototypes[c].is_empty) continue;  // skip rule: absent classes never train
        out.active[c] = true;

        auto fwd = discs[c].forward(prototypes[c].features);
        auto bce = adversarial_bce(fwd.out, label);
        out.adv_per_class[c] = bce.value;

        const double omega = w.omega(c);
        out.value += omega * bce.value + LearnableClassWeights::kRegularizer * w.s[c];
        out.s_grads[c] = bce.value * w.omega_grad(c) + LearnableClassWeights::kRegularizer;

        bce.grad *= omega;
        out.disc_grads[c] = discs[c].backward(fwd, bce.grad);
        out.feature_grads[c] = std::move(out.disc_grads[c].features);
        out.disc_grads[c].features = Tensor();
    }
    return out;
}

double total_discriminator_loss(double nc_ca, double np_adv, double hv_adv) {
    return nc_ca + np_adv + hv_adv;
}

double stage1_loss(double supervised, double discriminator) {
    return supervised + discriminator;
}

Tensor gradient_reversal(const Tensor& upstream_grad, double lambda) {
    return upstream_grad * (-lambda);
}

}  // namespace capl
