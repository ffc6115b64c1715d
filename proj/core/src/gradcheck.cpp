#include "capl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "capl/domain_adapt.hpp"
#include "capl/losses.hpp"
#include "capl/pseudo_label.hpp"
#include "capl/rng.hpp"
#include "capl/trainer.hpp"

namespace capl {

namespace {

/// Worst relative error between an analytic gradient tensor and central
/// finite differences of `value_fn` over every element of `pred`.
/// Coordinates whose probe interval straddles a kink are skipped (fd_probe).
double fd_check_tensor(Tensor& pred, const Tensor& analytic,
                       const std::function<double()>& value_fn) {
    const double center = value_fn();
    double worst = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double keep = pred[i];
        pred[i] = keep + kFdStep;
        const double plus = value_fn();
        pred[i] = keep - kFdStep;
        const double minus = value_fn();
        pred[i] = keep;
        const auto probe = fd_probe(plus, minus, center, kFdStep, analytic[i]);
        if (probe.kinked) continue;
        worst = std::max(worst, relative_error(analytic[i], probe.central));
    }
    return worst;
}

/// Scalar coordinate variant of fd_check_tensor.
double fd_check_scalar(double& coord, double analytic, const std::function<double()>& value_fn) {
    const double center = value_fn();
    const double keep = coord;
    coord = keep + kFdStep;
    const double plus = value_fn();
    coord = keep - kFdStep;
    const double minus = value_fn();
    coord = keep;
    const auto probe = fd_probe(plus, minus, center, kFdStep, analytic);
    return probe.kinked ? 0.0 : relative_error(analytic, probe.central);
}

Tensor random_uniform(const std::vector<std::size_t>& shape, Rng& rng, double lo, double hi) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Tensor random_softmax(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Tensor z({c, h, w});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.next_normal();
    return softmax_channels(z);
}

Tensor random_onehot(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Tensor t({c, h, w});
    const std::size_t plane = h * w;
    for (std::size_t px = 0; px < plane; ++px)
        t[rng.next_below(c) * plane + px] = 1.0;
    return t;
}

double check_ce(Rng rng, bool) {
    Tensor pred = random_softmax(3, 5, 5, rng);
    const Tensor target = random_onehot(3, 5, 5, rng);
    const auto lv = cross_entropy(pred, target);
    return fd_check_tensor(pred, lv.grad,
                           [&] { return detail::cross_entropy_value(pred, target); });
}

double check_dice(Rng rng, bool inject_sign_bug) {
    Tensor pred = random_uniform({2, 5, 5}, rng, 0.0, 1.0);
    Tensor target({2, 5, 5});
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.next_double() < 0.5 ? 1.0 : 0.0;
    auto lv = dice_loss(pred, target);
    if (inject_sign_bug) lv.grad *= -1.0;
    return fd_check_tensor(pred, lv.grad, [&] { return dice_loss(pred, target).value; });
}

double check_mse(Rng rng, bool) {
    Tensor pred = random_uniform({3, 4, 4}, rng, -1.0, 1.0);
    const Tensor target = random_uniform({3, 4, 4}, rng, -1.0, 1.0);
    const auto lv = mse_loss(pred, target);
    return fd_check_tensor(pred, lv.grad, [&] { return mse_loss(pred, target).value; });
}

double check_hv(Rng rng, bool) {
    Tensor pred = random_uniform({2, 6, 6}, rng, -1.0, 1.0);
    const Tensor target = random_uniform({2, 6, 6}, rng, -1.0, 1.0);
    const bool masked = rng.next_double() < 0.5;
    Tensor mask({6, 6});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.next_double() < 0.6 ? 1.0 : 0.0;
    const Tensor* m = masked ? &mask : nullptr;
    const auto lv = hv_gradient_loss(pred, target, m);
    return fd_check_tensor(pred, lv.grad,
                           [&] { return hv_gradient_loss(pred, target, m).value; });
}

double check_adv_bce(Rng rng, bool) {
    Tensor d_out = random_uniform({4, 4}, rng, 0.05, 0.95);
    const DomainLabel label = rng.next_double() < 0.5 ? DomainLabel::source : DomainLabel::target;
    const auto lv = adversarial_bce(d_out, label);
    return fd_check_tensor(d_out, lv.grad, [&] { return adversarial_bce(d_out, label).value; });
}

double check_nc_ca(Rng rng, bool) {
    constexpr std::size_t kC = 8, kH = 5, kW = 5;
    std::vector<PixelDiscriminator> discs;
    for (int c = 0; c < kNumClasses; ++c)
        discs.emplace_back(kC, 16, rng.split(10 + std::uint64_t(c)));
    LearnableClassWeights w(kNumClasses);
    for (auto& s : w.s) s = 0.5 * rng.next_normal();
    const DomainLabel label = rng.next_double() < 0.5 ? DomainLabel::source : DomainLabel::target;

    const Tensor f_nc = random_uniform({kC, kH, kW}, rng, -1.0, 1.0);
    std::vector<ClassMask> masks(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
        masks[std::size_t(c)].class_id = c + 1;
        masks[std::size_t(c)].mask = Tensor({kH, kW});
        if (rng.next_double() < 0.3) continue;  // leave this class empty
        bool any = false;
        for (std::size_t i = 0; i < kH * kW; ++i)
            if (rng.next_double() < 0.4) {
                masks[std::size_t(c)].mask[i] = 1.0;
                any = true;
            }
        masks[std::size_t(c)].is_empty = !any;
    }
    std::vector<PrototypeFeature> protos;
    for (const auto& m : masks) protos.push_back(prototype_features(f_nc, m));

    const auto loss = class_aware_adv_loss(protos, discs, w, label);
    auto value_fn = [&] { return class_aware_adv_loss(protos, discs, w, label).value; };

    double worst = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        auto& proto = protos[std::size_t(c)];
        if (proto.is_empty) {
            // skip rule: perturbing an empty class's weight must not matter
            worst = std::max(worst, fd_check_scalar(w.s[std::size_t(c)], 0.0, value_fn));
            continue;
        }
        worst = std::max(worst, fd_check_tensor(proto.features,
                                                loss.feature_grads[std::size_t(c)], value_fn));
        worst = std::max(worst, fd_check_scalar(w.s[std::size_t(c)],
                                                loss.s_grads[std::size_t(c)], value_fn));
        const auto& dg = loss.disc_grads[std::size_t(c)];
        Tensor* params[] = {&discs[std::size_t(c)].w1, &discs[std::size_t(c)].b1,
                            &discs[std::size_t(c)].w2, &discs[std::size_t(c)].b2};
        const Tensor* grads[] = {&dg.w1, &dg.b1, &dg.w2, &dg.b2};
        for (int k = 0; k < 4; ++k)
            worst = std::max(worst, fd_check_tensor(*params[k], *grads[k], value_fn));
    }
    return worst;
}

/// Small valid supervised sample assembled directly (the generator's minimum
/// patch size is far larger than gradcheck needs).
SyntheticSample random_mini_sample(Rng& rng, std::size_t size) {
    SyntheticSample s;
    s.image = random_uniform({3, size, size}, rng, 0.0, 1.0);
    s.instances = InstanceLabelMap(size, size);
    s.classes = ClassLabelMap(size, size);
    // a couple of random rectangles as instances
    const std::size_t n_inst = 1 + rng.next_below(2);
    for (std::size_t k = 0; k < n_inst; ++k) {
        const std::size_t r0 = rng.next_below(size - 2), c0 = rng.next_below(size - 2);
        const std::size_t rh = 2 + rng.next_below(2), cw = 2 + rng.next_below(2);
        const std::uint32_t cls = std::uint32_t(1 + rng.next_below(kNumClasses));
        for (std::size_t r = r0; r < std::min(size, r0 + rh); ++r)
            for (std::size_t c = c0; c < std::min(size, c0 + cw); ++c) {
                s.instances.at(r, c) = std::uint32_t(k + 1);
                s.classes.at(r, c) = cls;
            }
    }
    s.instances = relabel_canonical(s.instances);
    s.hv_gt = hv_target_from_instances(s.instances);
    s.np_gt = Tensor({2, size, size});
    for (std::size_t i = 0; i < size * size; ++i) {
        const bool fg = s.instances.labels[i] > 0;
        s.np_gt[i] = fg ? 0.0 : 1.0;
        s.np_gt[size * size + i] = fg ? 1.0 : 0.0;
    }
    return s;
}

double check_stage1(Rng rng, bool) {
    ModelState state = ModelState::init(rng.next_u64());
    Rng sample_rng = rng.split(1);
    const SyntheticSample src = random_mini_sample(sample_rng, 6);
    const SyntheticSample tgt = random_mini_sample(sample_rng, 6);
    const auto report = backward_check(state, src, tgt, CheckedLoss::stage1,
                                       AdaptMode::class_aware, 1.0,
                                       /*params_per_view=*/4, rng.split(2));
    return report.max_rel_error;
}

double check_lp(Rng rng, bool) {
    Rng sample_rng = rng.split(1);
    const SyntheticSample s = random_mini_sample(sample_rng, 6);
    const Tensor stage1_hv = random_uniform({2, 6, 6}, rng, -1.0, 1.0);
    const PseudoLabelSet pl = build_pseudo_labels(stage1_hv, s.instances, 1);
    Tensor pred = random_uniform({2, 6, 6}, rng, -1.0, 1.0);
    const auto lv = prototype_loss(pred, pl);
    return fd_check_tensor(pred, lv.grad, [&] { return prototype_loss(pred, pl).value; });
}

}  // namespace

std::vector<LossCheckResult> run_gradcheck(const GradCheckOptions& opts) {
    using CheckFn = double (*)(Rng, bool);
    struct Entry {
        const char* name;
        CheckFn fn;
    };
    const Entry entries[] = {
        {"ce", check_ce},       {"dice", check_dice}, {"mse", check_mse},
        {"hv", check_hv},       {"adv_bce", check_adv_bce}, {"nc_ca", check_nc_ca},
        {"stage1", check_stage1}, {"lp", check_lp},
    };

    std::vector<LossCheckResult> results;
    for (const auto& e : entries) {
        if (!opts.losses.empty() &&
            std::find(opts.losses.begin(), opts.losses.end(), e.name) == opts.losses.end())
            continue;
        LossCheckResult r;
        r.loss = e.name;
        std::uint64_t seed = opts.base_seed;
        for (const char* p = e.name; *p; ++p)
            seed = seed * 1099511628211ULL ^ std::uint64_t(*p);  // FNV-style mix
        Rng root(seed);
        for (std::size_t s = 0; s < opts.seeds; ++s)
            r.max_rel_error = std::max(
                r.max_rel_error,
                e.fn(root.split(s), opts.inject_dice_sign_bug && r.loss == "dice"));
        r.pass = r.max_rel_error < kGradTolerance;
        results.push_back(std::move(r));
    }
    if (results.empty()) throw std::invalid_argument("gradcheck: no matching losses");
    return results;
}

bool gradcheck_all_passed(const std::vector<LossCheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const LossCheckResult& r) { return r.pass; });
}

}  // namespace capl
