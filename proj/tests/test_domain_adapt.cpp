#include <doctest.h>

#include <cmath>

#include "capl/adam.hpp"
#include "capl/domain_adapt.hpp"
#include "capl/gradcheck.hpp"
#include "capl/net.hpp"
#include "capl/synth_data.hpp"

using namespace capl;

namespace {

double oracle_bce(const Tensor& p, double y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        acc += y * std::log(p[i]) + (1.0 - y) * std::log(1.0 - p[i]);
    return -acc / double(p.size());
}

Tensor probs_from_logits(std::size_t c, std::size_t h, std::size_t w,
                         const std::vector<double>& logits) {
    Tensor z({c, h, w}, logits);
    return softmax_channels(z);
}

}  // namespace

TEST_CASE("class masks from one-hot-like predictions") {
    // class 2 dominant everywhere on a 2x2 map with background + 3 classes
    Tensor z({4, 2, 2});
    for (std::size_t px = 0; px < 4; ++px) z[2 * 4 + px] = 8.0;
    const Tensor p = softmax_channels(z);
    const auto masks = class_masks_from_prediction(p);
    REQUIRE(masks.size() == 3);
    CHECK_FALSE(masks[1].is_empty);
    CHECK(masks[1].mask.sum() == 4.0);
    CHECK(masks[0].is_empty);
    CHECK(masks[2].is_empty);
}

TEST_CASE("background-dominant prediction leaves every class empty") {
    Tensor z({3, 2, 2});
    for (std::size_t px = 0; px < 4; ++px) z[px] = 5.0;
    const auto masks = class_masks_from_prediction(softmax_channels(z));
    for (const auto& m : masks) {
        CHECK(m.is_empty);
        CHECK(m.mask.sum() == 0.0);
    }
}

TEST_CASE("per-pixel argmax with hand-placed classes") {
    // 2x2 map, channels bg + 3 classes; argmaxes bg, 1, 1, 3
    Tensor z({4, 2, 2});
    z.at3(0, 0, 0) = 5.0;
    z.at3(1, 0, 1) = 5.0;
    z.at3(1, 1, 0) = 5.0;
    z.at3(3, 1, 1) = 5.0;
    const auto masks = class_masks_from_prediction(softmax_channels(z));
    CHECK(masks[0].mask.sum() == 2.0);
    CHECK(masks[1].mask.sum() == 0.0);
    CHECK(masks[2].mask.sum() == 1.0);

    Tensor not_normalized({2, 1, 1}, {0.6, 0.6});
    CHECK_THROWS_AS(class_masks_from_prediction(not_normalized), std::invalid_argument);
}

TEST_CASE("argmax ties break toward the lowest channel index") {
    const Tensor p = probs_from_logits(3, 1, 1, {1.0, 1.0, 1.0});
    const auto masks = class_masks_from_prediction(p);
    // background (channel 0) wins the three-way tie, so all masks are empty
    CHECK(masks[0].is_empty);
    CHECK(masks[1].is_empty);

    const Tensor p2 = probs_from_logits(3, 1, 1, {0.0, 2.0, 2.0});
    const auto masks2 = class_masks_from_prediction(p2);
    CHECK_FALSE(masks2[0].is_empty);
    CHECK(masks2[1].is_empty);
}

TEST_CASE("prototype features mask the NC feature map") {
    Rng rng(3);
    Tensor f({4, 3, 3});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.next_normal();

    ClassMask all;
    all.class_id = 1;
    all.mask = Tensor({3, 3}, 1.0);
    all.is_empty = false;
    CHECK(prototype_features(f, all).features == f);

    ClassMask empty;
    empty.class_id = 2;
    empty.mask = Tensor({3, 3});
    empty.is_empty = true;
    const auto p = prototype_features(f, empty);
    CHECK(p.is_empty);
    CHECK(p.features.max() == 0.0);
    CHECK(p.features.min() == 0.0);

    ClassMask single;
    single.class_id = 3;
    single.mask = Tensor({3, 3});
    single.mask.at2(1, 2) = 1.0;
    single.is_empty = false;
    const auto q = prototype_features(f, single);
    for (std::size_t ch = 0; ch < 4; ++ch)
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(q.features.at3(ch, r, c) ==
                      ((r == 1 && c == 2) ? f.at3(ch, r, c) : 0.0));
}

TEST_CASE("adversarial bce: closed forms and oracle") {
    Tensor high({2, 2}, 1.0 - 1e-12);
    CHECK(adversarial_bce(high, DomainLabel::source).value ==
          doctest::Approx(0.0).epsilon(1e-9));

    Tensor half({3, 3}, 0.5);
    CHECK(adversarial_bce(half, DomainLabel::source).value ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(adversarial_bce(half, DomainLabel::target).value ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Rng rng(7);
    Tensor d({3, 3});
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.01, 0.99);
    CHECK(adversarial_bce(d, DomainLabel::target).value ==
          doctest::Approx(oracle_bce(d, 0.0)).epsilon(1e-12));

    Tensor out_of_range({1}, {1.0});
    CHECK_THROWS_AS(adversarial_bce(out_of_range, DomainLabel::source), std::invalid_argument);
}

TEST_CASE("discriminator output lies strictly inside (0,1)") {
    Rng rng(11);
    PixelDiscriminator d(8, 16, rng.split(0));
    Tensor f({8, 4, 4});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 3.0 * rng.next_normal();
    const auto fwd = d.forward(f);
    for (std::size_t i = 0; i < fwd.out.size(); ++i) {
        CHECK(fwd.out[i] > 0.0);
        CHECK(fwd.out[i] < 1.0);
    }
}

TEST_CASE("learnable weights stay clamped to [1e-3, 1e3]") {
    LearnableClassWeights w(3);
    w.s = {0.0, -100.0, 100.0};
    CHECK(w.omega(0) == doctest::Approx(1.0));
    CHECK(w.omega(1) == 1e-3);
    CHECK(w.omega(2) == 1e3);
    CHECK(w.omega_grad(1) == 0.0);  // clamp active: no gradient
    CHECK(w.omega_grad(2) == 0.0);
    CHECK(w.omega_grad(0) == doctest::Approx(1.0));
}

namespace {

struct CaFixture {
    std::vector<PixelDiscriminator> discs;
    LearnableClassWeights w{kNumClasses};
    Tensor f_nc;
    std::vector<ClassMask> masks;

    explicit CaFixture(std::uint64_t seed) : f_nc({8, 4, 4}) {
        Rng rng(seed);
        for (int c = 0; c < kNumClasses; ++c) discs.emplace_back(8, 16, rng.split(10 + c));
        for (std::size_t i = 0; i < f_nc.size(); ++i) f_nc[i] = rng.next_normal();
        masks.resize(kNumClasses);
        for (int c = 0; c < kNumClasses; ++c) {
            masks[c].class_id = c + 1;
            masks[c].mask = Tensor({4, 4});
        }
    }

    std::vector<PrototypeFeature> protos() const {
        std::vector<PrototypeFeature> out;
        for (const auto& m : masks) out.push_back(prototype_features(f_nc, m));
        return out;
    }
};

}  // namespace

TEST_CASE("class-aware loss: all classes empty contributes exactly zero") {
    CaFixture fx(1);
    const auto loss = class_aware_adv_loss(fx.protos(), fx.discs, fx.w, DomainLabel::source);
    CHECK(loss.value == 0.0);
    for (int c = 0; c < kNumClasses; ++c) {
        CHECK_FALSE(loss.active[c]);
        CHECK(loss.s_grads[c] == 0.0);
    }
}

TEST_CASE("class-aware loss: single class reduces to its weighted BCE") {
    CaFixture fx(2);
    fx.masks[2].mask.at2(1, 1) = 1.0;
    fx.masks[2].mask.at2(2, 3) = 1.0;
    fx.masks[2].is_empty = false;

    const auto protos = fx.protos();
    const auto loss = class_aware_adv_loss(protos, fx.discs, fx.w, DomainLabel::target);
    const auto direct =
        adversarial_bce(fx.discs[2].forward(protos[2].features).out, DomainLabel::target);
    // omega = 1 at s = 0, so value = BCE + lambda_w * s = BCE
    CHECK(loss.value == doctest::Approx(direct.value).epsilon(1e-12));
    CHECK(loss.adv_per_class[2] == doctest::Approx(direct.value).epsilon(1e-12));
}

TEST_CASE("class-aware loss: two weighted classes recompose componentwise") {
    CaFixture fx(3);
    fx.masks[0].mask.at2(0, 0) = 1.0;
    fx.masks[0].is_empty = false;
    fx.masks[4].mask.at2(3, 3) = 1.0;
    fx.masks[4].mask.at2(2, 2) = 1.0;
    fx.masks[4].is_empty = false;
    fx.w.s[0] = std::log(2.0);
    fx.w.s[4] = std::log(0.5);

    const auto protos = fx.protos();
    const auto loss = class_aware_adv_loss(protos, fx.discs, fx.w, DomainLabel::source);
    const double l0 =
        adversarial_bce(fx.discs[0].forward(protos[0].features).out, DomainLabel::source).value;
    const double l4 =
        adversarial_bce(fx.discs[4].forward(protos[4].features).out, DomainLabel::source).value;
    const double expect = 2.0 * l0 + 0.5 * l4 +
                          LearnableClassWeights::kRegularizer * (fx.w.s[0] + fx.w.s[4]);
    CHECK(loss.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("empty-class neutrality is exact (property over 100 cases)") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        CaFixture fx(100 + seed);
        Rng rng(seed);
        // random non-empty support for a few classes
        for (int c = 0; c < kNumClasses; ++c) {
            if (rng.next_double() < 0.5) continue;
            bool any = false;
            for (std::size_t i = 0; i < 16; ++i)
                if (rng.next_double() < 0.3) {
                    fx.masks[c].mask[i] = 1.0;
                    any = true;
                }
            fx.masks[c].is_empty = !any;
        }
        const DomainLabel label = seed % 2 ? DomainLabel::source : DomainLabel::target;
        const auto full = class_aware_adv_loss(fx.protos(), fx.discs, fx.w, label);

        // recompute keeping only the active classes' contributions: the
        // empty ones must not have influenced value or gradients at all
        double expect = 0.0;
        for (int c = 0; c < kNumClasses; ++c) {
            if (!full.active[c]) {
                CHECK(full.s_grads[c] == 0.0);
                CHECK(full.adv_per_class[c] == 0.0);
                continue;
            }
            const auto proto = prototype_features(fx.f_nc, fx.masks[c]);
            const auto bce = adversarial_bce(fx.discs[c].forward(proto.features).out, label);
            expect += fx.w.omega(c) * bce.value +
                      LearnableClassWeights::kRegularizer * fx.w.s[c];
        }
        CHECK(full.value == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("aggregate losses are exact sums") {
    CHECK(total_discriminator_loss(0.0, 0.0, 0.0) == 0.0);
    CHECK(total_discriminator_loss(0.3, 0.2, 0.1) == doctest::Approx(0.6).epsilon(1e-15));
    Rng rng(17);
    for (int i = 0; i < 20; ++i) {
        const double a = rng.next_normal(), b = rng.next_normal(), c = rng.next_normal();
        CHECK(total_discriminator_loss(a, b, c) == a + b + c);
        CHECK(stage1_loss(a, b) == a + b);
    }
    CHECK(stage1_loss(0.7, 0.0) == 0.7);
}

TEST_CASE("gradient reversal scales and negates") {
    const Tensor g({2}, {2.0, -4.0});
    CHECK(gradient_reversal(g, 1.0) == Tensor({2}, {-2.0, 4.0}));
    CHECK(gradient_reversal(g, 0.0) == Tensor({2}, {0.0, -0.0}));
    CHECK(gradient_reversal(g, 0.5) == Tensor({2}, {-1.0, 2.0}));
}

TEST_CASE("adversarial and class-aware gradients match finite differences") {
    GradCheckOptions opts;
    opts.seeds = 60;
    opts.losses = {"adv_bce", "nc_ca"};
    for (const auto& r : run_gradcheck(opts)) {
        INFO(r.loss << " max_rel_error=" << r.max_rel_error);
        CHECK(r.pass);
    }
}

TEST_CASE("discriminators separate linearly separable features quickly") {
    // synthetic domain gap: source features offset by +1 on channel 0
    Rng rng(23);
    PixelDiscriminator disc(8, 16, rng.split(1));
    Adam adam({{"w1", disc.w1.data(), disc.w1.size()},
               {"b1", disc.b1.data(), disc.b1.size()},
               {"w2", disc.w2.data(), disc.w2.size()},
               {"b2", disc.b2.data(), disc.b2.size()}});

    auto make_features = [&](bool source) {
        Tensor f({8, 4, 4});
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.3 * rng.next_normal();
        if (source)
            for (std::size_t px = 0; px < 16; ++px) f[px] += 1.0;
        return f;
    };

    for (int step = 0; step < 500; ++step) {
        const bool source = step % 2 == 0;
        const Tensor f = make_features(source);
        const auto fwd = disc.forward(f);
        const auto bce = adversarial_bce(fwd.out,
                                         source ? DomainLabel::source : DomainLabel::target);
        const auto g = disc.backward(fwd, bce.grad);
        adam.step({g.w1.raw(), g.b1.raw(), g.w2.raw(), g.b2.raw()}, 1e-2);
    }

    std::size_t correct = 0, total = 0;
    for (int i = 0; i < 20; ++i) {
        const bool source = i % 2 == 0;
        const auto fwd = disc.forward(make_features(source));
        for (std::size_t px = 0; px < fwd.out.size(); ++px) {
            correct += (fwd.out[px] > 0.5) == source;
            ++total;
        }
    }
    CHECK(double(correct) / double(total) > 0.95);
}
