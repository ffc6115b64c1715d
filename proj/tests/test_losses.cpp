#include <doctest.h>

#include <cmath>

#include "capl/gradcheck.hpp"
#include "capl/losses.hpp"
#include "capl/net.hpp"
#include "capl/rng.hpp"

using namespace capl;

namespace {

// ---- independent oracles (straight-line summation, no shared code) --------

double oracle_ce(const Tensor& pred, const Tensor& target) {
    const std::size_t plane = pred.extent(1) * pred.extent(2);
    double acc = 0.0;
    for (std::size_t c = 0; c < pred.extent(0); ++c)
        for (std::size_t px = 0; px < plane; ++px) {
            const double t = target[c * plane + px];
            const double p = pred[c * plane + px];
            acc += t * std::log(p < 1e-12 ? 1e-12 : p);
        }
    return -acc / double(plane);
}

double oracle_mse(const Tensor& pred, const Tensor& target) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        acc += d * d;
    }
    return acc / double(pred.size());
}

// explicit 3x3 convolution at one interior pixel
double oracle_sobel_x(const Tensor& m, std::size_t ch, std::size_t r, std::size_t c) {
    return -m.at3(ch, r - 1, c - 1) + m.at3(ch, r - 1, c + 1)
           - 2 * m.at3(ch, r, c - 1) + 2 * m.at3(ch, r, c + 1)
           - m.at3(ch, r + 1, c - 1) + m.at3(ch, r + 1, c + 1);
}

double oracle_sobel_y(const Tensor& m, std::size_t ch, std::size_t r, std::size_t c) {
    return -m.at3(ch, r - 1, c - 1) - 2 * m.at3(ch, r - 1, c) - m.at3(ch, r - 1, c + 1)
           + m.at3(ch, r + 1, c - 1) + 2 * m.at3(ch, r + 1, c) + m.at3(ch, r + 1, c + 1);
}

double oracle_hv_loss(const Tensor& pred, const Tensor& target, const Tensor* mask) {
    const std::size_t h = pred.extent(1), w = pred.extent(2);
    double acc = 0.0;
    std::size_t m = 0;
    for (std::size_t r = 1; r + 1 < h; ++r)
        for (std::size_t c = 1; c + 1 < w; ++c) {
            if (mask && mask->at2(r, c) == 0.0) continue;
            ++m;
            const double dh = oracle_sobel_x(pred, 0, r, c) - oracle_sobel_x(target, 0, r, c);
            const double dv = oracle_sobel_y(pred, 1, r, c) - oracle_sobel_y(target, 1, r, c);
            acc += dh * dh + dv * dv;
        }
    return m == 0 ? 0.0 : acc / double(m);
}

Tensor random_probs(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Tensor z({c, h, w});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.next_normal();
    return softmax_channels(z);
}

Tensor random_onehot(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
    Tensor t({c, h, w});
    const std::size_t plane = h * w;
    for (std::size_t px = 0; px < plane; ++px) t[rng.next_below(c) * plane + px] = 1.0;
    return t;
}

}  // namespace

TEST_CASE("cross entropy: identity, closed form, oracle") {
    Tensor target({2, 2, 2});
    for (std::size_t px = 0; px < 4; ++px) target[px] = 1.0;
    CHECK(cross_entropy(target, target).value <= 1e-11);

    // one pixel, two classes, pred (0.5,0.5) against class 0: ln 2
    const Tensor pred({2, 1, 1}, {0.5, 0.5});
    const Tensor t2({2, 1, 1}, {1.0, 0.0});
    CHECK(cross_entropy(pred, t2).value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Rng rng(5);
    for (int it = 0; it < 20; ++it) {
        const Tensor p = random_probs(2, 2, 2, rng);
        const Tensor t = random_onehot(2, 2, 2, rng);
        CHECK(cross_entropy(p, t).value == doctest::Approx(oracle_ce(p, t)).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy rejects malformed inputs") {
    const Tensor bad({2, 1, 1}, {0.9, 0.2});  // sums to 1.1
    const Tensor one_hot({2, 1, 1}, {1.0, 0.0});
    CHECK_THROWS_AS(cross_entropy(bad, one_hot), std::invalid_argument);
    const Tensor soft_target({2, 1, 1}, {0.5, 0.5});
    const Tensor ok({2, 1, 1}, {0.5, 0.5});
    CHECK_THROWS_AS(cross_entropy(ok, soft_target), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(Tensor({2, 1, 1}, {1, 0}), Tensor({2, 1, 2}, {1, 0, 1, 0})),
                    std::invalid_argument);
}

TEST_CASE("dice loss: identity, disjoint, hand example") {
    Tensor ones({2, 2}, 1.0);
    CHECK(dice_loss(ones, ones).value <= 1e-3);
    CHECK(dice_loss(ones, ones).value == doctest::Approx(0.0));

    Tensor zeros({2, 2});
    CHECK(dice_loss(zeros, ones).value ==
          doctest::Approx(1.0 - 1e-3 / (4.0 + 1e-3)).epsilon(1e-12));

    // pred 2 px, target 4 px, overlap 2
    Tensor pred({8}), target({8});
    pred[0] = pred[1] = 1.0;
    target[0] = target[1] = target[2] = target[3] = 1.0;
    CHECK(dice_loss(pred, target).value ==
          doctest::Approx(1.0 - (4.0 + 1e-3) / (6.0 + 1e-3)).epsilon(1e-12));
    CHECK_THROWS_AS(dice_loss(pred, Tensor({4})), std::invalid_argument);
}

TEST_CASE("mse loss: identity, offset, oracle") {
    Tensor a({3, 3}, 0.7);
    CHECK(mse_loss(a, a).value == 0.0);
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.5;
    CHECK(mse_loss(b, a).value == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(9);
    Tensor p({3, 3}), q({3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        p[i] = rng.next_normal();
        q[i] = rng.next_normal();
    }
    CHECK(mse_loss(p, q).value == doctest::Approx(oracle_mse(p, q)).epsilon(1e-12));
}

TEST_CASE("hv gradient loss: identity, constants, ramp oracle") {
    Rng rng(13);
    Tensor t({2, 5, 5});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
    CHECK(hv_gradient_loss(t, t).value == 0.0);

    Tensor c1({2, 4, 4}, 0.3), c2({2, 4, 4}, -0.8);
    CHECK(hv_gradient_loss(c1, c2).value == 0.0);  // Sobel of constants is 0

    // horizontal ramp x vs 2x, constant vertical channels
    Tensor pred({2, 5, 5}), target({2, 5, 5});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
            pred.at3(0, r, c) = double(c);
            target.at3(0, r, c) = 2.0 * double(c);
        }
    const auto got = hv_gradient_loss(pred, target);
    CHECK(got.value == doctest::Approx(oracle_hv_loss(pred, target, nullptr)).epsilon(1e-12));

    CHECK_THROWS_AS(hv_gradient_loss(Tensor({2, 2, 5}), Tensor({2, 2, 5})),
                    std::invalid_argument);
}

TEST_CASE("hv gradient loss: masked mode and empty mask") {
    Rng rng(17);
    Tensor pred({2, 6, 6}), target({2, 6, 6});
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(-1, 1);
        target[i] = rng.uniform(-1, 1);
    }
    Tensor mask({6, 6});
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.next_double() < 0.5 ? 1.0 : 0.0;
    CHECK(hv_gradient_loss(pred, target, &mask).value ==
          doctest::Approx(oracle_hv_loss(pred, target, &mask)).epsilon(1e-12));

    Tensor empty_mask({6, 6});
    const auto lv = hv_gradient_loss(pred, target, &empty_mask);
    CHECK(lv.value == 0.0);
    CHECK(lv.grad.max() == 0.0);
    CHECK(lv.grad.min() == 0.0);
}

TEST_CASE("hv gradient loss printed-difference compatibility form") {
    Rng rng(19);
    Tensor pred({2, 5, 5}), target({2, 5, 5});
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(-1, 1);
        target[i] = rng.uniform(-1, 1);
    }
    const double sum_form = hv_gradient_loss(pred, target).value;
    const double diff_form =
        hv_gradient_loss(pred, target, nullptr, HvGradConvention::printed_difference).value;
    // recover the two terms: (sum+diff)/2 = horizontal, (sum-diff)/2 = vertical
    const double hor = 0.5 * (sum_form + diff_form);
    const double ver = 0.5 * (sum_form - diff_form);
    CHECK(hor >= 0.0);
    CHECK(ver >= 0.0);
    CHECK(sum_form == doctest::Approx(hor + ver).epsilon(1e-12));
}

TEST_CASE("losses are non-negative under the sum convention") {
    Rng rng(23);
    for (int it = 0; it < 50; ++it) {
        const Tensor p = random_probs(3, 3, 3, rng);
        const Tensor t = random_onehot(3, 3, 3, rng);
        CHECK(cross_entropy(p, t).value >= 0.0);
        Tensor dp({3, 3}), dt({3, 3});
        for (std::size_t i = 0; i < 9; ++i) {
            dp[i] = rng.next_double();
            dt[i] = rng.next_double() < 0.5 ? 1.0 : 0.0;
        }
        CHECK(dice_loss(dp, dt).value >= 0.0);
        CHECK(mse_loss(dp, dt).value >= 0.0);
        Tensor h1({2, 4, 4}), h2({2, 4, 4});
        for (std::size_t i = 0; i < h1.size(); ++i) {
            h1[i] = rng.uniform(-1, 1);
            h2[i] = rng.uniform(-1, 1);
        }
        CHECK(hv_gradient_loss(h1, h2).value >= 0.0);
    }
}

TEST_CASE("losses are equivariant under simultaneous pixel permutation") {
    Rng rng(29);
    const std::size_t h = 3, w = 4, plane = h * w;
    std::vector<std::size_t> perm(plane);
    for (std::size_t i = 0; i < plane; ++i) perm[i] = i;
    for (std::size_t i = plane; i > 1; --i) std::swap(perm[i - 1], perm[rng.next_below(i)]);

    auto permute = [&](const Tensor& t) {
        Tensor out(t.shape());
        for (std::size_t c = 0; c < t.extent(0); ++c)
            for (std::size_t px = 0; px < plane; ++px)
                out[c * plane + perm[px]] = t[c * plane + px];
        return out;
    };

    const Tensor p = random_probs(3, h, w, rng);
    const Tensor t = random_onehot(3, h, w, rng);
    CHECK(cross_entropy(permute(p), permute(t)).value ==
          doctest::Approx(cross_entropy(p, t).value).epsilon(1e-12));
    CHECK(dice_loss(permute(p), permute(t)).value ==
          doctest::Approx(dice_loss(p, t).value).epsilon(1e-12));
    CHECK(mse_loss(permute(p), permute(t)).value ==
          doctest::Approx(mse_loss(p, t).value).epsilon(1e-12));
}

TEST_CASE("hv loss is equivariant under 90-degree rotation with channel swap") {
    Rng rng(31);
    const std::size_t n = 5;
    Tensor pred({2, n, n}), target({2, n, n});
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = rng.uniform(-1, 1);
        target[i] = rng.uniform(-1, 1);
    }
    auto rot = [&](const Tensor& t) {
        Tensor out({2, n, n});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                out.at3(0, r, c) = t.at3(1, c, n - 1 - r);
                out.at3(1, r, c) = -t.at3(0, c, n - 1 - r);
            }
        return out;
    };
    CHECK(hv_gradient_loss(rot(pred), rot(target)).value ==
          doctest::Approx(hv_gradient_loss(pred, target).value).epsilon(1e-12));
}

TEST_CASE("supervised total equals the sum of its components") {
    Rng rng(37);
    const std::size_t h = 6, w = 6, plane = h * w;
    const Tensor np_pred = random_probs(2, h, w, rng);
    const Tensor np_gt = random_onehot(2, h, w, rng);
    const Tensor nc_pred = random_probs(7, h, w, rng);
    const Tensor nc_gt = random_onehot(7, h, w, rng);
    Tensor hv_pred({2, h, w}), hv_gt({2, h, w});
    for (std::size_t i = 0; i < hv_pred.size(); ++i) {
        hv_pred[i] = rng.uniform(-1, 1);
        hv_gt[i] = rng.uniform(-1, 1);
    }

    const auto total = supervised_total(np_pred, np_gt, hv_pred, hv_gt, nc_pred, nc_gt);

    Tensor fg({h, w});
    for (std::size_t i = 0; i < plane; ++i) fg[i] = np_gt[plane + i];
    const double expect = cross_entropy(np_pred, np_gt).value + dice_loss(np_pred, np_gt).value +
                          mse_loss(hv_pred, hv_gt).value +
                          hv_gradient_loss(hv_pred, hv_gt, &fg).value +
                          cross_entropy(nc_pred, nc_gt).value + dice_loss(nc_pred, nc_gt).value;
    CHECK(total.value == doctest::Approx(expect).epsilon(1e-12));

    // perfect predictions leave only the two Dice smoothing residuals
    const auto perfect = supervised_total(np_gt, np_gt, hv_gt, hv_gt, nc_gt, nc_gt);
    CHECK(perfect.value <= 2.1e-3);
}

TEST_CASE("analytic gradients match finite differences across all losses") {
    GradCheckOptions opts;
    opts.seeds = 100;
    opts.losses = {"ce", "dice", "mse", "hv"};
    for (const auto& r : run_gradcheck(opts)) {
        INFO(r.loss << " max_rel_error=" << r.max_rel_error);
        CHECK(r.pass);
    }
}
