#include <doctest.h>

#include <cmath>

#include "capl/metrics.hpp"
#include "capl/net.hpp"
#include "capl/postprocess.hpp"
#include "capl/rng.hpp"
#include "capl/synth_data.hpp"

using namespace capl;

namespace {

void stamp_disk(InstanceLabelMap& m, double row, double col, double radius, std::uint32_t id) {
    for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c) {
            const double dr = double(r) - row, dc = double(c) - col;
            if (dr * dr + dc * dc <= radius * radius) m.at(r, c) = id;
        }
}

/// Number of 4-adjacent pixel pairs carrying two different positive labels.
std::size_t contact_length(const InstanceLabelMap& m) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c) {
            const std::uint32_t a = m.at(r, c);
            if (!a) continue;
            if (c + 1 < m.width) {
                const std::uint32_t b = m.at(r, c + 1);
                if (b && b != a) ++n;
            }
            if (r + 1 < m.height) {
                const std::uint32_t b = m.at(r + 1, c);
                if (b && b != a) ++n;
            }
        }
    return n;
}

InstanceLabelMap roundtrip(const InstanceLabelMap& gt) {
    return extract_instances(foreground_mask(gt), hv_target_from_instances(gt), {});
}

}  // namespace

TEST_CASE("sobel pair: constants vanish, undersized inputs rejected") {
    const Tensor constant({2, 4, 4}, 0.7);
    const Tensor s = sobel_pair(constant);
    CHECK(s.max() == 0.0);
    CHECK(s.min() == 0.0);
    CHECK_THROWS_AS(sobel_pair(Tensor({2, 2, 4})), std::invalid_argument);
}

TEST_CASE("sobel pair obeys the rotation+swap symmetry") {
    Rng rng(3);
    const std::size_t n = 6;
    Tensor hv({2, n, n});
    for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = rng.uniform(-1, 1);
    // rotate: out(r,c) = in(c, n-1-r), channels swap with sign flips
    Tensor rot({2, n, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            rot.at3(0, r, c) = hv.at3(1, c, n - 1 - r);
            rot.at3(1, r, c) = -hv.at3(0, c, n - 1 - r);
        }
    const Tensor s = sobel_pair(hv);
    const Tensor sr = sobel_pair(rot);
    // the x-response of the rotated horizontal channel equals the rotated
    // y-response of the original vertical channel
    for (std::size_t r = 1; r + 1 < n; ++r)
        for (std::size_t c = 1; c + 1 < n; ++c)
            CHECK(sr.at3(0, r, c) == doctest::Approx(s.at3(1, c, n - 1 - r)).epsilon(1e-12));
}

TEST_CASE("sobel pair matches hand convolution on a 5x5 ramp") {
    Tensor hv({2, 5, 5});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
            hv.at3(0, r, c) = 0.25 * double(c);  // horizontal ramp
            hv.at3(1, r, c) = 0.1 * double(r);
        }
    const Tensor s = sobel_pair(hv);
    // hand convolution on the interior, then the same bound normalization
    // (8 * max|input|); output borders are zero-filled
    const double scale0 = 1.0 / (8.0 * 1.0);  // channel 0 peaks at 0.25*4
    for (std::size_t r = 1; r < 4; ++r)
        for (std::size_t c = 1; c < 4; ++c) {
            double acc = 0.0;
            const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                    acc += kx[dr + 1][dc + 1] *
                           hv.at3(0, r + std::size_t(dr), c + std::size_t(dc));
            CHECK(acc == doctest::Approx(2.0));  // slope 0.25 ramp: 8 * 0.25
            CHECK(s.at3(0, r, c) == doctest::Approx(acc * scale0).epsilon(1e-12));
        }
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(s.at3(0, 0, c) == 0.0);
        CHECK(s.at3(0, 4, c) == 0.0);
    }
}

TEST_CASE("connected components: 4-connectivity and first-occurrence order") {
    Tensor mask({3, 4});
    mask.at2(0, 0) = mask.at2(1, 0) = 1.0;
    mask.at2(0, 2) = mask.at2(1, 2) = mask.at2(1, 3) = 1.0;
    mask.at2(2, 1) = 1.0;  // touches (1,0)/(1,2) only diagonally
    const auto cc = connected_components(mask);
    CHECK(cc.at(0, 0) == 1);
    CHECK(cc.at(1, 0) == 1);
    CHECK(cc.at(0, 2) == 2);
    CHECK(cc.at(1, 3) == 2);
    CHECK(cc.at(2, 1) == 3);
    CHECK(cc.max_label() == 3);
}

TEST_CASE("single isolated disk reconstructs pixel-identically") {
    InstanceLabelMap gt(24, 24);
    stamp_disk(gt, 11.3, 12.1, 4.5, 1);
    const auto rec = roundtrip(gt);
    CHECK(rec.max_label() == 1);
    CHECK(rec == relabel_canonical(gt));
    CHECK(aji(gt, rec) == 1.0);
}

TEST_CASE("empty foreground yields zero instances") {
    const Tensor np({8, 8});
    const Tensor hv({2, 8, 8});
    CHECK(extract_instances(np, hv, {}).max_label() == 0);
}

TEST_CASE("two disks separated by background become two instances") {
    InstanceLabelMap gt(32, 32);
    stamp_disk(gt, 10, 9, 4.2, 1);
    stamp_disk(gt, 22, 23, 4.8, 2);
    const auto rec = roundtrip(gt);
    CHECK(rec.max_label() == 2);
    CHECK(aji(gt, rec) == doctest::Approx(1.0));
}

TEST_CASE("config validation and threshold monotonicity") {
    PostprocessConfig bad;
    bad.np_threshold = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    InstanceLabelMap gt(24, 24);
    stamp_disk(gt, 12, 12, 5.0, 1);
    Rng rng(7);
    Tensor np({24, 24});
    for (std::size_t i = 0; i < np.size(); ++i)
        np[i] = gt.labels[i] ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
    const Tensor hv = hv_target_from_instances(gt);
    std::size_t prev = np.size() + 1;
    for (double t : {0.2, 0.4, 0.6, 0.8}) {
        PostprocessConfig cfg;
        cfg.np_threshold = t;
        cfg.min_instance_px = 1;
        const auto inst = extract_instances(np, hv, cfg);
        std::size_t fg = 0;
        for (auto v : inst.labels) fg += v > 0;
        CHECK(fg <= prev);
        prev = fg;
    }
}

TEST_CASE("extraction is deterministic") {
    const auto s = generate_sample(DomainSpec::source_default(), 64, 5);
    const Tensor np = foreground_mask(s.instances);
    const auto a = extract_instances(np, s.hv_gt, {});
    const auto b = extract_instances(np, s.hv_gt, {});
    CHECK(a == b);
}

TEST_CASE("round trip: 50 seeded non-touching layouts reach AJI >= 0.95") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(1000 + seed);
        InstanceLabelMap gt(48, 48);
        std::uint32_t next = 1;
        for (int attempt = 0; attempt < 40 && next <= 5; ++attempt) {
            const double radius = rng.uniform(3.0, 5.5);
            const double row = rng.uniform(radius + 1, 47.0 - radius);
            const double col = rng.uniform(radius + 1, 47.0 - radius);
            // enforce >= 2 px background separation from existing instances
            bool clear = true;
            for (std::size_t r = 0; r < 48 && clear; ++r)
                for (std::size_t c = 0; c < 48 && clear; ++c) {
                    if (!gt.at(r, c)) continue;
                    const double dr = double(r) - row, dc = double(c) - col;
                    if (std::sqrt(dr * dr + dc * dc) < radius + 2.5) clear = false;
                }
            if (!clear) continue;
            stamp_disk(gt, row, col, radius, next++);
        }
        REQUIRE(gt.max_label() >= 1);
        const auto rec = roundtrip(gt);
        INFO("seed " << seed << " instances " << gt.max_label());
        CHECK(aji(relabel_canonical(gt), rec) >= 0.95);
    }
}

TEST_CASE("round trip: touching pairs (contact <= 3 px) reach AJI >= 0.80") {
    std::size_t built = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(2000 + seed);
        const double radius = rng.uniform(3.2, 5.0);
        InstanceLabelMap gt(36, 36);
        bool usable = false;
        for (double extra : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const double gap = 2.0 * radius + extra;
            InstanceLabelMap attempt(36, 36);
            stamp_disk(attempt, 17.0, 17.5 - gap / 2.0, radius, 1);
            stamp_disk(attempt, 17.0, 17.5 + gap / 2.0, radius, 2);
            const std::size_t contact = contact_length(attempt);
            if (contact >= 1 && contact <= 3) {
                gt = attempt;
                usable = true;
                break;
            }
        }
        if (!usable) continue;
        ++built;
        const auto rec = roundtrip(gt);
        INFO("seed " << seed << " radius " << radius);
        CHECK(rec.max_label() == 2);
        CHECK(aji(relabel_canonical(gt), rec) >= 0.80);
    }
    // the construction must produce a usable touching pair for most seeds
    CHECK(built >= 40);
}

TEST_CASE("classify_instances: majority vote, tie and mixed cases") {
    InstanceLabelMap inst(2, 4);
    inst.labels = {1, 1, 1, 1, 2, 2, 2, 2};
    Tensor z({4, 2, 4});  // bg + 3 classes
    for (std::size_t c = 0; c < 4; ++c) z.at3(3, 0, c) = 9.0;  // instance 1: class 3
    z.at3(1, 1, 0) = 9.0;  // instance 2: 2 votes class 1, 2 votes class 2
    z.at3(1, 1, 1) = 9.0;
    z.at3(2, 1, 2) = 9.0;
    z.at3(2, 1, 3) = 9.0;
    const auto cls = classify_instances(inst, softmax_channels(z));
    REQUIRE(cls.size() == 2);
    CHECK(cls[0] == std::pair<std::uint32_t, int>{1, 3});
    CHECK(cls[1] == std::pair<std::uint32_t, int>{2, 1});  // tie -> lowest class id

    InstanceLabelMap one(1, 4);
    one.labels = {1, 1, 1, 1};
    Tensor z2({4, 1, 4});
    z2.at3(2, 0, 0) = 9.0;
    z2.at3(2, 0, 1) = 9.0;
    z2.at3(2, 0, 2) = 9.0;
    z2.at3(1, 0, 3) = 9.0;
    const auto cls2 = classify_instances(one, softmax_channels(z2));
    CHECK(cls2[0].second == 2);  // 3-vs-1 majority

    CHECK_THROWS_AS(classify_instances(one, Tensor({4, 2, 2}, 0.25)), std::invalid_argument);
}
