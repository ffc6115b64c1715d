#include <doctest.h>

#include <array>
#include <cmath>

#include "capl/dataset.hpp"
#include "capl/synth_data.hpp"

using namespace capl;

TEST_CASE("hv targets: degenerate, bar and square layouts") {
    // single pixel
    InstanceLabelMap one(3, 3);
    one.at(1, 1) = 1;
    const Tensor hv1 = hv_target_from_instances(one);
    CHECK(hv1.at3(0, 1, 1) == 0.0);
    CHECK(hv1.at3(1, 1, 1) == 0.0);

    // horizontal 3-px bar
    InstanceLabelMap bar(1, 3);
    bar.labels = {1, 1, 1};
    const Tensor hvb = hv_target_from_instances(bar);
    CHECK(hvb.at3(0, 0, 0) == -1.0);
    CHECK(hvb.at3(0, 0, 1) == 0.0);
    CHECK(hvb.at3(0, 0, 2) == 1.0);
    CHECK(hvb.at3(1, 0, 0) == 0.0);
    CHECK(hvb.at3(1, 0, 2) == 0.0);

    // 3x3 square: corners at (+-1,+-1), center 0
    InstanceLabelMap sq(3, 3);
    for (auto& v : sq.labels) v = 1;
    const Tensor hvs = hv_target_from_instances(sq);
    CHECK(hvs.at3(0, 0, 0) == -1.0);
    CHECK(hvs.at3(1, 0, 0) == -1.0);
    CHECK(hvs.at3(0, 2, 2) == 1.0);
    CHECK(hvs.at3(1, 2, 2) == 1.0);
    CHECK(hvs.at3(0, 1, 1) == 0.0);
    CHECK(hvs.at3(1, 1, 1) == 0.0);
}

TEST_CASE("domain defaults carry the corpus class priors") {
    const auto src = DomainSpec::source_default();
    const auto tgt = DomainSpec::target_default();
    src.validate();
    tgt.validate();
    // DigestPath: 1349 eosinophils of 168510 nuclei; CRAG: 99124/189043 epithelial
    CHECK(src.class_priors[0] == doctest::Approx(1349.0 / 168510.0).epsilon(1e-12));
    CHECK(src.class_priors[1] == doctest::Approx(70789.0 / 168510.0).epsilon(1e-12));
    CHECK(src.class_priors[5] == doctest::Approx(32826.0 / 168510.0).epsilon(1e-12));
    CHECK(tgt.class_priors[1] == doctest::Approx(99124.0 / 189043.0).epsilon(1e-12));
    CHECK(tgt.class_priors[4] == doctest::Approx(1673.0 / 189043.0).epsilon(1e-12));
    CHECK(tgt.intensity_shift == 0.15);
    CHECK(tgt.nucleus_scale == 1.2);

    DomainSpec bad = src;
    bad.class_priors[0] += 0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("generated samples have consistent ground truth") {
    const auto spec = DomainSpec::source_default();
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 7ull}) {
        const auto s = generate_sample(spec, 48, seed);
        CHECK(s.hv_gt == hv_target_from_instances(s.instances));
        const std::size_t plane = 48 * 48;
        for (std::size_t i = 0; i < plane; ++i) {
            const bool fg = s.instances.labels[i] > 0;
            CHECK(s.np_gt[plane + i] == (fg ? 1.0 : 0.0));
            CHECK(s.np_gt[i] == (fg ? 0.0 : 1.0));
            CHECK((s.classes.classes[i] > 0) == fg);
        }
        CHECK(s.image.min() >= 0.0);
        CHECK(s.image.max() <= 1.0);
    }
}

TEST_CASE("generation is bit-reproducible and density->0 gives empty samples") {
    const auto spec = DomainSpec::target_default();
    const auto a = generate_sample(spec, 64, 99);
    const auto b = generate_sample(spec, 64, 99);
    CHECK(a.image == b.image);
    CHECK(a.instances == b.instances);
    CHECK(a.classes == b.classes);
    CHECK(a.hv_gt == b.hv_gt);

    DomainSpec sparse = spec;
    sparse.density = 1e-6;
    const auto empty = generate_sample(sparse, 32, 5);
    CHECK(empty.instances.max_label() == 0);
    CHECK(empty.hv_gt.max() == 0.0);
    CHECK(empty.np_gt[0] == 1.0);

    CHECK_THROWS_AS(generate_sample(spec, 16, 1), std::invalid_argument);
}

TEST_CASE("degenerate prior produces a single class") {
    DomainSpec spec = DomainSpec::source_default();
    spec.class_priors = {0, 1, 0, 0, 0, 0};  // everything epithelial
    const auto s = generate_sample(spec, 48, 11);
    REQUIRE(s.instances.max_label() > 0);
    for (std::size_t i = 0; i < s.classes.classes.size(); ++i)
        if (s.instances.labels[i] > 0) CHECK(s.classes.classes[i] == 2);
}

TEST_CASE("empirical class frequencies track the priors within 0.01") {
    const auto spec = DomainSpec::source_default();
    std::array<std::size_t, kNumClasses> counts{};
    std::size_t total = 0;
    for (std::uint64_t seed = 0; total < 10000; ++seed) {
        const auto s = generate_sample(spec, 64, 1000 + seed);
        const auto areas = label_areas(s.instances);
        std::vector<int> cls(areas.size(), 0);
        for (std::size_t i = 0; i < s.instances.labels.size(); ++i)
            if (s.instances.labels[i]) cls[s.instances.labels[i]] = int(s.classes.classes[i]);
        for (std::size_t v = 1; v < areas.size(); ++v)
            if (areas[v] > 0) {
                ++counts[std::size_t(cls[v] - 1)];
                ++total;
            }
    }
    for (int c = 0; c < kNumClasses; ++c) {
        const double freq = double(counts[std::size_t(c)]) / double(total);
        CHECK(std::abs(freq - spec.class_priors[std::size_t(c)]) < 0.01);
    }
}

TEST_CASE("augmentations transform every channel consistently") {
    const auto s = generate_sample(DomainSpec::source_default(), 48, 21);
    for (AugOp op : {AugOp::flip_h, AugOp::flip_v, AugOp::rot90, AugOp::rot180, AugOp::rot270}) {
        INFO(aug_op_name(op));
        const auto t = augment(s, op);
        CHECK(t.hv_gt == hv_target_from_instances(t.instances));
        const std::size_t plane = t.height() * t.width();
        for (std::size_t i = 0; i < plane; ++i)
            CHECK((t.instances.labels[i] > 0) == (t.np_gt[plane + i] == 1.0));
    }
}

TEST_CASE("flip involutions and rotation cycle recover the original") {
    const auto s = generate_sample(DomainSpec::target_default(), 48, 31);
    const auto ff = augment(augment(s, AugOp::flip_h), AugOp::flip_h);
    CHECK(ff.image == s.image);
    CHECK(ff.instances == s.instances);
    CHECK(ff.hv_gt == s.hv_gt);

    auto r = s;
    for (int i = 0; i < 4; ++i) r = augment(r, AugOp::rot90);
    CHECK(r.image == s.image);
    CHECK(r.instances == s.instances);
    CHECK(r.hv_gt == s.hv_gt);

    const auto r2 = augment(augment(s, AugOp::rot90), AugOp::rot270);
    CHECK(r2.instances == s.instances);
}

TEST_CASE("flip_h negates the horizontal values of the 3-px bar") {
    SyntheticSample s;
    s.instances = InstanceLabelMap(3, 3);
    s.instances.at(1, 0) = 1;
    s.instances.at(1, 1) = 1;
    s.instances.at(1, 2) = 1;
    s.classes = ClassLabelMap(3, 3);
    s.classes.at(1, 0) = s.classes.at(1, 1) = s.classes.at(1, 2) = 2;
    s.image = Tensor({3, 3, 3});
    s.hv_gt = hv_target_from_instances(s.instances);
    s.np_gt = Tensor({2, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        const bool fg = s.instances.labels[i] > 0;
        s.np_gt[i] = fg ? 0.0 : 1.0;
        s.np_gt[9 + i] = fg ? 1.0 : 0.0;
    }
    const auto t = augment(s, AugOp::flip_h);
    CHECK(t.hv_gt.at3(0, 1, 0) == -1.0);
    CHECK(t.hv_gt.at3(0, 1, 2) == 1.0);
    CHECK(t.hv_gt == hv_target_from_instances(t.instances));
}

TEST_CASE("dataset io round-trips samples and manifests") {
    const auto dir = std::filesystem::temp_directory_path() / "capl_test_ds";
    std::filesystem::remove_all(dir);
    const auto spec = DomainSpec::source_default();
    const auto ids = generate_dataset(dir, spec, 3, 32, 77, "train");
    REQUIRE(ids.size() == 3);
    CHECK(dataset_ids(dir) == ids);

    const auto ds = load_dataset(dir);
    CHECK(ds.domain == "source");
    CHECK(ds.size() == 3);
    const auto regen = generate_sample(spec, 32, Rng(77).split(0).next_u64());
    CHECK(ds.samples[0].image == regen.image);
    CHECK(ds.samples[0].instances == regen.instances);

    const auto spec2 = domain_spec_from_json(domain_spec_to_json(spec));
    CHECK(spec2.class_priors == spec.class_priors);
    std::filesystem::remove_all(dir);
}
