#include <doctest.h>

#include <filesystem>

#include "capl/caplt_io.hpp"
#include "capl/label_map.hpp"
#include "capl/rng.hpp"
#include "capl/tensor.hpp"

using namespace capl;

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(std::vector<std::size_t>{}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("hadamard identity and zero masks") {
    const Tensor a({3}, {1, 2, 3});
    CHECK(hadamard(a, Tensor({3}, {1, 1, 1})) == a);
    CHECK(hadamard(a, Tensor({3}, {0, 0, 0})) == Tensor({3}, {0, 0, 0}));
}

TEST_CASE("hadamard elementwise hand product") {
    const Tensor a({3}, {2, -1, 4});
    const Tensor b({3}, {0.5, 2, 0});
    CHECK(hadamard(a, b) == Tensor({3}, {1, -2, 0}));
}

TEST_CASE("hadamard broadcasts a single-channel mask over channels") {
    Tensor a({2, 2, 2});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = double(i + 1);
    const Tensor mask({2, 2}, {1, 0, 0, 1});
    const Tensor out = hadamard(a, mask);
    CHECK(out.at3(0, 0, 0) == 1.0);
    CHECK(out.at3(0, 0, 1) == 0.0);
    CHECK(out.at3(1, 0, 0) == 5.0);
    CHECK(out.at3(1, 1, 0) == 0.0);
    CHECK_THROWS_AS(hadamard(a, Tensor({3, 3})), std::invalid_argument);
}

TEST_CASE("hadamard is commutative on equal shapes") {
    Rng rng(7);
    Tensor a({4, 4}), b({4, 4});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform(-2, 2);
        b[i] = rng.uniform(-2, 2);
    }
    CHECK(hadamard(a, b) == hadamard(b, a));
}

TEST_CASE("hadamard is associative when products stay exact") {
    // the masking use case: {0,1} operands and power-of-two scales round-trip
    // through the product without rounding, so grouping cannot matter
    Rng rng(8);
    Tensor a({4, 4}), mask1({4, 4}), mask2({4, 4});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform(-2, 2);
        mask1[i] = rng.next_double() < 0.5 ? 1.0 : 0.0;
        mask2[i] = rng.next_double() < 0.5 ? 1.0 : 0.0;
    }
    CHECK(hadamard(hadamard(a, mask1), mask2) == hadamard(a, hadamard(mask1, mask2)));

    Tensor pow2({4, 4});
    for (std::size_t i = 0; i < pow2.size(); ++i)
        pow2[i] = std::ldexp(1.0, int(rng.next_below(7)) - 3);
    CHECK(hadamard(hadamard(a, pow2), mask1) == hadamard(a, hadamard(pow2, mask1)));
}

TEST_CASE("relabel_canonical uses first-occurrence order") {
    InstanceLabelMap m(2, 2);
    m.labels = {0, 5, 5, 9};
    auto r = relabel_canonical(m);
    CHECK(r.labels == std::vector<std::uint32_t>{0, 1, 1, 2});

    InstanceLabelMap zeros(2, 2);
    CHECK(relabel_canonical(zeros).labels == std::vector<std::uint32_t>{0, 0, 0, 0});

    InstanceLabelMap m2(1, 3);
    m2.labels = {7, 0, 3};
    CHECK(relabel_canonical(m2).labels == std::vector<std::uint32_t>{1, 0, 2});
}

TEST_CASE("relabel_canonical is idempotent") {
    Rng rng(3);
    InstanceLabelMap m(6, 6);
    for (auto& v : m.labels) v = std::uint32_t(rng.next_below(9));
    const auto once = relabel_canonical(m);
    CHECK(relabel_canonical(once) == once);
}

TEST_CASE("seeded rng is reproducible and split streams differ") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(123);
    CHECK(c.split(1).next_u64() != c.split(2).next_u64());
    double u = Rng(5).next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
}

TEST_CASE("caplt round-trips tensors bit-exactly") {
    Rng rng(11);
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_normal();
    const auto path = std::filesystem::temp_directory_path() / "capl_test_tensor.caplt";
    write_caplt(path, t);
    CHECK(read_caplt_tensor(path) == t);

    const auto bytes = encode_caplt(t);
    CHECK(bytes[0] == 'C');
    CHECK(bytes[1] == 'A');
    CHECK(bytes[2] == 'P');
    CHECK(bytes[3] == 'L');
    CHECK(bytes[4] == 1);  // version
    CHECK(bytes[5] == 0);  // real64
    CHECK(bytes[6] == 3);  // rank
    std::filesystem::remove(path);
}

TEST_CASE("caplt stores label maps as uint32 rank-2 tensors") {
    InstanceLabelMap m(2, 3);
    m.labels = {0, 1, 2, 0, 1, 4000000000u};
    const auto path = std::filesystem::temp_directory_path() / "capl_test_map.caplt";
    write_caplt(path, m);
    const auto blob = read_caplt(path);
    CHECK(blob.dtype == CapltDtype::uint32);
    CHECK(blob.as_instance_map() == m);
    std::filesystem::remove(path);

    const auto bytes = encode_caplt({m.height, m.width}, m.labels);
    CHECK(bytes[5] == 1);  // dtype uint32
    CHECK_THROWS(decode_caplt(bytes.data(), bytes.size() - 1));
}
