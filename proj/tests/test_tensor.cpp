#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "tsf/tensor.hpp"

using namespace tsf;

TEST_CASE("shape bookkeeping and invariants") {
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(t.shape() == Shape{2, 3, 4});
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({2, 3, 4, 5, 6, 7}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);
}

TEST_CASE("backward accumulates fan-out gradients") {
    Tensor x = Tensor::from_data({2}, {3.0, -1.0}, true);
    // y = x + x; loss = sum(y) -> dloss/dx = 2 everywhere.
    Tensor loss = sum(add(x, x));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar roots") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(add(x, x).backward(), std::invalid_argument);
}

TEST_CASE("repeated backward on fresh graphs keeps accumulating into leaves") {
    Tensor w = Tensor::from_data({1}, {2.0}, true);
    sum(scale(w, 3.0)).backward();
    sum(scale(w, 4.0)).backward();
    CHECK(w.grad()[0] == doctest::Approx(7.0));
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("stop_gradient blocks flow upstream") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor held = stop_gradient(add(x, x));
    CHECK_FALSE(held.requires_grad());
    Tensor w = Tensor::from_data({2}, {1.0, 1.0}, true);
    sum(mul(held, w)).backward();
    CHECK_FALSE(x.has_grad());
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("elementwise op results") {
    Tensor a = Tensor::from_data({3}, {1.0, -2.0, 3.0});
    Tensor b = Tensor::from_data({3}, {4.0, 5.0, -6.0});
    CHECK(add(a, b).data() == std::vector<double>{5.0, 3.0, -3.0});
    CHECK(sub(a, b).data() == std::vector<double>{-3.0, -7.0, 9.0});
    CHECK(mul(a, b).data() == std::vector<double>{4.0, -10.0, -18.0});
    CHECK(scale(a, -2.0).data() == std::vector<double>{-2.0, 4.0, -6.0});
    CHECK(sum(a).item() == doctest::Approx(2.0));
    CHECK_THROWS_AS(add(a, Tensor::zeros({4})), std::invalid_argument);
}

TEST_CASE("pad_spatial zero-fills the border") {
    Tensor x = Tensor::from_data({1, 1, 2}, {5.0, 7.0});
    Tensor y = pad_spatial(x, 0, 1, 0, 1);
    CHECK(y.shape() == Shape{2, 2, 2});
    CHECK(y.at({0, 0, 0}) == 5.0);
    CHECK(y.at({0, 0, 1}) == 7.0);
    CHECK(y.at({0, 1, 0}) == 0.0);
    CHECK(y.at({1, 1, 1}) == 0.0);
}

TEST_CASE("deterministic: same seed, same op results bitwise") {
    auto run = [] {
        Rng rng(42);
        Tensor a = Tensor::randn({4, 4, 2}, rng);
        Tensor b = Tensor::randn({4, 4, 2}, rng);
        return mul(a, b).data();
    };
    CHECK(run() == run());
}

TEST_CASE("serialization round trip preserves values bitwise") {
    Rng rng(7);
    Tensor t = Tensor::randn({3, 2, 4}, rng);
    std::stringstream ss;
    save_tensor(ss, t);
    Tensor back = load_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(back.data() == t.data());
}

TEST_CASE("serialization header layout is the documented binary format") {
    Tensor t = Tensor::from_data({2, 1}, {1.0, -2.0});
    std::stringstream ss;
    save_tensor(ss, t);
    const std::string bytes = ss.str();
    // magic + dtype(8) + rank(8) + 2 extents(16) + 2 doubles(16)
    REQUIRE(bytes.size() == 4 + 8 + 8 + 16 + 16);
    CHECK(bytes.substr(0, 4) == "TSR1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 0);   // dtype f64, little-endian
    CHECK(static_cast<unsigned char>(bytes[12]) == 2);  // rank
    CHECK(static_cast<unsigned char>(bytes[20]) == 2);  // extent 0
    CHECK(static_cast<unsigned char>(bytes[28]) == 1);  // extent 1
}

TEST_CASE("byte tensor round trip and dtype mismatch") {
    ByteTensor bt;
    bt.shape = {2, 3};
    bt.data = {0, 1, 2, 253, 254, 255};
    std::stringstream ss;
    save_tensor(ss, bt);
    ByteTensor back = load_byte_tensor(ss);
    CHECK(back.shape == bt.shape);
    CHECK(back.data == bt.data);

    std::stringstream ss2;
    save_tensor(ss2, bt);
    CHECK_THROWS_AS(load_tensor(ss2), std::runtime_error);
}

TEST_CASE("rng forks are independent of call order") {
    Rng master(99);
    Rng a = master.fork(1);
    Rng b = master.fork(2);
    Rng a2 = Rng(99).fork(1);
    CHECK(a.next_u64() == a2.next_u64());
    CHECK(a.next_u64() != b.next_u64());
}
