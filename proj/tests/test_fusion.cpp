#include <doctest.h>

#include <cmath>
#include <numeric>

#include "tsf/fusion.hpp"

using namespace tsf;

namespace {

Tensor random_map(const Shape& s, Rng& rng) { return Tensor::randn(s, rng); }

std::vector<int> random_permutation(int n, Rng& rng) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_int(0, i)]);
    return p;
}

Tensor permute_channels(const Tensor& x, const std::vector<int>& p) {
    const int H = x.extent(0), W = x.extent(1), D = x.extent(2);
    std::vector<double> v(x.numel());
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int d = 0; d < D; ++d)
                v[offset3(x.shape(), i, j, d)] = x.at({i, j, p[d]});
    return Tensor::from_data(x.shape(), std::move(v));
}

}  // namespace

TEST_CASE("fuse_sum identities and elementwise oracle") {
    Rng rng(1);
    Tensor xa = random_map({4, 4, 3}, rng);
    CHECK(fuse_sum(xa, Tensor::zeros({4, 4, 3})).data() == xa.data());
    Tensor twice = fuse_sum(xa, xa);
    for (int64_t i = 0; i < xa.numel(); ++i)
        CHECK(twice.data()[i] == doctest::Approx(2.0 * xa.data()[i]));
    Tensor xb = random_map({4, 4, 3}, rng);
    Tensor y = fuse_sum(xa, xb);
    for (int64_t i = 0; i < xa.numel(); ++i)
        CHECK(y.data()[i] == xa.data()[i] + xb.data()[i]);
    CHECK_THROWS_AS(fuse_sum(xa, Tensor::zeros({4, 4, 2})), std::invalid_argument);
}

TEST_CASE("fuse_max identities, tie rule and elementwise oracle") {
    Rng rng(2);
    Tensor xa = random_map({3, 3, 2}, rng);
    Tensor sentinel = Tensor::full({3, 3, 2}, -1e30);
    CHECK(fuse_max(xa, sentinel).data() == xa.data());

    // fuse_max(x,x) = x with the full gradient routed to xa on ties.
    Tensor a = Tensor::from_data({1, 1, 2}, {1.0, -2.0}, true);
    Tensor b = Tensor::from_data({1, 1, 2}, {1.0, -2.0}, true);
    sum(fuse_max(a, b)).backward();
    CHECK(a.grad() == std::vector<double>{1.0, 1.0});
    CHECK(b.grad() == std::vector<double>{0.0, 0.0});

    Tensor xb = random_map({3, 3, 2}, rng);
    Tensor y = fuse_max(xa, xb);
    for (int64_t i = 0; i < xa.numel(); ++i)
        CHECK(y.data()[i] == std::max(xa.data()[i], xb.data()[i]));
}

TEST_CASE("fuse_cat D=1 stores (xb, xa)") {
    // Paper indexing is 1-based: output channel 2d-1 holds xb, channel 2d
    // holds xa, so the first stored channel is xb.
    Tensor xa = Tensor::from_data({1, 1, 1}, {5.0});
    Tensor xb = Tensor::from_data({1, 1, 1}, {7.0});
    Tensor y = fuse_cat(xa, xb);
    REQUIRE(y.shape() == Shape{1, 1, 2});
    CHECK(y.at({0, 0, 0}) == 7.0);
    CHECK(y.at({0, 0, 1}) == 5.0);
}

TEST_CASE("split_cat inverts fuse_cat") {
    Rng rng(3);
    Tensor xa = random_map({3, 2, 4}, rng), xb = random_map({3, 2, 4}, rng);
    auto [a2, b2] = split_cat(fuse_cat(xa, xb));
    CHECK(a2.data() == xa.data());
    CHECK(b2.data() == xb.data());
}

TEST_CASE("fuse_cat layout against an explicit index-loop oracle") {
    Rng rng(4);
    Tensor xa = random_map({3, 3, 4}, rng), xb = random_map({3, 3, 4}, rng);
    Tensor y = fuse_cat(xa, xb);
    REQUIRE(y.shape() == Shape{3, 3, 8});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int d = 0; d < 4; ++d) {
                CHECK(y.at({i, j, 2 * d}) == xb.at({i, j, d}));
                CHECK(y.at({i, j, 2 * d + 1}) == xa.at({i, j, d}));
            }
}

TEST_CASE("fuse_conv with the identity-sum filter equals fuse_sum") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const int D = rng.uniform_int(1, 5);
        Tensor xa = random_map({rng.uniform_int(1, 4), rng.uniform_int(1, 4), D}, rng);
        Tensor xb = random_map(xa.shape(), rng);
        auto [f, b] = init_fusion_filter(FusionInit::IdentitySum, D);
        Tensor conv = fuse_conv(xa, xb, f, b);
        Tensor plain = fuse_sum(xa, xb);
        REQUIRE(conv.shape() == plain.shape());
        for (int64_t i = 0; i < conv.numel(); ++i)
            CHECK(std::abs(conv.data()[i] - plain.data()[i]) <= 1e-12);
    }
}

TEST_CASE("fuse_conv projection filter extracts xa") {
    Rng rng(6);
    const int D = 3;
    Tensor xa = random_map({2, 2, D}, rng), xb = random_map({2, 2, D}, rng);
    // identity on xa rows (odd cat channels), zeros on xb rows
    Tensor f = Tensor::zeros({1, 1, 2 * D, D});
    for (int d = 0; d < D; ++d)
        f.data()[(2 * d + 1) * D + d] = 1.0;
    Tensor y = fuse_conv(xa, xb, f, Tensor::zeros({D}));
    for (int64_t i = 0; i < xa.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(xa.data()[i]).epsilon(1e-12));
}

TEST_CASE("fuse_conv with a random filter matches conv2d on the concatenated map") {
    Rng rng(7);
    const int D = 3;
    Tensor xa = random_map({4, 3, D}, rng), xb = random_map({4, 3, D}, rng);
    Tensor f = Tensor::randn({1, 1, 2 * D, D}, rng);
    Tensor b = Tensor::randn({D}, rng);
    Tensor y = fuse_conv(xa, xb, f, b);
    ConvSpec spec;
    spec.kernel = {1, 1};
    spec.stride = {1, 1};
    spec.pad = {0, 0};
    spec.in_channels = 2 * D;
    spec.out_channels = D;
    Tensor oracle = conv2d(fuse_cat(xa, xb), spec, f, b);
    CHECK(y.data() == oracle.data());
    CHECK_THROWS_AS(fuse_conv(xa, xb, Tensor::zeros({1, 1, D, D}), b), std::invalid_argument);
}

TEST_CASE("fuse_bilinear hand outer product") {
    Tensor xa = Tensor::from_data({1, 1, 2}, {1.0, 2.0});
    Tensor y = fuse_bilinear(xa, xa);
    REQUIRE(y.shape() == Shape{4});
    CHECK(y.data() == std::vector<double>{1.0, 2.0, 2.0, 4.0});
}

TEST_CASE("fuse_bilinear of anything with zeros is zero") {
    Rng rng(8);
    Tensor xa = random_map({3, 3, 2}, rng);
    Tensor y = fuse_bilinear(xa, Tensor::zeros({3, 3, 2}));
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("fuse_bilinear matches the triple-loop outer product oracle") {
    Rng rng(9);
    Tensor xa = random_map({3, 3, 2}, rng), xb = random_map({3, 3, 2}, rng);
    Tensor y = fuse_bilinear(xa, xb);
    const int D = 2;
    std::vector<double> expect(D * D, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int da = 0; da < D; ++da)
                for (int db = 0; db < D; ++db)
                    expect[da * D + db] += xa.at({i, j, da}) * xb.at({i, j, db});
    for (int k = 0; k < D * D; ++k) CHECK(std::abs(y.data()[k] - expect[k]) <= 1e-10);

    CHECK_THROWS_AS(fuse_bilinear(xa, Tensor::zeros({3, 3, 3})), std::invalid_argument);
}

TEST_CASE("fuse_bilinear is invariant to shared spatial permutations") {
    Rng rng(10);
    const int H = 3, W = 4, D = 2;
    Tensor xa = random_map({H, W, D}, rng), xb = random_map({H, W, D}, rng);
    auto p = random_permutation(H * W, rng);
    auto permute_locations = [&](const Tensor& x) {
        std::vector<double> v(x.numel());
        for (int q = 0; q < H * W; ++q)
            for (int d = 0; d < D; ++d) v[q * D + d] = x.data()[p[q] * D + d];
        return Tensor::from_data(x.shape(), std::move(v));
    };
    Tensor y1 = fuse_bilinear(xa, xb);
    Tensor y2 = fuse_bilinear(permute_locations(xa), permute_locations(xb));
    for (int64_t i = 0; i < y1.numel(); ++i)
        CHECK(y1.data()[i] == doctest::Approx(y2.data()[i]).epsilon(1e-12));
}

TEST_CASE("channel permutation equivariance of sum/max, conjugation of bilinear") {
    Rng rng(11);
    const int D = 4;
    Tensor xa = random_map({3, 3, D}, rng), xb = random_map({3, 3, D}, rng);
    auto p = random_permutation(D, rng);
    Tensor pa = permute_channels(xa, p), pb = permute_channels(xb, p);

    Tensor s1 = permute_channels(fuse_sum(xa, xb), p), s2 = fuse_sum(pa, pb);
    CHECK(s1.data() == s2.data());
    Tensor m1 = permute_channels(fuse_max(xa, xb), p), m2 = fuse_max(pa, pb);
    CHECK(m1.data() == m2.data());

    Tensor b1 = fuse_bilinear(xa, xb), b2 = fuse_bilinear(pa, pb);
    for (int da = 0; da < D; ++da)
        for (int db = 0; db < D; ++db)
            CHECK(b2.data()[da * D + db] ==
                  doctest::Approx(b1.data()[p[da] * D + p[db]]).epsilon(1e-12));
}

TEST_CASE("fusion shape contracts") {
    Rng rng(12);
    const int D = 3;
    Tensor xa = random_map({5, 4, D}, rng), xb = random_map({5, 4, D}, rng);
    CHECK(fuse_sum(xa, xb).shape() == Shape{5, 4, D});
    CHECK(fuse_max(xa, xb).shape() == Shape{5, 4, D});
    CHECK(fuse_cat(xa, xb).shape() == Shape{5, 4, 2 * D});
    auto [f, b] = init_fusion_filter(FusionInit::IdentitySum, D);
    CHECK(fuse_conv(xa, xb, f, b).shape() == Shape{5, 4, D});
    CHECK(fuse_bilinear(xa, xb).shape() == Shape{D * D});
}

TEST_CASE("identity-sum filter rows per stream are exact identities") {
    // Filter rows follow the cat interleave: even rows read the temporal
    // (xb) stream, odd rows the spatial (xa) stream.
    auto [f, b] = init_fusion_filter(FusionInit::IdentitySum, 2);
    REQUIRE(f.shape() == Shape{1, 1, 4, 2});
    auto row = [&](int r, int c) { return f.data()[r * 2 + c]; };
    // xb (temporal) rows
    CHECK(row(0, 0) == 1.0);
    CHECK(row(0, 1) == 0.0);
    CHECK(row(2, 0) == 0.0);
    CHECK(row(2, 1) == 1.0);
    // xa (spatial) rows
    CHECK(row(1, 0) == 1.0);
    CHECK(row(1, 1) == 0.0);
    CHECK(row(3, 0) == 0.0);
    CHECK(row(3, 1) == 1.0);
    for (double v : b.data()) CHECK(v == 0.0);
    CHECK(f.requires_grad());
    CHECK(b.requires_grad());
}

TEST_CASE("scaled identity init multiplies the temporal block by the factor") {
    auto [f, b] = init_fusion_filter(FusionInit::IdentitySumScaled, 2, 3.0);
    // The temporal (xb) rows form the block [[3,0],[0,3]].
    CHECK(f.data()[0 * 2 + 0] == 3.0);
    CHECK(f.data()[2 * 2 + 1] == 3.0);
    CHECK(f.data()[0 * 2 + 1] == 0.0);
    // The spatial (xa) rows stay the plain identity.
    CHECK(f.data()[1 * 2 + 0] == 1.0);
    CHECK(f.data()[3 * 2 + 1] == 1.0);

    // And the fused output is xa + 3*xb.
    Rng rng(13);
    Tensor xa = random_map({2, 2, 2}, rng), xb = random_map({2, 2, 2}, rng);
    Tensor y = fuse_conv(xa, xb, f, b);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(xa.data()[i] + 3.0 * xb.data()[i]).epsilon(1e-12));
}

TEST_CASE("gaussian init sample std over 1e4 draws is within 5%") {
    Rng rng(14);
    const int D = 71;  // 2*71*71 > 1e4 entries
    auto [f, b] = init_fusion_filter(FusionInit::Gaussian, D, 3.0, 1.0, &rng);
    const auto& v = f.data();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() - 1);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS_AS(init_fusion_filter(FusionInit::Gaussian, 4), std::invalid_argument);
}

TEST_CASE("bilinear_features applies signed sqrt then unit L2 norm") {
    Rng rng(15);
    Tensor xa = random_map({3, 3, 3}, rng), xb = random_map({3, 3, 3}, rng);
    Tensor feat = bilinear_features(xa, xb);
    double norm = 0.0;
    for (double v : feat.data()) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));

    Tensor raw = fuse_bilinear(xa, xb);
    // Signs survive; magnitudes are power-normalised before scaling.
    for (int64_t i = 0; i < raw.numel(); ++i)
        CHECK((feat.data()[i] >= 0.0) == (raw.data()[i] >= 0.0));
}
