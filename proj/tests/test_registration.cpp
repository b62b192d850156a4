#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dvqa/error.hpp"
#include "dvqa/kernels.hpp"
#include "dvqa/registration.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/tensor.hpp"

using namespace dvqa;

namespace {

AffineParams rotation(double deg, double tx = 0.0, double ty = 0.0) {
    double r = deg * M_PI / 180.0;
    AffineParams p;
    p.A = {std::cos(r), -std::sin(r), std::sin(r), std::cos(r)};
    p.t = {tx, ty};
    return p;
}

Tensor smooth_image(int64_t h, int64_t w) {
    std::vector<double> v(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            v[static_cast<size_t>(i * w + j)] =
                0.5 + 0.25 * std::sin(2.0 * M_PI * j / static_cast<double>(w)) *
                          std::cos(2.0 * M_PI * i / static_cast<double>(h));
    return Tensor::from_vector({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("affine params: det, inverse, compose, pixel translation") {
    AffineParams id = AffineParams::identity();
    CHECK(id.det() == doctest::Approx(1.0));

    AffineParams p = rotation(30.0, 0.2, -0.1);
    AffineParams round = p.compose(p.inverse());
    CHECK(std::fabs(round.A[0] - 1.0) <= 1e-12);
    CHECK(std::fabs(round.A[1]) <= 1e-12);
    CHECK(std::fabs(round.A[2]) <= 1e-12);
    CHECK(std::fabs(round.A[3] - 1.0) <= 1e-12);
    CHECK(std::fabs(round.t[0]) <= 1e-12);
    CHECK(std::fabs(round.t[1]) <= 1e-12);

    AffineParams sing;
    sing.A = {1, 2, 2, 4};
    CHECK_THROWS_AS(sing.inverse(), NumericError);

    AffineParams tr;
    tr.t = {0.25, -0.5};
    auto px = tr.translation_px(64, 32);
    CHECK(px[0] == doctest::Approx(0.25 * 0.5 * 31).epsilon(1e-12));
    CHECK(px[1] == doctest::Approx(-0.5 * 0.5 * 63).epsilon(1e-12));
}

TEST_CASE("affine tensor round trip and shape validation") {
    AffineParams p = rotation(12.0, 0.05, -0.03);
    Tensor th = affine_to_tensor(p);
    REQUIRE(th.shape() == Shape{1, 2, 3});
    AffineParams q = affine_from_tensor(th);
    for (int i = 0; i < 4; ++i) CHECK(q.A[i] == p.A[i]);
    CHECK(q.t[0] == p.t[0]);
    CHECK(q.t[1] == p.t[1]);

    Tensor unbatched = reshape(th, {2, 3});
    AffineParams r = affine_from_tensor(unbatched);
    CHECK(r.A[0] == p.A[0]);
    CHECK_THROWS_AS(affine_from_tensor(unbatched, 1), ShapeError);
    CHECK_THROWS_AS(affine_from_tensor(th, 2), ShapeError);
    CHECK_THROWS_AS(affine_from_tensor(Tensor::zeros({4})), ShapeError);
}

TEST_CASE("affine_grid reproduces the lattice bitwise at identity") {
    Tensor th = affine_to_tensor(AffineParams::identity());
    int64_t h = 5, w = 7;
    Tensor g = affine_grid(th, h, w);
    REQUIRE(g.shape() == Shape{1, h, w, 2});
    const double* d = g.data();
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            CHECK(d[(i * w + j) * 2 + 0] == kernels::lattice_coord(j, w));
            CHECK(d[(i * w + j) * 2 + 1] == kernels::lattice_coord(i, h));
        }
    CHECK_THROWS_AS(affine_grid(th, 1, 7), ShapeError);
    CHECK_THROWS_AS(affine_grid(Tensor::zeros({2, 3}), 4, 4), ShapeError);
}

TEST_CASE("affine_grid applies pure translation to every lattice point") {
    Tensor th = Tensor::from_vector({1, 2, 3}, {1, 0, 0.5, 0, 1, -0.25});
    int64_t h = 4, w = 6;
    Tensor g = affine_grid(th, h, w);
    const double* d = g.data();
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            CHECK(d[(i * w + j) * 2 + 0] ==
                  doctest::Approx(kernels::lattice_coord(j, w) + 0.5).epsilon(1e-15));
            CHECK(d[(i * w + j) * 2 + 1] ==
                  doctest::Approx(kernels::lattice_coord(i, h) - 0.25).epsilon(1e-15));
        }
}

TEST_CASE("identity warp returns the image bitwise") {
    CounterRng rng(11, 0);
    Tensor img = Tensor::rand_uniform({2, 1, 16, 12}, rng, 0.0, 1.0);
    Tensor th = concat({affine_to_tensor(AffineParams::identity()),
                        affine_to_tensor(AffineParams::identity())},
                       0);
    Tensor out = warp_main(img, th);
    REQUIRE(out.shape() == img.shape());
    CHECK(std::memcmp(out.data(), img.data(), sizeof(double) * img.numel()) == 0);
}

TEST_CASE("warp shifts a linear ramp by the exact pixel offset") {
    int64_t h = 8, w = 17;
    std::vector<double> v(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) v[static_cast<size_t>(i * w + j)] = j / static_cast<double>(w - 1);
    Tensor img = Tensor::from_vector({1, 1, h, w}, std::move(v));

    double dpx = 2.5;
    Tensor th = Tensor::from_vector({1, 2, 3}, {1, 0, 2.0 * dpx / (w - 1), 0, 1, 0});
    Tensor out = warp_main(img, th);
    const double* o = out.data();
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j + 3 < w; ++j)
            CHECK(o[i * w + j] == doctest::Approx((j + dpx) / static_cast<double>(w - 1)).epsilon(1e-12));
}

TEST_CASE("warping with a transform then its inverse recovers the interior") {
    int64_t h = 48, w = 48;
    Tensor img = smooth_image(h, w);
    AffineParams p = rotation(3.0, 2.0 * 1.5 / (w - 1), -2.0 * 1.0 / (h - 1));
    Tensor once = warp_main(img, affine_to_tensor(p));
    Tensor back = warp_main(once, affine_to_tensor(p.inverse()));
    const double* a = img.data();
    const double* b = back.data();
    double worst = 0.0;
    for (int64_t i = 8; i < h - 8; ++i)
        for (int64_t j = 8; j < w - 8; ++j)
            worst = std::max(worst, std::fabs(a[i * w + j] - b[i * w + j]));
    CHECK(worst <= 0.05);
}

TEST_CASE("reg_loss is exactly zero at identity with zero gradient") {
    Tensor th = affine_to_tensor(AffineParams::identity());
    th.impl()->requires_grad = true;
    RegLossWeights w;
    Tensor loss = reg_loss(th, w);
    CHECK(loss.item() == 0.0);
    loss.backward();
    const std::vector<double>& g = th.grad();
    for (int i = 0; i < 6; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("reg_loss matches hand-computed values") {
    RegLossWeights w;
    Tensor th = Tensor::from_vector({1, 2, 3}, {1.1, 0, 0.2, 0, 1, 0});
    // fro = 0.01 + 0.04, det deviation = 0.1^2, translation = 0.04
    double expect = 1e-4 * 0.05 + 1e-5 * 0.01 + 1e-6 * 0.04;
    CHECK(reg_loss(th, w).item() == doctest::Approx(expect).epsilon(1e-12));

    Tensor batched = concat({affine_to_tensor(AffineParams::identity()), th}, 0);
    CHECK(reg_loss(batched, w).item() == doctest::Approx(expect / 2).epsilon(1e-12));

    Tensor flat = reshape(th, {2, 3});
    CHECK(reg_loss(flat, w).item() == doctest::Approx(expect).epsilon(1e-12));

    CHECK_THROWS_AS(reg_loss(Tensor::zeros({6}), w), ShapeError);
}

TEST_CASE("reg_loss gradient agrees with finite differences") {
    CounterRng rng(3, 0);
    Tensor th = Tensor::rand_uniform({2, 2, 3}, rng, -0.3, 0.3, true);
    // Nudge toward identity so the determinant term is well scaled.
    double* d = th.data();
    d[0] += 1.0;
    d[4] += 1.0;
    d[6] += 1.0;
    d[10] += 1.0;
    RegLossWeights w;
    double err = grad_check([&](const Tensor& x) { return reg_loss(x, w); }, th);
    CHECK(err <= 1e-6);
}

TEST_CASE("warp gradients flow through theta") {
    CounterRng rng(5, 0);
    Tensor img = Tensor::rand_uniform({1, 1, 9, 9}, rng, 0.1, 0.9);
    // Coefficients chosen so no lattice point maps near an integer pixel
    // coordinate, where bilinear sampling kinks and central differences lie.
    Tensor th0 = Tensor::from_vector({1, 2, 3}, {0.9641, 0.0213, 0.0517, -0.0287, 1.0113, -0.0406}, true);
    auto f = [&](const Tensor& x) {
        Tensor out = warp_main(img, x);
        CounterRng wr(17, 0);
        Tensor wgt = Tensor::rand_uniform(out.shape(), wr, 0.2, 1.7);
        return sum(mul(out, wgt));
    };
    CHECK(grad_check(f, th0) <= 1e-5);
}

TEST_CASE("fresh predictor outputs the exact identity") {
    CounterRng rng(123, 0);
    AffinePredictor pred(rng);
    CounterRng ir(7, 0);
    Tensor main = Tensor::rand_uniform({3, 1, 32, 32}, ir, 0.0, 1.0);
    Tensor ref = Tensor::rand_uniform({3, 1, 32, 32}, ir, 0.0, 1.0);
    Tensor th = pred.forward(main, ref);
    REQUIRE(th.shape() == Shape{3, 2, 3});
    const double identity[6] = {1, 0, 0, 0, 1, 0};
    for (int64_t b = 0; b < 3; ++b)
        for (int i = 0; i < 6; ++i) CHECK(th.data()[b * 6 + i] == identity[i]);
    CHECK(reg_loss(th, RegLossWeights{}).item() == 0.0);

    auto params = pred.named_parameters();
    CHECK(params.size() == 6);
    CHECK(params[0].first == "reg.conv1.w");

    CHECK_THROWS_AS(pred.forward(main, Tensor::zeros({3, 1, 16, 16})), ShapeError);
}

TEST_CASE("predictor gradients reach the convolution weights") {
    CounterRng rng(9, 0);
    AffinePredictor pred(rng);
    CounterRng ir(21, 0);
    Tensor main = Tensor::rand_uniform({1, 1, 16, 16}, ir, 0.0, 1.0);
    Tensor ref = Tensor::rand_uniform({1, 1, 16, 16}, ir, 0.0, 1.0);

    // One descent step on pixel MSE moves theta off identity, so the fc weights
    // must receive gradient even though they start at zero.
    Tensor th = pred.forward(main, ref);
    Tensor warped = warp_main(main, th);
    Tensor diff = sub(warped, ref);
    Tensor loss = mean(mul(diff, diff));
    loss.backward();

    auto params = pred.named_parameters();
    bool fc_w_has = false;
    for (auto& [name, t] : params) {
        if (name == "reg.fc.w") {
            REQUIRE(t.has_grad());
            for (double g : t.grad()) fc_w_has |= (g != 0.0);
        }
    }
    CHECK(fc_w_has);
}
