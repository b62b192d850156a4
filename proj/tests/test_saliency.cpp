#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "dvqa/error.hpp"
#include "dvqa/model.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/saliency.hpp"
#include "dvqa/tensor.hpp"

using namespace dvqa;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_h = 32;
    c.image_w = 32;
    c.enc_channels = 16;
    c.embed_dim = 16;
    c.mlp_hidden = 32;
    c.proj_heads = 2;
    c.text_heads = 2;
    c.dec_heads = 2;
    c.text_layers = 1;
    c.dec_layers = 1;
    c.max_question_len = 6;
    c.max_answer_len = 6;
    c.vocab_size = 12;
    return c;
}

SaliencyMap random_map(uint64_t seed, int64_t h = 8, int64_t w = 8) {
    CounterRng rng(seed, 0);
    return {Tensor::rand_uniform({h, w}, rng, 0.0, 1.0), MapSource::kMain};
}

}  // namespace

TEST_CASE("cam target marks every keyword occurrence") {
    CamTarget t = CamTarget::from_answer({7}, {5, 7, 6, 7});
    CHECK(t.positions == std::vector<int64_t>{1, 3});
    CHECK(t.usable());
    CHECK_NOTHROW(t.validate());

    CamTarget miss = CamTarget::from_answer({9}, {5, 7, 6});
    CHECK_FALSE(miss.usable());
    CHECK_THROWS_AS(miss.validate(), ValueError);

    CamTarget corrupt = t;
    corrupt.positions.push_back(99);
    CHECK_THROWS_AS(corrupt.validate(), ValueError);
    corrupt = t;
    corrupt.positions[0] = 0;  // answer[0] is not a keyword token
    CHECK_THROWS_AS(corrupt.validate(), ValueError);
}

TEST_CASE("upsample keeps same-size maps bitwise and interpolates midpoints") {
    Tensor m = Tensor::from_vector({2, 2}, {0.0, 1.0, 2.0, 3.0});
    Tensor same = upsample_bilinear(m, 2, 2);
    CHECK(std::memcmp(same.data(), m.data(), sizeof(double) * 4) == 0);

    Tensor up = upsample_bilinear(m, 3, 3);
    const double* d = up.data();
    CHECK(d[0] == 0.0);
    CHECK(d[2] == 1.0);
    CHECK(d[6] == 2.0);
    CHECK(d[8] == 3.0);
    CHECK(d[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d[3] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d[4] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(d[5] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d[7] == doctest::Approx(2.5).epsilon(1e-15));

    CHECK_THROWS_AS(upsample_bilinear(Tensor::zeros({2, 2, 2}), 4, 4), ShapeError);
    CHECK_THROWS_AS(upsample_bilinear(m, 1, 4), ShapeError);
}

TEST_CASE("single-channel cam reduces to the rectified normalized feature map") {
    Tensor fmap = Tensor::from_vector({1, 1, 2, 2}, {0.2, -0.5, 0.8, 0.1});
    std::vector<double> dfmap(4, 1.0);  // alpha = +1
    SaliencyMap s = cam_from_activations(fmap, dfmap, 4, 4, MapSource::kMain);
    REQUIRE(s.values.shape() == Shape{4, 4});
    CHECK(s.source == MapSource::kMain);

    Tensor expect = upsample_bilinear(Tensor::from_vector({2, 2}, {0.2, 0.0, 0.8, 0.1}), 4, 4);
    for (int64_t i = 0; i < 16; ++i)
        CHECK(s.values.data()[i] == doctest::Approx(expect.data()[i] / 0.8).epsilon(1e-15));
}

TEST_CASE("non-positive channel weights fail open to all ones") {
    Tensor fmap = Tensor::from_vector({1, 2, 2}, {0.5, 0.25, 0.75, 0.0});
    std::vector<double> dfmap(4, -1.0);
    SaliencyMap s = cam_from_activations(fmap, dfmap, 4, 4, MapSource::kRef);
    for (int64_t i = 0; i < s.values.numel(); ++i) CHECK(s.values.data()[i] == 1.0);

    std::vector<double> wrong(3, 1.0);
    CHECK_THROWS_AS(cam_from_activations(fmap, wrong, 4, 4, MapSource::kRef), ShapeError);
}

TEST_CASE("cam is invariant to feature scale when gradients scale inversely") {
    CounterRng rng(31, 0);
    Tensor fmap = Tensor::rand_uniform({3, 4, 4}, rng, -0.5, 1.5);
    std::vector<double> dfmap(48);
    for (auto& v : dfmap) v = rng.uniform(-1.0, 1.0);

    SaliencyMap base = cam_from_activations(fmap, dfmap, 8, 8, MapSource::kMain);

    Tensor fmap2 = scale(fmap, 2.0);
    std::vector<double> dfmap2 = dfmap;
    for (auto& v : dfmap2) v /= 2.0;
    SaliencyMap scaled = cam_from_activations(fmap2, dfmap2, 8, 8, MapSource::kMain);
    CHECK(std::memcmp(base.values.data(), scaled.values.data(), sizeof(double) * 64) == 0);
}

TEST_CASE("shared mask fuses by max then min-max normalizes") {
    SaliencyMap a{Tensor::from_vector({1, 2}, {0.0, 0.4}), MapSource::kMain};
    SaliencyMap b{Tensor::from_vector({1, 2}, {0.2, 0.2}), MapSource::kRef};
    SaliencyMap s = shared_mask(a, b);
    CHECK(s.source == MapSource::kShared);
    CHECK(s.values.data()[0] == 0.0);
    CHECK(s.values.data()[1] == 1.0);

    SaliencyMap flat{Tensor::full({2, 2}, 0.3), MapSource::kMain};
    SaliencyMap ones = shared_mask(flat, flat);
    for (int64_t i = 0; i < 4; ++i) CHECK(ones.values.data()[i] == 1.0);

    SaliencyMap other{Tensor::zeros({3, 2}), MapSource::kRef};
    CHECK_THROWS_AS(shared_mask(a, other), ShapeError);
}

TEST_CASE("shared mask invariants hold on many random pairs") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        SaliencyMap a = random_map(2 * seed, 4, 5);
        SaliencyMap b = random_map(2 * seed + 1, 4, 5);
        SaliencyMap ab = shared_mask(a, b);
        SaliencyMap ba = shared_mask(b, a);
        REQUIRE(std::memcmp(ab.values.data(), ba.values.data(), sizeof(double) * 20) == 0);
        double out_lo = 1e300, out_hi = -1e300;
        for (int64_t i = 0; i < 20; ++i) {
            double v = ab.values.data()[i];
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            out_lo = std::min(out_lo, v);
            out_hi = std::max(out_hi, v);
        }
        // non-degenerate min-max stretches to the full range
        REQUIRE(out_lo == 0.0);
        REQUIRE(out_hi == 1.0);
        SaliencyMap aa = shared_mask(a, a);
        double lo = 1e300, hi = -1e300;
        for (int64_t i = 0; i < 20; ++i) {
            lo = std::min(lo, a.values.data()[i]);
            hi = std::max(hi, a.values.data()[i]);
        }
        for (int64_t i = 0; i < 20; ++i)
            REQUIRE(aa.values.data()[i] ==
                    doctest::Approx((a.values.data()[i] - lo) / (hi - lo)).epsilon(1e-12));
    }
}

TEST_CASE("apply_mask scales channels and blocks gradient into the mask") {
    CounterRng rng(41, 0);
    Tensor img = Tensor::rand_uniform({1, 2, 3, 3}, rng, 0.1, 0.9, true);
    SaliencyMap s{Tensor::rand_uniform({3, 3}, rng, 0.0, 1.0), MapSource::kShared};

    Tensor out = apply_mask(img, s);
    REQUIRE(out.shape() == img.shape());
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t p = 0; p < 9; ++p)
            CHECK(out.data()[c * 9 + p] == img.data()[c * 9 + p] * s.values.data()[p]);

    sum(out).backward();
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t p = 0; p < 9; ++p)
            CHECK(img.grad()[c * 9 + p] == s.values.data()[p]);

    SaliencyMap ones{Tensor::ones({3, 3}), MapSource::kShared};
    Tensor same = apply_mask(img, ones);
    CHECK(std::memcmp(same.data(), img.data(), sizeof(double) * img.numel()) == 0);

    SaliencyMap zeros{Tensor::zeros({3, 3}), MapSource::kShared};
    Tensor dark = apply_mask(img, zeros);
    for (int64_t i = 0; i < dark.numel(); ++i) CHECK(dark.data()[i] == 0.0);

    SaliencyMap half{Tensor::full({3, 3}, 0.5), MapSource::kShared};
    Tensor dim = apply_mask(img, half);
    for (int64_t i = 0; i < dim.numel(); ++i) CHECK(dim.data()[i] == 0.5 * img.data()[i]);

    CHECK_THROWS_AS(apply_mask(Tensor::zeros({1, 1, 4, 4}), s), ShapeError);
}

TEST_CASE("gradcam on the real model yields valid maps and stays read-only") {
    ModelConfig c = tiny_config();
    DiffVqaModel m(c, 51);
    CounterRng rng(52, 0);
    Tensor main = Tensor::rand_uniform({1, 1, 32, 32}, rng, 0.0, 1.0);
    Tensor ref = Tensor::rand_uniform({1, 1, 32, 32}, rng, 0.0, 1.0);
    std::vector<int64_t> question{5, 6};
    CamTarget target = CamTarget::from_answer({8}, {7, 8, 9});

    reset_gradcam_call_count();
    SaliencyMap s_main, s_ref;
    {
        NoGradGuard ng;  // gradcam must enable the tape internally
        std::tie(s_main, s_ref) = gradcam_pair(m, main, ref, question, target);
        CHECK_FALSE(grad_enabled());
    }
    CHECK(gradcam_call_count() == 1);
    CHECK(s_main.source == MapSource::kMain);
    CHECK(s_ref.source == MapSource::kRef);
    REQUIRE(s_main.values.shape() == Shape{32, 32});
    REQUIRE(s_ref.values.shape() == Shape{32, 32});
    for (int64_t i = 0; i < 32 * 32; ++i) {
        double a = s_main.values.data()[i], b = s_ref.values.data()[i];
        REQUIRE(a >= 0.0);
        REQUIRE(a <= 1.0);
        REQUIRE(b >= 0.0);
        REQUIRE(b <= 1.0);
    }
    // the probe cleans up after itself
    for (auto& [name, t] : m.named_parameters()) CHECK_FALSE(t.has_grad());

    SaliencyMap one = gradcam(m, main, ref, question, target, MapSource::kMain);
    CHECK(gradcam_call_count() == 2);
    CHECK(std::memcmp(one.values.data(), s_main.values.data(), sizeof(double) * 32 * 32) == 0);

    CHECK_THROWS_AS(gradcam(m, main, ref, question, target, MapSource::kShared), ValueError);
    CamTarget absent = CamTarget::from_answer({11}, {7, 8, 9});
    CHECK_THROWS_AS(gradcam_pair(m, main, ref, question, absent), ValueError);
    reset_gradcam_call_count();
    CHECK(gradcam_call_count() == 0);
}
