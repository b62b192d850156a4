#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/optimizer.hpp"
#include "dvqa/tensor.hpp"

using namespace dvqa;

namespace {

// straight transcription of the update rule, kept independent of the class
struct RefAdam {
    double lr, b1, b2, eps;
    std::vector<double> m, v;
    int64_t t = 0;

    RefAdam(size_t n, double lr_, double b1_, double b2_, double eps_)
        : lr(lr_), b1(b1_), b2(b2_), eps(eps_), m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& w, const std::vector<double>& g) {
        ++t;
        double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

}  // namespace

TEST_CASE("quadratic converges to the minimum within 500 steps at lr 0.1") {
    Tensor x = Tensor::scalar(0.0, true);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({{"x", x}}, cfg);
    int converged_at = -1;
    for (int step = 1; step <= 500; ++step) {
        opt.zero_grad();
        Tensor d = add_scalar(x, -3.0);
        Tensor loss = mul(d, d);
        loss.backward();
        opt.step();
        if (std::fabs(x.item() - 3.0) <= 1e-6) {
            converged_at = step;
            break;
        }
    }
    INFO("final x " << x.item());
    CHECK(converged_at > 0);
    CHECK(converged_at <= 500);
    CHECK(opt.step_count() == converged_at);
}

TEST_CASE("first step moves by lr thanks to bias correction") {
    // at t=1 the corrected moments satisfy m_hat = g and v_hat = g*g, so the
    // update is lr * g / (|g| + eps) = lr * sign(g) up to eps
    Tensor x = Tensor::scalar(0.0, true);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({{"x", x}}, cfg);
    Tensor d = add_scalar(x, -3.0);
    Tensor loss = mul(d, d);
    loss.backward();
    opt.step();
    CHECK(x.item() == doctest::Approx(0.1).epsilon(1e-8));
}

TEST_CASE("trajectory matches a reference transcription on a skewed bowl") {
    // f(w) = 2*(w0-1)^2 + 0.5*(w1+2)^2, gradients computed by hand both sides
    std::vector<double> init{5.0, 5.0};
    Tensor w = Tensor::from_vector({2}, init, true);
    AdamConfig cfg;
    cfg.lr = 0.05;
    cfg.beta1 = 0.8;
    cfg.beta2 = 0.95;
    cfg.eps = 1e-10;
    Adam opt({{"w", w}}, cfg);
    RefAdam ref(2, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    std::vector<double> rw = init;
    for (int step = 0; step < 25; ++step) {
        opt.zero_grad();
        std::vector<double> g{4.0 * (w.data()[0] - 1.0), 1.0 * (w.data()[1] + 2.0)};
        w.impl()->grad = g;
        opt.step();
        std::vector<double> rg{4.0 * (rw[0] - 1.0), 1.0 * (rw[1] + 2.0)};
        ref.step(rw, rg);
        CHECK(w.data()[0] == rw[0]);
        CHECK(w.data()[1] == rw[1]);
    }
    CHECK(opt.step_count() == 25);
}

TEST_CASE("restored moment state continues the same trajectory") {
    auto make = [] {
        Tensor x = Tensor::from_vector({3}, {4.0, -2.0, 0.5}, true);
        AdamConfig cfg;
        cfg.lr = 0.07;
        return std::pair<Tensor, Adam>(x, Adam({{"x", x}}, cfg));
    };
    auto grad_of = [](const Tensor& x) {
        std::vector<double> g(3);
        for (int i = 0; i < 3; ++i) g[static_cast<size_t>(i)] = 2.0 * x.data()[i] - 1.0;
        return g;
    };

    auto [xa, oa] = make();
    for (int s = 0; s < 12; ++s) {
        oa.zero_grad();
        xa.impl()->grad = grad_of(xa);
        oa.step();
    }

    // snapshot after 5 steps, restore into a fresh optimizer, replay the rest
    auto [xb, ob] = make();
    for (int s = 0; s < 5; ++s) {
        ob.zero_grad();
        xb.impl()->grad = grad_of(xb);
        ob.step();
    }
    auto [xc, oc] = make();
    std::copy(xb.data(), xb.data() + 3, xc.data());
    oc.slots()[0].m = ob.slots()[0].m;
    oc.slots()[0].v = ob.slots()[0].v;
    oc.set_step_count(ob.step_count());
    for (int s = 0; s < 7; ++s) {
        oc.zero_grad();
        xc.impl()->grad = grad_of(xc);
        oc.step();
    }
    for (int i = 0; i < 3; ++i) CHECK(xc.data()[i] == xa.data()[i]);
    CHECK(oc.step_count() == 12);
}

TEST_CASE("unwritten gradients act as zeros") {
    Tensor x = Tensor::scalar(1.5, true);
    Adam opt({{"x", x}});
    opt.step();  // no backward ran; fresh moments stay zero
    CHECK(x.item() == 1.5);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("construction and config validation") {
    Tensor ok = Tensor::scalar(0.0, true);
    Tensor frozen = Tensor::scalar(0.0, false);
    CHECK_THROWS_AS(Adam({}, AdamConfig{}), ValueError);
    CHECK_THROWS_AS(Adam({{"a", frozen}}, AdamConfig{}), ValueError);
    CHECK_THROWS_AS(Adam({{"a", ok}, {"a", ok}}, AdamConfig{}), ValueError);
    CHECK_THROWS_AS(Adam({{"a", ok}, {"b", Tensor()}}, AdamConfig{}), ValueError);

    AdamConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(Adam({{"a", ok}}, bad), ValueError);
    bad = AdamConfig{};
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(Adam({{"a", ok}}, bad), ValueError);
    bad = AdamConfig{};
    bad.beta2 = -0.1;
    CHECK_THROWS_AS(Adam({{"a", ok}}, bad), ValueError);
    bad = AdamConfig{};
    bad.eps = 0.0;
    CHECK_THROWS_AS(Adam({{"a", ok}}, bad), ValueError);

    Adam opt({{"a", ok}});
    CHECK_THROWS_AS(opt.set_step_count(-1), ValueError);
}

TEST_CASE("non-finite gradient raises with the parameter name") {
    Tensor x = Tensor::scalar(0.0, true);
    Adam opt({{"theta", x}});
    x.impl()->grad = {std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("theta"), NumericError);
}

TEST_CASE("zero_grad clears accumulated gradients on the parameters") {
    Tensor x = Tensor::scalar(2.0, true);
    Adam opt({{"x", x}});
    Tensor loss = mul(x, x);
    loss.backward();
    CHECK(x.has_grad());
    opt.zero_grad();
    CHECK_FALSE(x.has_grad());
}
