#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/tensor.hpp"

namespace dvqa {

class CounterRng;

// 2x3 affine block Theta = [A t] acting on align-corners normalized
// coordinates: source = A * x_tgt + t.
struct AffineParams {
    std::array<double, 4> A{1, 0, 0, 1};  // row-major 2x2
    std::array<double, 2> t{0, 0};

    static AffineParams identity() { return AffineParams{}; }

    double det() const { return A[0] * A[3] - A[1] * A[2]; }
    AffineParams inverse() const;
    // (*this) applied after `inner`: x -> A*(inner(x)) + t
    AffineParams compose(const AffineParams& inner) const;
    // Normalized translation expressed in pixels of a WxH image.
    std::array<double, 2> translation_px(int64_t H, int64_t W) const;
};

AffineParams affine_from_tensor(const Tensor& theta, int64_t batch_index = 0);
Tensor affine_to_tensor(const AffineParams& p);  // [1,2,3], no grad

struct RegLossWeights {
    double w_small = 1e-4;
    double w_det = 1e-5;
    double w_trans = 1e-6;
};

// For each target pixel of an HxW output, the normalized source coordinate
// A*x_tgt + t. theta is [B,2,3]; result is [B,H,W,2], differentiable in theta.
Tensor affine_grid(const Tensor& theta, int64_t H, int64_t W);

// Warp the main image only; the reference image never passes through here.
Tensor warp_main(const Tensor& main, const Tensor& theta);

// w_small*||Theta - I||_F^2 + w_det*(det A - 1)^2 + w_trans*||t||^2, averaged
// over the batch. I is the 2x3 identity affine, so t is penalized by both the
// Frobenius and the translation terms.
Tensor reg_loss(const Tensor& theta, const RegLossWeights& w);

// Shallow CNN over the channel-concatenated pair predicting theta. The final
// linear layer starts at zero weights with identity-affine bias, so a fresh
// predictor outputs the exact identity.
class AffinePredictor {
public:
    AffinePredictor(CounterRng& rng, int64_t c1 = 8, int64_t c2 = 16);

    // main, ref: [B,1,H,W] -> theta [B,2,3]
    Tensor forward(const Tensor& main, const Tensor& ref) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

private:
    Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_, fc_w_, fc_b_;
    int64_t c2_;
};

}  // namespace dvqa
