#include "dvqa/registration.hpp"

#include <cmath>

#include "dvqa/error.hpp"
#include "dvqa/kernels.hpp"
#include "dvqa/rng.hpp"

namespace dvqa {

AffineParams AffineParams::inverse() const {
    double d = det();
    if (std::fabs(d) < 1e-12) throw NumericError("affine inverse: singular A");
    AffineParams r;
    r.A = {A[3] / d, -A[1] / d, -A[2] / d, A[0] / d};
    r.t = {-(r.A[0] * t[0] + r.A[1] * t[1]), -(r.A[2] * t[0] + r.A[3] * t[1])};
    return r;
}

AffineParams AffineParams::compose(const AffineParams& inner) const {
    AffineParams r;
    r.A = {A[0] * inner.A[0] + A[1] * inner.A[2], A[0] * inner.A[1] + A[1] * inner.A[3],
           A[2] * inner.A[0] + A[3] * inner.A[2], A[2] * inner.A[1] + A[3] * inner.A[3]};
    r.t = {A[0] * inner.t[0] + A[1] * inner.t[1] + t[0], A[2] * inner.t[0] + A[3] * inner.t[1] + t[1]};
    return r;
}

std::array<double, 2> AffineParams::translation_px(int64_t H, int64_t W) const {
    return {t[0] * 0.5 * static_cast<double>(W - 1), t[1] * 0.5 * static_cast<double>(H - 1)};
}

AffineParams affine_from_tensor(const Tensor& theta, int64_t batch_index) {
    const Shape& s = theta.shape();
    const double* d = theta.data();
    if (s == Shape{2, 3}) {
        if (batch_index != 0) throw ShapeError("affine_from_tensor: batch index on an unbatched theta");
    } else if (s.size() == 3 && s[1] == 2 && s[2] == 3) {
        if (batch_index < 0 || batch_index >= s[0]) throw ShapeError("affine_from_tensor: batch index out of range");
        d += batch_index * 6;
    } else {
        throw ShapeError("affine_from_tensor: theta must be [2,3] or [B,2,3], got " + shape_str(s));
    }
    AffineParams p;
    p.A = {d[0], d[1], d[3], d[4]};
    p.t = {d[2], d[5]};
    return p;
}

Tensor affine_to_tensor(const AffineParams& p) {
    return Tensor::from_vector({1, 2, 3}, {p.A[0], p.A[1], p.t[0], p.A[2], p.A[3], p.t[1]});
}

Tensor affine_grid(const Tensor& theta, int64_t H, int64_t W) {
    const Shape& s = theta.shape();
    if (s.size() != 3 || s[1] != 2 || s[2] != 3)
        throw ShapeError("affine_grid: theta must be [B,2,3], got " + shape_str(s));
    if (H < 2 || W < 2) throw ShapeError("affine_grid: H and W must be at least 2");
    int64_t B = s[0];

    // Homogeneous target lattice [H*W, 3]; grid_b = lattice * theta_b^T.
    std::vector<double> lat(static_cast<size_t>(H * W * 3));
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            int64_t r = i * W + j;
            lat[r * 3 + 0] = kernels::lattice_coord(j, W);
            lat[r * 3 + 1] = kernels::lattice_coord(i, H);
            lat[r * 3 + 2] = 1.0;
        }
    Tensor lattice = Tensor::from_vector({H * W, 3}, std::move(lat));

    std::vector<Tensor> per_batch;
    per_batch.reserve(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        Tensor tb = reshape(slice(theta, 0, b, 1), {2, 3});
        Tensor g = matmul(lattice, transpose(tb));  // [H*W, 2]
        per_batch.push_back(reshape(g, {1, H, W, 2}));
    }
    return B == 1 ? per_batch[0] : concat(per_batch, 0);
}

Tensor warp_main(const Tensor& main, const Tensor& theta) {
    if (main.ndim() != 4) throw ShapeError("warp_main: main must be [B,C,H,W]");
    return grid_sample_bilinear(main, affine_grid(theta, main.dim(2), main.dim(3)));
}

Tensor reg_loss(const Tensor& theta, const RegLossWeights& w) {
    const Shape& s = theta.shape();
    Tensor th = (s == Shape{2, 3}) ? reshape(theta, {1, 2, 3}) : theta;
    if (th.ndim() != 3 || th.dim(1) != 2 || th.dim(2) != 3)
        throw ShapeError("reg_loss: theta must be [2,3] or [B,2,3], got " + shape_str(s));
    int64_t B = th.dim(0);

    Tensor flat = reshape(th, {B, 6});
    Tensor identity = Tensor::from_vector({1, 6}, {1, 0, 0, 0, 1, 0});
    std::vector<Tensor> id_rows(static_cast<size_t>(B), identity);
    Tensor id = B == 1 ? identity : concat(id_rows, 0);

    Tensor diff = sub(flat, id);
    Tensor fro = matmul(mul(diff, diff), Tensor::ones({6, 1}));  // [B,1]

    Tensor a00 = slice(flat, 1, 0, 1);
    Tensor a01 = slice(flat, 1, 1, 1);
    Tensor tx = slice(flat, 1, 2, 1);
    Tensor a10 = slice(flat, 1, 3, 1);
    Tensor a11 = slice(flat, 1, 4, 1);
    Tensor ty = slice(flat, 1, 5, 1);

    Tensor det = sub(mul(a00, a11), mul(a01, a10));
    Tensor det_dev = add_scalar(det, -1.0);
    Tensor det_term = mul(det_dev, det_dev);
    Tensor trans_term = add(mul(tx, tx), mul(ty, ty));

    Tensor per_item = add(add(scale(fro, w.w_small), scale(det_term, w.w_det)), scale(trans_term, w.w_trans));
    return mean(per_item);
}

AffinePredictor::AffinePredictor(CounterRng& rng, int64_t c1, int64_t c2) : c2_(c2) {
    conv1_w_ = Tensor::randn({c1, 2, 3, 3}, rng, std::sqrt(2.0 / (2 * 9)), true);
    conv1_b_ = Tensor::zeros({c1}, true);
    conv2_w_ = Tensor::randn({c2, c1, 3, 3}, rng, std::sqrt(2.0 / (static_cast<double>(c1) * 9)), true);
    conv2_b_ = Tensor::zeros({c2}, true);
    fc_w_ = Tensor::zeros({c2, 6}, true);
    fc_b_ = Tensor::from_vector({6}, {1, 0, 0, 0, 1, 0}, true);
}

Tensor AffinePredictor::forward(const Tensor& main, const Tensor& ref) const {
    if (main.shape() != ref.shape()) throw ShapeError("predict_affine: main and ref shapes differ");
    if (main.ndim() != 4) throw ShapeError("predict_affine: inputs must be [B,C,H,W]");
    int64_t B = main.dim(0);
    Tensor x = concat({main, ref}, 1);
    x = relu(conv2d(x, conv1_w_, conv1_b_, 2, 1));
    x = relu(conv2d(x, conv2_w_, conv2_b_, 2, 1));
    int64_t hw = x.dim(2) * x.dim(3);
    // Global average pool via a constant averaging matmul: [B*C2, hw] x [hw, 1].
    Tensor pooled = reshape(matmul(reshape(x, {B * c2_, hw}), Tensor::full({hw, 1}, 1.0 / static_cast<double>(hw))),
                            {B, c2_});
    return reshape(linear(pooled, fc_w_, fc_b_), {B, 2, 3});
}

std::vector<std::pair<std::string, Tensor>> AffinePredictor::named_parameters() const {
    return {{"reg.conv1.w", conv1_w_}, {"reg.conv1.b", conv1_b_}, {"reg.conv2.w", conv2_w_},
            {"reg.conv2.b", conv2_b_}, {"reg.fc.w", fc_w_},       {"reg.fc.b", fc_b_}};
}

}  // namespace dvqa
