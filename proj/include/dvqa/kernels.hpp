#pragma once

#include <cmath>
#include <cstdint>

namespace dvqa::kernels {

// The dense inner loops (gemm, conv2d, grid sampling) exist twice: a plain
// serial reference and an OpenMP version. Both accumulate each output element
// in the same canonical index order, so their results are bitwise identical
// and the parity tests can compare them exactly.
enum class Backend { kSerial, kParallel };

void set_backend(Backend b);
Backend active_backend();
bool parallel_available();
int max_threads();

struct Conv2dDims {
    int64_t batch = 0, in_ch = 0, in_h = 0, in_w = 0;
    int64_t out_ch = 0, kh = 0, kw = 0;
    int64_t stride = 1, pad = 0;
    int64_t out_h = 0, out_w = 0;

    static Conv2dDims make(int64_t batch, int64_t in_ch, int64_t in_h, int64_t in_w,
                           int64_t out_ch, int64_t kh, int64_t kw, int64_t stride, int64_t pad);
};

// Align-corners normalized coordinates: -1 maps to pixel 0, +1 to pixel size-1.
inline double lattice_coord(int64_t i, int64_t size) {
    return 2.0 * static_cast<double>(i) / static_cast<double>(size - 1) - 1.0;
}

// Inverse of lattice_coord, with a snap window so that lattice values map back
// to exact integer pixel coordinates despite float rounding (this is what makes
// the identity warp reproduce the input bitwise).
inline double unnormalize_coord(double g, int64_t size) {
    double px = (g + 1.0) * 0.5 * static_cast<double>(size - 1);
    double r = std::nearbyint(px);
    if (std::fabs(px - r) < 1e-9) px = r;
    return px;
}

// Dispatching entry points (route to serial or parallel per active_backend).
// gemm: C[m x n] op= A * B with the layouts named by the suffix
//   nn: A[m x k] * B[k x n]
//   nt: A[m x k] * B[n x k]^T
//   tn: A[k x m]^T * B[k x n]
void gemm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate = false);
void gemm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate = false);
void gemm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate = false);

// y[B,O,OH,OW] = cross-correlation of x[B,C,H,W] with w[O,C,kh,kw] plus bias[O].
void conv2d_forward(double* y, const double* x, const double* w, const double* bias, const Conv2dDims& d);
// dx += w^T (*) dy ; dw += x (*) dy ; db += sum dy. All accumulate.
void conv2d_backward_input(double* dx, const double* w, const double* dy, const Conv2dDims& d);
void conv2d_backward_weight(double* dw, double* db, const double* x, const double* dy, const Conv2dDims& d);

// Bilinear sampling with zero padding. grid[B,H,W,2] holds (x,y) normalized
// coordinates; output has the same B,C,H,W as the input.
void grid_sample_forward(double* y, const double* x, const double* grid,
                         int64_t B, int64_t C, int64_t H, int64_t W);
void grid_sample_backward(double* dx, double* dgrid, const double* x, const double* grid, const double* dy,
                          int64_t B, int64_t C, int64_t H, int64_t W);

namespace serial {
void gemm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void gemm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void gemm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void conv2d_forward(double* y, const double* x, const double* w, const double* bias, const Conv2dDims& d);
void conv2d_backward_input(double* dx, const double* w, const double* dy, const Conv2dDims& d);
void conv2d_backward_weight(double* dw, double* db, const double* x, const double* dy, const Conv2dDims& d);
void grid_sample_forward(double* y, const double* x, const double* grid, int64_t B, int64_t C, int64_t H, int64_t W);
void grid_sample_backward(double* dx, double* dgrid, const double* x, const double* grid, const double* dy,
                          int64_t B, int64_t C, int64_t H, int64_t W);
}  // namespace serial

namespace parallel {
void gemm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void gemm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void gemm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate);
void conv2d_forward(double* y, const double* x, const double* w, const double* bias, const Conv2dDims& d);
void conv2d_backward_input(double* dx, const double* w, const double* dy, const Conv2dDims& d);
void conv2d_backward_weight(double* dw, double* db, const double* x, const double* dy, const Conv2dDims& d);
void grid_sample_forward(double* y, const double* x, const double* grid, int64_t B, int64_t C, int64_t H, int64_t W);
void grid_sample_backward(double* dx, double* dgrid, const double* x, const double* grid, const double* dy,
                          int64_t B, int64_t C, int64_t H, int64_t W);
}  // namespace parallel

}  // namespace dvqa::kernels
