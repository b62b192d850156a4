#include "dvqa/kernels.hpp"

#include "dvqa/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dvqa::kernels {

namespace {
Backend g_backend = parallel_available() ? Backend::kParallel : Backend::kSerial;
}

void set_backend(Backend b) {
    if (b == Backend::kParallel && !parallel_available())
        throw ConfigError("parallel backend requested but this build has no OpenMP support");
    g_backend = b;
}

Backend active_backend() { return g_backend; }

bool parallel_available() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Conv2dDims Conv2dDims::make(int64_t batch, int64_t in_ch, int64_t in_h, int64_t in_w,
                            int64_t out_ch, int64_t kh, int64_t kw, int64_t stride, int64_t pad) {
    Conv2dDims d;
    d.batch = batch;
    d.in_ch = in_ch;
    d.in_h = in_h;
    d.in_w = in_w;
    d.out_ch = out_ch;
    d.kh = kh;
    d.kw = kw;
    d.stride = stride;
    d.pad = pad;
    if (batch <= 0 || in_ch <= 0 || in_h <= 0 || in_w <= 0 || out_ch <= 0)
        throw ShapeError("conv2d: non-positive dimension");
    if (kh <= 0 || kw <= 0 || stride <= 0 || pad < 0)
        throw ShapeError("conv2d: bad kernel/stride/pad");
    d.out_h = (in_h + 2 * pad - kh) / stride + 1;
    d.out_w = (in_w + 2 * pad - kw) / stride + 1;
    if (d.out_h <= 0 || d.out_w <= 0)
        throw ShapeError("conv2d: kernel larger than padded input");
    return d;
}

#define DVQA_DISPATCH(fn, ...)                      \
    do {                                            \
        if (g_backend == Backend::kParallel)        \
            parallel::fn(__VA_ARGS__);              \
        else                                        \
            serial::fn(__VA_ARGS__);                \
    } while (0)

void gemm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
    DVQA_DISPATCH(gemm_nn, c, a, b, m, k, n, accumulate);
}
void gemm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
    DVQA_DISPATCH(gemm_nt, c, a, b, m, k, n, accumulate);
}
void gemm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
    DVQA_DISPATCH(gemm_tn, c, a, b, m, k, n, accumulate);
}
void conv2d_forward(double* y, const double* x, const double* w, const double* bias, const Conv2dDims& d) {
    DVQA_DISPATCH(conv2d_forward, y, x, w, bias, d);
}
void conv2d_backward_input(double* dx, const double* w, const double* dy, const Conv2dDims& d) {
    DVQA_DISPATCH(conv2d_backward_input, dx, w, dy, d);
}
void conv2d_backward_weight(double* dw, double* db, const double* x, const double* dy, const Conv2dDims& d) {
    DVQA_DISPATCH(conv2d_backward_weight, dw, db, x, dy, d);
}
void grid_sample_forward(double* y, const double* x, const double* grid, int64_t B, int64_t C, int64_t H, int64_t W) {
    DVQA_DISPATCH(grid_sample_forward, y, x, grid, B, C, H, W);
}
void grid_sample_backward(double* dx, double* dgrid, const double* x, const double* grid, const double* dy,
                          int64_t B, int64_t C, int64_t H, int64_t W) {
    DVQA_DISPATCH(grid_sample_backward, dx, dgrid, x, grid, dy, B, C, H, W);
}

#undef DVQA_DISPATCH

}  // namespace dvqa::kernels
