// OpenMP versions of the dense kernels. Threads only split loops whose
// iterations own disjoint output regions; within each output element the
// accumulation order is the same ascending-index order the serial reference
// uses, so results match the serial backend bitwise at any thread count.

#include "dvqa/kernels.hpp"

#include <cmath>

namespace dvqa::kernels::parallel {

void gemm_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        }
        for (int64_t kk = 0; kk < k; ++kk) {
            double aik = a[i * k + kk];
            const double* bk = b + kk * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

void gemm_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            if (accumulate)
                c[i * n + j] += acc;
            else
                c[i * n + j] = acc;
        }
    }
}

void gemm_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        if (!accumulate) {
            for (int64_t j = 0; j < n; ++j) ci[j] = 0.0;
        }
        for (int64_t kk = 0; kk < k; ++kk) {
            double aki = a[kk * m + i];
            const double* bk = b + kk * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
        }
    }
}

void conv2d_forward(double* y, const double* x, const double* w, const double* bias, const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.batch; ++b) {
        for (int64_t o = 0; o < d.out_ch; ++o) {
            double* yp = y + (b * d.out_ch + o) * d.out_h * d.out_w;
            const double* wo = w + o * d.in_ch * d.kh * d.kw;
            for (int64_t oh = 0; oh < d.out_h; ++oh) {
                for (int64_t ow = 0; ow < d.out_w; ++ow) {
                    double acc = bias ? bias[o] : 0.0;
                    int64_t ih0 = oh * d.stride - d.pad;
                    int64_t iw0 = ow * d.stride - d.pad;
                    for (int64_t c = 0; c < d.in_ch; ++c) {
                        const double* xc = x + (b * d.in_ch + c) * d.in_h * d.in_w;
                        const double* wc = wo + c * d.kh * d.kw;
                        for (int64_t r = 0; r < d.kh; ++r) {
                            int64_t ih = ih0 + r;
                            if (ih < 0 || ih >= d.in_h) continue;
                            for (int64_t s = 0; s < d.kw; ++s) {
                                int64_t iw = iw0 + s;
                                if (iw < 0 || iw >= d.in_w) continue;
                                acc += xc[ih * d.in_w + iw] * wc[r * d.kw + s];
                            }
                        }
                    }
                    yp[oh * d.out_w + ow] = acc;
                }
            }
        }
    }
}

void conv2d_backward_input(double* dx, const double* w, const double* dy, const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.batch; ++b) {
        for (int64_t c = 0; c < d.in_ch; ++c) {
            double* dxc = dx + (b * d.in_ch + c) * d.in_h * d.in_w;
            for (int64_t o = 0; o < d.out_ch; ++o) {
                const double* dyo = dy + (b * d.out_ch + o) * d.out_h * d.out_w;
                const double* wc = w + (o * d.in_ch + c) * d.kh * d.kw;
                for (int64_t oh = 0; oh < d.out_h; ++oh) {
                    for (int64_t ow = 0; ow < d.out_w; ++ow) {
                        double g = dyo[oh * d.out_w + ow];
                        int64_t ih0 = oh * d.stride - d.pad;
                        int64_t iw0 = ow * d.stride - d.pad;
                        for (int64_t r = 0; r < d.kh; ++r) {
                            int64_t ih = ih0 + r;
                            if (ih < 0 || ih >= d.in_h) continue;
                            for (int64_t s = 0; s < d.kw; ++s) {
                                int64_t iw = iw0 + s;
                                if (iw < 0 || iw >= d.in_w) continue;
                                dxc[ih * d.in_w + iw] += wc[r * d.kw + s] * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(double* dw, double* db, const double* x, const double* dy, const Conv2dDims& d) {
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < d.out_ch; ++o) {
        double* dwo = dw + o * d.in_ch * d.kh * d.kw;
        for (int64_t b = 0; b < d.batch; ++b) {
            const double* dyo = dy + (b * d.out_ch + o) * d.out_h * d.out_w;
            for (int64_t oh = 0; oh < d.out_h; ++oh) {
                for (int64_t ow = 0; ow < d.out_w; ++ow) {
                    double g = dyo[oh * d.out_w + ow];
                    if (db) db[o] += g;
                    int64_t ih0 = oh * d.stride - d.pad;
                    int64_t iw0 = ow * d.stride - d.pad;
                    for (int64_t c = 0; c < d.in_ch; ++c) {
                        const double* xc = x + (b * d.in_ch + c) * d.in_h * d.in_w;
                        double* dwc = dwo + c * d.kh * d.kw;
                        for (int64_t r = 0; r < d.kh; ++r) {
                            int64_t ih = ih0 + r;
                            if (ih < 0 || ih >= d.in_h) continue;
                            for (int64_t s = 0; s < d.kw; ++s) {
                                int64_t iw = iw0 + s;
                                if (iw < 0 || iw >= d.in_w) continue;
                                dwc[r * d.kw + s] += xc[ih * d.in_w + iw] * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

void grid_sample_forward(double* y, const double* x, const double* grid, int64_t B, int64_t C, int64_t H, int64_t W) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const double* xc = x + (b * C + c) * H * W;
            double* yc = y + (b * C + c) * H * W;
            const double* gb = grid + b * H * W * 2;
            for (int64_t i = 0; i < H; ++i) {
                for (int64_t j = 0; j < W; ++j) {
                    double gx = gb[(i * W + j) * 2 + 0];
                    double gy = gb[(i * W + j) * 2 + 1];
                    double ix = unnormalize_coord(gx, W);
                    double iy = unnormalize_coord(gy, H);
                    int64_t x0 = static_cast<int64_t>(std::floor(ix));
                    int64_t y0 = static_cast<int64_t>(std::floor(iy));
                    double fx = ix - static_cast<double>(x0);
                    double fy = iy - static_cast<double>(y0);
                    auto tap = [&](int64_t yy, int64_t xx) -> double {
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
                        return xc[yy * W + xx];
                    };
                    double v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
                    double v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
                    yc[i * W + j] = v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) +
                                    v10 * (1.0 - fx) * fy + v11 * fx * fy;
                }
            }
        }
    }
}

void grid_sample_backward(double* dx, double* dgrid, const double* x, const double* grid, const double* dy,
                          int64_t B, int64_t C, int64_t H, int64_t W) {
    if (dx) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t c = 0; c < C; ++c) {
                double* dxc = dx + (b * C + c) * H * W;
                const double* dyc = dy + (b * C + c) * H * W;
                const double* gb = grid + b * H * W * 2;
                for (int64_t i = 0; i < H; ++i) {
                    for (int64_t j = 0; j < W; ++j) {
                        double g = dyc[i * W + j];
                        double ix = unnormalize_coord(gb[(i * W + j) * 2 + 0], W);
                        double iy = unnormalize_coord(gb[(i * W + j) * 2 + 1], H);
                        int64_t x0 = static_cast<int64_t>(std::floor(ix));
                        int64_t y0 = static_cast<int64_t>(std::floor(iy));
                        double fx = ix - static_cast<double>(x0);
                        double fy = iy - static_cast<double>(y0);
                        auto add = [&](int64_t yy, int64_t xx, double wgt) {
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) return;
                            dxc[yy * W + xx] += g * wgt;
                        };
                        add(y0, x0, (1.0 - fx) * (1.0 - fy));
                        add(y0, x0 + 1, fx * (1.0 - fy));
                        add(y0 + 1, x0, (1.0 - fx) * fy);
                        add(y0 + 1, x0 + 1, fx * fy);
                    }
                }
            }
        }
    }
    if (dgrid) {
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t i = 0; i < H; ++i) {
                const double* gb = grid + b * H * W * 2;
                for (int64_t j = 0; j < W; ++j) {
                    double ix = unnormalize_coord(gb[(i * W + j) * 2 + 0], W);
                    double iy = unnormalize_coord(gb[(i * W + j) * 2 + 1], H);
                    int64_t x0 = static_cast<int64_t>(std::floor(ix));
                    int64_t y0 = static_cast<int64_t>(std::floor(iy));
                    double fx = ix - static_cast<double>(x0);
                    double fy = iy - static_cast<double>(y0);
                    double dgx = 0.0, dgy = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        const double* xc = x + (b * C + c) * H * W;
                        double g = dy[(b * C + c) * H * W + i * W + j];
                        auto tap = [&](int64_t yy, int64_t xx) -> double {
                            if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
                            return xc[yy * W + xx];
                        };
                        double v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
                        double v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
                        dgx += g * ((v01 - v00) * (1.0 - fy) + (v11 - v10) * fy);
                        dgy += g * ((v10 - v00) * (1.0 - fx) + (v11 - v01) * fx);
                    }
                    dgrid[b * H * W * 2 + (i * W + j) * 2 + 0] += dgx * 0.5 * static_cast<double>(W - 1);
                    dgrid[b * H * W * 2 + (i * W + j) * 2 + 1] += dgy * 0.5 * static_cast<double>(H - 1);
                }
            }
        }
    }
}

}  // namespace dvqa::kernels::parallel
