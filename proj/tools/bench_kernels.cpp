// Times the serial reference kernels against the OpenMP versions and checks
// that both produce bitwise-identical results on the same inputs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dvqa/kernels.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/tensor.hpp"

using namespace dvqa;
namespace K = dvqa::kernels;

namespace {

double time_best_ms(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

std::vector<double> randn_buf(size_t n, CounterRng& rng) {
    Tensor t = Tensor::randn({static_cast<int64_t>(n)}, rng);
    return std::vector<double>(t.data(), t.data() + t.numel());
}

struct Row {
    std::string name, size;
    double serial_ms = 0, parallel_ms = 0;
    bool bitwise = false;
};

void print_rows(const std::vector<Row>& rows) {
    std::printf("%-24s %-22s %10s %10s %8s  %s\n", "kernel", "size", "serial", "openmp",
                "speedup", "parity");
    for (const Row& r : rows)
        std::printf("%-24s %-22s %8.2fms %8.2fms %7.2fx  %s\n", r.name.c_str(), r.size.c_str(),
                    r.serial_ms, r.parallel_ms, r.serial_ms / r.parallel_ms,
                    r.bitwise ? "bitwise" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    int reps = 5;
    double scale = 1.0;
    app.add_option("--reps", reps, "repetitions per measurement; best is kept")
        ->capture_default_str();
    app.add_option("--scale", scale, "problem size multiplier")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    std::printf("openmp %s, max threads %d\n\n", K::parallel_available() ? "available" : "absent",
                K::max_threads());

    CounterRng rng(5, 0);
    std::vector<Row> rows;

    {
        int64_t n = static_cast<int64_t>(256 * scale);
        auto a = randn_buf(static_cast<size_t>(n * n), rng);
        auto b = randn_buf(static_cast<size_t>(n * n), rng);
        std::vector<double> cs(static_cast<size_t>(n * n)), cp(cs.size());
        const char* names[3] = {"gemm_nn", "gemm_nt", "gemm_tn"};
        using Gemm = void (*)(double*, const double*, const double*, int64_t, int64_t, int64_t, bool);
        Gemm serial[3] = {K::serial::gemm_nn, K::serial::gemm_nt, K::serial::gemm_tn};
        Gemm par[3] = {K::parallel::gemm_nn, K::parallel::gemm_nt, K::parallel::gemm_tn};
        for (int i = 0; i < 3; ++i) {
            Row r;
            r.name = names[i];
            r.size = std::to_string(n) + "^3";
            r.serial_ms = time_best_ms(reps, [&] { serial[i](cs.data(), a.data(), b.data(), n, n, n, false); });
            r.parallel_ms = time_best_ms(reps, [&] { par[i](cp.data(), a.data(), b.data(), n, n, n, false); });
            r.bitwise = std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0;
            rows.push_back(r);
        }
    }

    {
        auto d = K::Conv2dDims::make(1, 64, static_cast<int64_t>(32 * scale),
                                     static_cast<int64_t>(32 * scale), 64, 3, 3, 1, 1);
        std::string sz = "64x" + std::to_string(d.in_h) + "x" + std::to_string(d.in_w) + " k3";
        auto x = randn_buf(static_cast<size_t>(d.batch * d.in_ch * d.in_h * d.in_w), rng);
        auto w = randn_buf(static_cast<size_t>(d.out_ch * d.in_ch * d.kh * d.kw), rng);
        auto bias = randn_buf(static_cast<size_t>(d.out_ch), rng);
        size_t ylen = static_cast<size_t>(d.batch * d.out_ch * d.out_h * d.out_w);
        std::vector<double> ys(ylen), yp(ylen);

        Row fwd;
        fwd.name = "conv2d_forward";
        fwd.size = sz;
        fwd.serial_ms = time_best_ms(reps, [&] { K::serial::conv2d_forward(ys.data(), x.data(), w.data(), bias.data(), d); });
        fwd.parallel_ms = time_best_ms(reps, [&] { K::parallel::conv2d_forward(yp.data(), x.data(), w.data(), bias.data(), d); });
        fwd.bitwise = std::memcmp(ys.data(), yp.data(), ylen * sizeof(double)) == 0;
        rows.push_back(fwd);

        auto dy = randn_buf(ylen, rng);
        std::vector<double> dxs(x.size()), dxp(x.size());
        Row bwi;
        bwi.name = "conv2d_backward_input";
        bwi.size = sz;
        bwi.serial_ms = time_best_ms(reps, [&] {
            std::fill(dxs.begin(), dxs.end(), 0.0);
            K::serial::conv2d_backward_input(dxs.data(), w.data(), dy.data(), d);
        });
        bwi.parallel_ms = time_best_ms(reps, [&] {
            std::fill(dxp.begin(), dxp.end(), 0.0);
            K::parallel::conv2d_backward_input(dxp.data(), w.data(), dy.data(), d);
        });
        bwi.bitwise = std::memcmp(dxs.data(), dxp.data(), dxs.size() * sizeof(double)) == 0;
        rows.push_back(bwi);

        std::vector<double> dws(w.size()), dwp(w.size()), dbs(bias.size()), dbp(bias.size());
        Row bww;
        bww.name = "conv2d_backward_weight";
        bww.size = sz;
        bww.serial_ms = time_best_ms(reps, [&] {
            std::fill(dws.begin(), dws.end(), 0.0);
            std::fill(dbs.begin(), dbs.end(), 0.0);
            K::serial::conv2d_backward_weight(dws.data(), dbs.data(), x.data(), dy.data(), d);
        });
        bww.parallel_ms = time_best_ms(reps, [&] {
            std::fill(dwp.begin(), dwp.end(), 0.0);
            std::fill(dbp.begin(), dbp.end(), 0.0);
            K::parallel::conv2d_backward_weight(dwp.data(), dbp.data(), x.data(), dy.data(), d);
        });
        bww.bitwise = std::memcmp(dws.data(), dwp.data(), dws.size() * sizeof(double)) == 0 &&
                      std::memcmp(dbs.data(), dbp.data(), dbs.size() * sizeof(double)) == 0;
        rows.push_back(bww);
    }

    {
        int64_t B = 4, C = 8;
        int64_t H = static_cast<int64_t>(128 * scale), W = H;
        std::string sz = "4x8x" + std::to_string(H) + "x" + std::to_string(W);
        auto x = randn_buf(static_cast<size_t>(B * C * H * W), rng);
        Tensor g = Tensor::rand_uniform({B, H, W, 2}, rng, -1.1, 1.1);
        std::vector<double> grid(g.data(), g.data() + g.numel());
        std::vector<double> ys(x.size()), yp(x.size());

        Row fwd;
        fwd.name = "grid_sample_forward";
        fwd.size = sz;
        fwd.serial_ms = time_best_ms(reps, [&] { K::serial::grid_sample_forward(ys.data(), x.data(), grid.data(), B, C, H, W); });
        fwd.parallel_ms = time_best_ms(reps, [&] { K::parallel::grid_sample_forward(yp.data(), x.data(), grid.data(), B, C, H, W); });
        fwd.bitwise = std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0;
        rows.push_back(fwd);

        auto dy = randn_buf(x.size(), rng);
        std::vector<double> dxs(x.size()), dxp(x.size()), dgs(grid.size()), dgp(grid.size());
        Row bwd;
        bwd.name = "grid_sample_backward";
        bwd.size = sz;
        bwd.serial_ms = time_best_ms(reps, [&] {
            std::fill(dxs.begin(), dxs.end(), 0.0);
            std::fill(dgs.begin(), dgs.end(), 0.0);
            K::serial::grid_sample_backward(dxs.data(), dgs.data(), x.data(), grid.data(), dy.data(), B, C, H, W);
        });
        bwd.parallel_ms = time_best_ms(reps, [&] {
            std::fill(dxp.begin(), dxp.end(), 0.0);
            std::fill(dgp.begin(), dgp.end(), 0.0);
            K::parallel::grid_sample_backward(dxp.data(), dgp.data(), x.data(), grid.data(), dy.data(), B, C, H, W);
        });
        bwd.bitwise = std::memcmp(dxs.data(), dxp.data(), dxs.size() * sizeof(double)) == 0 &&
                      std::memcmp(dgs.data(), dgp.data(), dgs.size() * sizeof(double)) == 0;
        rows.push_back(bwd);
    }

    print_rows(rows);
    for (const Row& r : rows)
        if (!r.bitwise) {
            std::fprintf(stderr, "parity violation in %s\n", r.name.c_str());
            return 3;
        }
    return 0;
}
