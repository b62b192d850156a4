#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dvqa {

class CounterRng;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local switch: while disabled, ops run forward-only and record no tape.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;     // persistent; accumulated across backward calls
    std::vector<double> scratch;  // per-backward-call gradient buffer
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Receives this node's scratch gradient; adds contributions into the
    // scratch buffers of parents that require grad.
    std::function<void(const std::vector<double>&)> backward_fn;
    const char* op = "leaf";

    int64_t numel() const { return shape_numel(shape); }
    std::vector<double>& ensure_scratch();
};

// Shared-ownership handle. Tensors are written once at construction (leaf data
// may be filled in before graph use); afterwards only grad/scratch mutate.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(Shape shape, CounterRng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor rand_uniform(Shape shape, CounterRng& rng, double lo, double hi, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int64_t dim(int i) const;
    int ndim() const;

    double* data();
    const double* data() const;
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const;
    const std::vector<double>& grad() const;
    bool has_grad() const;
    void zero_grad();

    // Reverse-mode sweep from a scalar root. Accumulates into the grad buffer
    // of every requires_grad node reachable through the tape; repeated calls
    // without zero_grad keep accumulating.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// y = x[m×k] · w[k×n] + bias[n] broadcast over rows; bias optional (undefined ok)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad);
Tensor grid_sample_bilinear(const Tensor& x, const Tensor& grid);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route gradient to a
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor transpose(const Tensor& a);  // 2-D
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);  // normalize last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids);
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<uint8_t>& loss_mask);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- gradient checking -----------------------------------------------------

// Central finite differences of a scalar-valued function against the tape
// gradient. Returns max over coordinates of |a−n| / max(1e-12, |a|+|n|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5);
// Same, but f closes over its inputs and the check perturbs `param`.
double grad_check_param(const std::function<Tensor()>& f, Tensor param, double eps = 1e-5);

}  // namespace dvqa
