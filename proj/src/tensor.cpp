#include "dvqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "dvqa/error.hpp"
#include "dvqa/kernels.hpp"
#include "dvqa/rng.hpp"

namespace dvqa {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int64_t d : s)
        if (d <= 0) throw ShapeError("tensor shape extents must be positive, got " + shape_str(s));
}

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
    validate_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (static_cast<int64_t>(impl->data.size()) != impl->numel())
        throw ShapeError("tensor data length does not match shape " + shape_str(impl->shape));
    return impl;
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in result");
}

using ImplPtr = std::shared_ptr<TensorImpl>;

bool any_requires_grad(const std::vector<ImplPtr>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

// Record the tape node if taping is on and some parent participates.
void attach(const ImplPtr& out, const char* op, std::vector<ImplPtr> parents,
            std::function<void(const std::vector<double>&)> fn) {
    out->op = op;
    if (!g_grad_enabled || !any_requires_grad(parents)) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

std::vector<double>& TensorImpl::ensure_scratch() {
    if (scratch.empty()) scratch.assign(static_cast<size_t>(numel()), 0.0);
    return scratch;
}

// ---- constructors ------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = new_impl(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), 0.0));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    auto impl = new_impl(shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)), value));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
    auto impl = new_impl(std::move(shape), std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, CounterRng& rng, double stddev, bool requires_grad) {
    validate_shape(shape);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.normal() * stddev;
    return from_vector(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, CounterRng& rng, double lo, double hi, bool requires_grad) {
    validate_shape(shape);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return from_vector(std::move(shape), std::move(v), requires_grad);
}

// ---- accessors ---------------------------------------------------------------

const Shape& Tensor::shape() const {
    if (!impl_) throw ValueError("undefined tensor");
    return impl_->shape;
}

int64_t Tensor::numel() const { return impl_ ? impl_->numel() : 0; }

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int i) const {
    const Shape& s = shape();
    if (i < 0 || i >= static_cast<int>(s.size())) throw ShapeError("dim index out of range");
    return s[static_cast<size_t>(i)];
}

double* Tensor::data() {
    if (!impl_) throw ValueError("undefined tensor");
    return impl_->data.data();
}

const double* Tensor::data() const {
    if (!impl_) throw ValueError("undefined tensor");
    return impl_->data.data();
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw ShapeError("at: index rank mismatch");
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= s[k]) throw ShapeError("at: index out of bounds");
        off = off * s[k] + i;
        ++k;
    }
    return impl_->data[static_cast<size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!impl_) throw ValueError("undefined tensor");
    if (impl_->grad.empty())
        impl_->grad.assign(static_cast<size_t>(impl_->numel()), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) std::vector<double>().swap(impl_->grad);
}

Tensor Tensor::detach() const {
    if (!impl_) throw ValueError("undefined tensor");
    return from_vector(impl_->shape, impl_->data, false);
}

Tensor Tensor::clone() const {
    if (!impl_) throw ValueError("undefined tensor");
    return from_vector(impl_->shape, impl_->data, impl_->requires_grad);
}

// ---- backward ------------------------------------------------------------------

void Tensor::backward() const {
    if (!impl_) throw ValueError("backward: undefined tensor");
    if (impl_->numel() != 1) throw ValueError("backward: root must be scalar");
    if (!impl_->requires_grad) throw ValueError("backward: root is not on the tape");

    // Post-order DFS over grad-requiring ancestors; reverse gives topo order.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> visited;
    struct Frame {
        TensorImpl* node;
        size_t next;
    };
    std::vector<Frame> stack{{impl_.get(), 0}};
    visited.insert(impl_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            TensorImpl* p = f.node->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    impl_->ensure_scratch()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* n = *it;
        if (n->backward_fn) n->backward_fn(n->ensure_scratch());
    }
    // Fold this call's contributions into the persistent grads, then drop the
    // scratch so the next backward starts clean (repeated calls accumulate).
    for (TensorImpl* n : order) {
        if (!n->scratch.empty()) {
            if (n->grad.empty()) n->grad.assign(static_cast<size_t>(n->numel()), 0.0);
            for (size_t i = 0; i < n->scratch.size(); ++i) n->grad[i] += n->scratch[i];
        }
        std::vector<double>().swap(n->scratch);
    }
}

// ---- elementwise helpers ---------------------------------------------------

namespace {

enum class Bcast { kSame, kAScalar, kBScalar };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::kSame;
    if (a.numel() == 1) return Bcast::kAScalar;
    if (b.numel() == 1) return Bcast::kBScalar;
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " (broadcast is scalar-vs-tensor only)");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    Bcast k = bcast_kind(a, b, "add");
    const Shape& shp = (k == Bcast::kAScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(shp);
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    const double* bd = b.data();
    for (int64_t i = 0; i < n; ++i)
        out[i] = ad[k == Bcast::kAScalar ? 0 : i] + bd[k == Bcast::kBScalar ? 0 : i];
    auto impl = new_impl(shp, std::move(out));
    check_finite("add", impl->data);
    ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
    attach(impl, "add", {pa, pb}, [pa, pb, k](const std::vector<double>& g) {
        if (pa->requires_grad) {
            auto& da = pa->ensure_scratch();
            if (k == Bcast::kAScalar)
                for (double gi : g) da[0] += gi;
            else
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (pb->requires_grad) {
            auto& db = pb->ensure_scratch();
            if (k == Bcast::kBScalar)
                for (double gi : g) db[0] += gi;
            else
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
    });
    return Tensor(impl);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Bcast k = bcast_kind(a, b, "sub");
    const Shape& shp = (k == Bcast::kAScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(shp);
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    const double* bd = b.data();
    for (int64_t i = 0; i < n; ++i)
        out[i] = ad[k == Bcast::kAScalar ? 0 : i] - bd[k == Bcast::kBScalar ? 0 : i];
    auto impl = new_impl(shp, std::move(out));
    check_finite("sub", impl->data);
    ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
    attach(impl, "sub", {pa, pb}, [pa, pb, k](const std::vector<double>& g) {
        if (pa->requires_grad) {
            auto& da = pa->ensure_scratch();
            if (k == Bcast::kAScalar)
                for (double gi : g) da[0] += gi;
            else
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (pb->requires_grad) {
            auto& db = pb->ensure_scratch();
            if (k == Bcast::kBScalar)
                for (double gi : g) db[0] -= gi;
            else
                for (size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
        }
    });
    return Tensor(impl);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Bcast k = bcast_kind(a, b, "mul");
    const Shape& shp = (k == Bcast::kAScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(shp);
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    const double* bd = b.data();
    for (int64_t i = 0; i < n; ++i)
        out[i] = ad[k == Bcast::kAScalar ? 0 : i] * bd[k == Bcast::kBScalar ? 0 : i];
    auto impl = new_impl(shp, std::move(out));
    check_finite("mul", impl->data);
    ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
    attach(impl, "mul", {pa, pb}, [pa, pb, k](const std::vector<double>& g) {
        const double* ad = pa->data.data();
        const double* bd = pb->data.data();
        if (pa->requires_grad) {
            auto& da = pa->ensure_scratch();
            if (k == Bcast::kAScalar)
                for (size_t i = 0; i < g.size(); ++i) da[0] += g[i] * bd[i];
            else
                for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bd[k == Bcast::kBScalar ? 0 : i];
        }
        if (pb->requires_grad) {
            auto& db = pb->ensure_scratch();
            if (k == Bcast::kBScalar)
                for (size_t i = 0; i < g.size(); ++i) db[0] += g[i] * ad[i];
            else
                for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * ad[k == Bcast::kAScalar ? 0 : i];
        }
    });
    return Tensor(impl);
}

Tensor scale(const Tensor& a, double c) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = ad[i] * c;
    auto impl = new_impl(a.shape(), std::move(out));
    check_finite("scale", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "scale", {pa}, [pa, c](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
    });
    return Tensor(impl);
}

Tensor add_scalar(const Tensor& a, double c) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = ad[i] + c;
    auto impl = new_impl(a.shape(), std::move(out));
    check_finite("add_scalar", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "add_scalar", {pa}, [pa](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
    return Tensor(impl);
}

Tensor relu(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
    auto impl = new_impl(a.shape(), std::move(out));
    check_finite("relu", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "relu", {pa}, [pa](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        const double* ad = pa->data.data();
        for (size_t i = 0; i < g.size(); ++i)
            if (ad[i] > 0.0) da[i] += g[i];
    });
    return Tensor(impl);
}

Tensor exp(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(ad[i]);
    auto impl = new_impl(a.shape(), std::move(out));
    check_finite("exp", impl->data);
    ImplPtr pa = a.impl_ptr();
    std::shared_ptr<std::vector<double>> saved;
    if (g_grad_enabled && pa->requires_grad) saved = std::make_shared<std::vector<double>>(impl->data);
    attach(impl, "exp", {pa}, [pa, saved](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (*saved)[i];
    });
    return Tensor(impl);
}

Tensor log(const Tensor& a) {
    int64_t n = a.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(ad[i]);
    auto impl = new_impl(a.shape(), std::move(out));
    check_finite("log", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "log", {pa}, [pa](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        const double* ad = pa->data.data();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] / ad[i];
    });
    return Tensor(impl);
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    Bcast k = bcast_kind(a, b, "max");
    const Shape& shp = (k == Bcast::kAScalar) ? b.shape() : a.shape();
    int64_t n = shape_numel(shp);
    std::vector<double> out(static_cast<size_t>(n));
    const double* ad = a.data();
    const double* bd = b.data();
    for (int64_t i = 0; i < n; ++i) {
        double av = ad[k == Bcast::kAScalar ? 0 : i];
        double bv = bd[k == Bcast::kBScalar ? 0 : i];
        out[i] = av >= bv ? av : bv;  // ties go to a
    }
    auto impl = new_impl(shp, std::move(out));
    check_finite("max", impl->data);
    ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
    attach(impl, "max", {pa, pb}, [pa, pb, k](const std::vector<double>& g) {
        const double* ad = pa->data.data();
        const double* bd = pb->data.data();
        for (size_t i = 0; i < g.size(); ++i) {
            size_t ia = (k == Bcast::kAScalar) ? 0 : i;
            size_t ib = (k == Bcast::kBScalar) ? 0 : i;
            bool a_wins = ad[ia] >= bd[ib];
            if (a_wins && pa->requires_grad) pa->ensure_scratch()[ia] += g[i];
            if (!a_wins && pb->requires_grad) pb->ensure_scratch()[ib] += g[i];
        }
    });
    return Tensor(impl);
}

Tensor mean(const Tensor& a) {
    int64_t n = a.numel();
    const double* ad = a.data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += ad[i];
    auto impl = new_impl({1}, {s / static_cast<double>(n)});
    check_finite("mean", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "mean", {pa}, [pa, n](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        double gi = g[0] / static_cast<double>(n);
        for (auto& d : da) d += gi;
    });
    return Tensor(impl);
}

Tensor sum(const Tensor& a) {
    int64_t n = a.numel();
    const double* ad = a.data();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += ad[i];
    auto impl = new_impl({1}, {s});
    check_finite("sum", impl->data);
    ImplPtr pa = a.impl_ptr();
    attach(impl, "sum", {pa}, [pa](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (auto& d : da) d += g[0];
    });
    return Tensor(impl);
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    validate_shape(new_shape);
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
    auto impl = new_impl(std::move(new_shape), std::vector<double>(a.data(), a.data() + a.numel()));
    ImplPtr pa = a.impl_ptr();
    attach(impl, "reshape", {pa}, [pa](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
    return Tensor(impl);
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects a 2-D tensor");
    int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(static_cast<size_t>(m * n));
    const double* ad = a.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    auto impl = new_impl({n, m}, std::move(out));
    ImplPtr pa = a.impl_ptr();
    attach(impl, "transpose", {pa}, [pa, m, n](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
    });
    return Tensor(impl);
}

namespace {

int normalize_axis(int axis, int ndim, const char* op) {
    if (axis < 0) axis += ndim;
    if (axis < 0 || axis >= ndim) throw ShapeError(std::string(op) + ": axis out of range");
    return axis;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int ax = normalize_axis(axis, static_cast<int>(s0.size()), "concat");
    Shape out_shape = s0;
    int64_t total_axis = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != ax && s[d] != s0[d])
                throw ShapeError("concat: extent mismatch outside the concat axis");
        total_axis += s[static_cast<size_t>(ax)];
    }
    out_shape[static_cast<size_t>(ax)] = total_axis;

    int64_t outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= s0[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(ax) + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    int64_t out_row = total_axis * inner;
    int64_t off = 0;
    std::vector<int64_t> offsets;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        int64_t e = p.dim(ax);
        const double* pd = p.data();
        for (int64_t r = 0; r < outer; ++r)
            std::memcpy(out.data() + r * out_row + off * inner, pd + r * e * inner,
                        static_cast<size_t>(e * inner) * sizeof(double));
        off += e;
    }
    auto impl = new_impl(std::move(out_shape), std::move(out));
    std::vector<ImplPtr> ps;
    std::vector<int64_t> extents;
    for (const Tensor& p : parts) {
        ps.push_back(p.impl_ptr());
        extents.push_back(p.dim(ax));
    }
    attach(impl, "concat", ps,
           [ps, extents, offsets, outer, inner, out_row](const std::vector<double>& g) {
               for (size_t pi = 0; pi < ps.size(); ++pi) {
                   if (!ps[pi]->requires_grad) continue;
                   auto& dp = ps[pi]->ensure_scratch();
                   int64_t e = extents[pi];
                   for (int64_t r = 0; r < outer; ++r) {
                       const double* gsrc = g.data() + r * out_row + offsets[pi] * inner;
                       double* dst = dp.data() + r * e * inner;
                       for (int64_t i = 0; i < e * inner; ++i) dst[i] += gsrc[i];
                   }
               }
           });
    return Tensor(impl);
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    int ax = normalize_axis(axis, static_cast<int>(s.size()), "slice");
    int64_t e = s[static_cast<size_t>(ax)];
    if (start < 0 || len <= 0 || start + len > e) throw ShapeError("slice: range out of bounds");
    Shape out_shape = s;
    out_shape[static_cast<size_t>(ax)] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(ax) + 1; d < s.size(); ++d) inner *= s[d];
    std::vector<double> out(static_cast<size_t>(outer * len * inner));
    const double* ad = a.data();
    for (int64_t r = 0; r < outer; ++r)
        std::memcpy(out.data() + r * len * inner, ad + (r * e + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(double));
    auto impl = new_impl(std::move(out_shape), std::move(out));
    ImplPtr pa = a.impl_ptr();
    attach(impl, "slice", {pa}, [pa, outer, inner, e, start, len](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        for (int64_t r = 0; r < outer; ++r) {
            double* dst = da.data() + (r * e + start) * inner;
            const double* gsrc = g.data() + r * len * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += gsrc[i];
        }
    });
    return Tensor(impl);
}

Tensor softmax(const Tensor& a, int axis) {
    const Shape& s = a.shape();
    int ax = normalize_axis(axis, static_cast<int>(s.size()), "softmax");
    int64_t n = s[static_cast<size_t>(ax)];
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= s[static_cast<size_t>(d)];
    for (size_t d = static_cast<size_t>(ax) + 1; d < s.size(); ++d) inner *= s[d];
    std::vector<double> out(static_cast<size_t>(a.numel()));
    const double* ad = a.data();
    for (int64_t r = 0; r < outer; ++r) {
        for (int64_t c = 0; c < inner; ++c) {
            const double* lane = ad + r * n * inner + c;
            double* olane = out.data() + r * n * inner + c;
            double mx = lane[0];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, lane[i * inner]);
            double z = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                double e = std::exp(lane[i * inner] - mx);
                olane[i * inner] = e;
                z += e;
            }
            for (int64_t i = 0; i < n; ++i) olane[i * inner] /= z;
        }
    }
    auto impl = new_impl(s, std::move(out));
    check_finite("softmax", impl->data);
    ImplPtr pa = a.impl_ptr();
    std::shared_ptr<std::vector<double>> saved;
    if (g_grad_enabled && pa->requires_grad) saved = std::make_shared<std::vector<double>>(impl->data);
    attach(impl, "softmax", {pa}, [pa, saved, outer, inner, n](const std::vector<double>& g) {
        if (!pa->requires_grad) return;
        auto& da = pa->ensure_scratch();
        const double* y = saved->data();
        for (int64_t r = 0; r < outer; ++r) {
            for (int64_t c = 0; c < inner; ++c) {
                int64_t base = r * n * inner + c;
                double dot = 0.0;
                for (int64_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                for (int64_t i = 0; i < n; ++i)
                    da[base + i * inner] += y[base + i * inner] * (g[base + i * inner] - dot);
            }
        }
    });
    return Tensor(impl);
}

namespace {

Tensor layer_norm_impl(const Tensor& x, const Tensor* gamma, const Tensor* beta, double eps) {
    const Shape& s = x.shape();
    int64_t d = s.back();
    int64_t rows = x.numel() / d;
    if (gamma && (gamma->ndim() != 1 || gamma->dim(0) != d))
        throw ShapeError("layer_norm: gamma must be 1-D of the normalized extent");
    if (beta && (beta->ndim() != 1 || beta->dim(0) != d))
        throw ShapeError("layer_norm: beta must be 1-D of the normalized extent");

    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* xd = x.data();
    const double* gd = gamma ? gamma->data() : nullptr;
    const double* bd = beta ? beta->data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xd + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < d; ++j) {
            double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            double y = xh;
            if (gd) y *= gd[j];
            if (bd) y += bd[j];
            out[static_cast<size_t>(r * d + j)] = y;
        }
    }
    auto impl = new_impl(s, std::move(out));
    check_finite("layer_norm", impl->data);
    ImplPtr px = x.impl_ptr();
    ImplPtr pg = gamma ? gamma->impl_ptr() : nullptr;
    ImplPtr pb = beta ? beta->impl_ptr() : nullptr;
    std::vector<ImplPtr> parents{px};
    if (pg) parents.push_back(pg);
    if (pb) parents.push_back(pb);
    attach(impl, "layer_norm", parents, [px, pg, pb, xhat, inv_std, rows, d](const std::vector<double>& g) {
        const double* gd = pg ? pg->data.data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g.data() + r * d;
            const double* xh = xhat->data() + r * d;
            if (pb && pb->requires_grad) {
                auto& dbeta = pb->ensure_scratch();
                for (int64_t j = 0; j < d; ++j) dbeta[j] += grow[j];
            }
            if (pg && pg->requires_grad) {
                auto& dgamma = pg->ensure_scratch();
                for (int64_t j = 0; j < d; ++j) dgamma[j] += grow[j] * xh[j];
            }
            if (px->requires_grad) {
                auto& dx = px->ensure_scratch();
                double is = (*inv_std)[static_cast<size_t>(r)];
                double m1 = 0.0, m2 = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    double dxh = grow[j] * (gd ? gd[j] : 1.0);
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j) {
                    double dxh = grow[j] * (gd ? gd[j] : 1.0);
                    dx[r * d + j] += is * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    });
    return Tensor(impl);
}

}  // namespace

Tensor layer_norm(const Tensor& x, double eps) { return layer_norm_impl(x, nullptr, nullptr, eps); }

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    return layer_norm_impl(x, &gamma, &beta, eps);
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
    int64_t v = table.dim(0), d = table.dim(1);
    int64_t l = static_cast<int64_t>(ids.size());
    if (l == 0) throw ShapeError("embedding_lookup: empty id list");
    for (int64_t id : ids)
        if (id < 0 || id >= v) throw ValueError("embedding_lookup: id out of vocabulary range");
    std::vector<double> out(static_cast<size_t>(l * d));
    const double* td = table.data();
    for (int64_t i = 0; i < l; ++i)
        std::memcpy(out.data() + i * d, td + ids[static_cast<size_t>(i)] * d,
                    static_cast<size_t>(d) * sizeof(double));
    auto impl = new_impl({l, d}, std::move(out));
    ImplPtr pt = table.impl_ptr();
    attach(impl, "embedding_lookup", {pt}, [pt, ids, d](const std::vector<double>& g) {
        if (!pt->requires_grad) return;
        auto& dt = pt->ensure_scratch();
        for (size_t i = 0; i < ids.size(); ++i) {
            double* dst = dt.data() + ids[i] * d;
            const double* gsrc = g.data() + static_cast<int64_t>(i) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += gsrc[j];
        }
    });
    return Tensor(impl);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<uint8_t>& loss_mask) {
    if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be 2-D");
    int64_t t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != t || static_cast<int64_t>(loss_mask.size()) != t)
        throw ShapeError("cross_entropy: targets/mask length mismatch");
    int64_t count = 0;
    for (int64_t r = 0; r < t; ++r) {
        if (!loss_mask[static_cast<size_t>(r)]) continue;
        if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= v)
            throw ValueError("cross_entropy: target id out of range");
        ++count;
    }
    if (count == 0) throw ValueError("cross_entropy: all positions masked");

    const double* ld = logits.data();
    double total = 0.0;
    for (int64_t r = 0; r < t; ++r) {
        if (!loss_mask[static_cast<size_t>(r)]) continue;
        const double* row = ld + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        total += mx + std::log(z) - row[targets[static_cast<size_t>(r)]];
    }
    auto impl = new_impl({1}, {total / static_cast<double>(count)});
    check_finite("cross_entropy", impl->data);
    ImplPtr pl = logits.impl_ptr();
    attach(impl, "cross_entropy", {pl}, [pl, targets, loss_mask, t, v, count](const std::vector<double>& g) {
        if (!pl->requires_grad) return;
        auto& dl = pl->ensure_scratch();
        const double* ld = pl->data.data();
        double gscale = g[0] / static_cast<double>(count);
        for (int64_t r = 0; r < t; ++r) {
            if (!loss_mask[static_cast<size_t>(r)]) continue;
            const double* row = ld + r * v;
            double mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
            double* drow = dl.data() + r * v;
            for (int64_t j = 0; j < v; ++j) {
                double p = std::exp(row[j] - mx) / z;
                drow[j] += gscale * (p - (j == targets[static_cast<size_t>(r)] ? 1.0 : 0.0));
            }
        }
    });
    return Tensor(impl);
}

// ---- dense linear algebra ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: expects 2-D operands");
    int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m * n));
    kernels::gemm_nn(out.data(), a.data(), b.data(), m, k, n, false);
    auto impl = new_impl({m, n}, std::move(out));
    check_finite("matmul", impl->data);
    ImplPtr pa = a.impl_ptr(), pb = b.impl_ptr();
    attach(impl, "matmul", {pa, pb}, [pa, pb, m, k, n](const std::vector<double>& g) {
        if (pa->requires_grad)
            kernels::gemm_nt(pa->ensure_scratch().data(), g.data(), pb->data.data(), m, n, k, true);
        if (pb->requires_grad)
            kernels::gemm_tn(pb->ensure_scratch().data(), pa->data.data(), g.data(), k, m, n, true);
    });
    return Tensor(impl);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.ndim() != 2 || w.ndim() != 2) throw ShapeError("linear: expects 2-D input and weight");
    int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k)
        throw ShapeError("linear: weight extents " + shape_str(w.shape()) + " do not match input " +
                         shape_str(x.shape()));
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != n))
        throw ShapeError("linear: bias must be 1-D of the output extent");
    std::vector<double> out(static_cast<size_t>(m * n));
    kernels::gemm_nn(out.data(), x.data(), w.data(), m, k, n, false);
    if (bias.defined()) {
        const double* bd = bias.data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] += bd[j];
    }
    auto impl = new_impl({m, n}, std::move(out));
    check_finite("linear", impl->data);
    ImplPtr px = x.impl_ptr(), pw = w.impl_ptr();
    ImplPtr pb = bias.defined() ? bias.impl_ptr() : nullptr;
    std::vector<ImplPtr> parents{px, pw};
    if (pb) parents.push_back(pb);
    attach(impl, "linear", parents, [px, pw, pb, m, k, n](const std::vector<double>& g) {
        if (px->requires_grad)
            kernels::gemm_nt(px->ensure_scratch().data(), g.data(), pw->data.data(), m, n, k, true);
        if (pw->requires_grad)
            kernels::gemm_tn(pw->ensure_scratch().data(), px->data.data(), g.data(), k, m, n, true);
        if (pb && pb->requires_grad) {
            auto& db = pb->ensure_scratch();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) db[j] += g[static_cast<size_t>(i * n + j)];
        }
    });
    return Tensor(impl);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride, int64_t pad) {
    if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv2d: expects 4-D input and weight");
    if (x.dim(1) != w.dim(1)) throw ShapeError("conv2d: channel mismatch between input and weight");
    auto d = kernels::Conv2dDims::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                                       stride, pad);
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.out_ch))
        throw ShapeError("conv2d: bias must be 1-D of the output channel count");
    std::vector<double> out(static_cast<size_t>(d.batch * d.out_ch * d.out_h * d.out_w));
    kernels::conv2d_forward(out.data(), x.data(), w.data(), bias.defined() ? bias.data() : nullptr, d);
    auto impl = new_impl({d.batch, d.out_ch, d.out_h, d.out_w}, std::move(out));
    check_finite("conv2d", impl->data);
    ImplPtr px = x.impl_ptr(), pw = w.impl_ptr();
    ImplPtr pb = bias.defined() ? bias.impl_ptr() : nullptr;
    std::vector<ImplPtr> parents{px, pw};
    if (pb) parents.push_back(pb);
    attach(impl, "conv2d", parents, [px, pw, pb, d](const std::vector<double>& g) {
        if (px->requires_grad) kernels::conv2d_backward_input(px->ensure_scratch().data(), pw->data.data(), g.data(), d);
        if (pw->requires_grad || (pb && pb->requires_grad)) {
            std::vector<double> dw_local;
            double* dw = nullptr;
            if (pw->requires_grad) {
                dw = pw->ensure_scratch().data();
            } else {
                dw_local.assign(pw->data.size(), 0.0);
                dw = dw_local.data();
            }
            double* db = (pb && pb->requires_grad) ? pb->ensure_scratch().data() : nullptr;
            kernels::conv2d_backward_weight(dw, db, px->data.data(), g.data(), d);
        }
    });
    return Tensor(impl);
}

Tensor grid_sample_bilinear(const Tensor& x, const Tensor& grid) {
    if (x.ndim() != 4) throw ShapeError("grid_sample: input must be B x C x H x W");
    if (grid.ndim() != 4 || grid.dim(3) != 2) throw ShapeError("grid_sample: grid must be B x H x W x 2");
    int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (grid.dim(0) != b || grid.dim(1) != h || grid.dim(2) != w)
        throw ShapeError("grid_sample: grid spatial extents " + shape_str(grid.shape()) +
                         " do not match input " + shape_str(x.shape()));
    std::vector<double> out(static_cast<size_t>(x.numel()));
    kernels::grid_sample_forward(out.data(), x.data(), grid.data(), b, c, h, w);
    auto impl = new_impl(x.shape(), std::move(out));
    check_finite("grid_sample", impl->data);
    ImplPtr px = x.impl_ptr(), pg = grid.impl_ptr();
    attach(impl, "grid_sample", {px, pg}, [px, pg, b, c, h, w](const std::vector<double>& g) {
        double* dx = px->requires_grad ? px->ensure_scratch().data() : nullptr;
        double* dgrid = pg->requires_grad ? pg->ensure_scratch().data() : nullptr;
        kernels::grid_sample_backward(dx, dgrid, px->data.data(), pg->data.data(), g.data(), b, c, h, w);
    });
    return Tensor(impl);
}

// ---- finite differences --------------------------------------------------------

namespace {

double fd_max_err(const std::function<double()>& eval, double* xd, int64_t n,
                  const std::vector<double>& analytic, double eps) {
    double max_err = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double orig = xd[i];
        xd[i] = orig + eps;
        double yp = eval();
        xd[i] = orig - eps;
        double ym = eval();
        xd[i] = orig;
        double num = (yp - ym) / (2.0 * eps);
        double a = analytic[static_cast<size_t>(i)];
        double err = std::fabs(a - num) / std::max(1e-12, std::fabs(a) + std::fabs(num));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
    if (eps <= 0.0) throw ValueError("grad_check: eps must be positive");
    if (!x.requires_grad()) throw ValueError("grad_check: x must require grad");
    x.zero_grad();
    Tensor y = f(x);
    if (y.numel() != 1) throw ValueError("grad_check: f must be scalar-valued");
    y.backward();
    std::vector<double> analytic = x.grad();
    NoGradGuard ng;
    return fd_max_err([&] { return f(x).item(); }, x.data(), x.numel(), analytic, eps);
}

double grad_check_param(const std::function<Tensor()>& f, Tensor param, double eps) {
    if (eps <= 0.0) throw ValueError("grad_check: eps must be positive");
    if (!param.requires_grad()) throw ValueError("grad_check: param must require grad");
    param.zero_grad();
    Tensor y = f();
    if (y.numel() != 1) throw ValueError("grad_check: f must be scalar-valued");
    y.backward();
    std::vector<double> analytic = param.grad();
    NoGradGuard ng;
    return fd_max_err([&] { return f().item(); }, param.data(), param.numel(), analytic, eps);
}

}  // namespace dvqa
