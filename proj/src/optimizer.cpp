#include "dvqa/optimizer.hpp"

#include <cmath>
#include <set>

#include "dvqa/error.hpp"

namespace dvqa {

void AdamConfig::validate() const {
    if (!(lr > 0.0)) throw ValueError("adam: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValueError("adam: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValueError("adam: beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ValueError("adam: eps must be positive");
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    if (params.empty()) throw ValueError("adam: no parameters");
    std::set<std::string> seen;
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        if (!p.defined()) throw ValueError("adam: undefined parameter " + name);
        if (!p.requires_grad()) throw ValueError("adam: parameter " + name + " does not require grad");
        if (!seen.insert(name).second) throw ValueError("adam: duplicate parameter name " + name);
        Slot s;
        s.name = name;
        s.param = p;
        s.m.assign(static_cast<size_t>(p.numel()), 0.0);
        s.v.assign(static_cast<size_t>(p.numel()), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::set_step_count(int64_t t) {
    if (t < 0) throw ValueError("adam: negative step count");
    t_ = t;
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        const std::vector<double>& g = s.param.grad();
        double* w = s.param.data();
        for (size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("adam: non-finite gradient in " + s.name + " at index " +
                                   std::to_string(i));
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double m_hat = s.m[i] / bc1;
            double v_hat = s.v[i] / bc2;
            w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

}  // namespace dvqa
