#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/tensor.hpp"

namespace dvqa {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;  // ValueError on out-of-range fields
};

// Adam with bias-corrected moment estimates. The optimizer shares ownership of
// the parameter tensors; step() reads each accumulated gradient and updates
// the data buffer in place. Moment buffers and the step count are exposed so
// checkpoints can persist and restore the full optimizer state.
class Adam {
public:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m;  // first moment, same length as param
        std::vector<double> v;  // second moment
    };

    explicit Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg = {});

    // One update from the gradients currently on the parameters. Throws
    // NumericError naming the offending parameter if a gradient is not finite.
    void step();
    void zero_grad();

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t);
    const AdamConfig& config() const { return cfg_; }

    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

}  // namespace dvqa
