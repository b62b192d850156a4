#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvqa/model.hpp"
#include "dvqa/registration.hpp"

namespace dvqa {

struct TrainConfig {
    int64_t epochs = 16;
    int64_t warmup_epochs = 1;
    int64_t batch_size = 8;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    RegLossWeights reg_weights;
    ModelConfig model;
    std::string dataset_root = "data";
    uint64_t seed = 1;
    std::string checkpoint_dir = "checkpoints";
    int64_t eval_every = 1;

    void validate() const;  // ConfigError on any violated invariant
};

// Config files hold one `key = value` per line; `#` starts a comment and blank
// lines are skipped. Values keep interior whitespace, ends are trimmed. A key
// may repeat, the last assignment wins. Unknown keys raise ConfigError.
// parse does not validate; load_train_config parses then validates.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

// Emits every key in canonical order; parse(dump(cfg)) reproduces cfg exactly.
std::string dump_train_config(const TrainConfig& cfg);
const std::vector<std::string>& config_keys();

}  // namespace dvqa
