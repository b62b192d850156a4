#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/model.hpp"
#include "dvqa/optimizer.hpp"
#include "dvqa/tensor.hpp"

namespace dvqa {

inline constexpr uint32_t kCheckpointVersion = 1;

struct BadMagicError : IoError {
    using IoError::IoError;
};
struct VersionMismatchError : IoError {
    using IoError::IoError;
};
struct TruncationError : IoError {
    using IoError::IoError;
};
struct ChecksumError : IoError {
    using IoError::IoError;
};

// Model parameters plus optimizer state under "opt.m."/"opt.v." prefixed
// names, all as detached copies.
struct Checkpoint {
    ModelConfig model;
    int64_t epoch = 0;
    double best_score = 0.0;
    int64_t opt_step = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

// On disk: magic "DVQK", format version u32 LE, u64 LE length-prefixed JSON
// header (model config, epoch, score, optimizer step, tensor directory with
// name/dtype/shape/offset, payload checksum), then raw little-endian f64
// payloads in directory order. Saving identical content is byte-identical.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const ModelConfig& mc, const std::vector<std::pair<std::string, Tensor>>& params,
                    const Adam& opt, int64_t epoch, double best_score);
// Copies tensor data back into the given parameters and, when opt is non-null,
// the moment buffers and step count into the optimizer.
void restore(const Checkpoint& ckpt, const ModelConfig& want,
             const std::vector<std::pair<std::string, Tensor>>& params, Adam* opt);

// Same over exactly the model's own parameters.
Checkpoint snapshot(const DiffVqaModel& model, const Adam& opt, int64_t epoch, double best_score);
void restore(const Checkpoint& ckpt, const DiffVqaModel& model, Adam* opt);

}  // namespace dvqa
