#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/checkpoint.hpp"
#include "dvqa/config.hpp"
#include "dvqa/keyword.hpp"
#include "dvqa/metrics.hpp"
#include "dvqa/model.hpp"
#include "dvqa/optimizer.hpp"
#include "dvqa/registration.hpp"
#include "dvqa/saliency.hpp"
#include "dvqa/tensor.hpp"
#include "dvqa/vocab.hpp"

namespace dvqa {

// A dataset record with its images in memory, ready for the models.
struct LoadedSample {
    int64_t id = 0;
    Tensor main;  // [1,1,H,W]
    Tensor ref;   // [1,1,H,W]
    Tensor mask;  // [1,H,W] ground-truth change mask
    std::vector<int64_t> question_ids;
    std::vector<int64_t> answer_ids;
    std::string question;
    std::string answer;
    std::string keyword;
    std::string change;
};

std::vector<LoadedSample> load_split(const std::string& root, const std::string& split,
                                     const Vocabulary& vocab);

// The trainable pair: answer generator plus the affine pre-alignment network.
struct System {
    DiffVqaModel model;
    AffinePredictor predictor;
    Vocabulary vocab;
    KeywordLexicon lexicon;

    System(const ModelConfig& mc, uint64_t seed, Vocabulary vocab_, KeywordLexicon lex);
    // Model parameters under their own names plus the predictor's "reg.*".
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Test hook replacing the Grad-CAM shared mask; receives the (possibly warped)
// main image and the reference image.
using MaskFn = std::function<SaliencyMap(const Tensor& main, const Tensor& ref)>;

struct StepLosses {
    double l_reg = 0.0;
    double l_lm = 0.0;
    double l_total = 0.0;          // batch means; l_total == l_reg + l_lm
    int64_t masked_samples = 0;    // got a saliency mask in step 2
    int64_t fallback_samples = 0;  // keyword absent, trained unmasked
};

class Trainer {
public:
    Trainer(TrainConfig cfg, Vocabulary vocab, KeywordLexicon lex);

    // Registration + unmasked language modeling, one optimizer update.
    StepLosses train_step_warmup(const std::vector<LoadedSample>& batch);
    // Step 1 computes per-sample shared masks from the ground-truth keyword
    // (read-only); step 2 re-encodes masked images and updates once.
    StepLosses train_step_masked(const std::vector<LoadedSample>& batch);

    // The step-1 probe alone: ground-truth keyword -> Grad-CAM -> shared mask.
    // nullopt means the keyword target was absent and the sample falls back.
    std::optional<SaliencyMap> compute_step1_mask(const LoadedSample& sample) const;

    System& system() { return sys_; }
    const System& system() const { return sys_; }
    Adam& optimizer() { return opt_; }
    const TrainConfig& config() const { return cfg_; }

    bool detach_lm = false;  // debug: block language gradients in warm-up steps
    MaskFn mask_override;    // test hook for step 2's mask

private:
    struct Forward {
        Tensor theta, l_reg, l_lm, l_total;
    };
    Forward forward_sample(const LoadedSample& s, const SaliencyMap* mask) const;
    StepLosses run_batch(const std::vector<LoadedSample>& batch,
                         const std::vector<std::optional<SaliencyMap>>* masks);

    TrainConfig cfg_;
    System sys_;
    Adam opt_;
};

struct EpochLog {
    int64_t epoch = 0;
    std::string mode;  // "warmup" or "masked"
    double l_reg = 0.0;
    double l_lm = 0.0;
    int64_t gradcam_calls = 0;  // during training steps; validation excluded
    int64_t fallback_samples = 0;
    bool evaluated = false;
    ScoreReport val;
};

struct TrainOutcome {
    Checkpoint best;
    int64_t best_epoch = -1;
    std::vector<EpochLog> log;
    std::string log_jsonl;  // exact contents written to <checkpoint_dir>/train_log.jsonl
};

// Full schedule: warm-up epochs, then masked epochs, two-pass validation after
// every eval_every-th epoch (and the last), best checkpoint by combined score
// written to <checkpoint_dir>/best.ckpt. on_epoch, when set, observes each
// completed epoch's log entry.
TrainOutcome run_training(TrainConfig cfg,
                          const std::function<void(const EpochLog&)>& on_epoch = {});

struct InferResult {
    std::string answer;
    std::string preliminary;
    std::string keyword;
    bool masked = false;  // false when the keyword target was absent
};

// Pass 1: register, encode unmasked, greedy decode.
std::string infer_single_pass(const System& sys, const Tensor& main, const Tensor& ref,
                              const std::vector<int64_t>& question_ids);
// Pass 1, then keyword-conditioned masking and regeneration. Shares pass 1
// with infer_single_pass; the continuation is exposed for fallback tests.
InferResult infer_two_pass(const System& sys, const Tensor& main, const Tensor& ref,
                           const std::vector<int64_t>& question_ids, const MaskFn& override_mask = {});
InferResult infer_two_pass_from(const System& sys, const Tensor& main, const Tensor& ref,
                                const std::vector<int64_t>& question_ids,
                                const std::string& preliminary,
                                const std::vector<int64_t>& preliminary_ids,
                                const MaskFn& override_mask = {});

// First matching template wins: disappeared, appeared, enlarged, shrunk, then
// "no"+"change" as unchanged; anything else parses as "unknown".
std::string parse_change_type(const std::string& answer);

struct EvalResult {
    ScoreReport report;
    double keyword_acc = 0.0;  // hypothesis contains the gt keyword as a token span
    double change_acc = 0.0;   // parse_change_type(hypothesis) == gt change
    int64_t count = 0;
    std::vector<std::string> hyps;
};

EvalResult evaluate_split(const System& sys, const std::vector<LoadedSample>& samples,
                          bool two_pass, const MaskFn& override_mask = {});

}  // namespace dvqa
