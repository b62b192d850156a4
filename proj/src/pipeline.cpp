#include "dvqa/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include <json.hpp>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/synthdata.hpp"
#include "dvqa/text.hpp"

namespace dvqa {

namespace fs = std::filesystem;

std::vector<LoadedSample> load_split(const std::string& root, const std::string& split,
                                     const Vocabulary& vocab) {
    std::vector<DatasetSample> records = read_dataset(root, split);
    std::vector<LoadedSample> out;
    out.reserve(records.size());
    for (const DatasetSample& rec : records) {
        LoadedSample s;
        s.id = rec.id;
        Tensor main = read_pgm(root + "/" + rec.main_path);
        Tensor ref = read_pgm(root + "/" + rec.ref_path);
        s.main = reshape(main, {1, 1, main.dim(1), main.dim(2)});
        s.ref = reshape(ref, {1, 1, ref.dim(1), ref.dim(2)});
        s.mask = read_pgm(root + "/" + rec.mask_path);
        s.question = rec.question;
        s.answer = rec.answer;
        s.keyword = rec.keyword;
        s.change = rec.change;
        s.question_ids = vocab.encode(rec.question);
        s.answer_ids = vocab.encode(rec.answer);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

CounterRng predictor_rng(uint64_t seed) { return CounterRng(seed, 202); }

}  // namespace

System::System(const ModelConfig& mc, uint64_t seed, Vocabulary vocab_, KeywordLexicon lex)
    : model(mc, seed),
      predictor([&] {
          CounterRng rng = predictor_rng(seed);
          return AffinePredictor(rng);
      }()),
      vocab(std::move(vocab_)),
      lexicon(std::move(lex)) {}

std::vector<std::pair<std::string, Tensor>> System::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out = model.named_parameters();
    for (auto& kv : predictor.named_parameters()) out.push_back(std::move(kv));
    return out;
}

Trainer::Trainer(TrainConfig cfg, Vocabulary vocab, KeywordLexicon lex)
    : cfg_([&] {
          if (cfg.model.vocab_size == 0) cfg.model.vocab_size = vocab.size();
          if (cfg.model.vocab_size != vocab.size())
              throw ConfigError("trainer: vocab_size " + std::to_string(cfg.model.vocab_size) +
                                " does not match the vocabulary (" + std::to_string(vocab.size()) +
                                ")");
          cfg.validate();
          return cfg;
      }()),
      sys_(cfg_.model, cfg_.seed, std::move(vocab), std::move(lex)),
      opt_(sys_.named_parameters(), AdamConfig{cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps}) {}

Trainer::Forward Trainer::forward_sample(const LoadedSample& s, const SaliencyMap* mask) const {
    Forward f;
    f.theta = sys_.predictor.forward(s.main, s.ref);
    Tensor warped = warp_main(s.main, f.theta);
    f.l_reg = reg_loss(f.theta, cfg_.reg_weights);
    // one shared mask object multiplies both branches
    Tensor in_main = mask ? apply_mask(warped, *mask) : warped;
    Tensor in_ref = mask ? apply_mask(s.ref, *mask) : s.ref;
    Tensor zm = sys_.model.project(sys_.model.encode_image(in_main));
    Tensor zr = sys_.model.project(sys_.model.encode_image(in_ref));
    SequenceLayout layout = build_layout(sys_.model.config(), s.question_ids, s.answer_ids);
    layout.z_main = reshape(zm, {zm.dim(1), zm.dim(2)});
    layout.z_ref = reshape(zr, {zr.dim(1), zr.dim(2)});
    DiffVqaModel::Decoded dec = sys_.model.decode_teacher_forced(layout);
    f.l_lm = detach_lm ? dec.lm_loss.detach() : dec.lm_loss;
    f.l_total = add(f.l_reg, f.l_lm);
    return f;
}

StepLosses Trainer::run_batch(const std::vector<LoadedSample>& batch,
                              const std::vector<std::optional<SaliencyMap>>* masks) {
    if (batch.empty()) throw ValueError("trainer: empty batch");
    opt_.zero_grad();
    StepLosses out;
    double inv = 1.0 / static_cast<double>(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        const SaliencyMap* mask = nullptr;
        if (masks) {
            if ((*masks)[i].has_value()) {
                mask = &(*masks)[i].value();
                ++out.masked_samples;
            } else {
                ++out.fallback_samples;
            }
        }
        Forward f = forward_sample(batch[i], mask);
        double l_reg = f.l_reg.item();
        double l_lm = f.l_lm.item();
        double l_total = f.l_total.item();
        if (!std::isfinite(l_total))
            throw NumericError("trainer: non-finite loss on sample " +
                               std::to_string(batch[i].id) + " (l_reg " + std::to_string(l_reg) +
                               ", l_lm " + std::to_string(l_lm) + ")");
        if (l_total != l_reg + l_lm)
            throw NumericError("trainer: total loss does not equal l_reg + l_lm");
        scale(f.l_total, inv).backward();
        out.l_reg += l_reg * inv;
        out.l_lm += l_lm * inv;
        out.l_total += l_total * inv;
    }
    opt_.step();
    return out;
}

StepLosses Trainer::train_step_warmup(const std::vector<LoadedSample>& batch) {
    return run_batch(batch, nullptr);
}

std::optional<SaliencyMap> Trainer::compute_step1_mask(const LoadedSample& sample) const {
    std::string kw;
    try {
        kw = extract_keyword(sample.answer, sys_.lexicon);
    } catch (const ValueError&) {
        std::fprintf(stderr, "dvqa: sample %lld has no extractable keyword, unmasked step\n",
                     static_cast<long long>(sample.id));
        return std::nullopt;
    }
    CamTarget target = keyword_to_target(kw, sys_.vocab, sample.answer_ids);
    if (!target.usable()) {
        std::fprintf(stderr, "dvqa: keyword '%s' absent from sample %lld, unmasked step\n",
                     kw.c_str(), static_cast<long long>(sample.id));
        return std::nullopt;
    }
    if (mask_override) return mask_override(sample.main, sample.ref);
    Tensor warped;
    {
        NoGradGuard ng;
        warped = warp_main(sample.main, sys_.predictor.forward(sample.main, sample.ref));
    }
    auto [s_main, s_ref] = gradcam_pair(sys_.model, warped, sample.ref, sample.question_ids, target);
    return shared_mask(s_main, s_ref);
}

StepLosses Trainer::train_step_masked(const std::vector<LoadedSample>& batch) {
    std::vector<std::optional<SaliencyMap>> masks;
    masks.reserve(batch.size());
    for (const LoadedSample& s : batch) masks.push_back(compute_step1_mask(s));
    return run_batch(batch, &masks);
}

namespace {

struct Pass1 {
    std::string answer;
    std::vector<int64_t> ids;
    Tensor warped;
};

Pass1 run_pass1(const System& sys, const Tensor& main, const Tensor& ref,
                const std::vector<int64_t>& question_ids) {
    NoGradGuard ng;
    Tensor warped = warp_main(main, sys.predictor.forward(main, ref));
    Tensor zm = sys.model.project(sys.model.encode_image(warped));
    Tensor zr = sys.model.project(sys.model.encode_image(ref));
    std::vector<int64_t> ids =
        sys.model.generate(reshape(zm, {zm.dim(1), zm.dim(2)}), reshape(zr, {zr.dim(1), zr.dim(2)}),
                           question_ids, sys.model.config().max_answer_len);
    return {sys.vocab.decode(ids), std::move(ids), warped};
}

InferResult continue_two_pass(const System& sys, const Tensor& warped, const Tensor& ref,
                              const std::vector<int64_t>& question_ids,
                              const std::string& preliminary,
                              const std::vector<int64_t>& preliminary_ids,
                              const MaskFn& override_mask) {
    InferResult r;
    r.answer = r.preliminary = preliminary;
    try {
        r.keyword = extract_keyword(preliminary, sys.lexicon);
    } catch (const ValueError&) {
        std::fprintf(stderr, "dvqa: empty preliminary answer, returning it unmasked\n");
        return r;
    }
    CamTarget target = keyword_to_target(r.keyword, sys.vocab, preliminary_ids);
    if (!target.usable()) {
        std::fprintf(stderr, "dvqa: keyword '%s' absent from the preliminary answer, returning it\n",
                     r.keyword.c_str());
        return r;
    }
    SaliencyMap mask;
    if (override_mask) {
        mask = override_mask(warped, ref);
    } else {
        auto [s_main, s_ref] = gradcam_pair(sys.model, warped, ref, question_ids, target);
        mask = shared_mask(s_main, s_ref);
    }
    NoGradGuard ng;
    Tensor zm = sys.model.project(sys.model.encode_image(apply_mask(warped, mask)));
    Tensor zr = sys.model.project(sys.model.encode_image(apply_mask(ref, mask)));
    std::vector<int64_t> ids =
        sys.model.generate(reshape(zm, {zm.dim(1), zm.dim(2)}), reshape(zr, {zr.dim(1), zr.dim(2)}),
                           question_ids, sys.model.config().max_answer_len);
    r.answer = sys.vocab.decode(ids);
    r.masked = true;
    return r;
}

}  // namespace

std::string infer_single_pass(const System& sys, const Tensor& main, const Tensor& ref,
                              const std::vector<int64_t>& question_ids) {
    return run_pass1(sys, main, ref, question_ids).answer;
}

InferResult infer_two_pass(const System& sys, const Tensor& main, const Tensor& ref,
                           const std::vector<int64_t>& question_ids, const MaskFn& override_mask) {
    Pass1 p1 = run_pass1(sys, main, ref, question_ids);
    return continue_two_pass(sys, p1.warped, ref, question_ids, p1.answer, p1.ids, override_mask);
}

InferResult infer_two_pass_from(const System& sys, const Tensor& main, const Tensor& ref,
                                const std::vector<int64_t>& question_ids,
                                const std::string& preliminary,
                                const std::vector<int64_t>& preliminary_ids,
                                const MaskFn& override_mask) {
    Tensor warped;
    {
        NoGradGuard ng;
        warped = warp_main(main, sys.predictor.forward(main, ref));
    }
    return continue_two_pass(sys, warped, ref, question_ids, preliminary, preliminary_ids,
                             override_mask);
}

std::string parse_change_type(const std::string& answer) {
    std::vector<std::string> toks = text::tokenize(answer);
    auto has = [&](const char* w) {
        return std::find(toks.begin(), toks.end(), std::string(w)) != toks.end();
    };
    if (has("disappeared")) return "disappeared";
    if (has("appeared")) return "appeared";
    if (has("enlarged")) return "enlarged";
    if (has("shrunk")) return "shrunk";
    if (has("no") && has("change")) return "unchanged";
    return "unknown";
}

EvalResult evaluate_split(const System& sys, const std::vector<LoadedSample>& samples,
                          bool two_pass, const MaskFn& override_mask) {
    if (samples.empty()) throw ValueError("evaluate_split: no samples");
    EvalResult out;
    std::vector<EvalPair> pairs;
    pairs.reserve(samples.size());
    int64_t kw_hits = 0, change_hits = 0;
    for (const LoadedSample& s : samples) {
        std::string hyp = two_pass
                              ? infer_two_pass(sys, s.main, s.ref, s.question_ids, override_mask).answer
                              : infer_single_pass(sys, s.main, s.ref, s.question_ids);
        pairs.push_back(make_eval_pair(hyp, s.answer));
        std::vector<std::string> ht = text::tokenize(hyp);
        std::vector<std::string> kt = text::tokenize(s.keyword);
        bool found = false;
        if (!kt.empty() && ht.size() >= kt.size()) {
            for (size_t i = 0; !found && i + kt.size() <= ht.size(); ++i)
                found = std::equal(kt.begin(), kt.end(), ht.begin() + static_cast<int64_t>(i));
        }
        kw_hits += found ? 1 : 0;
        change_hits += parse_change_type(hyp) == s.change ? 1 : 0;
        out.hyps.push_back(std::move(hyp));
    }
    out.report = score_pairs(pairs);
    out.count = static_cast<int64_t>(samples.size());
    out.keyword_acc = static_cast<double>(kw_hits) / static_cast<double>(out.count);
    out.change_acc = static_cast<double>(change_hits) / static_cast<double>(out.count);
    return out;
}

TrainOutcome run_training(TrainConfig cfg, const std::function<void(const EpochLog&)>& on_epoch) {
    Vocabulary vocab = synth_vocabulary();
    KeywordLexicon lex = synth_lexicon();
    Trainer trainer(std::move(cfg), vocab, lex);
    const TrainConfig& c = trainer.config();

    std::vector<LoadedSample> train = load_split(c.dataset_root, "train", vocab);
    std::vector<LoadedSample> valid = load_split(c.dataset_root, "valid", vocab);
    if (train.empty()) throw ValueError("run_training: train split is empty");
    if (valid.empty()) throw ValueError("run_training: valid split is empty");

    fs::create_directories(c.checkpoint_dir);
    TrainOutcome out;
    double best = -std::numeric_limits<double>::infinity();
    std::string jsonl;

    for (int64_t epoch = 1; epoch <= c.epochs; ++epoch) {
        bool warm = epoch <= c.warmup_epochs;
        int64_t cam_before = gradcam_call_count();
        double sum_reg = 0.0, sum_lm = 0.0;
        int64_t n = 0, fallbacks = 0;
        for (size_t start = 0; start < train.size(); start += static_cast<size_t>(c.batch_size)) {
            size_t stop = std::min(train.size(), start + static_cast<size_t>(c.batch_size));
            std::vector<LoadedSample> batch(train.begin() + static_cast<int64_t>(start),
                                            train.begin() + static_cast<int64_t>(stop));
            StepLosses losses =
                warm ? trainer.train_step_warmup(batch) : trainer.train_step_masked(batch);
            double bn = static_cast<double>(batch.size());
            sum_reg += losses.l_reg * bn;
            sum_lm += losses.l_lm * bn;
            fallbacks += losses.fallback_samples;
            n += static_cast<int64_t>(batch.size());
        }

        EpochLog el;
        el.epoch = epoch;
        el.mode = warm ? "warmup" : "masked";
        el.l_reg = sum_reg / static_cast<double>(n);
        el.l_lm = sum_lm / static_cast<double>(n);
        el.gradcam_calls = gradcam_call_count() - cam_before;
        el.fallback_samples = fallbacks;

        if (epoch % c.eval_every == 0 || epoch == c.epochs) {
            EvalResult ev = evaluate_split(trainer.system(), valid, true);
            el.evaluated = true;
            el.val = ev.report;
            if (ev.report.combined > best) {
                best = ev.report.combined;
                out.best = snapshot(c.model, trainer.system().named_parameters(),
                                    trainer.optimizer(), epoch, best);
                out.best_epoch = epoch;
                save_checkpoint(c.checkpoint_dir + "/best.ckpt", out.best);
            }
        }

        nlohmann::json line{{"epoch", el.epoch},
                            {"mode", el.mode},
                            {"l_reg", el.l_reg},
                            {"l_lm", el.l_lm},
                            {"gradcam_calls", el.gradcam_calls},
                            {"fallback_samples", el.fallback_samples}};
        if (el.evaluated) {
            line["val"] = {{"bleu1", el.val.bleu1},     {"bleu2", el.val.bleu2},
                           {"bleu3", el.val.bleu3},     {"bleu4", el.val.bleu4},
                           {"meteor", el.val.meteor},   {"rouge_l", el.val.rouge_l},
                           {"cider", el.val.cider},     {"combined", el.val.combined}};
        }
        jsonl += line.dump();
        jsonl += "\n";
        if (on_epoch) on_epoch(el);
        out.log.push_back(std::move(el));
    }

    write_text_file(c.checkpoint_dir + "/train_log.jsonl", jsonl);
    out.log_jsonl = std::move(jsonl);
    return out;
}

}  // namespace dvqa
