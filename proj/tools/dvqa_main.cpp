// Command line front end: synthetic data generation, training, evaluation,
// inference, saliency/registration inspection, metric scoring, grad checks.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/pipeline.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/synthdata.hpp"
#include "dvqa/text.hpp"

namespace fs = std::filesystem;
using namespace dvqa;

namespace {

struct LoadedSystem {
    Checkpoint ck;
    System sys;
};

LoadedSystem load_system(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    Vocabulary vocab = synth_vocabulary();
    if (ck.model.vocab_size != vocab.size())
        throw ValueError("checkpoint vocabulary size " + std::to_string(ck.model.vocab_size) +
                         " does not match the built-in corpus vocabulary (" +
                         std::to_string(vocab.size()) + ")");
    System sys(ck.model, 0, vocab, synth_lexicon());
    restore(ck, ck.model, sys.named_parameters(), nullptr);
    return {std::move(ck), std::move(sys)};
}

Tensor load_image(const std::string& path, const ModelConfig& mc) {
    Tensor img = read_pgm(path);
    if (img.dim(1) != mc.image_h || img.dim(2) != mc.image_w)
        throw ValueError("image " + path + " is " + std::to_string(img.dim(2)) + "x" +
                         std::to_string(img.dim(1)) + ", the model expects " +
                         std::to_string(mc.image_w) + "x" + std::to_string(mc.image_h));
    return reshape(img, {1, 1, img.dim(1), img.dim(2)});
}

int cmd_gen_data(const std::string& root, int64_t count, uint64_t seed, int64_t image_size,
                 std::vector<double> ratios) {
    SynthConfig scfg;
    scfg.image_size = image_size;
    DatasetManifest m =
        write_dataset(root, seed, count, scfg, {ratios.at(0), ratios.at(1), ratios.at(2)});
    std::printf("wrote %lld samples (%lldpx) under %s\n", static_cast<long long>(m.count),
                static_cast<long long>(m.image_size), m.root.c_str());
    for (const auto& [name, n] : m.splits)
        std::printf("  %-5s %lld\n", name.c_str(), static_cast<long long>(n));
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    std::string body = read_text_file(config_path);
    for (const std::string& kv : overrides) {
        body += "\n";
        body += kv;
    }
    // validation happens inside run_training, after the corpus vocabulary
    // fills in vocab_size
    TrainConfig cfg = parse_train_config(body);
    TrainOutcome out = run_training(cfg, [](const EpochLog& el) {
        std::printf("epoch %3lld  %-6s  l_reg %.4g  l_lm %.6f  cam %lld  fallback %lld",
                    static_cast<long long>(el.epoch), el.mode.c_str(), el.l_reg, el.l_lm,
                    static_cast<long long>(el.gradcam_calls),
                    static_cast<long long>(el.fallback_samples));
        if (el.evaluated)
            std::printf("  val combined %.4f (cider %.4f meteor %.4f)", el.val.combined,
                        el.val.cider, el.val.meteor);
        std::printf("\n");
        std::fflush(stdout);
    });
    std::printf("best epoch %lld, combined %.4f, checkpoint %s/best.ckpt\n",
                static_cast<long long>(out.best_epoch), out.best.best_score,
                cfg.checkpoint_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& root, const std::string& split,
             bool single_pass, bool as_json) {
    LoadedSystem ls = load_system(ckpt);
    std::vector<LoadedSample> samples = load_split(root, split, ls.sys.vocab);
    EvalResult ev = evaluate_split(ls.sys, samples, !single_pass);
    if (as_json) {
        nlohmann::json j = nlohmann::json::parse(report_json(ev.report));
        j["keyword_acc"] = ev.keyword_acc;
        j["change_acc"] = ev.change_acc;
        j["count"] = ev.count;
        j["two_pass"] = !single_pass;
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("%s split, %lld samples, %s\n", split.c_str(),
                    static_cast<long long>(ev.count), single_pass ? "single pass" : "two passes");
        std::printf("%s", report_table(ev.report).c_str());
        std::printf("keyword_acc %.4f\n", ev.keyword_acc);
        std::printf("change_acc  %.4f\n", ev.change_acc);
    }
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& main_path, const std::string& ref_path,
              const std::string& question, bool single_pass, bool as_json) {
    LoadedSystem ls = load_system(ckpt);
    Tensor main = load_image(main_path, ls.ck.model);
    Tensor ref = load_image(ref_path, ls.ck.model);
    std::vector<int64_t> qids = ls.sys.vocab.encode(question);

    if (single_pass) {
        std::string answer = infer_single_pass(ls.sys, main, ref, qids);
        if (as_json)
            std::printf("%s\n", nlohmann::json{{"answer", answer}}.dump(2).c_str());
        else
            std::printf("%s\n", answer.c_str());
        return 0;
    }
    InferResult r = infer_two_pass(ls.sys, main, ref, qids);
    if (as_json) {
        nlohmann::json j{{"answer", r.answer},
                         {"preliminary", r.preliminary},
                         {"keyword", r.keyword},
                         {"masked", r.masked}};
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("preliminary: %s\n", r.preliminary.c_str());
        std::printf("keyword:     %s%s\n", r.keyword.c_str(), r.masked ? "" : " (unusable, fallback)");
        std::printf("answer:      %s\n", r.answer.c_str());
    }
    return 0;
}

int cmd_cam(const std::string& ckpt, const std::string& main_path, const std::string& ref_path,
            const std::string& question, std::string answer, std::string keyword,
            const std::string& out_dir) {
    LoadedSystem ls = load_system(ckpt);
    Tensor main = load_image(main_path, ls.ck.model);
    Tensor ref = load_image(ref_path, ls.ck.model);
    std::vector<int64_t> qids = ls.sys.vocab.encode(question);

    if (answer.empty()) answer = infer_single_pass(ls.sys, main, ref, qids);
    if (answer.empty()) throw ValueError("the model generated an empty answer; pass --answer");
    if (keyword.empty()) keyword = extract_keyword(answer, ls.sys.lexicon);
    std::vector<int64_t> answer_ids = ls.sys.vocab.encode(answer);
    CamTarget target = keyword_to_target(keyword, ls.sys.vocab, answer_ids);
    if (!target.usable())
        throw ValueError("keyword '" + keyword + "' does not appear in the answer '" + answer + "'");

    NoGradGuard ng;
    Tensor theta = ls.sys.predictor.forward(main, ref);
    Tensor warped = warp_main(main, theta);
    auto [s_main, s_ref] = gradcam_pair(ls.sys.model, warped, ref, qids, target);
    SaliencyMap shared = shared_mask(s_main, s_ref);

    fs::create_directories(out_dir);
    write_pgm(out_dir + "/cam_main.pgm", s_main.values);
    write_pgm(out_dir + "/cam_ref.pgm", s_ref.values);
    write_pgm(out_dir + "/cam_shared.pgm", shared.values);
    write_pgm(out_dir + "/masked_main.pgm", apply_mask(warped, shared));
    write_pgm(out_dir + "/masked_ref.pgm", apply_mask(ref, shared));
    std::printf("answer:  %s\n", answer.c_str());
    std::printf("keyword: %s\n", keyword.c_str());
    std::printf("wrote cam_{main,ref,shared}.pgm and masked_{main,ref}.pgm under %s\n",
                out_dir.c_str());
    return 0;
}

int cmd_register(const std::string& ckpt, const std::string& main_path, const std::string& ref_path,
                 const std::string& out_path, bool as_json) {
    LoadedSystem ls = load_system(ckpt);
    Tensor main = load_image(main_path, ls.ck.model);
    Tensor ref = load_image(ref_path, ls.ck.model);

    NoGradGuard ng;
    Tensor theta = ls.sys.predictor.forward(main, ref);
    AffineParams p = affine_from_tensor(theta);
    auto [tx, ty] = p.translation_px(ls.ck.model.image_h, ls.ck.model.image_w);
    if (as_json) {
        nlohmann::json j{{"A", {p.A[0], p.A[1], p.A[2], p.A[3]}},
                         {"t", {p.t[0], p.t[1]}},
                         {"det", p.det()},
                         {"translation_px", {tx, ty}}};
        std::printf("%s\n", j.dump(2).c_str());
    } else {
        std::printf("A   [% .6f % .6f; % .6f % .6f]\n", p.A[0], p.A[1], p.A[2], p.A[3]);
        std::printf("t   [% .6f % .6f]  (%.3f, %.3f px)\n", p.t[0], p.t[1], tx, ty);
        std::printf("det % .6f\n", p.det());
    }
    if (!out_path.empty()) {
        write_pgm(out_path, warp_main(main, theta));
        std::printf("wrote %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_metrics(const std::string& hyp_path, const std::string& ref_path, bool as_json) {
    ScoreReport r = score_corpus(hyp_path, ref_path);
    if (as_json)
        std::printf("%s\n", report_json(r).c_str());
    else
        std::printf("%s", report_table(r).c_str());
    return 0;
}

int cmd_gradcheck(double eps) {
    CounterRng rng(17, 0);
    struct Probe {
        const char* name;
        std::function<double()> run;
    };
    std::vector<Probe> probes;

    probes.push_back({"linear+relu+mean", [&] {
        Tensor x = Tensor::randn({3, 4}, rng);
        Tensor w = Tensor::randn({4, 5}, rng, 0.5, true);
        Tensor b = Tensor::randn({5}, rng, 0.1);
        return grad_check_param([&] { return mean(relu(linear(x, w, b))); }, w, eps);
    }});
    probes.push_back({"conv2d", [&] {
        Tensor x = Tensor::randn({1, 1, 8, 8}, rng, 1.0, true);
        Tensor w = Tensor::randn({2, 1, 3, 3}, rng, 0.5);
        Tensor b = Tensor::zeros({2});
        return grad_check([&](const Tensor& t) { return mean(conv2d(t, w, b, 1, 1)); }, x, eps);
    }});
    probes.push_back({"grid_sample", [&] {
        Tensor x = Tensor::randn({1, 1, 6, 6}, rng);
        Tensor grid = Tensor::rand_uniform({1, 6, 6, 2}, rng, -0.9, 0.9, true);
        return grad_check_param(
            [&] { return mean(grid_sample_bilinear(x, grid)); }, grid, eps);
    }});
    probes.push_back({"softmax+cross_entropy", [&] {
        Tensor logits = Tensor::randn({4, 7}, rng, 1.0, true);
        std::vector<int64_t> targets{1, 0, 6, 3};
        std::vector<unsigned char> live(targets.size(), 1);
        return grad_check_param([&] { return cross_entropy(logits, targets, live); }, logits, eps);
    }});
    probes.push_back({"layer_norm", [&] {
        Tensor x = Tensor::randn({3, 8}, rng, 1.0, true);
        Tensor g = Tensor::randn({8}, rng, 0.5);
        Tensor b = Tensor::randn({8}, rng, 0.5);
        // quadratic readout: the plain mean of a normalized row is constant
        return grad_check(
            [&](const Tensor& t) {
                Tensor y = layer_norm(t, g, b);
                return mean(mul(y, y));
            },
            x, eps);
    }});

    bool ok = true;
    for (const Probe& p : probes) {
        double err = p.run();
        bool pass = err < 1e-4;
        ok = ok && pass;
        std::printf("%-22s max rel err %.3e  %s\n", p.name, err, pass ? "ok" : "FAIL");
    }
    if (!ok) throw NumericError("gradient check failed");
    std::printf("all gradient checks passed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"saliency-guided longitudinal difference VQA"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_root = "data";
    int64_t gd_count = 2500;
    uint64_t gd_seed = 1;
    int64_t gd_size = 64;
    std::vector<double> gd_ratios{0.8, 0.1, 0.1};
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic study-pair dataset");
    gen->add_option("--root", gd_root, "output directory")->capture_default_str();
    gen->add_option("--count", gd_count, "number of study pairs")->capture_default_str();
    gen->add_option("--seed", gd_seed, "base seed; sample i uses seed+i")->capture_default_str();
    gen->add_option("--image-size", gd_size, "square image size in px")->capture_default_str();
    gen->add_option("--ratios", gd_ratios, "train/valid/test ratios")->expected(3);

    // train
    std::string tr_config;
    std::vector<std::string> tr_sets;
    auto* tr = app.add_subcommand("train", "train from a key=value config file");
    tr->add_option("--config", tr_config, "config file")->required()->check(CLI::ExistingFile);
    tr->add_option("--set", tr_sets, "override a config entry, e.g. --set epochs=4");

    // eval
    std::string ev_ckpt, ev_root = "data", ev_split = "valid";
    bool ev_single = false, ev_json = false;
    auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset split");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--root", ev_root, "dataset root")->capture_default_str();
    ev->add_option("--split", ev_split, "train, valid or test")->capture_default_str();
    ev->add_flag("--single-pass", ev_single, "skip the masked second pass");
    ev->add_flag("--json", ev_json, "print a JSON object");

    // infer
    std::string in_ckpt, in_main, in_ref, in_question;
    bool in_single = false, in_json = false;
    auto* in = app.add_subcommand("infer", "answer a question about a study pair");
    in->add_option("--ckpt", in_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    in->add_option("--main", in_main, "current study PGM")->required()->check(CLI::ExistingFile);
    in->add_option("--ref", in_ref, "prior study PGM")->required()->check(CLI::ExistingFile);
    in->add_option("--question", in_question, "question text")->required();
    in->add_flag("--single-pass", in_single, "skip the masked second pass");
    in->add_flag("--json", in_json, "print a JSON object");

    // cam
    std::string cm_ckpt, cm_main, cm_ref, cm_question, cm_answer, cm_keyword, cm_out = "cam_out";
    auto* cm = app.add_subcommand("cam", "write keyword-conditioned saliency maps");
    cm->add_option("--ckpt", cm_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    cm->add_option("--main", cm_main, "current study PGM")->required()->check(CLI::ExistingFile);
    cm->add_option("--ref", cm_ref, "prior study PGM")->required()->check(CLI::ExistingFile);
    cm->add_option("--question", cm_question, "question text")->required();
    cm->add_option("--answer", cm_answer, "answer to explain (default: generate pass 1)");
    cm->add_option("--keyword", cm_keyword, "keyword to condition on (default: extract)");
    cm->add_option("--out-dir", cm_out, "output directory")->capture_default_str();

    // register
    std::string rg_ckpt, rg_main, rg_ref, rg_out;
    bool rg_json = false;
    auto* rg = app.add_subcommand("register", "predict and apply the pre-alignment affine");
    rg->add_option("--ckpt", rg_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    rg->add_option("--main", rg_main, "current study PGM")->required()->check(CLI::ExistingFile);
    rg->add_option("--ref", rg_ref, "prior study PGM")->required()->check(CLI::ExistingFile);
    rg->add_option("--out", rg_out, "write the warped current study here");
    rg->add_flag("--json", rg_json, "print a JSON object");

    // metrics
    std::string mt_hyp, mt_ref;
    bool mt_json = false;
    auto* mt = app.add_subcommand("metrics", "score line-paired hypothesis/reference files");
    mt->add_option("--hyp", mt_hyp, "hypothesis file, one per line")->required()->check(CLI::ExistingFile);
    mt->add_option("--ref", mt_ref, "reference file, one per line")->required()->check(CLI::ExistingFile);
    mt->add_flag("--json", mt_json, "print a JSON object");

    // gradcheck
    double gc_eps = 1e-5;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of the autodiff core");
    gc->add_option("--eps", gc_eps, "finite difference step")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // exit code 1 for any usage problem; --help stays 0
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gd_root, gd_count, gd_seed, gd_size, gd_ratios);
        if (tr->parsed()) return cmd_train(tr_config, tr_sets);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_root, ev_split, ev_single, ev_json);
        if (in->parsed()) return cmd_infer(in_ckpt, in_main, in_ref, in_question, in_single, in_json);
        if (cm->parsed())
            return cmd_cam(cm_ckpt, cm_main, cm_ref, cm_question, cm_answer, cm_keyword, cm_out);
        if (rg->parsed()) return cmd_register(rg_ckpt, rg_main, rg_ref, rg_out, rg_json);
        if (mt->parsed()) return cmd_metrics(mt_hyp, mt_ref, mt_json);
        if (gc->parsed()) return cmd_gradcheck(gc_eps);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
