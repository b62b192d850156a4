#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "dvqa/config.hpp"
#include "dvqa/error.hpp"
#include "dvqa/io.hpp"

using namespace dvqa;

TEST_CASE("empty text yields the documented defaults") {
    TrainConfig c = parse_train_config("");
    CHECK(c.epochs == 16);
    CHECK(c.warmup_epochs == 1);
    CHECK(c.batch_size == 8);
    CHECK(c.lr == 1e-4);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.999);
    CHECK(c.eps == 1e-8);
    CHECK(c.reg_weights.w_small == 1e-4);
    CHECK(c.reg_weights.w_det == 1e-5);
    CHECK(c.reg_weights.w_trans == 1e-6);
    CHECK(c.model.image_h == 64);
    CHECK(c.model.embed_dim == 128);
    CHECK(c.dataset_root == "data");
    CHECK(c.seed == 1);
    CHECK(c.checkpoint_dir == "checkpoints");
    CHECK(c.eval_every == 1);
}

TEST_CASE("a full file with comments and blank lines parses") {
    std::string text =
        "# training schedule\n"
        "epochs = 8\n"
        "warmup_epochs = 1\n"
        "\n"
        "batch_size = 4\n"
        "lr = 3e-4  # step size\n"
        "beta1 = 0.85\n"
        "beta2 = 0.99\n"
        "eps = 1e-9\n"
        "reg_w_small = 2e-4\n"
        "reg_w_det = 2e-5\n"
        "reg_w_trans = 2e-6\n"
        "image_h = 32\n"
        "image_w = 48\n"
        "enc_channels = 64\n"
        "embed_dim = 96\n"
        "mlp_hidden = 192\n"
        "proj_heads = 2\n"
        "text_layers = 2\n"
        "text_heads = 3\n"
        "dec_layers = 3\n"
        "dec_heads = 6\n"
        "max_question_len = 9\n"
        "max_answer_len = 11\n"
        "vocab_size = 40\n"
        "dataset_root = /tmp/toy data\n"
        "seed = 18446744073709551615\n"
        "checkpoint_dir = ckpts\n"
        "eval_every = 2\n";
    TrainConfig c = parse_train_config(text);
    CHECK(c.epochs == 8);
    CHECK(c.batch_size == 4);
    CHECK(c.lr == 3e-4);
    CHECK(c.beta1 == 0.85);
    CHECK(c.reg_weights.w_small == 2e-4);
    CHECK(c.model.image_h == 32);
    CHECK(c.model.image_w == 48);
    CHECK(c.model.enc_channels == 64);
    CHECK(c.model.embed_dim == 96);
    CHECK(c.model.text_heads == 3);
    CHECK(c.model.vocab_size == 40);
    CHECK(c.dataset_root == "/tmp/toy data");  // interior spaces survive
    CHECK(c.seed == 18446744073709551615ull);
    CHECK(c.checkpoint_dir == "ckpts");
    CHECK(c.eval_every == 2);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("parse failures carry the key and line") {
    CHECK_THROWS_WITH_AS(parse_train_config("workers = 3\n"),
                         doctest::Contains("unknown key 'workers'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("epochs 8\n"), doctest::Contains("line 1"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("\n\n= 4\n"), doctest::Contains("line 3"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("epochs = twelve\n"),
                         doctest::Contains("expected an integer"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("epochs = 12.5\n"), doctest::Contains("epochs"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("lr = fast\n"), doctest::Contains("expected a number"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_train_config("seed = -1\n"), doctest::Contains("non-negative"),
                         ConfigError);
}

TEST_CASE("the last assignment wins when a key repeats") {
    TrainConfig c = parse_train_config("epochs = 4\nepochs = 9\n");
    CHECK(c.epochs == 9);
}

TEST_CASE("validate rejects each violated invariant") {
    auto base = [] {
        TrainConfig c;
        c.model.vocab_size = 37;
        return c;
    };
    CHECK_NOTHROW(base().validate());

    TrainConfig c = base();
    c.warmup_epochs = 16;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("below epochs"), ConfigError);
    c = base();
    c.warmup_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.lr = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.beta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.eps = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.reg_weights.w_det = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.eval_every = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.dataset_root = "";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.checkpoint_dir = "";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.model.image_h = 40;  // model invariants propagate
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = base();
    c.model.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dump and parse round-trip every field") {
    TrainConfig c;
    c.epochs = 11;
    c.warmup_epochs = 3;
    c.batch_size = 5;
    c.lr = 0.00037;
    c.beta1 = 0.87;
    c.beta2 = 0.9991;
    c.eps = 3.5e-9;
    c.reg_weights = {0.125, 1.0 / 3.0, 7e-7};
    c.model.image_h = 96;
    c.model.image_w = 80;
    c.model.enc_channels = 72;
    c.model.embed_dim = 60;
    c.model.mlp_hidden = 120;
    c.model.proj_heads = 5;
    c.model.text_layers = 2;
    c.model.text_heads = 6;
    c.model.dec_layers = 4;
    c.model.dec_heads = 10;
    c.model.max_question_len = 14;
    c.model.max_answer_len = 17;
    c.model.vocab_size = 55;
    c.dataset_root = "runs/ds one";
    c.seed = 424242;
    c.checkpoint_dir = "runs/ck";
    c.eval_every = 3;

    std::string text = dump_train_config(c);
    TrainConfig r = parse_train_config(text);
    CHECK(r.epochs == c.epochs);
    CHECK(r.warmup_epochs == c.warmup_epochs);
    CHECK(r.batch_size == c.batch_size);
    CHECK(r.lr == c.lr);
    CHECK(r.beta1 == c.beta1);
    CHECK(r.beta2 == c.beta2);
    CHECK(r.eps == c.eps);
    CHECK(r.reg_weights.w_small == c.reg_weights.w_small);
    CHECK(r.reg_weights.w_det == c.reg_weights.w_det);
    CHECK(r.reg_weights.w_trans == c.reg_weights.w_trans);
    CHECK(r.model.image_h == c.model.image_h);
    CHECK(r.model.image_w == c.model.image_w);
    CHECK(r.model.enc_channels == c.model.enc_channels);
    CHECK(r.model.embed_dim == c.model.embed_dim);
    CHECK(r.model.mlp_hidden == c.model.mlp_hidden);
    CHECK(r.model.proj_heads == c.model.proj_heads);
    CHECK(r.model.text_layers == c.model.text_layers);
    CHECK(r.model.text_heads == c.model.text_heads);
    CHECK(r.model.dec_layers == c.model.dec_layers);
    CHECK(r.model.dec_heads == c.model.dec_heads);
    CHECK(r.model.max_question_len == c.model.max_question_len);
    CHECK(r.model.max_answer_len == c.model.max_answer_len);
    CHECK(r.model.vocab_size == c.model.vocab_size);
    CHECK(r.dataset_root == c.dataset_root);
    CHECK(r.seed == c.seed);
    CHECK(r.checkpoint_dir == c.checkpoint_dir);
    CHECK(r.eval_every == c.eval_every);

    // the dump covers exactly the documented keys
    CHECK(config_keys().size() == 27);
    for (const std::string& key : config_keys())
        CHECK(text.find(key + " = ") != std::string::npos);
}

TEST_CASE("load_train_config reads, parses and validates") {
    std::string path = "/tmp/dvqa_cfg_test.cfg";
    write_text_file(path, "epochs = 3\nwarmup_epochs = 1\nvocab_size = 33\n");
    TrainConfig c = load_train_config(path);
    CHECK(c.epochs == 3);
    CHECK(c.model.vocab_size == 33);

    write_text_file(path, "epochs = 2\nwarmup_epochs = 2\nvocab_size = 33\n");
    CHECK_THROWS_AS(load_train_config(path), ConfigError);
    CHECK_THROWS_AS(load_train_config("/tmp/dvqa_cfg_missing.cfg"), IoError);
}
