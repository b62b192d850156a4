#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/metrics.hpp"
#include "dvqa/rng.hpp"

#include <json.hpp>

using namespace dvqa;

// Brute-force CIDEr-D oracle, written before the sparse implementation: it
// materializes dense TF-IDF vectors over the full n-gram vocabulary and
// evaluates the clipped cosine with direct loops.
namespace oracle {

using Tokens = std::vector<std::string>;

std::map<std::string, double> ngram_counts(const Tokens& t, int n) {
    std::map<std::string, double> out;
    if (static_cast<int>(t.size()) < n) return out;
    for (size_t i = 0; i + n <= t.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += t[i + j];
        }
        out[key] += 1.0;
    }
    return out;
}

double cider_brute(const std::vector<EvalPair>& pairs) {
    size_t N = pairs.size();
    std::vector<double> per_pair(N, 0.0);
    for (int n = 1; n <= 4; ++n) {
        std::set<std::string> vocab;
        // df counts reference sentences containing the n-gram
        std::map<std::string, double> df;
        for (const EvalPair& p : pairs) {
            auto hc = ngram_counts(p.hyp, n);
            auto rc = ngram_counts(p.ref, n);
            for (auto& [k, v] : hc) vocab.insert(k);
            for (auto& [k, v] : rc) {
                vocab.insert(k);
                df[k] += 1.0;
            }
        }
        std::vector<std::string> keys(vocab.begin(), vocab.end());
        for (size_t pi = 0; pi < N; ++pi) {
            auto hc = ngram_counts(pairs[pi].hyp, n);
            auto rc = ngram_counts(pairs[pi].ref, n);
            std::vector<double> h(keys.size(), 0.0), r(keys.size(), 0.0);
            for (size_t k = 0; k < keys.size(); ++k) {
                auto it = df.find(keys[k]);
                double d = it == df.end() ? 0.0 : it->second;
                double idf = std::log(static_cast<double>(N)) - std::log(std::max(1.0, d));
                if (hc.count(keys[k])) h[k] = hc[keys[k]] * idf;
                if (rc.count(keys[k])) r[k] = rc[keys[k]] * idf;
            }
            double nh = 0.0, nr = 0.0, dot = 0.0;
            for (size_t k = 0; k < keys.size(); ++k) {
                nh += h[k] * h[k];
                nr += r[k] * r[k];
                dot += std::min(h[k], r[k]) * r[k];
            }
            nh = std::sqrt(nh);
            nr = std::sqrt(nr);
            double sim = (nh > 0.0 && nr > 0.0) ? dot / (nh * nr) : 0.0;
            double delta = static_cast<double>(pairs[pi].hyp.size()) - static_cast<double>(pairs[pi].ref.size());
            sim *= std::exp(-(delta * delta) / (2.0 * 6.0 * 6.0));
            per_pair[pi] += 10.0 * sim / 4.0;
        }
    }
    double total = 0.0;
    for (double v : per_pair) total += v;
    return total / static_cast<double>(N);
}

}  // namespace oracle

namespace {

std::vector<std::string> toks(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

EvalPair pair_of(const std::string& hyp, const std::string& ref) { return {toks(hyp), toks(ref)}; }

std::vector<EvalPair> random_corpus(uint64_t seed, int min_pairs = 3, int max_pairs = 8) {
    static const std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f",
                                                "g", "h", "i", "j", "k", "l"};
    CounterRng rng(seed, 7);
    while (true) {
        int np = static_cast<int>(rng.uniform_int(min_pairs, max_pairs));
        std::vector<EvalPair> pairs;
        for (int p = 0; p < np; ++p) {
            EvalPair e;
            int hl = static_cast<int>(rng.uniform_int(1, 10));
            int rl = static_cast<int>(rng.uniform_int(1, 10));
            for (int i = 0; i < hl; ++i) e.hyp.push_back(vocab[rng.uniform_int(0, 11)]);
            for (int i = 0; i < rl; ++i) e.ref.push_back(vocab[rng.uniform_int(0, 11)]);
            pairs.push_back(std::move(e));
        }
        std::set<std::vector<std::string>> distinct;
        for (const EvalPair& e : pairs) distinct.insert(e.ref);
        if (distinct.size() >= 2) return pairs;
    }
}

}  // namespace

TEST_CASE("bleu identity corpus scores one at every order") {
    std::vector<EvalPair> pairs{
        pair_of("a b c d e f g h", "a b c d e f g h"),
        pair_of("the cat sat on the mat today quietly", "the cat sat on the mat today quietly"),
        pair_of("x y z w v u t s", "x y z w v u t s"),
    };
    for (int n = 1; n <= 4; ++n) CHECK(bleu(pairs, n) == 1.0);
}

TEST_CASE("bleu clips repeated unigrams") {
    std::vector<EvalPair> pairs{pair_of("the the the", "the cat")};
    CHECK(bleu(pairs, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bleu on disjoint vocabularies is zero") {
    std::vector<EvalPair> pairs{pair_of("a b c d", "e f g h")};
    for (int n = 1; n <= 4; ++n) CHECK(bleu(pairs, n) == 0.0);
}

TEST_CASE("bleu brevity penalty and rejections") {
    // hypothesis shorter than reference
    std::vector<EvalPair> pairs{pair_of("a b", "a b c d")};
    CHECK(bleu(pairs, 1) == doctest::Approx(std::exp(1.0 - 4.0 / 2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(bleu({}, 1), ValueError);
    CHECK_THROWS_AS(bleu(pairs, 0), ValueError);
    CHECK_THROWS_AS(bleu(pairs, 5), ValueError);

    // all-empty hypotheses stay finite
    std::vector<EvalPair> empties{pair_of("", "a b")};
    CHECK(bleu(empties, 1) == 0.0);
}

TEST_CASE("bleu grows as a matched suffix extends a short hypothesis") {
    std::vector<std::string> ref = toks("a b c d e f g h");
    double prev1 = -1.0, prev4 = -1.0;
    for (size_t k = 1; k <= 8; ++k) {
        std::vector<EvalPair> pairs{{std::vector<std::string>(ref.begin(), ref.begin() + k), ref}};
        double b1 = bleu(pairs, 1);
        CHECK(b1 > prev1);
        prev1 = b1;
        if (k >= 4) {
            double b4 = bleu(pairs, 4);
            CHECK(b4 > prev4);
            prev4 = b4;
        }
    }
    CHECK(prev1 == 1.0);
    CHECK(prev4 == 1.0);
}

TEST_CASE("meteor matches the worked examples") {
    // identical 8-token sentences: F = 1, penalty = 0.5/512
    std::vector<EvalPair> ident{pair_of("a b c d e f g h", "a b c d e f g h")};
    CHECK(meteor(ident) == doctest::Approx(1.0 - 0.5 / 512.0).epsilon(1e-12));

    // stem-stage match with one chunk
    std::vector<EvalPair> stems{pair_of("dogs", "dog")};
    CHECK(meteor(stems) == doctest::Approx(0.5).epsilon(1e-12));

    // disjoint tokens and stems
    std::vector<EvalPair> none{pair_of("a b c", "x y z")};
    CHECK(meteor(none) == 0.0);

    // crossed alignment splits into two chunks
    std::vector<EvalPair> crossed{pair_of("b a", "a b")};
    CHECK(meteor(crossed) == doctest::Approx(0.5).epsilon(1e-12));

    // mixed exact and stem stages, single chunk
    std::vector<EvalPair> mixed{pair_of("the dogs run", "the dog runs")};
    CHECK(meteor(mixed) == doctest::Approx(1.0 - 0.5 * std::pow(1.0 / 3.0, 3)).epsilon(1e-12));

    // empty hypothesis is a zero-score pair
    std::vector<EvalPair> degen{pair_of("", "a b"), pair_of("a b", "a b")};
    CHECK(meteor(degen) == doctest::Approx(0.5 * (1.0 - 0.5 / 8.0)).epsilon(1e-12));
}

TEST_CASE("rouge_l matches the worked examples") {
    std::vector<EvalPair> ident{pair_of("a b c d e", "a b c d e")};
    CHECK(rouge_l(ident) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<EvalPair> swapped{pair_of("a b c d", "a c b d")};
    CHECK(rouge_l(swapped) == doctest::Approx(0.75).epsilon(1e-12));

    std::vector<EvalPair> none{pair_of("a b", "x y")};
    CHECK(rouge_l(none) == 0.0);

    // asymmetric lengths: lcs = 2, P = 2/3, R = 2/4
    std::vector<EvalPair> uneven{pair_of("a b q", "a x b y")};
    double p = 2.0 / 3.0, r = 2.0 / 4.0, b2 = 1.2 * 1.2;
    CHECK(rouge_l(uneven) == doctest::Approx((1.0 + b2) * p * r / (r + b2 * p)).epsilon(1e-12));
}

TEST_CASE("cider scores ten on an orthogonal identity corpus") {
    // sentences need at least four tokens so every order contributes
    std::vector<EvalPair> pairs{
        pair_of("a b c d", "a b c d"),
        pair_of("e f g h", "e f g h"),
        pair_of("i j k l", "i j k l"),
    };
    CHECK(cider(pairs) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("cider is zero without any n-gram overlap") {
    std::vector<EvalPair> pairs{
        pair_of("a b c", "x y z"),
        pair_of("d e f", "u v w"),
    };
    CHECK(cider(pairs) == 0.0);
}

TEST_CASE("cider rejects degenerate reference corpora") {
    std::vector<EvalPair> same{
        pair_of("a b", "c d"),
        pair_of("a c", "c d"),
    };
    CHECK_THROWS_AS(cider(same), ValueError);
    CHECK_THROWS_AS(cider({pair_of("a", "b")}), ValueError);
}

TEST_CASE("cider matches the brute-force oracle on 100 random corpora") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        std::vector<EvalPair> pairs = random_corpus(seed);
        double fast = cider(pairs);
        double brute = oracle::cider_brute(pairs);
        REQUIRE(std::fabs(fast - brute) <= 1e-9);
    }
}

TEST_CASE("combined matches the selection formula") {
    CHECK(combined(0.0, 0.0) == 0.0);
    CHECK(combined(1.0, 0.5) == 0.5);
    CHECK(combined(1e9, 1.0) > 0.999);
    CHECK(combined(1e9, 1.0) <= 1.0);
    CHECK_THROWS_AS(combined(-0.1, 0.5), ValueError);
    CHECK_THROWS_AS(combined(1.0, -0.5), ValueError);
    CHECK_THROWS_AS(combined(1.0, 1.5), ValueError);

    // strictly increasing in each argument
    CHECK(combined(2.0, 0.5) > combined(1.0, 0.5));
    CHECK(combined(1.0, 0.6) > combined(1.0, 0.5));
}

TEST_CASE("porter stemmer reproduces the golden list") {
    const std::pair<const char*, const char*> golden[] = {
        {"caresses", "caress"}, {"ponies", "poni"},     {"ties", "ti"},
        {"caress", "caress"},   {"cats", "cat"},        {"feed", "feed"},
        {"agreed", "agre"},     {"plastered", "plaster"}, {"bled", "bled"},
        {"motoring", "motor"},  {"sing", "sing"},       {"troubled", "troubl"},
        {"sized", "size"},      {"hopping", "hop"},     {"tanned", "tan"},
        {"falling", "fall"},    {"hissing", "hiss"},    {"fizzed", "fizz"},
        {"failing", "fail"},    {"filing", "file"},     {"happy", "happi"},
        {"sky", "sky"},         {"conflated", "conflat"}, {"matting", "mat"},
        {"mating", "mate"},     {"meeting", "meet"},    {"milling", "mill"},
        {"messing", "mess"},    {"meetings", "meet"},   {"dogs", "dog"},
    };
    for (auto& [in, out] : golden) {
        INFO("word " << in);
        CHECK(porter_stem(in) == out);
    }
}

TEST_CASE("metrics are invariant under corpus permutation") {
    std::vector<EvalPair> pairs = random_corpus(424242, 6, 6);
    std::vector<EvalPair> shuffled = pairs;
    std::rotate(shuffled.begin(), shuffled.begin() + 2, shuffled.end());
    std::swap(shuffled[0], shuffled[3]);

    ScoreReport a = score_pairs(pairs);
    ScoreReport b = score_pairs(shuffled);
    CHECK(a.bleu1 == doctest::Approx(b.bleu1).epsilon(1e-12));
    CHECK(a.bleu4 == doctest::Approx(b.bleu4).epsilon(1e-12));
    CHECK(a.meteor == doctest::Approx(b.meteor).epsilon(1e-12));
    CHECK(a.rouge_l == doctest::Approx(b.rouge_l).epsilon(1e-12));
    CHECK(a.cider == doctest::Approx(b.cider).epsilon(1e-12));
    CHECK(a.combined == doctest::Approx(b.combined).epsilon(1e-12));
}

TEST_CASE("score_corpus on identical files meets the identity contract") {
    const char* hyp_path = "/tmp/dvqa_metrics_hyp.txt";
    const char* ref_path = "/tmp/dvqa_metrics_ref.txt";
    std::string body =
        "a new opacity has appeared in the left upper zone\n"
        "the nodule in the right lower zone has enlarged\n"
        "no change is observed in the current study today\n";
    write_text_file(hyp_path, body);
    write_text_file(ref_path, body);

    ScoreReport r = score_corpus(hyp_path, ref_path);
    CHECK(r.bleu1 == 1.0);
    CHECK(r.bleu4 == 1.0);
    CHECK(r.rouge_l == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.meteor >= 0.99);
    CHECK(r.combined == doctest::Approx(combined(r.cider, r.meteor)).epsilon(1e-12));

    nlohmann::json j = nlohmann::json::parse(report_json(r));
    std::set<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
    CHECK(keys == std::set<std::string>{"bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l",
                                        "cider", "combined"});
    CHECK(j["bleu1"].get<double>() == r.bleu1);
    CHECK(j["cider"].get<double>() == r.cider);
    CHECK(j["combined"].get<double>() == r.combined);

    CHECK(report_table(r).find("bleu1") != std::string::npos);

    write_text_file(hyp_path, "one line\n");
    CHECK_THROWS_AS(score_corpus(hyp_path, ref_path), ValueError);
    CHECK_THROWS_AS(score_corpus("/tmp/dvqa_no_such_file.txt", ref_path), IoError);
}

TEST_CASE("tokenization lowers case and splits punctuation") {
    EvalPair p = make_eval_pair("What has Changed?", "what has changed ?");
    CHECK(p.hyp == std::vector<std::string>{"what", "has", "changed", "?"});
    CHECK(p.hyp == p.ref);
}
