#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/keyword.hpp"
#include "dvqa/synthdata.hpp"
#include "dvqa/text.hpp"
#include "dvqa/vocab.hpp"

namespace fs = std::filesystem;
using namespace dvqa;

namespace {

bool same_data(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

double mask_iou(const std::vector<double>& a, const std::vector<double>& b) {
    double inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool pa = a[i] > 0.5, pb = b[i] > 0.5;
        inter += (pa && pb) ? 1.0 : 0.0;
        uni += (pa || pb) ? 1.0 : 0.0;
    }
    return uni > 0 ? inter / uni : 0.0;
}

// hash every regular file under root, keyed by its relative path
std::map<std::string, uint64_t> tree_hashes(const std::string& root) {
    std::map<std::string, uint64_t> out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::string body = read_text_file(entry.path().string());
        out[fs::relative(entry.path(), root).string()] =
            text::fnv1a(body.data(), body.size());
    }
    return out;
}

const std::vector<LesionKind> kAllKinds{LesionKind::kOpacity, LesionKind::kEffusion,
                                        LesionKind::kNodule, LesionKind::kConsolidation};
const std::vector<ChangeType> kAllChanges{ChangeType::kAppeared, ChangeType::kDisappeared,
                                          ChangeType::kEnlarged, ChangeType::kShrunk,
                                          ChangeType::kUnchanged};

}  // namespace

TEST_CASE("name mappings round-trip") {
    for (ChangeType c : kAllChanges) CHECK(change_from_name(change_name(c)) == c);
    CHECK_THROWS_AS(change_from_name("melted"), ValueError);
    CHECK(std::string(kind_name(LesionKind::kNodule)) == "nodule");
    CHECK(zone_name(0, 0) == "left upper");
    CHECK(zone_name(1, 1) == "center middle");
    CHECK(zone_name(2, 2) == "right lower");
    CHECK_THROWS_AS(zone_name(3, 0), ValueError);
}

TEST_CASE("lesion profiles peak at the center and cut off at the threshold") {
    LesionSpec l;
    l.cx = 20;
    l.cy = 20;
    l.radius = 5;
    for (LesionKind k : kAllKinds) {
        l.kind = k;
        CHECK(lesion_profile(l, 20, 20, 0.05) == 1.0);
        // monotone decay along the x axis until the cutoff
        double prev = 1.0;
        for (double x = 20.5; x < 34; x += 0.5) {
            double p = lesion_profile(l, x, 20, 0.05);
            CHECK(p <= prev + 1e-12);
            CHECK((p == 0.0 || p > 0.05));
            prev = p;
        }
        // support is gone within twice the radius
        CHECK(lesion_profile(l, 20 + 2.0 * l.radius, 20, 0.05) == 0.0);
        CHECK(lesion_profile(l, 20, 20 + 2.0 * l.radius, 0.05) == 0.0);
    }
    // effusion is horizontally elongated
    l.kind = LesionKind::kEffusion;
    CHECK(lesion_profile(l, 25, 20, 0.05) > lesion_profile(l, 20, 25, 0.05));
}

TEST_CASE("answer_of instantiates the template table consistently") {
    Vocabulary vocab = synth_vocabulary();
    KeywordLexicon lex = synth_lexicon();
    LesionSpec spec;
    for (LesionKind kind : kAllKinds) {
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) {
                for (ChangeType change : kAllChanges) {
                    for (int qt = 0; qt < 3; ++qt) {
                        spec.kind = kind;
                        spec.zone_row = row;
                        spec.zone_col = col;
                        QaText qa = answer_of(spec, change, qt);

                        // keyword occurs verbatim in the answer, as whole tokens
                        std::vector<std::string> ans = text::tokenize(qa.answer);
                        std::vector<std::string> kw = text::tokenize(qa.keyword);
                        REQUIRE(kw.size() == 1);
                        CHECK(std::find(ans.begin(), ans.end(), kw[0]) != ans.end());

                        // lexicon extraction recovers the generated keyword
                        CHECK(extract_keyword(qa.answer, lex) == qa.keyword);

                        // closed vocabulary covers both sides, within budgets
                        std::vector<int64_t> q_ids = vocab.encode(qa.question);
                        std::vector<int64_t> a_ids = vocab.encode(qa.answer);
                        CHECK(q_ids.size() <= 10);
                        CHECK(a_ids.size() <= 12);
                    }
                }
            }
        }
    }
    CHECK_THROWS_AS(answer_of(spec, ChangeType::kAppeared, 3), ValueError);

    QaText worked = answer_of(LesionSpec{LesionKind::kOpacity, 0, 0, 0, 0, 4, 0.4},
                              ChangeType::kAppeared, 0);
    CHECK(worked.answer == "a new opacity has appeared in the left upper zone");
    CHECK(worked.keyword == "opacity");
    CHECK(answer_of(spec, ChangeType::kUnchanged, 0).answer == "no change is observed");
    CHECK(answer_of(spec, ChangeType::kUnchanged, 0).keyword == "change");
}

TEST_CASE("generate_pair is deterministic and validates its config") {
    SynthConfig cfg;
    StudyPair a = generate_pair(42, cfg);
    StudyPair b = generate_pair(42, cfg);
    CHECK(same_data(a.main, b.main));
    CHECK(same_data(a.ref, b.ref));
    CHECK(same_data(a.main_pre, b.main_pre));
    CHECK(same_data(a.mask, b.mask));
    CHECK(a.question == b.question);
    CHECK(a.answer == b.answer);
    CHECK(a.keyword == b.keyword);
    CHECK(a.theta_star.A == b.theta_star.A);
    CHECK(a.theta_star.t == b.theta_star.t);

    StudyPair c = generate_pair(43, cfg);
    CHECK_FALSE(same_data(a.main, c.main));

    SynthConfig bad = cfg;
    bad.image_size = 31;
    CHECK_THROWS_AS(generate_pair(1, bad), ValueError);
    bad = cfg;
    bad.min_scale = 0.0;
    CHECK_THROWS_AS(generate_pair(1, bad), ValueError);
}

TEST_CASE("generated pairs satisfy the structural invariants") {
    SynthConfig cfg;
    const int64_t S = cfg.image_size;
    double cell = static_cast<double>(S) / 3.0;
    int seen_unchanged = 0;
    for (uint64_t seed = 0; seed < 60; ++seed) {
        StudyPair p = generate_pair(seed, cfg);
        INFO("seed " << seed << " change " << std::string(change_name(p.change)));

        // pixel ranges
        for (const Tensor* img : {&p.main, &p.ref, &p.main_pre}) {
            const double* d = img->data();
            for (int64_t i = 0; i < img->numel(); ++i) {
                CHECK(d[i] >= 0.0);
                CHECK(d[i] <= 1.0);
            }
        }

        // lesion geometry: inside the declared zone, radius and bounds rules
        auto check_lesions = [&](const std::vector<LesionSpec>& ls) {
            std::set<std::pair<int, int>> zones;
            for (const LesionSpec& l : ls) {
                CHECK(l.radius >= 2.0);
                CHECK(l.cx >= l.zone_col * cell);
                CHECK(l.cx <= (l.zone_col + 1) * cell);
                CHECK(l.cy >= l.zone_row * cell);
                CHECK(l.cy <= (l.zone_row + 1) * cell);
                // the full support fits in the image; per-axis extent of every
                // profile stays below 1.25 radii at the 0.05 cutoff
                CHECK(l.cx - 1.25 * l.radius >= -1e-9);
                CHECK(l.cx + 1.25 * l.radius <= static_cast<double>(S - 1) + 1e-9);
                CHECK(l.cy - 1.25 * l.radius >= -1e-9);
                CHECK(l.cy + 1.25 * l.radius <= static_cast<double>(S - 1) + 1e-9);
                CHECK(zones.insert({l.zone_row, l.zone_col}).second);
                CHECK(l.peak >= 0.35);
                CHECK(l.peak <= 0.45);
            }
        };
        check_lesions(p.main_lesions);
        check_lesions(p.ref_lesions);

        // keyword in answer
        std::vector<std::string> ans = text::tokenize(p.answer);
        CHECK(std::find(ans.begin(), ans.end(), p.keyword) != ans.end());

        const double* mask = p.mask.data();
        double mask_area = 0;
        for (int64_t i = 0; i < S * S; ++i) {
            CHECK((mask[i] == 0.0 || mask[i] == 1.0));
            mask_area += mask[i];
        }
        if (p.change == ChangeType::kUnchanged) {
            ++seen_unchanged;
            CHECK(mask_area == 0.0);
            CHECK(same_data(p.main_pre, p.ref));
        } else {
            CHECK(mask_area > 0.0);
            CHECK_FALSE(same_data(p.main_pre, p.ref));
        }
    }
    CHECK(seen_unchanged > 0);
}

TEST_CASE("appeared mask equals the new lesion's support") {
    SynthConfig cfg;
    const int64_t S = cfg.image_size;
    int tested = 0;
    for (uint64_t seed = 0; seed < 80 && tested < 5; ++seed) {
        StudyPair p = generate_pair(seed, cfg);
        if (p.change != ChangeType::kAppeared) continue;
        ++tested;
        const LesionSpec& born = p.main_lesions.front();
        const double* mask = p.mask.data();
        for (int64_t y = 0; y < S; ++y)
            for (int64_t x = 0; x < S; ++x) {
                bool in_support = lesion_profile(born, static_cast<double>(x),
                                                 static_cast<double>(y),
                                                 cfg.support_threshold) > 0.0;
                CHECK(mask[y * S + x] == (in_support ? 1.0 : 0.0));
            }
    }
    CHECK(tested == 5);
}

TEST_CASE("gt mask overlaps the pre-warp pixel difference") {
    SynthConfig cfg;
    const int64_t S = cfg.image_size;
    double worst = 1.0, total = 0.0;
    int counted = 0;
    for (uint64_t seed = 0; seed < 60; ++seed) {
        StudyPair p = generate_pair(seed, cfg);
        if (p.change == ChangeType::kUnchanged) continue;
        ++counted;
        const double* m = p.main_pre.data();
        const double* r = p.ref.data();
        const double* gt = p.mask.data();
        double inter = 0, diff_area = 0, uni = 0;
        for (int64_t i = 0; i < S * S; ++i) {
            bool d = std::fabs(m[i] - r[i]) > 0.05;
            bool g = gt[i] > 0.5;
            diff_area += d ? 1.0 : 0.0;
            inter += (d && g) ? 1.0 : 0.0;
            uni += (d || g) ? 1.0 : 0.0;
        }
        double iou = uni > 0 ? inter / uni : 0.0;
        INFO("seed " << seed << " change " << std::string(change_name(p.change))
                     << " iou " << iou);
        // renders only differ inside the target's supports
        CHECK(inter == diff_area);
        // enlarged and shrunk agree near the center, so the diff is an annulus
        CHECK(iou >= 0.4);
        worst = std::min(worst, iou);
        total += iou;
    }
    CHECK(counted >= 30);
    CHECK(total / counted >= 0.5);
    MESSAGE("worst IoU ", worst, ", mean IoU ", total / counted, " over ", counted,
            " changed pairs");
}

TEST_CASE("theta_star undoes the nuisance warp away from the border") {
    SynthConfig cfg;
    const int64_t S = cfg.image_size;
    for (uint64_t seed = 100; seed < 106; ++seed) {
        StudyPair p = generate_pair(seed, cfg);
        Tensor main4 = reshape(p.main, {1, 1, S, S});
        Tensor rec = reshape(warp_main(main4, affine_to_tensor(p.theta_star)), {1, S, S});
        const double* a = rec.data();
        const double* b = p.main_pre.data();
        double worst = 0.0;
        for (int64_t y = 10; y < S - 10; ++y)
            for (int64_t x = 10; x < S - 10; ++x)
                worst = std::max(worst, std::fabs(a[y * S + x] - b[y * S + x]));
        INFO("seed " << seed);
        CHECK(worst <= 0.08);  // two bilinear resamples of a smooth image
    }
}

TEST_CASE("split_counts follows the floor rule with remainder to train") {
    std::array<int64_t, 3> c = split_counts(103, {0.8, 0.1, 0.1});
    CHECK(c == std::array<int64_t, 3>{83, 10, 10});
    c = split_counts(10, {0.8, 0.1, 0.1});
    CHECK(c == std::array<int64_t, 3>{8, 1, 1});
    c = split_counts(3, {0.8, 0.1, 0.1});
    CHECK(c == std::array<int64_t, 3>{3, 0, 0});
    CHECK_THROWS_AS(split_counts(0, {0.8, 0.1, 0.1}), ValueError);
    CHECK_THROWS_AS(split_counts(10, {0.5, 0.1, 0.1}), ValueError);
    CHECK_THROWS_AS(split_counts(10, {1.2, -0.1, -0.1}), ValueError);
}

TEST_CASE("dataset write, read and regeneration") {
    SynthConfig cfg;
    cfg.image_size = 32;  // keep the test fast
    std::string root_a = "/tmp/dvqa_ds_a";
    std::string root_b = "/tmp/dvqa_ds_b";
    fs::remove_all(root_a);
    fs::remove_all(root_b);

    DatasetManifest man = write_dataset(root_a, 7, 23, cfg, {0.8, 0.1, 0.1});
    CHECK(man.count == 23);
    CHECK(man.split_count("train") == 19);
    CHECK(man.split_count("valid") == 2);
    CHECK(man.split_count("test") == 2);
    CHECK_THROWS_AS(man.split_count("dev"), ValueError);

    DatasetManifest loaded = read_manifest(root_a);
    CHECK(loaded.seed == man.seed);
    CHECK(loaded.image_size == man.image_size);
    CHECK(loaded.count == man.count);
    CHECK(loaded.config_hash == man.config_hash);
    CHECK(loaded.splits == man.splits);

    // records line up with the generator output
    std::vector<DatasetSample> train = read_dataset(root_a, "train");
    REQUIRE(train.size() == 19);
    for (const DatasetSample& rec : train) {
        StudyPair p = generate_pair(7 + static_cast<uint64_t>(rec.id), cfg);
        CHECK(rec.question == p.question);
        CHECK(rec.answer == p.answer);
        CHECK(rec.keyword == p.keyword);
        CHECK(rec.change == change_name(p.change));
        std::array<double, 6> want{p.theta_star.A[0], p.theta_star.A[1], p.theta_star.t[0],
                                   p.theta_star.A[2], p.theta_star.A[3], p.theta_star.t[1]};
        for (size_t i = 0; i < 6; ++i)
            CHECK(std::fabs(rec.theta_star[i] - want[i]) <= 1e-9);

        // images round-trip up to the 1/255 quantization
        Tensor main = read_pgm(root_a + "/" + rec.main_path);
        const double* got = main.data();
        const double* exp = p.main.data();
        for (int64_t i = 0; i < main.numel(); ++i)
            CHECK(std::fabs(got[i] - exp[i]) <= 0.5 / 255.0 + 1e-12);

        // masks are exact under quantization
        Tensor mask = read_pgm(root_a + "/" + rec.mask_path);
        const double* mg = mask.data();
        const double* me = p.mask.data();
        for (int64_t i = 0; i < mask.numel(); ++i) CHECK(mg[i] == me[i]);
    }

    // JSONL line counts match the manifest
    std::string valid_body = read_text_file(root_a + "/valid.jsonl");
    CHECK(std::count(valid_body.begin(), valid_body.end(), '\n') == 2);

    // regeneration is byte-identical, including across roots
    write_dataset(root_b, 7, 23, cfg, {0.8, 0.1, 0.1});
    auto ha = tree_hashes(root_a);
    auto hb = tree_hashes(root_b);
    CHECK(ha == hb);
    CHECK(ha.size() == 3 * 23 + 3 + 1);  // images+masks, jsonl, manifest

    // malformed JSONL is rejected
    write_text_file(root_b + "/valid.jsonl", "not json\n");
    CHECK_THROWS_AS(read_dataset(root_b, "valid"), ValueError);
    write_text_file(root_b + "/test.jsonl", "{\"id\": 1}\n");
    CHECK_THROWS_AS(read_dataset(root_b, "test"), ValueError);
    CHECK_THROWS_AS(read_dataset(root_b, "nope"), IoError);

    fs::remove_all(root_a);
    fs::remove_all(root_b);
}

TEST_CASE("question templates all occur and tokenize within budget") {
    SynthConfig cfg;
    std::set<std::string> questions;
    Vocabulary vocab = synth_vocabulary();
    for (uint64_t seed = 0; seed < 40; ++seed) {
        StudyPair p = generate_pair(seed, cfg);
        questions.insert(p.question);
        CHECK(vocab.encode(p.question).size() <= 10);
        CHECK(vocab.encode(p.answer).size() <= 12);
    }
    CHECK(questions.size() >= 3);
}
