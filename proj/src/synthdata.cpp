#include "dvqa/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/rng.hpp"
#include "dvqa/text.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace dvqa {

const char* change_name(ChangeType c) {
    switch (c) {
        case ChangeType::kAppeared: return "appeared";
        case ChangeType::kDisappeared: return "disappeared";
        case ChangeType::kEnlarged: return "enlarged";
        case ChangeType::kShrunk: return "shrunk";
        case ChangeType::kUnchanged: return "unchanged";
    }
    throw ValueError("change_name: bad enum value");
}

ChangeType change_from_name(const std::string& name) {
    for (ChangeType c : {ChangeType::kAppeared, ChangeType::kDisappeared, ChangeType::kEnlarged,
                         ChangeType::kShrunk, ChangeType::kUnchanged})
        if (name == change_name(c)) return c;
    throw ValueError("change_from_name: unknown change '" + name + "'");
}

const char* kind_name(LesionKind k) {
    switch (k) {
        case LesionKind::kOpacity: return "opacity";
        case LesionKind::kEffusion: return "effusion";
        case LesionKind::kNodule: return "nodule";
        case LesionKind::kConsolidation: return "consolidation";
    }
    throw ValueError("kind_name: bad enum value");
}

std::string zone_name(int zone_row, int zone_col) {
    static const char* cols[] = {"left", "center", "right"};
    static const char* rows[] = {"upper", "middle", "lower"};
    if (zone_row < 0 || zone_row > 2 || zone_col < 0 || zone_col > 2)
        throw ValueError("zone_name: zone indices must lie in 0..2");
    return std::string(cols[zone_col]) + " " + rows[zone_row];
}

double lesion_profile(const LesionSpec& s, double x, double y, double threshold) {
    double dx = x - s.cx, dy = y - s.cy, r = s.radius;
    double p = 0.0;
    switch (s.kind) {
        case LesionKind::kOpacity: {
            double u2 = (dx * dx + dy * dy) / (r * r);
            p = std::exp(-2.0 * u2);
            break;
        }
        case LesionKind::kNodule: {
            double u2 = (dx * dx + dy * dy) / (r * r);
            p = std::exp(-3.0 * u2 * u2);
            break;
        }
        case LesionKind::kEffusion: {
            double ax = dx / (1.25 * r), ay = dy / (0.6 * r);
            p = std::exp(-3.0 * (ax * ax + ay * ay));
            break;
        }
        case LesionKind::kConsolidation: {
            double v = std::max(std::fabs(dx), std::fabs(dy)) / r;
            double v2 = v * v;
            p = std::exp(-4.0 * v2 * v2);
            break;
        }
    }
    return p > threshold ? p : 0.0;
}

void SynthConfig::validate() const {
    if (image_size < 32) throw ValueError("synth config: image size must be at least 32");
    if (!(support_threshold > 0.0) || !(support_threshold < 1.0))
        throw ValueError("synth config: support threshold must lie in (0,1)");
    if (max_translation_px < 0.0 || max_rotation_deg < 0.0)
        throw ValueError("synth config: perturbation ranges must be non-negative");
    if (!(min_scale > 0.0) || !(min_scale <= max_scale))
        throw ValueError("synth config: scale range must satisfy 0 < min <= max");
}

QaText answer_of(const LesionSpec& target, ChangeType change, int question_template) {
    if (question_template < 0 || question_template > 2)
        throw ValueError("answer_of: question template index must lie in 0..2");
    std::string kind = kind_name(target.kind);
    std::string zone = zone_name(target.zone_row, target.zone_col);

    QaText out;
    switch (question_template) {
        case 0: out.question = "what has changed?"; break;
        case 1: out.question = "what is the difference between the two images?"; break;
        case 2: out.question = "how has the " + kind + " changed?"; break;
    }
    switch (change) {
        case ChangeType::kAppeared:
            out.answer = "a new " + kind + " has appeared in the " + zone + " zone";
            out.keyword = kind;
            break;
        case ChangeType::kDisappeared:
            out.answer = "the " + kind + " in the " + zone + " zone has disappeared";
            out.keyword = kind;
            break;
        case ChangeType::kEnlarged:
            out.answer = "the " + kind + " in the " + zone + " zone has enlarged";
            out.keyword = kind;
            break;
        case ChangeType::kShrunk:
            out.answer = "the " + kind + " in the " + zone + " zone has shrunk";
            out.keyword = kind;
            break;
        case ChangeType::kUnchanged:
            out.answer = "no change is observed";
            out.keyword = "change";
            break;
    }
    return out;
}

namespace {

std::vector<double> render_background(CounterRng& rng, int64_t S) {
    struct Wave {
        double fx, fy, phase;
    };
    Wave waves[3];
    for (Wave& w : waves) {
        w.fx = static_cast<double>(rng.uniform_int(1, 2));
        w.fy = static_cast<double>(rng.uniform_int(1, 2));
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
    }
    double rib_count = static_cast<double>(rng.uniform_int(4, 6));
    double rib_phase = rng.uniform(0.0, 2.0 * M_PI);

    std::vector<double> bg(static_cast<size_t>(S * S));
    double inv = 1.0 / static_cast<double>(S);
    for (int64_t y = 0; y < S; ++y) {
        for (int64_t x = 0; x < S; ++x) {
            double v = 0.30;
            for (const Wave& w : waves)
                v += 0.03 * std::cos(2.0 * M_PI * (w.fx * x + w.fy * y) * inv + w.phase);
            v += 0.06 * std::sin(2.0 * M_PI * rib_count * y * inv + rib_phase);
            bg[static_cast<size_t>(y * S + x)] = v;
        }
    }
    return bg;
}

void render_lesions(std::vector<double>& img, const std::vector<LesionSpec>& lesions, int64_t S,
                    double thr) {
    for (const LesionSpec& l : lesions) {
        auto x0 = static_cast<int64_t>(std::floor(l.cx - 2.0 * l.radius));
        auto x1 = static_cast<int64_t>(std::ceil(l.cx + 2.0 * l.radius));
        auto y0 = static_cast<int64_t>(std::floor(l.cy - 2.0 * l.radius));
        auto y1 = static_cast<int64_t>(std::ceil(l.cy + 2.0 * l.radius));
        x0 = std::max<int64_t>(0, x0);
        y0 = std::max<int64_t>(0, y0);
        x1 = std::min<int64_t>(S - 1, x1);
        y1 = std::min<int64_t>(S - 1, y1);
        for (int64_t y = y0; y <= y1; ++y)
            for (int64_t x = x0; x <= x1; ++x)
                img[static_cast<size_t>(y * S + x)] +=
                    l.peak * lesion_profile(l, static_cast<double>(x), static_cast<double>(y), thr);
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
}

void paint_support(std::vector<double>& mask, const LesionSpec& l, int64_t S, double thr) {
    auto x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(l.cx - 2.0 * l.radius)));
    auto x1 = std::min<int64_t>(S - 1, static_cast<int64_t>(std::ceil(l.cx + 2.0 * l.radius)));
    auto y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(l.cy - 2.0 * l.radius)));
    auto y1 = std::min<int64_t>(S - 1, static_cast<int64_t>(std::ceil(l.cy + 2.0 * l.radius)));
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x)
            if (lesion_profile(l, static_cast<double>(x), static_cast<double>(y), thr) > 0.0)
                mask[static_cast<size_t>(y * S + x)] = 1.0;
}

}  // namespace

StudyPair generate_pair(uint64_t seed, const SynthConfig& cfg) {
    cfg.validate();
    const int64_t S = cfg.image_size;
    CounterRng rng(seed, 11);

    int lesion_count = static_cast<int>(rng.uniform_int(1, 3));
    auto change = static_cast<ChangeType>(rng.uniform_int(0, 4));

    // distinct zones so answers are unambiguous
    std::vector<int> zones;
    while (static_cast<int>(zones.size()) < lesion_count) {
        int z = static_cast<int>(rng.uniform_int(0, 8));
        if (std::find(zones.begin(), zones.end(), z) == zones.end()) zones.push_back(z);
    }

    // radius scales with the image; shrink divides by 1.5, so keep >= 3
    double r_lo = std::max(3.0, static_cast<double>(S) / 16.0);
    double r_hi = 1.5 * static_cast<double>(S) / 16.0;
    double cell = static_cast<double>(S) / 3.0;

    std::vector<LesionSpec> lesions(static_cast<size_t>(lesion_count));
    for (int i = 0; i < lesion_count; ++i) {
        LesionSpec& l = lesions[static_cast<size_t>(i)];
        l.kind = static_cast<LesionKind>(rng.uniform_int(0, 3));
        l.zone_row = zones[static_cast<size_t>(i)] / 3;
        l.zone_col = zones[static_cast<size_t>(i)] % 3;
        l.radius = rng.uniform(r_lo, r_hi);
        l.peak = rng.uniform(0.35, 0.45);
        // keep the support (and a possible 1.5x enlargement) inside the image
        double margin = 2.0 * l.radius;
        double xlo = std::max(l.zone_col * cell, margin);
        double xhi = std::min((l.zone_col + 1) * cell, static_cast<double>(S - 1) - margin);
        double ylo = std::max(l.zone_row * cell, margin);
        double yhi = std::min((l.zone_row + 1) * cell, static_cast<double>(S - 1) - margin);
        l.cx = rng.uniform(xlo, xhi);
        l.cy = rng.uniform(ylo, yhi);
    }

    int question_template = static_cast<int>(rng.uniform_int(0, 2));

    double tx = rng.uniform(-cfg.max_translation_px, cfg.max_translation_px);
    double ty = rng.uniform(-cfg.max_translation_px, cfg.max_translation_px);
    double deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    double scale = rng.uniform(cfg.min_scale, cfg.max_scale);

    std::vector<double> bg = render_background(rng, S);

    StudyPair pair;
    pair.change = change;
    pair.ref_lesions = lesions;
    pair.main_lesions = lesions;
    const LesionSpec& target = lesions.front();
    switch (change) {
        case ChangeType::kAppeared:
            pair.ref_lesions.erase(pair.ref_lesions.begin());
            break;
        case ChangeType::kDisappeared:
            pair.main_lesions.erase(pair.main_lesions.begin());
            break;
        case ChangeType::kEnlarged:
            pair.main_lesions.front().radius *= 1.5;
            break;
        case ChangeType::kShrunk:
            pair.main_lesions.front().radius /= 1.5;
            break;
        case ChangeType::kUnchanged:
            break;
    }

    std::vector<double> ref_img = bg;
    render_lesions(ref_img, pair.ref_lesions, S, cfg.support_threshold);
    std::vector<double> main_img = bg;
    render_lesions(main_img, pair.main_lesions, S, cfg.support_threshold);

    std::vector<double> mask(static_cast<size_t>(S * S), 0.0);
    if (change != ChangeType::kUnchanged) {
        if (change != ChangeType::kAppeared)
            paint_support(mask, pair.ref_lesions.front(), S, cfg.support_threshold);
        if (change != ChangeType::kDisappeared)
            paint_support(mask, pair.main_lesions.front(), S, cfg.support_threshold);
    }

    pair.ref = Tensor::from_vector({1, S, S}, std::move(ref_img));
    pair.main_pre = Tensor::from_vector({1, S, S}, std::move(main_img));
    pair.mask = Tensor::from_vector({S, S}, std::move(mask));

    double rad = deg * M_PI / 180.0;
    AffineParams nuisance;
    nuisance.A = {scale * std::cos(rad), -scale * std::sin(rad), scale * std::sin(rad),
                  scale * std::cos(rad)};
    nuisance.t = {2.0 * tx / static_cast<double>(S - 1), 2.0 * ty / static_cast<double>(S - 1)};
    Tensor main4 = reshape(pair.main_pre, {1, 1, S, S});
    pair.main = reshape(warp_main(main4, affine_to_tensor(nuisance)), {1, S, S});
    pair.theta_star = nuisance.inverse();

    QaText qa = answer_of(target, change, question_template);
    pair.question = qa.question;
    pair.answer = qa.answer;
    pair.keyword = qa.keyword;
    return pair;
}

Vocabulary synth_vocabulary() {
    return Vocabulary({
        "what", "has",  "changed",    "?",        "is",      "the",      "difference",
        "between",      "two",        "images",   "how",     "a",        "new",
        "appeared",     "in",         "zone",     "disappeared",         "enlarged",
        "shrunk",       "no",         "change",   "observed",
        "opacity",      "effusion",   "nodule",   "consolidation",
        "left",         "center",     "right",    "upper",   "middle",   "lower",
    });
}

KeywordLexicon synth_lexicon() {
    KeywordLexicon lex;
    lex.terms = {{"consolidation", 1}, {"effusion", 1}, {"nodule", 1}, {"opacity", 1},
                 {"change", 2}};
    lex.stopwords = {"the",   "a",     "an",       "in",          "is",       "no",
                     "has",   "have",  "new",      "and",         "of",       "zone",
                     "left",  "right", "center",   "upper",       "middle",   "lower",
                     "observed",       "appeared", "disappeared", "enlarged", "shrunk",
                     "what",  "how",   "changed",  "difference",  "between",  "two",
                     "images", "?"};
    return lex;
}

int64_t DatasetManifest::split_count(const std::string& name) const {
    for (const auto& [split, count] : splits)
        if (split == name) return count;
    throw ValueError("manifest: unknown split '" + name + "'");
}

std::array<int64_t, 3> split_counts(int64_t count, const std::array<double, 3>& ratios) {
    if (count <= 0) throw ValueError("split_counts: count must be positive");
    double sum = ratios[0] + ratios[1] + ratios[2];
    for (double r : ratios)
        if (r < 0.0) throw ValueError("split_counts: ratios must be non-negative");
    if (std::fabs(sum - 1.0) > 1e-9) throw ValueError("split_counts: ratios must sum to 1");
    auto n_valid = static_cast<int64_t>(std::floor(static_cast<double>(count) * ratios[1]));
    auto n_test = static_cast<int64_t>(std::floor(static_cast<double>(count) * ratios[2]));
    return {count - n_valid - n_test, n_valid, n_test};
}

namespace {

uint64_t hash_config(const SynthConfig& cfg, const std::array<double, 3>& ratios) {
    char buf[256];
    int n = std::snprintf(buf, sizeof(buf),
                          "image_size=%lld;thr=%.17g;trans=%.17g;rot=%.17g;scale=%.17g,%.17g;"
                          "ratios=%.17g,%.17g,%.17g",
                          static_cast<long long>(cfg.image_size), cfg.support_threshold,
                          cfg.max_translation_px, cfg.max_rotation_deg, cfg.min_scale,
                          cfg.max_scale, ratios[0], ratios[1], ratios[2]);
    return text::fnv1a(buf, static_cast<size_t>(n));
}

std::string sample_id(int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(id));
    return buf;
}

const std::array<const char*, 3> kSplitNames{"train", "valid", "test"};

}  // namespace

DatasetManifest write_dataset(const std::string& root, uint64_t base_seed, int64_t count,
                              const SynthConfig& cfg, const std::array<double, 3>& ratios) {
    cfg.validate();
    std::array<int64_t, 3> counts = split_counts(count, ratios);

    for (const char* split : kSplitNames) {
        fs::create_directories(fs::path(root) / split / "images");
        fs::create_directories(fs::path(root) / split / "masks");
    }

    std::array<std::string, 3> jsonl;
    for (int64_t i = 0; i < count; ++i) {
        int s = i < counts[0] ? 0 : (i < counts[0] + counts[1] ? 1 : 2);
        const std::string split = kSplitNames[static_cast<size_t>(s)];
        StudyPair pair = generate_pair(base_seed + static_cast<uint64_t>(i), cfg);

        std::string stem = sample_id(i);
        DatasetSample rec;
        rec.id = i;
        rec.main_path = split + "/images/" + stem + "_main.pgm";
        rec.ref_path = split + "/images/" + stem + "_ref.pgm";
        rec.mask_path = split + "/masks/" + stem + ".pgm";

        write_pgm((fs::path(root) / rec.main_path).string(), pair.main);
        write_pgm((fs::path(root) / rec.ref_path).string(), pair.ref);
        const int64_t S = cfg.image_size;
        write_pgm((fs::path(root) / rec.mask_path).string(),
                  reshape(pair.mask, {1, S, S}));

        nlohmann::json line{
            {"id", rec.id},
            {"main_path", rec.main_path},
            {"ref_path", rec.ref_path},
            {"mask_path", rec.mask_path},
            {"question", pair.question},
            {"answer", pair.answer},
            {"keyword", pair.keyword},
            {"change", change_name(pair.change)},
            {"theta_star",
             {pair.theta_star.A[0], pair.theta_star.A[1], pair.theta_star.t[0],
              pair.theta_star.A[2], pair.theta_star.A[3], pair.theta_star.t[1]}},
        };
        jsonl[static_cast<size_t>(s)] += line.dump();
        jsonl[static_cast<size_t>(s)] += '\n';
    }

    for (size_t s = 0; s < 3; ++s)
        write_text_file((fs::path(root) / (std::string(kSplitNames[s]) + ".jsonl")).string(),
                        jsonl[s]);

    DatasetManifest manifest;
    manifest.root = root;
    manifest.seed = base_seed;
    manifest.image_size = cfg.image_size;
    manifest.count = count;
    manifest.ratios = ratios;
    manifest.config_hash = hash_config(cfg, ratios);
    for (size_t s = 0; s < 3; ++s)
        manifest.splits.emplace_back(kSplitNames[s], counts[s]);

    nlohmann::json m{
        {"root", "."},  // self-relative so the tree is relocatable byte for byte
        {"seed", base_seed},
        {"image_size", cfg.image_size},
        {"count", count},
        {"ratios", ratios},
        {"splits",
         {{"train", counts[0]}, {"valid", counts[1]}, {"test", counts[2]}}},
        {"config_hash", manifest.config_hash},
    };
    write_text_file((fs::path(root) / "manifest.json").string(), m.dump(2) + "\n");
    return manifest;
}

std::vector<DatasetSample> read_dataset(const std::string& root, const std::string& split) {
    std::string body = read_text_file((fs::path(root) / (split + ".jsonl")).string());
    std::vector<DatasetSample> samples;
    size_t start = 0, lineno = 0;
    while (start < body.size()) {
        size_t end = body.find('\n', start);
        if (end == std::string::npos) end = body.size();
        std::string line = body.substr(start, end - start);
        start = end + 1;
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ValueError(split + ".jsonl line " + std::to_string(lineno) + " is not JSON");
        try {
            DatasetSample rec;
            rec.id = j.at("id").get<int64_t>();
            rec.main_path = j.at("main_path").get<std::string>();
            rec.ref_path = j.at("ref_path").get<std::string>();
            rec.mask_path = j.at("mask_path").get<std::string>();
            rec.question = j.at("question").get<std::string>();
            rec.answer = j.at("answer").get<std::string>();
            rec.keyword = j.at("keyword").get<std::string>();
            rec.change = j.at("change").get<std::string>();
            auto th = j.at("theta_star");
            if (!th.is_array() || th.size() != 6)
                throw ValueError("theta_star must have 6 entries");
            for (size_t i = 0; i < 6; ++i) rec.theta_star[i] = th[i].get<double>();
            samples.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ValueError(split + ".jsonl line " + std::to_string(lineno) +
                             " is malformed: " + e.what());
        }
    }
    return samples;
}

DatasetManifest read_manifest(const std::string& root) {
    nlohmann::json j =
        nlohmann::json::parse(read_text_file((fs::path(root) / "manifest.json").string()),
                              nullptr, false);
    if (j.is_discarded()) throw ValueError("manifest.json is not JSON");
    try {
        DatasetManifest m;
        m.root = root;
        m.seed = j.at("seed").get<uint64_t>();
        m.image_size = j.at("image_size").get<int64_t>();
        m.count = j.at("count").get<int64_t>();
        auto r = j.at("ratios");
        for (size_t i = 0; i < 3; ++i) m.ratios[i] = r.at(i).get<double>();
        for (const char* split : kSplitNames)
            m.splits.emplace_back(split, j.at("splits").at(split).get<int64_t>());
        m.config_hash = j.at("config_hash").get<uint64_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValueError(std::string("manifest.json is malformed: ") + e.what());
    }
}

}  // namespace dvqa
