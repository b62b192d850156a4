#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dvqa/keyword.hpp"
#include "dvqa/registration.hpp"
#include "dvqa/tensor.hpp"
#include "dvqa/vocab.hpp"

namespace dvqa {

class CounterRng;

enum class ChangeType { kAppeared, kDisappeared, kEnlarged, kShrunk, kUnchanged };
enum class LesionKind { kOpacity, kEffusion, kNodule, kConsolidation };

const char* change_name(ChangeType c);
ChangeType change_from_name(const std::string& name);  // ValueError on unknown
const char* kind_name(LesionKind k);

// 3x3 zone grid; names read column first: "left upper", "center middle", ...
std::string zone_name(int zone_row, int zone_col);

struct LesionSpec {
    LesionKind kind = LesionKind::kOpacity;
    int zone_row = 0, zone_col = 0;
    double cx = 0, cy = 0;  // pixel center
    double radius = 3;      // px, >= 2
    double peak = 0.4;      // added intensity at the center, in (0,1]
};

// Radial intensity profile in [0,1] at pixel (x, y); exactly zero outside the
// support (profile <= threshold). Multiply by spec.peak for image units.
double lesion_profile(const LesionSpec& spec, double x, double y, double threshold);

struct SynthConfig {
    int64_t image_size = 64;
    // profile cutoff defining lesion support: pixels with profile > threshold
    double support_threshold = 0.05;
    double max_translation_px = 4.0;
    double max_rotation_deg = 4.0;
    double min_scale = 0.95;
    double max_scale = 1.05;

    void validate() const;  // image size >= 32, sane ranges
};

struct StudyPair {
    Tensor main;      // [1,S,S], nuisance-warped current study
    Tensor ref;       // [1,S,S], prior study, never warped
    Tensor main_pre;  // [1,S,S], main before the nuisance warp
    Tensor mask;      // [S,S], 0/1 union of the changed lesion's supports
    AffineParams theta_star;  // corrective affine: warp(main, theta_star) ~ main_pre
    ChangeType change = ChangeType::kUnchanged;
    std::vector<LesionSpec> main_lesions, ref_lesions;
    std::string question, answer, keyword;
};

struct QaText {
    std::string question, answer, keyword;
};

// Fixed template table keyed by (kind, zone, change); question_template picks
// one of the three question forms.
QaText answer_of(const LesionSpec& target, ChangeType change, int question_template);

StudyPair generate_pair(uint64_t seed, const SynthConfig& cfg);

// Closed vocabulary of every token the template table can emit, so any split
// is covered by construction.
Vocabulary synth_vocabulary();
// Lexicon whose extract_keyword reproduces the generated keyword on every
// template answer.
KeywordLexicon synth_lexicon();

struct DatasetManifest {
    std::string root;
    uint64_t seed = 0;
    int64_t image_size = 0;
    int64_t count = 0;
    std::vector<std::pair<std::string, int64_t>> splits;  // (name, count)
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    uint64_t config_hash = 0;

    int64_t split_count(const std::string& name) const;  // ValueError on unknown
};

struct DatasetSample {
    int64_t id = 0;
    std::string main_path, ref_path, mask_path;  // relative to the root
    std::string question, answer, keyword, change;
    std::array<double, 6> theta_star{1, 0, 0, 0, 1, 0};  // row-major 2x3
};

// floor(count * ratio) for valid and test, remainder to train
std::array<int64_t, 3> split_counts(int64_t count, const std::array<double, 3>& ratios);

// Generate `count` pairs and write root/{train,valid,test}/{images,masks}/*.pgm,
// root/{split}.jsonl and root/manifest.json. Sample i uses seed base_seed + i,
// so regeneration is byte-identical and order-independent.
DatasetManifest write_dataset(const std::string& root, uint64_t base_seed, int64_t count,
                              const SynthConfig& cfg, const std::array<double, 3>& ratios);

std::vector<DatasetSample> read_dataset(const std::string& root, const std::string& split);
DatasetManifest read_manifest(const std::string& root);

}  // namespace dvqa
