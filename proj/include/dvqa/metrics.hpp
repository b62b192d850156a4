#pragma once

#include <string>
#include <vector>

namespace dvqa {

// Single-reference evaluation pair; token lists are lowercase with punctuation
// split off (text::tokenize).
struct EvalPair {
    std::vector<std::string> hyp;
    std::vector<std::string> ref;
};

EvalPair make_eval_pair(const std::string& hyp_line, const std::string& ref_line);

// Corpus BLEU-n: clipped modified n-gram precision, geometric mean over orders
// 1..n, brevity penalty min(1, exp(1 - r/c)), no smoothing.
double bleu(const std::vector<EvalPair>& pairs, int n);

// Mean per-pair METEOR: greedy exact then stem alignment, F = 10PR/(R+9P),
// fragmentation penalty 0.5*(chunks/matches)^3.
double meteor(const std::vector<EvalPair>& pairs);

// Mean per-pair LCS F-measure with beta = 1.2.
double rouge_l(const std::vector<EvalPair>& pairs);

// Mean per-pair CIDEr-D over n = 1..4: idf from the reference corpus, clipped
// TF-IDF cosine, length penalty sigma = 6, scaled by 10.
double cider(const std::vector<EvalPair>& pairs);

// 0.6 * cider/(1+cider) + 0.4 * meteor.
double combined(double cider_score, double meteor_score);

// Original Porter algorithm, full pipeline.
std::string porter_stem(std::string word);

struct ScoreReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
    double meteor = 0, rouge_l = 0, cider = 0, combined = 0;
};

ScoreReport score_pairs(const std::vector<EvalPair>& pairs);
ScoreReport score_corpus(const std::string& hyp_path, const std::string& ref_path);

std::string report_json(const ScoreReport& r);
std::string report_table(const ScoreReport& r);

}  // namespace dvqa
