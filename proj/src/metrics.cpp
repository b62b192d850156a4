#include "dvqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"
#include "dvqa/text.hpp"

#include <json.hpp>

namespace dvqa {

namespace {

// ---- Porter stemmer helpers ------------------------------------------------

bool is_consonant(const std::string& w, size_t i) {
    char c = w[i];
    switch (c) {
        case 'a':
        case 'e':
        case 'i':
        case 'o':
        case 'u':
            return false;
        case 'y':
            return i == 0 ? true : !is_consonant(w, i - 1);
        default:
            return true;
    }
}

// number of vowel-consonant transitions in [C](VC)^m[V]
int measure(const std::string& w) {
    int m = 0;
    size_t i = 0, n = w.size();
    while (i < n && is_consonant(w, i)) ++i;
    while (i < n) {
        while (i < n && !is_consonant(w, i)) ++i;
        if (i >= n) break;
        while (i < n && is_consonant(w, i)) ++i;
        ++m;
    }
    return m;
}

bool has_vowel(const std::string& w) {
    for (size_t i = 0; i < w.size(); ++i)
        if (!is_consonant(w, i)) return true;
    return false;
}

bool ends_double_consonant(const std::string& w) {
    size_t n = w.size();
    return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// last three letters form consonant-vowel-consonant and the final one
// is not w, x or y
bool ends_cvc(const std::string& w) {
    size_t n = w.size();
    if (n < 3) return false;
    if (!is_consonant(w, n - 3) || is_consonant(w, n - 2) || !is_consonant(w, n - 1)) return false;
    char c = w[n - 1];
    return c != 'w' && c != 'x' && c != 'y';
}

bool ends_with(const std::string& w, const char* suf) {
    size_t sl = std::char_traits<char>::length(suf);
    return w.size() >= sl && w.compare(w.size() - sl, sl, suf) == 0;
}

struct SuffixRule {
    const char* suffix;
    const char* replacement;
};

// Longest matching suffix wins; once one matches, the step is over whether
// or not the measure condition lets the replacement happen.
bool apply_rule_list(std::string& w, const SuffixRule* rules, size_t count, int min_measure) {
    const SuffixRule* best = nullptr;
    size_t best_len = 0;
    for (size_t i = 0; i < count; ++i) {
        size_t sl = std::char_traits<char>::length(rules[i].suffix);
        if (sl > best_len && ends_with(w, rules[i].suffix)) {
            best = &rules[i];
            best_len = sl;
        }
    }
    if (!best) return false;
    std::string stem = w.substr(0, w.size() - best_len);
    if (measure(stem) > min_measure) w = stem + best->replacement;
    return true;
}

void porter_step1a(std::string& w) {
    if (ends_with(w, "sses")) {
        w.erase(w.size() - 2);
    } else if (ends_with(w, "ies")) {
        w.erase(w.size() - 2);
    } else if (ends_with(w, "ss")) {
        // keep
    } else if (ends_with(w, "s")) {
        w.pop_back();
    }
}

void porter_step1b(std::string& w) {
    if (ends_with(w, "eed")) {
        std::string stem = w.substr(0, w.size() - 3);
        if (measure(stem) > 0) w = stem + "ee";
        return;
    }
    bool removed = false;
    if (ends_with(w, "ed")) {
        std::string stem = w.substr(0, w.size() - 2);
        if (!has_vowel(stem)) return;
        w = stem;
        removed = true;
    } else if (ends_with(w, "ing")) {
        std::string stem = w.substr(0, w.size() - 3);
        if (!has_vowel(stem)) return;
        w = stem;
        removed = true;
    }
    if (!removed) return;
    if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
        w += 'e';
    } else if (ends_double_consonant(w)) {
        char c = w.back();
        if (c != 'l' && c != 's' && c != 'z') w.pop_back();
    } else if (measure(w) == 1 && ends_cvc(w)) {
        w += 'e';
    }
}

void porter_step1c(std::string& w) {
    if (w.size() >= 2 && w.back() == 'y' && has_vowel(w.substr(0, w.size() - 1)))
        w.back() = 'i';
}

void porter_step2(std::string& w) {
    static const SuffixRule rules[] = {
        {"ational", "ate"}, {"ization", "ize"}, {"fulness", "ful"}, {"ousness", "ous"},
        {"iveness", "ive"}, {"tional", "tion"}, {"biliti", "ble"},  {"entli", "ent"},
        {"ousli", "ous"},   {"ation", "ate"},   {"alism", "al"},    {"aliti", "al"},
        {"iviti", "ive"},   {"enci", "ence"},   {"anci", "ance"},   {"izer", "ize"},
        {"abli", "able"},   {"alli", "al"},     {"ator", "ate"},    {"eli", "e"},
    };
    apply_rule_list(w, rules, sizeof(rules) / sizeof(rules[0]), 0);
}

void porter_step3(std::string& w) {
    static const SuffixRule rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
        {"ical", "ic"},  {"ness", ""},  {"ful", ""},
    };
    apply_rule_list(w, rules, sizeof(rules) / sizeof(rules[0]), 0);
}

void porter_step4(std::string& w) {
    static const SuffixRule rules[] = {
        {"ement", ""}, {"ance", ""}, {"ence", ""}, {"able", ""}, {"ible", ""},
        {"ment", ""},  {"ant", ""},  {"ent", ""},  {"ion", ""},  {"ism", ""},
        {"ate", ""},   {"iti", ""},  {"ous", ""},  {"ive", ""},  {"ize", ""},
        {"al", ""},    {"er", ""},   {"ic", ""},   {"ou", ""},
    };
    const SuffixRule* best = nullptr;
    size_t best_len = 0;
    for (const SuffixRule& r : rules) {
        size_t sl = std::char_traits<char>::length(r.suffix);
        if (sl > best_len && ends_with(w, r.suffix)) {
            best = &r;
            best_len = sl;
        }
    }
    if (!best) return;
    std::string stem = w.substr(0, w.size() - best_len);
    if (measure(stem) <= 1) return;
    if (std::string(best->suffix) == "ion" && !(ends_with(stem, "s") || ends_with(stem, "t")))
        return;
    w = stem;
}

void porter_step5(std::string& w) {
    if (w.empty()) return;
    if (w.back() == 'e') {
        std::string stem = w.substr(0, w.size() - 1);
        int m = measure(stem);
        if (m > 1 || (m == 1 && !ends_cvc(stem))) w = stem;
    }
    if (measure(w) > 1 && ends_double_consonant(w) && w.back() == 'l') w.pop_back();
}

// ---- n-gram bookkeeping ----------------------------------------------------

using Counts = std::unordered_map<std::string, double>;

Counts ngram_counts(const std::vector<std::string>& tokens, int n) {
    Counts out;
    if (static_cast<int>(tokens.size()) < n) return out;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += tokens[i + j];
        }
        out[key] += 1.0;
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    return text::pairwise_sum(v) / static_cast<double>(v.size());
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    size_t n = a.size(), m = b.size();
    if (n == 0 || m == 0) return 0;
    std::vector<size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        for (size_t j = 1; j <= m; ++j) {
            if (a[i - 1] == b[j - 1])
                cur[j] = prev[j - 1] + 1;
            else
                cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

struct Match {
    size_t hyp_idx;
    size_t ref_idx;
};

// greedy leftmost-unmatched alignment on two stages: exact tokens, then stems
std::vector<Match> align_for_meteor(const std::vector<std::string>& hyp,
                                    const std::vector<std::string>& ref) {
    std::vector<Match> matches;
    std::vector<bool> hyp_used(hyp.size(), false), ref_used(ref.size(), false);
    for (size_t i = 0; i < hyp.size(); ++i) {
        for (size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && hyp[i] == ref[j]) {
                matches.push_back({i, j});
                hyp_used[i] = true;
                ref_used[j] = true;
                break;
            }
        }
    }
    std::vector<std::string> hyp_stem(hyp.size()), ref_stem(ref.size());
    for (size_t i = 0; i < hyp.size(); ++i) hyp_stem[i] = porter_stem(hyp[i]);
    for (size_t j = 0; j < ref.size(); ++j) ref_stem[j] = porter_stem(ref[j]);
    for (size_t i = 0; i < hyp.size(); ++i) {
        if (hyp_used[i]) continue;
        for (size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && hyp_stem[i] == ref_stem[j]) {
                matches.push_back({i, j});
                hyp_used[i] = true;
                ref_used[j] = true;
                break;
            }
        }
    }
    std::sort(matches.begin(), matches.end(),
              [](const Match& a, const Match& b) { return a.hyp_idx < b.hyp_idx; });
    return matches;
}

}  // namespace

std::string porter_stem(std::string word) {
    for (char& c : word)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (word.size() < 3) return word;
    porter_step1a(word);
    porter_step1b(word);
    porter_step1c(word);
    porter_step2(word);
    porter_step3(word);
    porter_step4(word);
    porter_step5(word);
    return word;
}

EvalPair make_eval_pair(const std::string& hyp_line, const std::string& ref_line) {
    return {text::tokenize(hyp_line), text::tokenize(ref_line)};
}

double bleu(const std::vector<EvalPair>& pairs, int n) {
    if (pairs.empty()) throw ValueError("bleu: corpus is empty");
    if (n < 1 || n > 4) throw ValueError("bleu: order must be in 1..4");
    double hyp_len = 0.0, ref_len = 0.0;
    std::vector<double> num(n, 0.0), den(n, 0.0);
    for (const EvalPair& p : pairs) {
        hyp_len += static_cast<double>(p.hyp.size());
        ref_len += static_cast<double>(p.ref.size());
        for (int k = 1; k <= n; ++k) {
            Counts hc = ngram_counts(p.hyp, k);
            Counts rc = ngram_counts(p.ref, k);
            for (auto& [g, c] : hc) {
                auto it = rc.find(g);
                if (it != rc.end()) num[k - 1] += std::min(c, it->second);
            }
            den[k - 1] += static_cast<double>(
                std::max<int64_t>(0, static_cast<int64_t>(p.hyp.size()) - k + 1));
        }
    }
    if (hyp_len == 0.0) return 0.0;
    double prod = 1.0;
    for (int k = 0; k < n; ++k) {
        if (den[k] == 0.0 || num[k] == 0.0) return 0.0;
        prod *= num[k] / den[k];
    }
    double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::pow(prod, 1.0 / static_cast<double>(n));
}

double meteor(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) throw ValueError("meteor: corpus is empty");
    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const EvalPair& p : pairs) {
        std::vector<Match> matches = align_for_meteor(p.hyp, p.ref);
        double m = static_cast<double>(matches.size());
        if (m == 0.0) {
            scores.push_back(0.0);
            continue;
        }
        double prec = m / static_cast<double>(p.hyp.size());
        double rec = m / static_cast<double>(p.ref.size());
        double f = 10.0 * prec * rec / (rec + 9.0 * prec);
        size_t chunks = 1;
        for (size_t i = 1; i < matches.size(); ++i) {
            if (matches[i].hyp_idx != matches[i - 1].hyp_idx + 1 ||
                matches[i].ref_idx != matches[i - 1].ref_idx + 1)
                ++chunks;
        }
        double ratio = static_cast<double>(chunks) / m;
        double penalty = 0.5 * ratio * ratio * ratio;
        scores.push_back(f * (1.0 - penalty));
    }
    return mean_of(scores);
}

double rouge_l(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) throw ValueError("rouge_l: corpus is empty");
    const double beta2 = 1.2 * 1.2;
    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const EvalPair& p : pairs) {
        double l = static_cast<double>(lcs_length(p.hyp, p.ref));
        if (l == 0.0) {
            scores.push_back(0.0);
            continue;
        }
        double prec = l / static_cast<double>(p.hyp.size());
        double rec = l / static_cast<double>(p.ref.size());
        scores.push_back((1.0 + beta2) * prec * rec / (rec + beta2 * prec));
    }
    return mean_of(scores);
}

double cider(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) throw ValueError("cider: corpus is empty");
    std::set<std::vector<std::string>> distinct_refs;
    for (const EvalPair& p : pairs) distinct_refs.insert(p.ref);
    if (distinct_refs.size() < 2)
        throw ValueError("cider: idf needs at least 2 distinct reference sentences");

    double n_refs = static_cast<double>(pairs.size());
    std::vector<double> per_pair(pairs.size(), 0.0);
    for (int n = 1; n <= 4; ++n) {
        // document frequency over reference sentences
        Counts df;
        for (const EvalPair& p : pairs)
            for (auto& [g, c] : ngram_counts(p.ref, n)) df[g] += 1.0;
        auto idf_of = [&](const std::string& g) {
            auto it = df.find(g);
            double d = it == df.end() ? 0.0 : it->second;
            return std::log(n_refs) - std::log(std::max(1.0, d));
        };
        for (size_t pi = 0; pi < pairs.size(); ++pi) {
            Counts hc = ngram_counts(pairs[pi].hyp, n);
            Counts rc = ngram_counts(pairs[pi].ref, n);
            double nh2 = 0.0, nr2 = 0.0, dot = 0.0;
            for (auto& [g, c] : hc) {
                double v = c * idf_of(g);
                nh2 += v * v;
            }
            for (auto& [g, c] : rc) {
                double idf = idf_of(g);
                double rv = c * idf;
                nr2 += rv * rv;
                auto it = hc.find(g);
                double h = it == hc.end() ? 0.0 : it->second;
                dot += std::min(h, c) * idf * rv;
            }
            double sim = 0.0;
            if (nh2 > 0.0 && nr2 > 0.0) sim = dot / (std::sqrt(nh2) * std::sqrt(nr2));
            double delta = static_cast<double>(pairs[pi].hyp.size()) -
                           static_cast<double>(pairs[pi].ref.size());
            sim *= std::exp(-(delta * delta) / (2.0 * 6.0 * 6.0));
            per_pair[pi] += 10.0 * sim / 4.0;
        }
    }
    return mean_of(per_pair);
}

double combined(double cider_score, double meteor_score) {
    if (!(cider_score >= 0.0) || !std::isfinite(cider_score))
        throw ValueError("combined: cider score must be finite and non-negative");
    if (!(meteor_score >= 0.0) || !(meteor_score <= 1.0))
        throw ValueError("combined: meteor score must lie in [0, 1]");
    return 0.6 * (cider_score / (1.0 + cider_score)) + 0.4 * meteor_score;
}

ScoreReport score_pairs(const std::vector<EvalPair>& pairs) {
    ScoreReport r;
    r.bleu1 = bleu(pairs, 1);
    r.bleu2 = bleu(pairs, 2);
    r.bleu3 = bleu(pairs, 3);
    r.bleu4 = bleu(pairs, 4);
    r.meteor = meteor(pairs);
    r.rouge_l = rouge_l(pairs);
    r.cider = cider(pairs);
    r.combined = combined(r.cider, r.meteor);
    return r;
}

namespace {

std::vector<std::string> split_lines(const std::string& body) {
    std::vector<std::string> lines;
    std::string cur;
    for (char c : body) {
        if (c == '\n') {
            lines.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    return lines;
}

}  // namespace

ScoreReport score_corpus(const std::string& hyp_path, const std::string& ref_path) {
    std::vector<std::string> hyp_lines = split_lines(read_text_file(hyp_path));
    std::vector<std::string> ref_lines = split_lines(read_text_file(ref_path));
    if (hyp_lines.size() != ref_lines.size())
        throw ValueError("score_corpus: hypothesis and reference line counts differ (" +
                         std::to_string(hyp_lines.size()) + " vs " +
                         std::to_string(ref_lines.size()) + ")");
    std::vector<EvalPair> pairs;
    pairs.reserve(hyp_lines.size());
    for (size_t i = 0; i < hyp_lines.size(); ++i)
        pairs.push_back(make_eval_pair(hyp_lines[i], ref_lines[i]));
    return score_pairs(pairs);
}

std::string report_json(const ScoreReport& r) {
    nlohmann::json j;
    j["bleu1"] = r.bleu1;
    j["bleu2"] = r.bleu2;
    j["bleu3"] = r.bleu3;
    j["bleu4"] = r.bleu4;
    j["meteor"] = r.meteor;
    j["rouge_l"] = r.rouge_l;
    j["cider"] = r.cider;
    j["combined"] = r.combined;
    return j.dump(2);
}

std::string report_table(const ScoreReport& r) {
    const std::pair<const char*, double> rows[] = {
        {"bleu1", r.bleu1},     {"bleu2", r.bleu2}, {"bleu3", r.bleu3},
        {"bleu4", r.bleu4},     {"meteor", r.meteor}, {"rouge_l", r.rouge_l},
        {"cider", r.cider},     {"combined", r.combined},
    };
    std::string out;
    char buf[64];
    for (auto& [name, value] : rows) {
        std::snprintf(buf, sizeof(buf), "%-9s %.6f\n", name, value);
        out += buf;
    }
    return out;
}

}  // namespace dvqa
