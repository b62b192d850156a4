#include "dvqa/keyword.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <set>

#include "dvqa/error.hpp"
#include "dvqa/text.hpp"

#include <httplib.h>
#include <json.hpp>

namespace dvqa {

std::string extract_keyword(const std::string& answer, const KeywordLexicon& lex) {
    std::vector<std::string> tokens = text::tokenize(answer);
    if (tokens.empty()) throw ValueError("extract_keyword: answer has no tokens");

    struct Hit {
        int priority;
        size_t pos;
        std::string term;
    };
    std::optional<Hit> best;
    for (const auto& [term, priority] : lex.terms) {
        std::vector<std::string> span = text::tokenize(term);
        if (span.empty()) continue;
        for (size_t i = 0; i + span.size() <= tokens.size(); ++i) {
            bool match = true;
            for (size_t j = 0; j < span.size() && match; ++j) match = tokens[i + j] == span[j];
            if (!match) continue;
            bool better = !best || priority < best->priority ||
                          (priority == best->priority && i < best->pos) ||
                          (priority == best->priority && i == best->pos && term < best->term);
            if (better) best = Hit{priority, i, term};
            break;  // only the earliest occurrence of this term matters
        }
    }
    if (best) return best->term;

    std::set<std::string> stop(lex.stopwords.begin(), lex.stopwords.end());
    for (const std::string& t : tokens)
        if (!stop.count(t)) return t;
    return tokens.front();
}

void LlmClientConfig::validate() const {
    if (!(timeout_s > 0.0)) throw ValueError("llm config: timeout must be positive");
    if (retries < 0) throw ValueError("llm config: retries must be non-negative");
    if (prompt_template.find("{answer}") == std::string::npos)
        throw ValueError("llm config: prompt template lacks the {answer} placeholder");
    if (endpoint.empty()) throw ValueError("llm config: endpoint is empty");
}

namespace {

std::string normalize_reply(const std::string& reply) {
    // first whitespace-delimited piece, lowercased, punctuation removed
    size_t b = reply.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = reply.find_first_of(" \t\r\n", b);
    std::string word = reply.substr(b, e == std::string::npos ? std::string::npos : e - b);
    std::string out;
    for (char c : word) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) out += static_cast<char>(std::tolower(u));
    }
    return out;
}

}  // namespace

std::string llm_extract_keyword(const std::string& answer, const LlmClientConfig& cfg,
                                const KeywordLexicon& lex) {
    cfg.validate();
    std::string endpoint = cfg.endpoint;
    if (const char* env = std::getenv(kLlmEndpointEnv)) endpoint = env;

    std::string prompt = cfg.prompt_template;
    size_t at = prompt.find("{answer}");
    prompt.replace(at, 8, answer);
    nlohmann::json body{{"model", cfg.model}, {"prompt", prompt}, {"stream", false}};
    std::string payload = body.dump();

    time_t sec = static_cast<time_t>(cfg.timeout_s);
    long usec = static_cast<long>((cfg.timeout_s - static_cast<double>(sec)) * 1e6);
    for (int attempt = 0; attempt <= cfg.retries; ++attempt) {
        httplib::Client client(endpoint);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);
        httplib::Result res = client.Post(cfg.path, payload, "application/json");
        if (!res || res->status < 200 || res->status >= 300) {
            std::fprintf(stderr, "llm_extract_keyword: attempt %d failed (%s)\n", attempt + 1,
                         res ? ("status " + std::to_string(res->status)).c_str()
                             : httplib::to_string(res.error()).c_str());
            continue;
        }
        nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("response") ||
            !parsed["response"].is_string()) {
            std::fprintf(stderr, "llm_extract_keyword: attempt %d returned an unusable body\n",
                         attempt + 1);
            continue;
        }
        std::string word = normalize_reply(parsed["response"].get<std::string>());
        if (word.empty() || text::tokenize(word).size() != 1) break;
        return word;
    }
    std::fprintf(stderr, "llm_extract_keyword: falling back to the lexicon extractor\n");
    return extract_keyword(answer, lex);
}

CamTarget keyword_to_target(const std::string& keyword, const Vocabulary& vocab,
                            const std::vector<int64_t>& answer_ids) {
    CamTarget target;
    target.answer_ids = answer_ids;
    for (const std::string& tok : text::tokenize(keyword)) {
        std::optional<int64_t> id = vocab.id_of(tok);
        if (!id) return target;  // out of vocabulary: unusable target
        target.keyword_ids.push_back(*id);
    }
    if (target.keyword_ids.empty()) return target;
    size_t k = target.keyword_ids.size();
    for (size_t i = 0; i + k <= answer_ids.size(); ++i) {
        bool match = true;
        for (size_t j = 0; j < k && match; ++j) match = answer_ids[i + j] == target.keyword_ids[j];
        if (match) {
            for (size_t j = 0; j < k; ++j) target.positions.push_back(static_cast<int64_t>(i + j));
            break;  // first occurrence of the span only
        }
    }
    return target;
}

}  // namespace dvqa
