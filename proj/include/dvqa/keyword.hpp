#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/saliency.hpp"
#include "dvqa/vocab.hpp"

namespace dvqa {

// Deterministic keyword extraction: a ranked term list plus a stopword set.
// Lower priority number means more salient. Terms are lowercase and may span
// several tokens ("pleural effusion").
struct KeywordLexicon {
    std::vector<std::pair<std::string, int>> terms;
    std::vector<std::string> stopwords;
};

// Scan the answer for lexicon terms as whole-token matches. The match with
// the lowest priority number wins; ties go to the earliest position, then to
// lexicographic term order. Without a lexicon hit the first non-stopword
// token is returned, and if every token is a stopword, the first token.
// Throws ValueError when the answer has no tokens.
std::string extract_keyword(const std::string& answer, const KeywordLexicon& lex);

// Optional external extractor speaking JSON over HTTP. The request body is
// {"model", "prompt", "stream": false} POSTed to {endpoint}{path}; the reply
// must be JSON with a string "response" field.
struct LlmClientConfig {
    std::string endpoint = "http://localhost:11434";
    std::string path = "/api/generate";
    std::string model = "llama3:70b";
    std::string prompt_template =
        "Extract exactly one medically salient keyword from this answer. "
        "Reply with one word only. Answer: {answer}";
    double timeout_s = 5.0;
    int retries = 0;

    // timeout > 0, retries >= 0, template contains {answer}
    void validate() const;
};

// When set, this environment variable overrides LlmClientConfig::endpoint.
inline constexpr const char* kLlmEndpointEnv = "DVQA_LLM_ENDPOINT";

// Ask the configured endpoint for a keyword; normalize the reply to a single
// lowercase token. Any transport failure, non-2xx status, unparseable body,
// or empty/multi-token reply falls back to extract_keyword, so the call
// always produces a keyword and never blocks longer than
// timeout * (retries + 1).
std::string llm_extract_keyword(const std::string& answer, const LlmClientConfig& cfg,
                                const KeywordLexicon& lex);

// Build a saliency target from the first occurrence of the keyword's token
// span inside the answer ids. An out-of-vocabulary keyword or one absent
// from the answer yields a target with empty positions (usable() == false)
// so the caller can skip masking for that sample.
CamTarget keyword_to_target(const std::string& keyword, const Vocabulary& vocab,
                            const std::vector<int64_t>& answer_ids);

}  // namespace dvqa
