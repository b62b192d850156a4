#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace dvqa {

class Vocabulary {
public:
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kImg = 1;
    static constexpr int64_t kQtn = 2;
    static constexpr int64_t kAns = 3;
    static constexpr int64_t kEos = 4;
    static constexpr int64_t kNumSpecials = 5;
    static const std::array<const char*, 5>& special_names();

    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& words);

    int64_t add(const std::string& token);
    std::optional<int64_t> id_of(const std::string& token) const;
    const std::string& token_of(int64_t id) const;
    bool is_special(int64_t id) const { return id >= 0 && id < kNumSpecials; }

    // Tokenize (lowercase, punctuation split off) and map; out-of-vocabulary
    // tokens are an error.
    std::vector<int64_t> encode(const std::string& text) const;
    // Word ids joined by spaces; special ids are dropped.
    std::string decode(const std::vector<int64_t>& ids) const;

    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> index_;
};

}  // namespace dvqa
