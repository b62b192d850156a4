#include "dvqa/vocab.hpp"

#include "dvqa/error.hpp"
#include "dvqa/text.hpp"

namespace dvqa {

const std::array<const char*, 5>& Vocabulary::special_names() {
    static const std::array<const char*, 5> names{"<pad>", "<img>", "<qtn>", "<ans>", "<eos>"};
    return names;
}

Vocabulary::Vocabulary() {
    for (const char* s : special_names()) {
        index_.emplace(s, static_cast<int64_t>(tokens_.size()));
        tokens_.emplace_back(s);
    }
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const std::string& w : words) add(w);
}

int64_t Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int64_t id = static_cast<int64_t>(tokens_.size());
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

std::optional<int64_t> Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::token_of(int64_t id) const {
    if (id < 0 || id >= size()) throw ValueError("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int64_t> Vocabulary::encode(const std::string& text) const {
    std::vector<int64_t> ids;
    for (const std::string& tok : text::tokenize(text)) {
        auto id = id_of(tok);
        if (!id) throw ValueError("out-of-vocabulary token: " + tok);
        ids.push_back(*id);
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (int64_t id : ids) {
        if (is_special(id)) continue;
        if (!out.empty()) out += ' ';
        out += token_of(id);
    }
    return out;
}

}  // namespace dvqa
