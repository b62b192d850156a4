#include "dvqa/config.hpp"

#include <cstdio>
#include <functional>
#include <map>

#include "dvqa/error.hpp"
#include "dvqa/io.hpp"

namespace dvqa {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& v) {
    try {
        size_t used = 0;
        int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: expected an integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v) {
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument("sign");
        size_t used = 0;
        uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: expected a non-negative integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: expected a number, got '" + v + "'");
    }
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

// one entry per TrainConfig field, in dump order
const std::vector<std::pair<std::string, Field>>& field_table() {
    auto i64 = [](int64_t TrainConfig::*p) {
        return Field{[p](TrainConfig& c, const std::string& v) { c.*p = parse_i64(v); },
                     [p](const TrainConfig& c) { return std::to_string(c.*p); }};
    };
    auto f64 = [](double TrainConfig::*p) {
        return Field{[p](TrainConfig& c, const std::string& v) { c.*p = parse_f64(v); },
                     [p](const TrainConfig& c) { return fmt_f64(c.*p); }};
    };
    auto reg = [](double RegLossWeights::*p) {
        return Field{[p](TrainConfig& c, const std::string& v) { c.reg_weights.*p = parse_f64(v); },
                     [p](const TrainConfig& c) { return fmt_f64(c.reg_weights.*p); }};
    };
    auto mdl = [](int64_t ModelConfig::*p) {
        return Field{[p](TrainConfig& c, const std::string& v) { c.model.*p = parse_i64(v); },
                     [p](const TrainConfig& c) { return std::to_string(c.model.*p); }};
    };
    static const std::vector<std::pair<std::string, Field>> table{
        {"epochs", i64(&TrainConfig::epochs)},
        {"warmup_epochs", i64(&TrainConfig::warmup_epochs)},
        {"batch_size", i64(&TrainConfig::batch_size)},
        {"lr", f64(&TrainConfig::lr)},
        {"beta1", f64(&TrainConfig::beta1)},
        {"beta2", f64(&TrainConfig::beta2)},
        {"eps", f64(&TrainConfig::eps)},
        {"reg_w_small", reg(&RegLossWeights::w_small)},
        {"reg_w_det", reg(&RegLossWeights::w_det)},
        {"reg_w_trans", reg(&RegLossWeights::w_trans)},
        {"image_h", mdl(&ModelConfig::image_h)},
        {"image_w", mdl(&ModelConfig::image_w)},
        {"enc_channels", mdl(&ModelConfig::enc_channels)},
        {"embed_dim", mdl(&ModelConfig::embed_dim)},
        {"mlp_hidden", mdl(&ModelConfig::mlp_hidden)},
        {"proj_heads", mdl(&ModelConfig::proj_heads)},
        {"text_layers", mdl(&ModelConfig::text_layers)},
        {"text_heads", mdl(&ModelConfig::text_heads)},
        {"dec_layers", mdl(&ModelConfig::dec_layers)},
        {"dec_heads", mdl(&ModelConfig::dec_heads)},
        {"max_question_len", mdl(&ModelConfig::max_question_len)},
        {"max_answer_len", mdl(&ModelConfig::max_answer_len)},
        {"vocab_size", mdl(&ModelConfig::vocab_size)},
        {"dataset_root",
         Field{[](TrainConfig& c, const std::string& v) { c.dataset_root = v; },
               [](const TrainConfig& c) { return c.dataset_root; }}},
        {"seed", Field{[](TrainConfig& c, const std::string& v) { c.seed = parse_u64(v); },
                       [](const TrainConfig& c) { return std::to_string(c.seed); }}},
        {"checkpoint_dir",
         Field{[](TrainConfig& c, const std::string& v) { c.checkpoint_dir = v; },
               [](const TrainConfig& c) { return c.checkpoint_dir; }}},
        {"eval_every", i64(&TrainConfig::eval_every)},
    };
    return table;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs <= 0) throw ConfigError("config: epochs must be positive");
    if (warmup_epochs <= 0) throw ConfigError("config: warmup_epochs must be positive");
    if (warmup_epochs >= epochs) throw ConfigError("config: warmup_epochs must be below epochs");
    if (batch_size <= 0) throw ConfigError("config: batch_size must be positive");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("config: beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("config: beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("config: eps must be positive");
    if (!(reg_weights.w_small > 0.0 && reg_weights.w_det > 0.0 && reg_weights.w_trans > 0.0))
        throw ConfigError("config: registration loss weights must be positive");
    if (eval_every <= 0) throw ConfigError("config: eval_every must be positive");
    if (dataset_root.empty()) throw ConfigError("config: dataset_root must be set");
    if (checkpoint_dir.empty()) throw ConfigError("config: checkpoint_dir must be set");
    model.validate();
}

TrainConfig parse_train_config(const std::string& text) {
    std::map<std::string, const Field*> by_key;
    for (const auto& [key, field] : field_table()) by_key[key] = &field;

    TrainConfig cfg;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: line " + std::to_string(lineno) + " has an empty key");
        auto it = by_key.find(key);
        if (it == by_key.end())
            throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
        try {
            it->second->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (key '" + key + "', line " +
                              std::to_string(lineno) + ")");
        }
    }
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    TrainConfig cfg = parse_train_config(read_text_file(path));
    cfg.validate();
    return cfg;
}

std::string dump_train_config(const TrainConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : field_table()) {
        out += key;
        out += " = ";
        out += field.get(cfg);
        out += "\n";
    }
    return out;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [key, field] : field_table()) k.push_back(key);
        return k;
    }();
    return keys;
}

}  // namespace dvqa
