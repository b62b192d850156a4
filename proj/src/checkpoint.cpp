#include "dvqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dvqa/text.hpp"

namespace dvqa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian doubles");

namespace {

constexpr char kMagic[4] = {'D', 'V', 'Q', 'K'};

nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"image_h", m.image_h},
            {"image_w", m.image_w},
            {"enc_channels", m.enc_channels},
            {"embed_dim", m.embed_dim},
            {"mlp_hidden", m.mlp_hidden},
            {"proj_heads", m.proj_heads},
            {"text_layers", m.text_layers},
            {"text_heads", m.text_heads},
            {"dec_layers", m.dec_layers},
            {"dec_heads", m.dec_heads},
            {"max_question_len", m.max_question_len},
            {"max_answer_len", m.max_answer_len},
            {"vocab_size", m.vocab_size}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.image_h = j.at("image_h").get<int64_t>();
    m.image_w = j.at("image_w").get<int64_t>();
    m.enc_channels = j.at("enc_channels").get<int64_t>();
    m.embed_dim = j.at("embed_dim").get<int64_t>();
    m.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
    m.proj_heads = j.at("proj_heads").get<int64_t>();
    m.text_layers = j.at("text_layers").get<int64_t>();
    m.text_heads = j.at("text_heads").get<int64_t>();
    m.dec_layers = j.at("dec_layers").get<int64_t>();
    m.dec_heads = j.at("dec_heads").get<int64_t>();
    m.max_question_len = j.at("max_question_len").get<int64_t>();
    m.max_answer_len = j.at("max_answer_len").get<int64_t>();
    m.vocab_size = j.at("vocab_size").get<int64_t>();
    return m;
}

template <typename T>
void append_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& s, size_t offset) {
    T v;
    std::memcpy(&v, s.data() + offset, sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string payload;
    nlohmann::json directory = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.tensors) {
        if (!t.defined()) throw ValueError("checkpoint: undefined tensor " + name);
        directory.push_back({{"name", name},
                             {"dtype", "f64"},
                             {"shape", t.shape()},
                             {"offset", payload.size()}});
        payload.append(reinterpret_cast<const char*>(t.data()),
                       sizeof(double) * static_cast<size_t>(t.numel()));
    }

    nlohmann::json header{{"model", model_to_json(ckpt.model)},
                          {"epoch", ckpt.epoch},
                          {"score", ckpt.best_score},
                          {"opt_step", ckpt.opt_step},
                          {"directory", directory},
                          {"checksum", text::fnv1a(payload.data(), payload.size())}};
    std::string header_text = header.dump();

    std::string blob;
    blob.append(kMagic, 4);
    append_le<uint32_t>(blob, kCheckpointVersion);
    append_le<uint64_t>(blob, header_text.size());
    blob += header_text;
    blob += payload;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (blob.size() < 4) throw TruncationError("checkpoint: file shorter than the magic");
    if (std::memcmp(blob.data(), kMagic, 4) != 0)
        throw BadMagicError("checkpoint: bad magic in " + path);
    if (blob.size() < 4 + 4 + 8) throw TruncationError("checkpoint: header preamble cut short");
    uint32_t version = read_le<uint32_t>(blob, 4);
    if (version != kCheckpointVersion)
        throw VersionMismatchError("checkpoint: format version " + std::to_string(version) +
                                   ", this build reads " + std::to_string(kCheckpointVersion));
    uint64_t header_len = read_le<uint64_t>(blob, 8);
    size_t header_start = 16;
    if (blob.size() < header_start + header_len)
        throw TruncationError("checkpoint: header cut short");

    nlohmann::json header =
        nlohmann::json::parse(blob.substr(header_start, header_len), nullptr, false);
    if (header.is_discarded()) throw IoError("checkpoint: header is not valid JSON");

    Checkpoint ckpt;
    size_t payload_start = header_start + static_cast<size_t>(header_len);
    try {
        ckpt.model = model_from_json(header.at("model"));
        ckpt.epoch = header.at("epoch").get<int64_t>();
        ckpt.best_score = header.at("score").get<double>();
        ckpt.opt_step = header.at("opt_step").get<int64_t>();

        uint64_t expected_checksum = header.at("checksum").get<uint64_t>();
        size_t expected_bytes = 0;
        for (const auto& entry : header.at("directory")) {
            Shape shape = entry.at("shape").get<Shape>();
            if (entry.at("dtype").get<std::string>() != "f64")
                throw IoError("checkpoint: unsupported dtype for " + entry.at("name").get<std::string>());
            if (entry.at("offset").get<uint64_t>() != expected_bytes)
                throw IoError("checkpoint: directory offsets are not contiguous");
            expected_bytes += sizeof(double) * static_cast<size_t>(shape_numel(shape));
        }
        if (blob.size() < payload_start + expected_bytes)
            throw TruncationError("checkpoint: payload cut short, expected " +
                                  std::to_string(expected_bytes) + " bytes");
        if (blob.size() > payload_start + expected_bytes)
            throw IoError("checkpoint: trailing bytes after the payload");
        uint64_t actual = text::fnv1a(blob.data() + payload_start, expected_bytes);
        if (actual != expected_checksum)
            throw ChecksumError("checkpoint: payload checksum mismatch in " + path);

        size_t offset = payload_start;
        for (const auto& entry : header.at("directory")) {
            Shape shape = entry.at("shape").get<Shape>();
            std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
            std::memcpy(values.data(), blob.data() + offset, sizeof(double) * values.size());
            offset += sizeof(double) * values.size();
            ckpt.tensors.emplace_back(entry.at("name").get<std::string>(),
                                      Tensor::from_vector(shape, std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return ckpt;
}

Checkpoint snapshot(const ModelConfig& mc, const std::vector<std::pair<std::string, Tensor>>& params,
                    const Adam& opt, int64_t epoch, double best_score) {
    Checkpoint ckpt;
    ckpt.model = mc;
    ckpt.epoch = epoch;
    ckpt.best_score = best_score;
    ckpt.opt_step = opt.step_count();
    for (const auto& [name, p] : params) ckpt.tensors.emplace_back(name, p.detach());
    for (const Adam::Slot& s : opt.slots())
        ckpt.tensors.emplace_back("opt.m." + s.name, Tensor::from_vector(s.param.shape(), s.m));
    for (const Adam::Slot& s : opt.slots())
        ckpt.tensors.emplace_back("opt.v." + s.name, Tensor::from_vector(s.param.shape(), s.v));
    return ckpt;
}

void restore(const Checkpoint& ckpt, const ModelConfig& want,
             const std::vector<std::pair<std::string, Tensor>>& params, Adam* opt) {
    if (model_to_json(ckpt.model) != model_to_json(want))
        throw ValueError("checkpoint: model configuration does not match");
    std::map<std::string, Tensor> by_name(ckpt.tensors.begin(), ckpt.tensors.end());
    auto take = [&](const std::string& name, const Shape& want_shape) -> const Tensor& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ValueError("checkpoint: missing tensor " + name);
        if (it->second.shape() != want_shape)
            throw ShapeError("checkpoint: tensor " + name + " has shape " +
                             shape_str(it->second.shape()) + ", model expects " +
                             shape_str(want_shape));
        return it->second;
    };
    for (const auto& [name, p] : params) {
        const Tensor& src = take(name, p.shape());
        Tensor dst = p;
        std::memcpy(dst.data(), src.data(), sizeof(double) * static_cast<size_t>(p.numel()));
    }
    if (opt) {
        for (Adam::Slot& s : opt->slots()) {
            const Tensor& m = take("opt.m." + s.name, s.param.shape());
            const Tensor& v = take("opt.v." + s.name, s.param.shape());
            s.m.assign(m.data(), m.data() + m.numel());
            s.v.assign(v.data(), v.data() + v.numel());
        }
        opt->set_step_count(ckpt.opt_step);
    }
}

Checkpoint snapshot(const DiffVqaModel& model, const Adam& opt, int64_t epoch, double best_score) {
    return snapshot(model.config(), model.named_parameters(), opt, epoch, best_score);
}

void restore(const Checkpoint& ckpt, const DiffVqaModel& model, Adam* opt) {
    restore(ckpt, model.config(), model.named_parameters(), opt);
}

}  // namespace dvqa
