#include "dvqa/model.hpp"

#include <cmath>

#include "dvqa/error.hpp"
#include "dvqa/rng.hpp"

namespace dvqa {

std::vector<int64_t> ModelConfig::enc_widths() const {
    return {enc_channels / 8, enc_channels / 4, enc_channels / 2, enc_channels};
}

void ModelConfig::validate() const {
    if (image_h < 32 || image_w < 32 || image_h % 16 != 0 || image_w % 16 != 0)
        throw ConfigError("model: image extents must be >= 32 and divisible by 16");
    if (enc_channels < 8 || enc_channels % 8 != 0)
        throw ConfigError("model: enc_channels must be a positive multiple of 8");
    if (embed_dim <= 0 || mlp_hidden <= 0) throw ConfigError("model: dims must be positive");
    for (int64_t h : {proj_heads, text_heads, dec_heads}) {
        if (h <= 0 || embed_dim % h != 0)
            throw ConfigError("model: embed_dim must be divisible by every head count");
    }
    if (text_layers <= 0 || dec_layers <= 0) throw ConfigError("model: layer counts must be positive");
    if (max_question_len <= 0 || max_answer_len <= 0) throw ConfigError("model: sequence budgets must be positive");
    if (vocab_size <= Vocabulary::kNumSpecials) throw ConfigError("model: vocab_size not set");
}

SequenceLayout build_layout(const ModelConfig& cfg, const std::vector<int64_t>& question_ids,
                            const std::vector<int64_t>& answer_ids) {
    if (static_cast<int64_t>(question_ids.size()) > cfg.max_question_len)
        throw ValueError("layout: question longer than the configured budget");
    if (static_cast<int64_t>(answer_ids.size()) > cfg.max_answer_len)
        throw ValueError("layout: answer longer than the configured budget");

    SequenceLayout lt;
    lt.n_img_tokens = cfg.num_tokens();
    lt.question_len = static_cast<int64_t>(question_ids.size());
    lt.answer_len = static_cast<int64_t>(answer_ids.size());
    lt.length = cfg.seq_len();
    lt.ids.assign(static_cast<size_t>(lt.length), Vocabulary::kPad);

    int64_t p = 0;
    lt.ids[p++] = Vocabulary::kImg;
    lt.main_start = p;
    for (int64_t i = 0; i < lt.n_img_tokens; ++i) lt.ids[p++] = Vocabulary::kImg;
    lt.ids[p++] = Vocabulary::kImg;
    lt.ref_start = p;
    for (int64_t i = 0; i < lt.n_img_tokens; ++i) lt.ids[p++] = Vocabulary::kImg;
    lt.qtn_pos = p;
    lt.ids[p++] = Vocabulary::kQtn;
    for (int64_t id : question_ids) lt.ids[p++] = id;
    lt.ans_pos = p;
    lt.ids[p++] = Vocabulary::kAns;
    for (int64_t id : answer_ids) lt.ids[p++] = id;
    lt.eos_pos = p;
    lt.ids[p++] = Vocabulary::kEos;

    lt.targets.assign(static_cast<size_t>(lt.length), Vocabulary::kPad);
    lt.loss_mask.assign(static_cast<size_t>(lt.length), 0);
    for (int64_t r = 0; r + 1 < lt.length; ++r) {
        int64_t nxt = r + 1;
        bool scored = nxt > lt.ans_pos && nxt <= lt.eos_pos;
        if (scored) {
            lt.targets[static_cast<size_t>(r)] = lt.ids[static_cast<size_t>(nxt)];
            lt.loss_mask[static_cast<size_t>(r)] = 1;
        }
    }
    return lt;
}

// ---- blocks -------------------------------------------------------------------

DiffVqaModel::AttnBlock DiffVqaModel::AttnBlock::make(int64_t d, int64_t hidden, int64_t heads, CounterRng& rng) {
    AttnBlock b;
    b.heads = heads;
    double ws = 0.05;
    b.ln1_g = Tensor::ones({d}, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.wq = Tensor::randn({d, d}, rng, ws, true);
    b.bq = Tensor::zeros({d}, true);
    b.wk = Tensor::randn({d, d}, rng, ws, true);
    b.bk = Tensor::zeros({d}, true);
    b.wv = Tensor::randn({d, d}, rng, ws, true);
    b.bv = Tensor::zeros({d}, true);
    b.wo = Tensor::randn({d, d}, rng, ws, true);
    b.bo = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::ones({d}, true);
    b.ln2_b = Tensor::zeros({d}, true);
    b.mlp_w1 = Tensor::randn({d, hidden}, rng, ws, true);
    b.mlp_b1 = Tensor::zeros({hidden}, true);
    b.mlp_w2 = Tensor::randn({hidden, d}, rng, ws, true);
    b.mlp_b2 = Tensor::zeros({d}, true);
    return b;
}

Tensor DiffVqaModel::AttnBlock::forward(const Tensor& x, bool causal) const {
    int64_t l = x.dim(0), d = x.dim(1);
    int64_t dh = d / heads;

    Tensor h = layer_norm(x, ln1_g, ln1_b);
    Tensor q = linear(h, wq, bq);
    Tensor k = linear(h, wk, bk);
    Tensor v = linear(h, wv, bv);

    Tensor causal_mask;
    if (causal) {
        std::vector<double> m(static_cast<size_t>(l * l), 0.0);
        for (int64_t i = 0; i < l; ++i)
            for (int64_t j = i + 1; j < l; ++j) m[static_cast<size_t>(i * l + j)] = -1e30;
        causal_mask = Tensor::from_vector({l, l}, std::move(m));
    }

    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int64_t hd = 0; hd < heads; ++hd) {
        Tensor qh = slice(q, 1, hd * dh, dh);
        Tensor kh = slice(k, 1, hd * dh, dh);
        Tensor vh = slice(v, 1, hd * dh, dh);
        Tensor s = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (causal) s = add(s, causal_mask);
        ctx.push_back(matmul(softmax(s, 1), vh));
    }
    Tensor attn_out = linear(heads == 1 ? ctx[0] : concat(ctx, 1), wo, bo);
    Tensor x1 = add(x, attn_out);

    Tensor h2 = layer_norm(x1, ln2_g, ln2_b);
    Tensor m = linear(relu(linear(h2, mlp_w1, mlp_b1)), mlp_w2, mlp_b2);
    return add(x1, m);
}

void DiffVqaModel::AttnBlock::collect(const std::string& prefix,
                                      std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back(prefix + ".ln1.g", ln1_g);
    out.emplace_back(prefix + ".ln1.b", ln1_b);
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".bq", bq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".bk", bk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".bv", bv);
    out.emplace_back(prefix + ".wo", wo);
    out.emplace_back(prefix + ".bo", bo);
    out.emplace_back(prefix + ".ln2.g", ln2_g);
    out.emplace_back(prefix + ".ln2.b", ln2_b);
    out.emplace_back(prefix + ".mlp.w1", mlp_w1);
    out.emplace_back(prefix + ".mlp.b1", mlp_b1);
    out.emplace_back(prefix + ".mlp.w2", mlp_w2);
    out.emplace_back(prefix + ".mlp.b2", mlp_b2);
}

// ---- model ------------------------------------------------------------------

DiffVqaModel::DiffVqaModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(seed, 1);
    int64_t d = cfg_.embed_dim;
    int64_t v = cfg_.vocab_size;

    embed_ = Tensor::randn({v, d}, rng, 0.1, true);
    dec_pos_ = Tensor::randn({cfg_.seq_len(), d}, rng, 0.05, true);
    txt_pos_ = Tensor::randn({cfg_.max_question_len, d}, rng, 0.05, true);

    int64_t in_c = 1;
    for (int64_t w : cfg_.enc_widths()) {
        enc_w_.push_back(Tensor::randn({w, in_c, 3, 3}, rng, std::sqrt(2.0 / (static_cast<double>(in_c) * 9)), true));
        enc_b_.push_back(Tensor::zeros({w}, true));
        in_c = w;
    }

    proj_lin_w_ = Tensor::randn({cfg_.enc_channels, d}, rng, 0.05, true);
    proj_lin_b_ = Tensor::zeros({d}, true);
    proj_block_ = AttnBlock::make(d, cfg_.mlp_hidden, cfg_.proj_heads, rng);
    proj_mlp_w1_ = Tensor::randn({d, d}, rng, 0.05, true);
    proj_mlp_b1_ = Tensor::zeros({d}, true);
    proj_mlp_w2_ = Tensor::randn({d, d}, rng, 0.05, true);
    proj_mlp_b2_ = Tensor::zeros({d}, true);

    for (int64_t i = 0; i < cfg_.text_layers; ++i)
        text_blocks_.push_back(AttnBlock::make(d, cfg_.mlp_hidden, cfg_.text_heads, rng));
    for (int64_t i = 0; i < cfg_.dec_layers; ++i)
        dec_blocks_.push_back(AttnBlock::make(d, cfg_.mlp_hidden, cfg_.dec_heads, rng));

    final_ln_g_ = Tensor::ones({d}, true);
    final_ln_b_ = Tensor::zeros({d}, true);
    lm_head_w_ = Tensor::randn({d, v}, rng, 0.05, true);
    lm_head_b_ = Tensor::zeros({v}, true);
}

Tensor DiffVqaModel::encode_image_retained(const Tensor& img, Tensor* feature_map) const {
    if (img.ndim() != 4 || img.dim(0) != 1 || img.dim(1) != 1)
        throw ShapeError("encode_image: expected [1,1,H,W], got " + shape_str(img.shape()));
    if (img.dim(2) != cfg_.image_h || img.dim(3) != cfg_.image_w)
        throw ShapeError("encode_image: image extents do not match the config");
    Tensor x = img;
    for (size_t i = 0; i < enc_w_.size(); ++i) x = relu(conv2d(x, enc_w_[i], enc_b_[i], 2, 1));
    if (feature_map) *feature_map = x;  // [1,C,h,w]
    int64_t c = cfg_.enc_channels, n = cfg_.num_tokens();
    return reshape(transpose(reshape(x, {c, n})), {1, n, c});
}

Tensor DiffVqaModel::encode_image(const Tensor& img) const {
    if (img.ndim() != 4 || img.dim(1) != 1) throw ShapeError("encode_image: expected [B,1,H,W]");
    int64_t b = img.dim(0);
    if (b == 1) return encode_image_retained(img, nullptr);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) parts.push_back(encode_image_retained(slice(img, 0, i, 1), nullptr));
    return concat(parts, 0);
}

Tensor DiffVqaModel::project(const Tensor& tokens) const {
    if (tokens.ndim() != 3 || tokens.dim(2) != cfg_.enc_channels)
        throw ShapeError("project: expected [B,N,C], got " + shape_str(tokens.shape()));
    int64_t b = tokens.dim(0), n = tokens.dim(1);
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        Tensor x = reshape(slice(tokens, 0, i, 1), {n, cfg_.enc_channels});
        x = linear(x, proj_lin_w_, proj_lin_b_);
        x = proj_block_.forward(x, false);
        x = linear(relu(linear(x, proj_mlp_w1_, proj_mlp_b1_)), proj_mlp_w2_, proj_mlp_b2_);
        parts.push_back(reshape(x, {1, n, cfg_.embed_dim}));
    }
    return b == 1 ? parts[0] : concat(parts, 0);
}

Tensor DiffVqaModel::encode_text(const std::vector<int64_t>& ids) const {
    int64_t l = static_cast<int64_t>(ids.size());
    if (l == 0) throw ValueError("encode_text: empty question");
    if (l > cfg_.max_question_len) throw ValueError("encode_text: question longer than the configured budget");
    Tensor x = add(embedding_lookup(embed_, ids), slice(txt_pos_, 0, 0, l));
    for (const AttnBlock& blk : text_blocks_) x = blk.forward(x, false);
    return x;
}

Tensor DiffVqaModel::layout_rows(const SequenceLayout& layout) const {
    if (!layout.z_main.defined() || !layout.z_ref.defined())
        throw ValueError("layout: image token embeddings not attached");
    if (layout.z_main.shape() != Shape{layout.n_img_tokens, cfg_.embed_dim} ||
        layout.z_ref.shape() != Shape{layout.n_img_tokens, cfg_.embed_dim})
        throw ShapeError("layout: z_main/z_ref must be [N,D]");

    std::vector<int64_t> q_ids(layout.ids.begin() + layout.qtn_pos + 1,
                               layout.ids.begin() + layout.qtn_pos + 1 + layout.question_len);
    Tensor z_qtn = encode_text(q_ids);

    // Text spans outside the encoded question come straight from the table.
    auto span_lookup = [&](int64_t start, int64_t len) {
        std::vector<int64_t> ids(layout.ids.begin() + start, layout.ids.begin() + start + len);
        return embedding_lookup(embed_, ids);
    };

    std::vector<Tensor> rows;
    rows.push_back(span_lookup(0, 1));  // <img>
    rows.push_back(layout.z_main);
    rows.push_back(span_lookup(layout.ref_start - 1, 1));  // <img>
    rows.push_back(layout.z_ref);
    rows.push_back(span_lookup(layout.qtn_pos, 1));  // <qtn>
    rows.push_back(z_qtn);
    // <ans>, answer tokens, <eos>, trailing padding
    rows.push_back(span_lookup(layout.ans_pos, layout.length - layout.ans_pos));
    Tensor mat = concat(rows, 0);
    return add(mat, slice(dec_pos_, 0, 0, layout.length));
}

Tensor DiffVqaModel::decoder_hidden(const Tensor& rows) const {
    Tensor x = rows;
    for (const AttnBlock& blk : dec_blocks_) x = blk.forward(x, true);
    return layer_norm(x, final_ln_g_, final_ln_b_);
}

DiffVqaModel::Decoded DiffVqaModel::decode_teacher_forced(const SequenceLayout& layout) const {
    bool any_scored = false;
    for (uint8_t m : layout.loss_mask) any_scored |= (m != 0);
    if (!any_scored) throw ValueError("decode_teacher_forced: empty loss mask");
    Tensor hidden = decoder_hidden(layout_rows(layout));
    Tensor logits = linear(hidden, lm_head_w_, lm_head_b_);
    Tensor loss = cross_entropy(logits, layout.targets, layout.loss_mask);
    return {logits, loss};
}

Tensor DiffVqaModel::prefix_rows(const Tensor& z_main, const Tensor& z_ref,
                                 const std::vector<int64_t>& question_ids,
                                 const std::vector<int64_t>& answer_so_far) const {
    Tensor z_qtn = encode_text(question_ids);
    std::vector<Tensor> rows;
    rows.push_back(embedding_lookup(embed_, {Vocabulary::kImg}));
    rows.push_back(z_main);
    rows.push_back(embedding_lookup(embed_, {Vocabulary::kImg}));
    rows.push_back(z_ref);
    rows.push_back(embedding_lookup(embed_, {Vocabulary::kQtn}));
    rows.push_back(z_qtn);
    std::vector<int64_t> tail{Vocabulary::kAns};
    tail.insert(tail.end(), answer_so_far.begin(), answer_so_far.end());
    rows.push_back(embedding_lookup(embed_, tail));
    Tensor mat = concat(rows, 0);
    return add(mat, slice(dec_pos_, 0, 0, mat.dim(0)));
}

std::vector<int64_t> DiffVqaModel::generate(const Tensor& z_main, const Tensor& z_ref,
                                            const std::vector<int64_t>& question_ids, int64_t max_len) const {
    if (max_len < 1) throw ValueError("generate: max_len must be at least 1");
    max_len = std::min(max_len, cfg_.max_answer_len);
    NoGradGuard ng;
    std::vector<int64_t> out;
    for (int64_t step = 0; step < max_len; ++step) {
        Tensor rows = prefix_rows(z_main, z_ref, question_ids, out);
        Tensor hidden = decoder_hidden(rows);
        Tensor logits = linear(slice(hidden, 0, hidden.dim(0) - 1, 1), lm_head_w_, lm_head_b_);
        const double* row = logits.data();
        int64_t best = -1;
        double best_v = 0.0;
        for (int64_t j = 0; j < cfg_.vocab_size; ++j) {
            if (j == Vocabulary::kPad || j == Vocabulary::kImg || j == Vocabulary::kQtn) continue;
            if (best < 0 || row[j] > best_v) {
                best = j;
                best_v = row[j];
            }
        }
        if (best == Vocabulary::kEos) break;
        out.push_back(best);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> DiffVqaModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed.table", embed_);
    out.emplace_back("embed.dec_pos", dec_pos_);
    out.emplace_back("embed.txt_pos", txt_pos_);
    for (size_t i = 0; i < enc_w_.size(); ++i) {
        out.emplace_back("enc.conv" + std::to_string(i) + ".w", enc_w_[i]);
        out.emplace_back("enc.conv" + std::to_string(i) + ".b", enc_b_[i]);
    }
    out.emplace_back("proj.lin.w", proj_lin_w_);
    out.emplace_back("proj.lin.b", proj_lin_b_);
    proj_block_.collect("proj.block", out);
    out.emplace_back("proj.mlp.w1", proj_mlp_w1_);
    out.emplace_back("proj.mlp.b1", proj_mlp_b1_);
    out.emplace_back("proj.mlp.w2", proj_mlp_w2_);
    out.emplace_back("proj.mlp.b2", proj_mlp_b2_);
    for (size_t i = 0; i < text_blocks_.size(); ++i) text_blocks_[i].collect("txt.block" + std::to_string(i), out);
    for (size_t i = 0; i < dec_blocks_.size(); ++i) dec_blocks_[i].collect("dec.block" + std::to_string(i), out);
    out.emplace_back("dec.final_ln.g", final_ln_g_);
    out.emplace_back("dec.final_ln.b", final_ln_b_);
    out.emplace_back("dec.lm_head.w", lm_head_w_);
    out.emplace_back("dec.lm_head.b", lm_head_b_);
    return out;
}

void DiffVqaModel::zero_grad() const {
    for (auto& [name, t] : named_parameters()) {
        (void)name;
        Tensor tt = t;
        tt.zero_grad();
    }
}

int64_t DiffVqaModel::parameter_count() const {
    int64_t n = 0;
    for (auto& [name, t] : named_parameters()) {
        (void)name;
        n += t.numel();
    }
    return n;
}

}  // namespace dvqa
