#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvqa/tensor.hpp"
#include "dvqa/vocab.hpp"

namespace dvqa {

// Toy-scale defaults; the upstream-shaped preset (224x224 images, ResNet-50
// stage widths, 8-head projector, 6-layer/12-head text encoder, GPT-2 decoder
// dims) is documented in the README config table but not instantiated.
struct ModelConfig {
    int64_t image_h = 64;
    int64_t image_w = 64;
    int64_t enc_channels = 128;  // final conv feature channels C
    int64_t embed_dim = 128;     // D
    int64_t mlp_hidden = 256;
    int64_t proj_heads = 4;
    int64_t text_layers = 1;
    int64_t text_heads = 4;
    int64_t dec_layers = 2;
    int64_t dec_heads = 4;
    int64_t max_question_len = 10;
    int64_t max_answer_len = 12;
    int64_t vocab_size = 0;

    // Four stride-2 conv blocks halve each spatial extent.
    int64_t feat_h() const { return image_h / 16; }
    int64_t feat_w() const { return image_w / 16; }
    int64_t num_tokens() const { return feat_h() * feat_w(); }
    // <img> Zmain <img> Zref <qtn> question <ans> answer <eos>, then padding.
    int64_t seq_len() const { return 2 + 2 * num_tokens() + 1 + max_question_len + 1 + max_answer_len + 1; }
    std::vector<int64_t> enc_widths() const;
    void validate() const;
};

// Teacher-forcing layout. ids hold the assembled decoder sequence with <img>
// placeholders at image-token slots; row p of the logits predicts ids[p+1],
// and loss_mask selects exactly the rows whose target is an answer token or
// <eos>.
struct SequenceLayout {
    std::vector<int64_t> ids;
    std::vector<int64_t> targets;
    std::vector<uint8_t> loss_mask;
    Tensor z_main;  // [N,D]
    Tensor z_ref;   // [N,D]
    int64_t n_img_tokens = 0;
    int64_t main_start = 0;  // first Z_main slot
    int64_t ref_start = 0;   // first Z_ref slot
    int64_t qtn_pos = 0;
    int64_t ans_pos = 0;
    int64_t eos_pos = 0;
    int64_t question_len = 0;
    int64_t answer_len = 0;
    int64_t length = 0;
};

SequenceLayout build_layout(const ModelConfig& cfg, const std::vector<int64_t>& question_ids,
                            const std::vector<int64_t>& answer_ids);

class DiffVqaModel {
public:
    DiffVqaModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // [B,1,H,W] -> [B,N,C] token grid in row-major spatial order.
    Tensor encode_image(const Tensor& img) const;
    // Single-sample variant that also hands out the final conv activation
    // [1,C,h,w] so saliency can read its gradients after a backward pass.
    Tensor encode_image_retained(const Tensor& img, Tensor* feature_map) const;
    // [B,N,C] -> [B,N,D]
    Tensor project(const Tensor& tokens) const;
    // Question ids -> [L,D] through the shared embedding table, learned text
    // positions, and the text encoder stack.
    Tensor encode_text(const std::vector<int64_t>& ids) const;

    struct Decoded {
        Tensor logits;   // [T,V]
        Tensor lm_loss;  // scalar
    };
    Decoded decode_teacher_forced(const SequenceLayout& layout) const;

    // Greedy decoding from the <ans> slot until <eos> or max_len tokens.
    // <pad>/<img>/<qtn> are masked out of the argmax.
    std::vector<int64_t> generate(const Tensor& z_main, const Tensor& z_ref,
                                  const std::vector<int64_t>& question_ids, int64_t max_len) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    void zero_grad() const;
    int64_t parameter_count() const;
    Tensor embedding_table() const { return embed_; }

private:
    struct AttnBlock {
        Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        int64_t heads = 1;

        static AttnBlock make(int64_t d, int64_t hidden, int64_t heads, CounterRng& rng);
        Tensor forward(const Tensor& x, bool causal) const;
        void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;
    };

    Tensor decoder_hidden(const Tensor& rows) const;  // causal stack + final norm
    Tensor layout_rows(const SequenceLayout& layout) const;
    Tensor prefix_rows(const Tensor& z_main, const Tensor& z_ref, const std::vector<int64_t>& question_ids,
                       const std::vector<int64_t>& answer_so_far) const;

    ModelConfig cfg_;

    Tensor embed_;    // [V,D], shared text-encoder/decoder table
    Tensor dec_pos_;  // [seq_len,D]
    Tensor txt_pos_;  // [max_question_len,D]

    std::vector<Tensor> enc_w_, enc_b_;

    Tensor proj_lin_w_, proj_lin_b_;
    AttnBlock proj_block_;
    Tensor proj_mlp_w1_, proj_mlp_b1_, proj_mlp_w2_, proj_mlp_b2_;

    std::vector<AttnBlock> text_blocks_;
    std::vector<AttnBlock> dec_blocks_;
    Tensor final_ln_g_, final_ln_b_;
    Tensor lm_head_w_, lm_head_b_;
};

}  // namespace dvqa
