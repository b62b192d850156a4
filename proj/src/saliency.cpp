#include "dvqa/saliency.hpp"

#include <algorithm>
#include <atomic>

#include "dvqa/error.hpp"
#include "dvqa/kernels.hpp"

namespace dvqa {

namespace {

std::atomic<int64_t> g_gradcam_calls{0};

struct GradEnableGuard {
    bool prev;
    GradEnableGuard() : prev(grad_enabled()) { set_grad_enabled(true); }
    ~GradEnableGuard() { set_grad_enabled(prev); }
};

SaliencyMap all_ones(int64_t H, int64_t W, MapSource source) {
    return {Tensor::ones({H, W}), source};
}

}  // namespace

CamTarget CamTarget::from_answer(const std::vector<int64_t>& keyword_ids,
                                 const std::vector<int64_t>& answer_ids) {
    CamTarget t;
    t.keyword_ids = keyword_ids;
    t.answer_ids = answer_ids;
    for (size_t p = 0; p < answer_ids.size(); ++p) {
        for (int64_t k : keyword_ids) {
            if (answer_ids[p] == k) {
                t.positions.push_back(static_cast<int64_t>(p));
                break;
            }
        }
    }
    return t;
}

void CamTarget::validate() const {
    if (keyword_ids.empty()) throw ValueError("cam target: no keyword tokens");
    if (answer_ids.empty()) throw ValueError("cam target: empty answer");
    if (positions.empty()) throw ValueError("cam target: keyword does not occur in the answer");
    for (int64_t p : positions) {
        if (p < 0 || p >= static_cast<int64_t>(answer_ids.size()))
            throw ValueError("cam target: keyword position out of range");
        bool hit = false;
        for (int64_t k : keyword_ids) hit |= (answer_ids[static_cast<size_t>(p)] == k);
        if (!hit) throw ValueError("cam target: position does not hold a keyword token");
    }
}

Tensor upsample_bilinear(const Tensor& map, int64_t H, int64_t W) {
    if (map.ndim() != 2) throw ShapeError("upsample: expected [h,w], got " + shape_str(map.shape()));
    if (H < 2 || W < 2) throw ShapeError("upsample: target extents must be at least 2");
    int64_t h = map.dim(0), w = map.dim(1);
    const double* src = map.data();
    std::vector<double> out(static_cast<size_t>(H * W));
    for (int64_t i = 0; i < H; ++i) {
        double py = kernels::unnormalize_coord(kernels::lattice_coord(i, H), h);
        int64_t y0 = static_cast<int64_t>(py);
        double fy = py - static_cast<double>(y0);
        int64_t y1 = std::min(y0 + 1, h - 1);
        for (int64_t j = 0; j < W; ++j) {
            double px = kernels::unnormalize_coord(kernels::lattice_coord(j, W), w);
            int64_t x0 = static_cast<int64_t>(px);
            double fx = px - static_cast<double>(x0);
            int64_t x1 = std::min(x0 + 1, w - 1);
            double top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
            double bot = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
            out[static_cast<size_t>(i * W + j)] = (1.0 - fy) * top + fy * bot;
        }
    }
    return Tensor::from_vector({H, W}, std::move(out));
}

SaliencyMap cam_from_activations(const Tensor& fmap, const std::vector<double>& dfmap,
                                 int64_t H, int64_t W, MapSource source) {
    Shape s = fmap.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    if (s.size() != 3) throw ShapeError("gradcam: feature map must be [C,h,w]");
    int64_t c = s[0], h = s[1], w = s[2];
    if (static_cast<int64_t>(dfmap.size()) != c * h * w)
        throw ShapeError("gradcam: gradient size does not match the feature map");

    NoGradGuard ng;
    const double* a = fmap.data();
    int64_t hw = h * w;
    std::vector<double> raw(static_cast<size_t>(hw), 0.0);
    for (int64_t k = 0; k < c; ++k) {
        double alpha = 0.0;
        for (int64_t p = 0; p < hw; ++p) alpha += dfmap[static_cast<size_t>(k * hw + p)];
        alpha /= static_cast<double>(hw);
        for (int64_t p = 0; p < hw; ++p) raw[static_cast<size_t>(p)] += alpha * a[k * hw + p];
    }
    for (double& v : raw) v = std::max(v, 0.0);

    Tensor up = upsample_bilinear(Tensor::from_vector({h, w}, std::move(raw)), H, W);
    double mx = 0.0;
    for (int64_t i = 0; i < up.numel(); ++i) mx = std::max(mx, up.data()[i]);
    if (mx <= 0.0) return all_ones(H, W, source);
    for (int64_t i = 0; i < up.numel(); ++i) up.data()[i] /= mx;
    return {up, source};
}

std::pair<SaliencyMap, SaliencyMap> gradcam_pair(const DiffVqaModel& model, const Tensor& main,
                                                 const Tensor& ref,
                                                 const std::vector<int64_t>& question_ids,
                                                 const CamTarget& target) {
    g_gradcam_calls.fetch_add(1, std::memory_order_relaxed);
    target.validate();
    const ModelConfig& cfg = model.config();

    GradEnableGuard grad_on;
    Tensor fmap_main, fmap_ref;
    Tensor z_main = model.project(model.encode_image_retained(main, &fmap_main));
    Tensor z_ref = model.project(model.encode_image_retained(ref, &fmap_ref));

    SequenceLayout lt = build_layout(cfg, question_ids, target.answer_ids);
    lt.z_main = reshape(z_main, {cfg.num_tokens(), cfg.embed_dim});
    lt.z_ref = reshape(z_ref, {cfg.num_tokens(), cfg.embed_dim});

    // Score only the keyword rows: answer position p is predicted at row
    // ans_pos + p, so the masked mean cross entropy times -count equals the
    // summed keyword log-probability.
    std::fill(lt.targets.begin(), lt.targets.end(), Vocabulary::kPad);
    std::fill(lt.loss_mask.begin(), lt.loss_mask.end(), 0);
    for (int64_t p : target.positions) {
        int64_t row = lt.ans_pos + p;
        lt.targets[static_cast<size_t>(row)] = target.answer_ids[static_cast<size_t>(p)];
        lt.loss_mask[static_cast<size_t>(row)] = 1;
    }

    auto dec = model.decode_teacher_forced(lt);
    Tensor y_c = scale(dec.lm_loss, -static_cast<double>(target.positions.size()));
    y_c.backward();

    if (!fmap_main.has_grad() || !fmap_ref.has_grad())
        throw ValueError("gradcam: feature maps received no gradient");
    int64_t H = main.dim(2), W = main.dim(3);
    SaliencyMap s_main = cam_from_activations(fmap_main, fmap_main.grad(), H, W, MapSource::kMain);
    SaliencyMap s_ref = cam_from_activations(fmap_ref, fmap_ref.grad(), H, W, MapSource::kRef);

    // The probe is read-only with respect to the parameters.
    model.zero_grad();
    return {s_main, s_ref};
}

SaliencyMap gradcam(const DiffVqaModel& model, const Tensor& main, const Tensor& ref,
                    const std::vector<int64_t>& question_ids, const CamTarget& target,
                    MapSource which) {
    if (which == MapSource::kShared) throw ValueError("gradcam: pick the main or ref branch");
    auto pair = gradcam_pair(model, main, ref, question_ids, target);
    return which == MapSource::kMain ? pair.first : pair.second;
}

SaliencyMap shared_mask(const SaliencyMap& s_main, const SaliencyMap& s_ref) {
    if (s_main.values.shape() != s_ref.values.shape())
        throw ShapeError("shared_mask: map shapes differ");
    NoGradGuard ng;
    int64_t n = s_main.values.numel();
    const double* a = s_main.values.data();
    const double* b = s_ref.values.data();
    std::vector<double> fused(static_cast<size_t>(n));
    double lo = 1e300, hi = -1e300;
    for (int64_t i = 0; i < n; ++i) {
        fused[static_cast<size_t>(i)] = std::max(a[i], b[i]);
        lo = std::min(lo, fused[static_cast<size_t>(i)]);
        hi = std::max(hi, fused[static_cast<size_t>(i)]);
    }
    if (hi <= lo) {
        Shape s = s_main.values.shape();
        return all_ones(s[0], s[1], MapSource::kShared);
    }
    for (double& v : fused) v = (v - lo) / (hi - lo);
    return {Tensor::from_vector(s_main.values.shape(), std::move(fused)), MapSource::kShared};
}

Tensor apply_mask(const Tensor& img, const SaliencyMap& s) {
    if (img.ndim() < 2) throw ShapeError("apply_mask: image must end in [H,W]");
    int64_t H = s.values.dim(0), W = s.values.dim(1);
    if (img.dim(img.ndim() - 2) != H || img.dim(img.ndim() - 1) != W)
        throw ShapeError("apply_mask: spatial shapes differ");
    int64_t planes = img.numel() / (H * W);
    std::vector<double> tiled(static_cast<size_t>(img.numel()));
    const double* m = s.values.data();
    for (int64_t p = 0; p < planes; ++p)
        std::copy(m, m + H * W, tiled.begin() + p * H * W);
    Tensor mask = Tensor::from_vector(img.shape(), std::move(tiled));
    return mul(img, mask);
}

int64_t gradcam_call_count() { return g_gradcam_calls.load(std::memory_order_relaxed); }
void reset_gradcam_call_count() { g_gradcam_calls.store(0, std::memory_order_relaxed); }

}  // namespace dvqa
