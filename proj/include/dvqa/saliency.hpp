#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dvqa/model.hpp"
#include "dvqa/tensor.hpp"

namespace dvqa {

enum class MapSource { kMain, kRef, kShared };

// Spatial saliency map at image resolution, values in [0,1], detached from
// any autodiff tape.
struct SaliencyMap {
    Tensor values;  // [H,W]
    MapSource source = MapSource::kShared;
};

// Explanation target: the keyword token(s) and where they sit in the
// teacher-forced answer.
struct CamTarget {
    std::vector<int64_t> keyword_ids;
    std::vector<int64_t> answer_ids;
    std::vector<int64_t> positions;  // indices into answer_ids

    // Marks every answer position holding one of the keyword tokens. The
    // result may have empty positions when the keyword never occurs; gradcam
    // rejects such targets, callers decide how to fall back.
    static CamTarget from_answer(const std::vector<int64_t>& keyword_ids,
                                 const std::vector<int64_t>& answer_ids);
    bool usable() const { return !positions.empty(); }
    void validate() const;
};

// Align-corners bilinear resize of a [h,w] map to [H,W].
Tensor upsample_bilinear(const Tensor& map, int64_t H, int64_t W);

// Grad-CAM arithmetic alone: channel weights are spatial means of dfmap,
// the weighted activation sum is rectified, upsampled to H x W, and scaled
// by its max. A map with zero max fails open to all ones.
SaliencyMap cam_from_activations(const Tensor& fmap, const std::vector<double>& dfmap,
                                 int64_t H, int64_t W, MapSource source);

// Keyword-conditioned Grad-CAM on both image branches with one teacher-forced
// forward/backward. The target scalar is the summed log-probability of the
// keyword tokens at their answer positions. Parameter gradients accumulated
// by this probe are cleared before returning; it never updates the model.
std::pair<SaliencyMap, SaliencyMap> gradcam_pair(const DiffVqaModel& model, const Tensor& main,
                                                 const Tensor& ref,
                                                 const std::vector<int64_t>& question_ids,
                                                 const CamTarget& target);

SaliencyMap gradcam(const DiffVqaModel& model, const Tensor& main, const Tensor& ref,
                    const std::vector<int64_t>& question_ids, const CamTarget& target,
                    MapSource which);

// Elementwise maximum of the two maps followed by min-max normalization.
// A constant fused map fails open to all ones.
SaliencyMap shared_mask(const SaliencyMap& s_main, const SaliencyMap& s_ref);

// Multiplies every channel of img by the mask. The mask enters as a constant,
// so no gradient flows back into the saliency computation.
Tensor apply_mask(const Tensor& img, const SaliencyMap& s);

// Probe counter for schedule contracts (a warm-up epoch must not call gradcam).
int64_t gradcam_call_count();
void reset_gradcam_call_count();

}  // namespace dvqa
