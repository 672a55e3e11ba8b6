#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/maskops.hpp"
#include "dreamtext/tensor.hpp"

// The training objectives. Latent character masks enter every loss as
// constants; gradients reach the model only through predictions, attention
// weights, and text embeddings. All reductions are means so loss scales are
// independent of resolution and batch size.

namespace dreamtext {

struct LossWeights {
    double alpha = 0.01;
    double beta = 0.001;
    double gamma = 1.0;
    double warmup_weight = 1.0;
};

struct LossReport {
    double l_mask = 0, l_attn = 0, l_align = 0, l_id = 0, l_warmup = 0;
    double total = 0;
};

// mean((1 + gamma * M_k) * (eps - eps_hat))^2, M_k broadcast over channels.
// gamma = 0 reduces to the plain diffusion MSE.
inline Tensor masked_diffusion_loss(const Tensor& eps, const Tensor& eps_hat,
                                    const Tensor& union_mask, double gamma) {
    if (eps.shape() != eps_hat.shape())
        throw std::invalid_argument("masked_diffusion_loss: prediction shape " +
                                    detail::shape_str(eps_hat.shape()) + " does not match noise " +
                                    detail::shape_str(eps.shape()));
    if (eps.rank() != 3 || union_mask.rank() != 2 || union_mask.dim(0) != eps.dim(1) ||
        union_mask.dim(1) != eps.dim(2))
        throw std::invalid_argument("masked_diffusion_loss: mask " +
                                    detail::shape_str(union_mask.shape()) + " does not match noise " +
                                    detail::shape_str(eps.shape()));
    const int c = eps.dim(0), h = eps.dim(1), w = eps.dim(2);
    Tensor weight = Tensor::zeros(eps.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) weight(ch, i, j) = 1.0 + gamma * union_mask(i, j);
    Tensor wd = mul(sub(eps, eps_hat), weight);
    return mean(mul(wd, wd));
}

// mean over active tokens, layers, and pixels of (A_l,i - M_i)^2. M constant.
inline Tensor attention_loss(const AttentionStack& stack, const LatentCharMasks& m) {
    if (m.active_tokens.empty())
        throw std::invalid_argument("attention_loss: no active tokens");
    if (stack.maps.empty()) throw std::invalid_argument("attention_loss: empty attention stack");
    const Shape shape = stack.maps.front().shape();
    if (m.masks.shape() != shape)
        throw std::invalid_argument("attention_loss: mask shape " +
                                    detail::shape_str(m.masks.shape()) +
                                    " does not match attention maps " + detail::shape_str(shape));
    const int n_max = shape[0], hw = shape[1] * shape[2];
    const int layers = stack.layer_count();
    const double norm =
        1.0 / (static_cast<double>(layers) * static_cast<double>(m.active_tokens.size()) * hw);
    Tensor row_weight = Tensor::zeros({n_max, hw});
    for (int tok : m.active_tokens)
        for (int p = 0; p < hw; ++p) row_weight(tok, p) = norm;
    Tensor mask_flat = reshape(m.masks.detach(), {n_max, hw});

    Tensor acc = Tensor::scalar(0.0);
    for (const Tensor& map : stack.maps) {
        Tensor diff = sub(reshape(map, {n_max, hw}), mask_flat);
        acc = add(acc, sum(mul(mul(diff, diff), row_weight)));
    }
    return acc;
}

// 1 - cos(t_feat, v_feat); zero-norm inputs degrade to a constant loss of 1.
inline Tensor align_loss(const Tensor& t_feat, const Tensor& v_feat) {
    if (t_feat.numel() != v_feat.numel())
        throw std::invalid_argument("align_loss: feature sizes disagree: " +
                                    detail::shape_str(t_feat.shape()) + " vs " +
                                    detail::shape_str(v_feat.shape()));
    double nt = 0.0, nv = 0.0;
    for (double v : t_feat.data()) nt += v * v;
    for (double v : v_feat.data()) nv += v * v;
    if (nt == 0.0 || nv == 0.0) return Tensor::scalar(1.0);

    Tensor tf = reshape(t_feat, {t_feat.numel()});
    Tensor vf = reshape(v_feat, {v_feat.numel()});
    Tensor cos = div(dot(tf, vf), mul(sqrt(dot(tf, tf)), sqrt(dot(vf, vf))));
    return scale_add(cos, -1.0, 1.0);
}

// Mean over active positions of -log p(true class).
inline Tensor id_loss(const Tensor& probs, const std::vector<int>& labels,
                      const std::vector<int>& active) {
    if (active.empty()) throw std::invalid_argument("id_loss: no active positions");
    const int n_max = probs.dim(0), k = probs.dim(1);
    std::vector<int> flat;
    flat.reserve(active.size());
    for (int pos : active) {
        if (pos < 0 || pos >= n_max)
            throw std::out_of_range("id_loss: position " + std::to_string(pos) + " outside [0, " +
                                    std::to_string(n_max) + ")");
        const int label = labels.at(static_cast<std::size_t>(pos));
        if (label < 0 || label >= k)
            throw std::out_of_range("id_loss: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(k) + ")");
        flat.push_back(pos * k + label);
    }
    Tensor picked = gather_elements(probs, flat);
    return scale_add(sum(log(picked)), -1.0 / static_cast<double>(active.size()), 0.0);
}

// Per-pixel binary cross-entropy between the clamped layer-averaged attention
// and the ground-truth character masks, over active tokens. This is the
// warm-up guidance: it supervises the soft pre-threshold attention, the only
// place the mask pipeline admits a gradient.
inline Tensor warmup_mask_loss(const Tensor& abar, const Tensor& gt_masks,
                               const std::vector<int>& active) {
    if (active.empty()) throw std::invalid_argument("warmup_mask_loss: no active positions");
    if (abar.shape() != gt_masks.shape())
        throw std::invalid_argument("warmup_mask_loss: attention " +
                                    detail::shape_str(abar.shape()) + " does not match GT masks " +
                                    detail::shape_str(gt_masks.shape()));
    const int n_max = abar.dim(0), hw = abar.dim(1) * abar.dim(2);
    const double norm = -1.0 / (static_cast<double>(active.size()) * hw);
    Tensor row_weight = Tensor::zeros({n_max, hw});
    for (int tok : active)
        for (int p = 0; p < hw; ++p) row_weight(tok, p) = norm;

    Tensor s = reshape(gt_masks.detach(), {n_max, hw});
    Tensor one_minus_s = scale_add(s, -1.0, 1.0);
    Tensor a = clamp(reshape(abar, {n_max, hw}), 1e-6, 1.0 - 1e-6);
    Tensor bce = add(mul(log(a), s), mul(log(scale_add(a, -1.0, 1.0)), one_minus_s));
    return sum(mul(bce, row_weight));
}

// Differentiable Eq.-style combination; the value-level LossReport below must
// agree with this graph bit for bit, so both use the same expression order.
inline Tensor weighted_total(const Tensor& l_mask, const Tensor& l_attn, const Tensor& l_align,
                             const Tensor& l_id, const Tensor* l_warmup, const LossWeights& w) {
    Tensor total = add(l_mask, scale_add(l_attn, w.alpha, 0.0));
    total = add(total, scale_add(add(l_align, l_id), w.beta, 0.0));
    if (l_warmup) total = add(total, scale_add(*l_warmup, w.warmup_weight, 0.0));
    return total;
}

inline LossReport total_loss(double l_mask, double l_attn, double l_align, double l_id,
                             double l_warmup, const LossWeights& w, bool in_warmup) {
    const struct {
        const char* name;
        double v;
    } parts[] = {{"l_mask", l_mask},
                 {"l_attn", l_attn},
                 {"l_align", l_align},
                 {"l_id", l_id},
                 {"l_warmup", in_warmup ? l_warmup : 0.0}};
    for (const auto& p : parts)
        if (!std::isfinite(p.v))
            throw std::runtime_error(std::string("total_loss: ") + p.name + " is non-finite");

    LossReport r;
    r.l_mask = l_mask;
    r.l_attn = l_attn;
    r.l_align = l_align;
    r.l_id = l_id;
    r.l_warmup = in_warmup ? l_warmup : 0.0;
    r.total = l_mask + w.alpha * l_attn;
    r.total = r.total + w.beta * (l_align + l_id);
    if (in_warmup) r.total = r.total + w.warmup_weight * r.l_warmup;
    if (!std::isfinite(r.total)) throw std::runtime_error("total_loss: total is non-finite");
    return r;
}

}  // namespace dreamtext
