#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/tensor.hpp"

// Character-level text encoder and the four auxiliary heads: text head H_t,
// visual head H_v, image encoder xi (patch-mean + linear), and the
// per-position classification head H_l.

namespace dreamtext {

struct TextEncoderParams {
    // char_emb has alphabet_size + 1 rows; the last row is the reserved pad
    // embedding. Pad positions skip the positional table so every pad row of
    // the output is identical.
    Tensor char_emb;  // [(K+1) x d_emb]
    Tensor pos_emb;   // [n_max x d_emb]
    Tensor w1, b1;    // [d_emb x d_emb], [d_emb]
    Tensor w2, b2;    // [d_emb x d], [d]

    int alphabet_size() const { return char_emb.dim(0) - 1; }
    int n_max() const { return pos_emb.dim(0); }
    int d_out() const { return w2.dim(1); }
};

struct HeadParams {
    Tensor ht_w, ht_b;  // [(n_max * d) x d_align], [d_align]
    Tensor hv_w, hv_b;  // [d_img x d_align], [d_align]
    Tensor xi_w, xi_b;  // [n_patches x d_img], [d_img]
    Tensor hl_w, hl_b;  // [d x K], [K]
    int crop_size = 16;
    int patch = 4;

    int n_patches() const { return xi_w.dim(0); }
    int d_align() const { return ht_w.dim(1); }
};

// y row i = MLP(char_emb[c_i] + pos_emb[i]); pad rows embed only the pad row.
inline Tensor encode_text(const TextEncoderParams& p, const std::vector<int>& text) {
    const int k = p.alphabet_size();
    const int n_max = p.n_max();
    if (static_cast<int>(text.size()) > n_max)
        throw std::invalid_argument("encode_text: text length " + std::to_string(text.size()) +
                                    " exceeds n_max " + std::to_string(n_max));
    std::vector<int> idx(static_cast<std::size_t>(n_max), k);  // pad index
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] < 0 || text[i] >= k)
            throw std::out_of_range("encode_text: character index " + std::to_string(text[i]) +
                                    " outside alphabet of size " + std::to_string(k));
        idx[i] = text[i];
    }
    Tensor e = embed_rows(p.char_emb, idx);

    Tensor row_mask = Tensor::zeros(p.pos_emb.shape());
    for (std::size_t i = 0; i < text.size(); ++i)
        for (int j = 0; j < p.pos_emb.dim(1); ++j) row_mask(static_cast<int>(i), j) = 1.0;
    e = add(e, mul(p.pos_emb, row_mask));

    Tensor h = tanh(add_row_bias(matmul(e, p.w1), p.b1));
    return add_row_bias(matmul(h, p.w2), p.b2);
}

// Patch-mean featurizer: averages non-overlapping patch x patch blocks of the
// grayscale crop. Value-level because the crop is input data, not a variable.
inline Tensor patch_means(const Tensor& crop, int patch) {
    if (crop.rank() != 3 || crop.dim(0) != 1)
        throw std::invalid_argument("patch_means: expected [1 x H x W], got " +
                                    detail::shape_str(crop.shape()));
    const int h = crop.dim(1), w = crop.dim(2);
    if (h % patch != 0 || w % patch != 0)
        throw std::invalid_argument("patch_means: crop " + std::to_string(h) + "x" +
                                    std::to_string(w) + " not divisible by patch " +
                                    std::to_string(patch));
    const int ph = h / patch, pw = w / patch;
    Tensor out = Tensor::zeros({1, ph * pw});
    for (int i = 0; i < ph; ++i)
        for (int j = 0; j < pw; ++j) {
            double s = 0.0;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) s += crop(0, i * patch + y, j * patch + x);
            out(0, i * pw + j) = s / (patch * patch);
        }
    return out;
}

// (t_feat, v_feat) = (H_t(flatten(y)), H_v(xi(I))), both [1 x d_align].
inline std::pair<Tensor, Tensor> align_features(const HeadParams& p, const Tensor& y,
                                                const Tensor& crop) {
    if (crop.rank() != 3 || crop.dim(0) != 1 || crop.dim(1) != p.crop_size ||
        crop.dim(2) != p.crop_size)
        throw std::invalid_argument("align_features: crop shape " +
                                    detail::shape_str(crop.shape()) + " does not match encoder input " +
                                    std::to_string(p.crop_size) + "x" + std::to_string(p.crop_size));
    Tensor y_flat = reshape(y, {1, y.dim(0) * y.dim(1)});
    if (y_flat.dim(1) != p.ht_w.dim(0))
        throw std::invalid_argument("align_features: flattened y width " +
                                    std::to_string(y_flat.dim(1)) + " does not match H_t input " +
                                    std::to_string(p.ht_w.dim(0)));
    Tensor t_feat = add_row_bias(matmul(y_flat, p.ht_w), p.ht_b);
    Tensor pm = patch_means(crop, p.patch);
    Tensor xi = add_row_bias(matmul(pm, p.xi_w), p.xi_b);
    Tensor v_feat = add_row_bias(matmul(xi, p.hv_w), p.hv_b);
    return {t_feat, v_feat};
}

// Per-position class distributions: softmax(y W + b), rows sum to 1.
inline Tensor classify_chars(const HeadParams& p, const Tensor& y) {
    return softmax_rows(add_row_bias(matmul(y, p.hl_w), p.hl_b));
}

}  // namespace dreamtext
