#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dreamtext/tensor.hpp"

// The generator: a small noise-prediction network whose spatial mixing is a
// per-pixel MLP plus one fixed 3x3 smoothing pass, with L cross-attention
// blocks that all run at full resolution and expose their attention maps.

namespace dreamtext {

struct NoiseSchedule {
    int steps = 0;                   // T
    std::vector<double> betas;       // beta_1..beta_T, increasing in (0, 1)
    std::vector<double> alpha_bars;  // alpha_bar_0..alpha_bar_T, alpha_bar_0 = 1

    static NoiseSchedule linear(int steps, double beta_min = 1e-4, double beta_max = 0.02) {
        if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
        if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
            throw std::invalid_argument("noise schedule betas must satisfy 0 < min <= max < 1");
        NoiseSchedule s;
        s.steps = steps;
        s.betas.resize(static_cast<std::size_t>(steps));
        s.alpha_bars.resize(static_cast<std::size_t>(steps) + 1);
        s.alpha_bars[0] = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double beta =
                steps == 1 ? beta_min
                           : beta_min + (beta_max - beta_min) * (t - 1) / static_cast<double>(steps - 1);
            s.betas[static_cast<std::size_t>(t - 1)] = beta;
            s.alpha_bars[static_cast<std::size_t>(t)] =
                s.alpha_bars[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
        }
        return s;
    }

    double alpha_bar(int t) const {
        if (t < 0 || t > steps)
            throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                                    std::to_string(steps) + "]");
        return alpha_bars[static_cast<std::size_t>(t)];
    }
};

// q(z_t | z_0) = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; t = 0 returns z0.
inline Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps,
                              const NoiseSchedule& schedule) {
    if (eps.shape() != z0.shape())
        throw std::invalid_argument("forward_diffuse: noise shape " +
                                    detail::shape_str(eps.shape()) + " does not match z0 " +
                                    detail::shape_str(z0.shape()));
    const double abar = schedule.alpha_bar(t);
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Tensor out = Tensor::zeros(z0.shape());
    for (std::size_t i = 0; i < out.data().size(); ++i)
        out.data()[i] = a * z0.data()[i] + b * eps.data()[i];
    return out;
}

struct DenoiserLayerParams {
    Tensor w_self, b_self;  // [width x width], [width]
    Tensor w_q;             // [width x d]
    Tensor w_k;             // [d_text x d]
    Tensor w_v;             // [d_text x width]
    Tensor w_out, b_out;    // [width x width], [width]
    Tensor temb;            // [(T+1) x width], row t added to features
};

struct DenoiserParams {
    Tensor w_in, b_in;      // [(C+1) x width], [width]
    Tensor w_outp, b_outp;  // [width x C], [C]
    std::vector<DenoiserLayerParams> layers;

    int width() const { return w_in.dim(1); }
    int channels() const { return w_outp.dim(1); }
    int attn_dim() const { return layers.at(0).w_q.dim(1); }
    int layer_count() const { return static_cast<int>(layers.size()); }
};

// Per-layer cross-attention maps from one forward pass, token-major
// [n_max x H x W]; each pixel's distribution over tokens sums to 1.
struct AttentionStack {
    std::vector<Tensor> maps;
    int height = 0;
    int width = 0;

    int layer_count() const { return static_cast<int>(maps.size()); }
};

// One cross-attention block: Q from pixel features, K/V from text embeddings,
// per-pixel softmax over tokens. Returns the projected attention output
// (before the residual add) and the map reshaped token-major.
inline std::pair<Tensor, Tensor> cross_attention(const DenoiserLayerParams& layer,
                                                 const Tensor& z_feat, const Tensor& y, int h,
                                                 int w) {
    if (z_feat.dim(0) != h * w)
        throw std::invalid_argument("cross_attention: feature rows " +
                                    std::to_string(z_feat.dim(0)) + " do not cover " +
                                    std::to_string(h) + "x" + std::to_string(w));
    if (y.dim(1) != layer.w_k.dim(0))
        throw std::invalid_argument("cross_attention: text dim " + std::to_string(y.dim(1)) +
                                    " does not match W_k " + detail::shape_str(layer.w_k.shape()));
    const int d = layer.w_q.dim(1);
    Tensor q = matmul(z_feat, layer.w_q);                                  // [HW x d]
    Tensor k = matmul(y, layer.w_k);                                       // [N x d]
    Tensor v = matmul(y, layer.w_v);                                       // [N x width]
    Tensor logits = scale_add(matmul(q, transpose(k)), 1.0 / std::sqrt(d), 0.0);
    Tensor attn = softmax_rows(logits);                                    // [HW x N]
    Tensor map = reshape(transpose(attn), {y.dim(0), h, w});               // token-major
    Tensor out = add_row_bias(matmul(matmul(attn, v), layer.w_out), layer.b_out);
    return {out, map};
}

// eps_hat = denoiser(z_t, t, y, B); B enters as an extra input channel, the
// timestep as a learned per-layer embedding row. Every layer contributes one
// attention map at full resolution.
inline std::pair<Tensor, AttentionStack> predict_noise(const DenoiserParams& p, const Tensor& z_t,
                                                       int t, const Tensor& y,
                                                       const Tensor& region_mask,
                                                       const NoiseSchedule& schedule) {
    if (t < 0 || t > schedule.steps)
        throw std::out_of_range("predict_noise: timestep " + std::to_string(t) + " outside [0, " +
                                std::to_string(schedule.steps) + "]");
    if (z_t.rank() != 3)
        throw std::invalid_argument("predict_noise: z_t must be [C x H x W], got " +
                                    detail::shape_str(z_t.shape()));
    if (region_mask.rank() != 3 || region_mask.dim(0) != 1 || region_mask.dim(1) != z_t.dim(1) ||
        region_mask.dim(2) != z_t.dim(2))
        throw std::invalid_argument("predict_noise: region mask " +
                                    detail::shape_str(region_mask.shape()) + " does not match z_t " +
                                    detail::shape_str(z_t.shape()));
    const int c = z_t.dim(0), h = z_t.dim(1), w = z_t.dim(2), hw = h * w;

    Tensor zmat = transpose(reshape(z_t, {c, hw}));                 // [HW x C]
    Tensor bmat = transpose(reshape(region_mask, {1, hw}));         // [HW x 1]
    Tensor x = concat_cols(zmat, bmat);                             // [HW x C+1]
    Tensor feat = smooth3x3(tanh(add_row_bias(matmul(x, p.w_in), p.b_in)), h, w);

    // One smoothing pass per mixing stage: after L blocks the receptive field
    // reaches (2L+3)^2, enough to cover a whole glyph, which per-pixel mixing
    // alone never achieves.
    AttentionStack stack;
    stack.height = h;
    stack.width = w;
    for (const DenoiserLayerParams& layer : p.layers) {
        Tensor trow = reshape(embed_rows(layer.temb, {t}), {p.width()});
        feat = smooth3x3(add_row_bias(feat, trow), h, w);
        Tensor mixed = tanh(add_row_bias(matmul(feat, layer.w_self), layer.b_self));
        auto [attn_out, map] = cross_attention(layer, mixed, y, h, w);
        stack.maps.push_back(map);
        feat = add(feat, attn_out);  // residual
    }

    Tensor eps = reshape(transpose(add_row_bias(matmul(feat, p.w_outp), p.b_outp)), {c, h, w});
    return {eps, stack};
}

}  // namespace dreamtext
