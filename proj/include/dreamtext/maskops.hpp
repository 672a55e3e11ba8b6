#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/denoiser.hpp"
#include "dreamtext/tensor.hpp"

// Attention-map-to-mask pipeline: layer averaging, Gaussian low-pass, and the
// mean + 2*std threshold. Mask extraction is the discrete half of the
// alternate optimization, so latent_char_masks is deliberately cut off from
// the tape: it reads values and emits constant tensors.
//
// Summation orders are part of the contract (tests compare against scalar
// references bit for bit): layers accumulate in index order and divide by the
// layer count; blur runs a horizontal then a vertical pass with kernel taps
// accumulated in ascending offset order; the threshold uses the two-pass
// population variance, both passes in index order.

namespace dreamtext {

struct LatentCharMasks {
    Tensor masks;  // [n_max x H x W], entries in {0, 1}, constant
    std::vector<int> active_tokens;
};

// Mean response over layers; differentiable so the warm-up objective can
// supervise it directly.
inline Tensor aggregate_attention(const AttentionStack& stack) {
    if (stack.maps.empty())
        throw std::invalid_argument("aggregate_attention: empty attention stack");
    const Shape shape = stack.maps.front().shape();
    for (const Tensor& m : stack.maps)
        if (m.shape() != shape)
            throw std::invalid_argument("aggregate_attention: mixed map resolutions: " +
                                        detail::shape_str(shape) + " vs " +
                                        detail::shape_str(m.shape()));
    const int layers = stack.layer_count();
    Tensor out = Tensor::zeros(shape);
    for (const Tensor& m : stack.maps)
        for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += m.data()[i];
    for (double& v : out.data()) v /= layers;

    bool any = false;
    for (const Tensor& m : stack.maps) any = any || detail::participates(m);
    if (any) {
        std::vector<detail::NodePtr> nodes;
        std::vector<bool> wants;
        for (const Tensor& m : stack.maps) {
            nodes.push_back(m.node());
            wants.push_back(detail::participates(m));
        }
        auto on = out.node();
        detail::mark_and_record(out, [nodes, wants, on, layers] {
            if (on->grad.empty()) return;
            for (std::size_t l = 0; l < nodes.size(); ++l) {
                if (!wants[l]) continue;
                detail::ensure_grad(*nodes[l]);
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    nodes[l]->grad[i] += on->grad[i] / layers;
            }
        });
    }
    return out;
}

namespace detail_mask {

// Symmetric reflection (edge repeated), folded until in range.
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (double& w : k) w /= total;
    return k;
}

}  // namespace detail_mask

// Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding.
// Normalization preserves total mass: sum(output) == sum(input) up to
// rounding. Value-level: never recorded on a tape.
inline Tensor gaussian_blur(const Tensor& x, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
    if (x.rank() != 2)
        throw std::invalid_argument("gaussian_blur: expected [H x W], got " +
                                    detail::shape_str(x.shape()));
    const int h = x.dim(0), w = x.dim(1);
    const std::vector<double> kernel = detail_mask::gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);

    Tensor tmp = Tensor::zeros({h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int o = -radius; o <= radius; ++o)
                acc += kernel[static_cast<std::size_t>(o + radius)] *
                       x(i, detail_mask::reflect_index(j + o, w));
            tmp(i, j) = acc;
        }
    Tensor out = Tensor::zeros({h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int o = -radius; o <= radius; ++o)
                acc += kernel[static_cast<std::size_t>(o + radius)] *
                       tmp(detail_mask::reflect_index(i + o, h), j);
            out(i, j) = acc;
        }
    return out;
}

// Binary threshold at mean(X) + 2*std(X), strict inequality, population std.
inline Tensor threshold_mask(const Tensor& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("threshold_mask: expected [H x W], got " +
                                    detail::shape_str(x.shape()));
    const std::vector<double>& d = x.data();
    const double n = static_cast<double>(d.size());
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    var /= n;
    const double cut = mean + 2.0 * std::sqrt(var);
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < d.size(); ++i) out.data()[i] = d[i] > cut ? 1.0 : 0.0;
    return out;
}

// M_i = threshold(blur(mean-over-layers A_i)) per active token; pad slices
// stay zero. No gradients flow through this: masks are re-estimated, not
// optimized.
inline LatentCharMasks latent_char_masks(const AttentionStack& stack,
                                         const std::vector<int>& active_tokens, double sigma) {
    if (stack.maps.empty())
        throw std::invalid_argument("latent_char_masks: empty attention stack");
    const Shape shape = stack.maps.front().shape();
    for (const Tensor& m : stack.maps)
        if (m.shape() != shape)
            throw std::invalid_argument("latent_char_masks: mixed map resolutions");
    const int n_max = shape[0], h = shape[1], w = shape[2];
    for (int tok : active_tokens)
        if (tok < 0 || tok >= n_max)
            throw std::out_of_range("latent_char_masks: token " + std::to_string(tok) +
                                    " outside [0, " + std::to_string(n_max) + ")");

    const int layers = stack.layer_count();
    LatentCharMasks result;
    result.active_tokens = active_tokens;
    result.masks = Tensor::zeros(shape);
    for (int tok : active_tokens) {
        Tensor abar = Tensor::zeros({h, w});
        for (const Tensor& m : stack.maps)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) abar(i, j) += m(tok, i, j);
        for (double& v : abar.data()) v /= layers;
        const Tensor mask = threshold_mask(gaussian_blur(abar, sigma));
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) result.masks(tok, i, j) = mask(i, j);
    }
    return result;
}

// Elementwise OR over the active slices.
inline Tensor union_masks(const LatentCharMasks& m) {
    const int h = m.masks.dim(1), w = m.masks.dim(2);
    Tensor out = Tensor::zeros({h, w});
    for (int tok : m.active_tokens)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                if (m.masks(tok, i, j) == 1.0) out(i, j) = 1.0;
    return out;
}

}  // namespace dreamtext
