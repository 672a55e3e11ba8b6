#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dreamtext/checkpoint.hpp"
#include "dreamtext/glyphdata.hpp"
#include "dreamtext/maskops.hpp"
#include "dreamtext/model.hpp"

// Evaluation: mean IoU between extracted latent character masks and the exact
// ground-truth masks, plus attention overlays for visual inspection.

namespace dreamtext {

// Mean over active positions of |M_i & S_i| / |M_i | S_i|. A pair that is
// empty on both sides counts as a perfect 1.0.
inline double miou(const LatentCharMasks& m, const Tensor& gt_masks,
                   const std::vector<int>& active) {
    if (active.empty()) throw std::invalid_argument("miou: no active positions");
    if (m.masks.shape() != gt_masks.shape())
        throw std::invalid_argument("miou: mask shape " + detail::shape_str(m.masks.shape()) +
                                    " does not match ground truth " +
                                    detail::shape_str(gt_masks.shape()));
    const int h = m.masks.dim(1), w = m.masks.dim(2);
    double total = 0.0;
    for (int tok : active) {
        long long inter = 0, uni = 0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const bool a = m.masks(tok, i, j) > 0.5;
                const bool b = gt_masks(tok, i, j) > 0.5;
                inter += (a && b) ? 1 : 0;
                uni += (a || b) ? 1 : 0;
            }
        total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / static_cast<double>(active.size());
}

struct EvalResult {
    double mean_miou = 0.0;
    std::vector<double> per_sample;
};

// Evaluation timesteps: 25%, 50%, 75% of T (clamped to at least 1).
inline std::vector<int> eval_timesteps(const NoiseSchedule& schedule) {
    std::vector<int> ts;
    for (int k = 1; k <= 3; ++k)
        ts.push_back(std::max(1, (schedule.steps * k) / 4));
    return ts;
}

// Masks from one sample under the fixed-noise eval protocol: diffuse z0 to
// each eval timestep, average the three layer-averaged attention responses,
// then threshold as in training.
inline LatentCharMasks eval_sample_masks(Model& model, const GlyphSample& sample, int sample_index,
                                         std::uint64_t eval_seed) {
    const std::vector<int> active = sample.active_positions();
    const Tensor y = encode_text(model.enc, sample.text);
    const std::vector<int> ts = eval_timesteps(model.schedule);

    AttentionStack mean_maps;  // one layer-averaged map per eval timestep
    mean_maps.height = model.dims.height;
    mean_maps.width = model.dims.width;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        Rng noise_rng(eval_seed, static_cast<std::uint64_t>(sample_index) * 4 + k);
        Tensor eps = Tensor::randn(sample.image.shape(), noise_rng);
        Tensor z_t = forward_diffuse(sample.image, ts[k], eps, model.schedule);
        auto [eps_hat, stack] = predict_noise(model.den, z_t, ts[k], y, sample.region_mask,
                                              model.schedule);
        mean_maps.maps.push_back(aggregate_attention(stack).detach());
    }
    return latent_char_masks(mean_maps, active, model.dims.mask_sigma);
}

inline EvalResult evaluate_model(Model& model, const std::vector<GlyphSample>& samples,
                                 int eval_count, std::uint64_t eval_seed) {
    EvalResult result;
    const int n = std::min<int>(eval_count, static_cast<int>(samples.size()));
    if (n == 0) throw std::invalid_argument("evaluate_model: no samples to evaluate");
    for (int i = 0; i < n; ++i) {
        const GlyphSample& s = samples[static_cast<std::size_t>(i)];
        const LatentCharMasks masks = eval_sample_masks(model, s, i, eval_seed);
        result.per_sample.push_back(miou(masks, s.char_masks, s.active_positions()));
    }
    double sum = 0.0;
    for (double v : result.per_sample) sum += v;
    result.mean_miou = sum / n;
    return result;
}

inline EvalResult eval_checkpoint(const std::string& checkpoint_path,
                                  const std::string& corpus_dir, int eval_count) {
    RestoredCheckpoint restored = restore_checkpoint(checkpoint_path);
    Corpus corpus = load_corpus(corpus_dir);
    check_corpus_dims(restored.model.dims, corpus.config);
    return evaluate_model(restored.model, corpus.samples, eval_count, restored.config.seed);
}

// Plain (gamma = 0) noise-prediction MSE on a fixed deterministic probe:
// first `count` samples, midpoint timestep, per-sample fixed noise. Gives an
// ablation-comparable reconstruction number independent of the mask weights.
inline double probe_reconstruction_mse(Model& model, const std::vector<GlyphSample>& samples,
                                       int count, std::uint64_t seed) {
    const int n = std::min<int>(count, static_cast<int>(samples.size()));
    if (n == 0) throw std::invalid_argument("probe_reconstruction_mse: no samples");
    const int t = std::max(1, model.schedule.steps / 2);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const GlyphSample& s = samples[static_cast<std::size_t>(i)];
        Rng noise_rng(seed, 0x70726F6265ull + static_cast<std::uint64_t>(i));
        Tensor eps = Tensor::randn(s.image.shape(), noise_rng);
        Tensor z_t = forward_diffuse(s.image, t, eps, model.schedule);
        Tensor y = encode_text(model.enc, s.text);
        auto [eps_hat, stack] = predict_noise(model.den, z_t, t, y, s.region_mask, model.schedule);
        double mse = 0.0;
        for (int e = 0; e < eps.numel(); ++e) {
            const double d = eps.data()[static_cast<std::size_t>(e)] -
                             eps_hat.data()[static_cast<std::size_t>(e)];
            mse += d * d;
        }
        total += mse / eps.numel();
    }
    return total / n;
}

// Per-token heatmaps alpha-blended in red over the grayscale sample, tokens
// tiled horizontally, written as binary PPM. Deterministic bytes.
inline void render_attention_overlay(const GlyphSample& sample, const Tensor& maps,
                                     const std::string& path) {
    if (maps.rank() != 3)
        throw std::invalid_argument("render_attention_overlay: maps must be [N x H x W], got " +
                                    detail::shape_str(maps.shape()));
    const int n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    const Tensor gray = grayscale(sample.image);
    std::vector<unsigned char> rgb(static_cast<std::size_t>(3) * n * w * h, 0);
    for (int tok = 0; tok < n; ++tok)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double g01 = (gray(0, y, x) + 1.0) / 2.0;
                const double base = 255.0 * std::min(1.0, std::max(0.0, g01));
                double heat = maps(tok, y, x);
                heat = std::min(1.0, std::max(0.0, heat));
                const double r = base + heat * (255.0 - base);
                const double gb = base * (1.0 - heat);
                const std::size_t px =
                    (static_cast<std::size_t>(y) * n * w + static_cast<std::size_t>(tok) * w + x) *
                    3;
                rgb[px + 0] = static_cast<unsigned char>(std::lround(r));
                rgb[px + 1] = static_cast<unsigned char>(std::lround(gb));
                rgb[px + 2] = static_cast<unsigned char>(std::lround(gb));
            }
    write_ppm(path, n * w, h, rgb);
}

}  // namespace dreamtext
