#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dreamtext/config.hpp"
#include "dreamtext/denoiser.hpp"
#include "dreamtext/glyphdata.hpp"
#include "dreamtext/textenc.hpp"

// The full parameter bundle: text encoder, heads, denoiser, and the noise
// schedule. Parameter enumeration order is fixed (init, Adam state, and
// checkpoints all depend on it).

namespace dreamtext {

struct Model {
    ModelDims dims;
    NoiseSchedule schedule;
    TextEncoderParams enc;
    HeadParams heads;
    DenoiserParams den;

    template <class Fn>
    void for_each_param(Fn fn) {
        fn("enc.char_emb", enc.char_emb);
        fn("enc.pos_emb", enc.pos_emb);
        fn("enc.w1", enc.w1);
        fn("enc.b1", enc.b1);
        fn("enc.w2", enc.w2);
        fn("enc.b2", enc.b2);
        fn("heads.ht_w", heads.ht_w);
        fn("heads.ht_b", heads.ht_b);
        fn("heads.hv_w", heads.hv_w);
        fn("heads.hv_b", heads.hv_b);
        fn("heads.xi_w", heads.xi_w);
        fn("heads.xi_b", heads.xi_b);
        fn("heads.hl_w", heads.hl_w);
        fn("heads.hl_b", heads.hl_b);
        fn("den.w_in", den.w_in);
        fn("den.b_in", den.b_in);
        for (std::size_t l = 0; l < den.layers.size(); ++l) {
            const std::string prefix = "den.layer" + std::to_string(l) + ".";
            DenoiserLayerParams& lp = den.layers[l];
            fn(prefix + "w_self", lp.w_self);
            fn(prefix + "b_self", lp.b_self);
            fn(prefix + "w_q", lp.w_q);
            fn(prefix + "w_k", lp.w_k);
            fn(prefix + "w_v", lp.w_v);
            fn(prefix + "w_out", lp.w_out);
            fn(prefix + "b_out", lp.b_out);
            fn(prefix + "temb", lp.temb);
        }
        fn("den.w_outp", den.w_outp);
        fn("den.b_outp", den.b_outp);
    }

    std::vector<Tensor> params() {
        std::vector<Tensor> out;
        for_each_param([&](const std::string&, Tensor& t) { out.push_back(t); });
        return out;
    }

    std::vector<std::string> param_names() {
        std::vector<std::string> out;
        for_each_param([&](const std::string& name, Tensor&) { out.push_back(name); });
        return out;
    }

    void zero_grad() {
        for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
    }
};

namespace detail_model {

inline Tensor init_matrix(const Shape& shape, Rng& rng) {
    const int fan_in = shape[0];
    return Tensor::randn(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace detail_model

inline Model init_model(const ModelDims& dims, std::uint64_t seed) {
    if (dims.crop_size % dims.patch != 0)
        throw std::invalid_argument("model dims: crop_size must be divisible by patch");
    if (dims.layers < 2) throw std::invalid_argument("model dims: need at least 2 layers");

    Model m;
    m.dims = dims;
    m.schedule = NoiseSchedule::linear(dims.timesteps, dims.beta_min, dims.beta_max);

    Rng rng(seed, 0x6D6F64656Cull);  // init stream; draws follow param order
    const int k = dims.alphabet_size;
    const int n_patches = (dims.crop_size / dims.patch) * (dims.crop_size / dims.patch);

    m.enc.char_emb = Tensor::randn({k + 1, dims.d_emb}, rng, 0.5);
    m.enc.pos_emb = Tensor::randn({dims.n_max, dims.d_emb}, rng, 0.5);
    m.enc.w1 = detail_model::init_matrix({dims.d_emb, dims.d_emb}, rng);
    m.enc.b1 = Tensor::zeros({dims.d_emb});
    m.enc.w2 = detail_model::init_matrix({dims.d_emb, dims.d}, rng);
    m.enc.b2 = Tensor::zeros({dims.d});

    m.heads.crop_size = dims.crop_size;
    m.heads.patch = dims.patch;
    m.heads.ht_w = detail_model::init_matrix({dims.n_max * dims.d, dims.d_align}, rng);
    m.heads.ht_b = Tensor::zeros({dims.d_align});
    m.heads.hv_w = detail_model::init_matrix({dims.d_img, dims.d_align}, rng);
    m.heads.hv_b = Tensor::zeros({dims.d_align});
    m.heads.xi_w = detail_model::init_matrix({n_patches, dims.d_img}, rng);
    m.heads.xi_b = Tensor::zeros({dims.d_img});
    m.heads.hl_w = detail_model::init_matrix({dims.d, k}, rng);
    m.heads.hl_b = Tensor::zeros({k});

    m.den.w_in = detail_model::init_matrix({dims.channels + 1, dims.feat_width}, rng);
    m.den.b_in = Tensor::zeros({dims.feat_width});
    m.den.layers.resize(static_cast<std::size_t>(dims.layers));
    for (DenoiserLayerParams& lp : m.den.layers) {
        lp.w_self = detail_model::init_matrix({dims.feat_width, dims.feat_width}, rng);
        lp.b_self = Tensor::zeros({dims.feat_width});
        // Query/key projections start 2x wider than the usual 1/sqrt(fan_in):
        // near-uniform initial attention gives the warm-up objective almost
        // no slope, and localization never takes off.
        lp.w_q = Tensor::randn({dims.feat_width, dims.d}, rng,
                               2.0 / std::sqrt(static_cast<double>(dims.feat_width)));
        lp.w_k = Tensor::randn({dims.d, dims.d}, rng,
                               2.0 / std::sqrt(static_cast<double>(dims.d)));
        lp.w_v = detail_model::init_matrix({dims.d, dims.feat_width}, rng);
        lp.w_out = detail_model::init_matrix({dims.feat_width, dims.feat_width}, rng);
        lp.b_out = Tensor::zeros({dims.feat_width});
        lp.temb = Tensor::randn({dims.timesteps + 1, dims.feat_width}, rng, 0.1);
    }
    m.den.w_outp = detail_model::init_matrix({dims.feat_width, dims.channels}, rng);
    m.den.b_outp = Tensor::zeros({dims.channels});

    m.for_each_param([](const std::string&, Tensor& t) { t.set_requires_grad(true); });
    return m;
}

// Dimension handshake between a corpus and the model configuration.
inline void check_corpus_dims(const ModelDims& dims, const CorpusConfig& corpus) {
    if (corpus.channels != dims.channels || corpus.height != dims.height ||
        corpus.width != dims.width || corpus.n_max != dims.n_max ||
        corpus.alphabet_size() != dims.alphabet_size)
        throw std::invalid_argument(
            "corpus does not match configured dims: corpus " + std::to_string(corpus.channels) +
            "x" + std::to_string(corpus.height) + "x" + std::to_string(corpus.width) + " n_max " +
            std::to_string(corpus.n_max) + " K " + std::to_string(corpus.alphabet_size()) +
            ", config " + std::to_string(dims.channels) + "x" + std::to_string(dims.height) + "x" +
            std::to_string(dims.width) + " n_max " + std::to_string(dims.n_max) + " K " +
            std::to_string(dims.alphabet_size));
}

}  // namespace dreamtext
