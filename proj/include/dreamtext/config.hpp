#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "dreamtext/io.hpp"
#include "dreamtext/losses.hpp"

namespace dreamtext {

// Network, schedule, and mask-extraction sizes. Corpus geometry (channels,
// image size, n_max, alphabet) lives with the corpus and is validated against
// these at load time.
struct ModelDims {
    int alphabet_size = 16;
    int n_max = 8;
    int channels = 1;
    int height = 32;
    int width = 32;

    int d_emb = 32;
    int d = 32;
    int d_align = 32;
    int d_img = 32;
    int feat_width = 32;
    int layers = 3;
    int crop_size = 16;
    int patch = 4;

    int timesteps = 100;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    double mask_sigma = 1.0;
};

// Every training hyperparameter in one serializable record.
struct TrainConfig {
    long long total_steps = 2000;
    long long warmup_steps = 500;
    double lr = 1e-3;
    int batch_size = 8;
    std::uint64_t seed = 1;
    LossWeights weights;
    ModelDims dims;
    std::string corpus_dir;
    std::string checkpoint_path;
    std::string metrics_path;
    long long eval_every = 100;
    int eval_count = 32;

    void validate() const {
        if (warmup_steps < 0 || warmup_steps > total_steps)
            throw std::invalid_argument("config: warmup_steps must lie in [0, total_steps]");
        if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (weights.alpha < 0 || weights.beta < 0 || weights.gamma < 0 ||
            weights.warmup_weight < 0)
            throw std::invalid_argument("config: loss weights must be non-negative");
        if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    }
};

inline Record config_to_record(const TrainConfig& c) {
    Record r;
    r.emplace_back("total_steps", std::to_string(c.total_steps));
    r.emplace_back("warmup_steps", std::to_string(c.warmup_steps));
    r.emplace_back("lr", format_double(c.lr));
    r.emplace_back("batch_size", std::to_string(c.batch_size));
    r.emplace_back("seed", std::to_string(c.seed));
    r.emplace_back("alpha", format_double(c.weights.alpha));
    r.emplace_back("beta", format_double(c.weights.beta));
    r.emplace_back("gamma", format_double(c.weights.gamma));
    r.emplace_back("warmup_weight", format_double(c.weights.warmup_weight));
    r.emplace_back("alphabet_size", std::to_string(c.dims.alphabet_size));
    r.emplace_back("n_max", std::to_string(c.dims.n_max));
    r.emplace_back("channels", std::to_string(c.dims.channels));
    r.emplace_back("height", std::to_string(c.dims.height));
    r.emplace_back("width", std::to_string(c.dims.width));
    r.emplace_back("d_emb", std::to_string(c.dims.d_emb));
    r.emplace_back("d", std::to_string(c.dims.d));
    r.emplace_back("d_align", std::to_string(c.dims.d_align));
    r.emplace_back("d_img", std::to_string(c.dims.d_img));
    r.emplace_back("feat_width", std::to_string(c.dims.feat_width));
    r.emplace_back("layers", std::to_string(c.dims.layers));
    r.emplace_back("crop_size", std::to_string(c.dims.crop_size));
    r.emplace_back("patch", std::to_string(c.dims.patch));
    r.emplace_back("timesteps", std::to_string(c.dims.timesteps));
    r.emplace_back("beta_min", format_double(c.dims.beta_min));
    r.emplace_back("beta_max", format_double(c.dims.beta_max));
    r.emplace_back("mask_sigma", format_double(c.dims.mask_sigma));
    if (!c.corpus_dir.empty()) r.emplace_back("corpus_dir", c.corpus_dir);
    if (!c.checkpoint_path.empty()) r.emplace_back("checkpoint_path", c.checkpoint_path);
    if (!c.metrics_path.empty()) r.emplace_back("metrics_path", c.metrics_path);
    r.emplace_back("eval_every", std::to_string(c.eval_every));
    r.emplace_back("eval_count", std::to_string(c.eval_count));
    return r;
}

inline TrainConfig config_from_record(const Record& r) {
    TrainConfig c;
    c.total_steps = rec_get_int(r, "total_steps");
    c.warmup_steps = rec_get_int(r, "warmup_steps");
    c.lr = rec_get_double(r, "lr");
    c.batch_size = static_cast<int>(rec_get_int(r, "batch_size"));
    c.seed = static_cast<std::uint64_t>(rec_get_int(r, "seed"));
    c.weights.alpha = rec_get_double(r, "alpha");
    c.weights.beta = rec_get_double(r, "beta");
    c.weights.gamma = rec_get_double(r, "gamma");
    c.weights.warmup_weight = rec_get_double(r, "warmup_weight");
    c.dims.alphabet_size = static_cast<int>(rec_get_int(r, "alphabet_size"));
    c.dims.n_max = static_cast<int>(rec_get_int(r, "n_max"));
    c.dims.channels = static_cast<int>(rec_get_int(r, "channels"));
    c.dims.height = static_cast<int>(rec_get_int(r, "height"));
    c.dims.width = static_cast<int>(rec_get_int(r, "width"));
    c.dims.d_emb = static_cast<int>(rec_get_int(r, "d_emb"));
    c.dims.d = static_cast<int>(rec_get_int(r, "d"));
    c.dims.d_align = static_cast<int>(rec_get_int(r, "d_align"));
    c.dims.d_img = static_cast<int>(rec_get_int(r, "d_img"));
    c.dims.feat_width = static_cast<int>(rec_get_int(r, "feat_width"));
    c.dims.layers = static_cast<int>(rec_get_int(r, "layers"));
    c.dims.crop_size = static_cast<int>(rec_get_int(r, "crop_size"));
    c.dims.patch = static_cast<int>(rec_get_int(r, "patch"));
    c.dims.timesteps = static_cast<int>(rec_get_int(r, "timesteps"));
    c.dims.beta_min = rec_get_double(r, "beta_min");
    c.dims.beta_max = rec_get_double(r, "beta_max");
    c.dims.mask_sigma = rec_get_double(r, "mask_sigma");
    if (const std::string* v = rec_find(r, "corpus_dir")) c.corpus_dir = *v;
    if (const std::string* v = rec_find(r, "checkpoint_path")) c.checkpoint_path = *v;
    if (const std::string* v = rec_find(r, "metrics_path")) c.metrics_path = *v;
    c.eval_every = rec_get_int(r, "eval_every");
    c.eval_count = static_cast<int>(rec_get_int(r, "eval_count"));
    return c;
}

}  // namespace dreamtext
