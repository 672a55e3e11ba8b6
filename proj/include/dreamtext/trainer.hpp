#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/checkpoint.hpp"
#include "dreamtext/config.hpp"
#include "dreamtext/eval.hpp"
#include "dreamtext/glyphdata.hpp"
#include "dreamtext/losses.hpp"
#include "dreamtext/maskops.hpp"
#include "dreamtext/model.hpp"
#include "dreamtext/optim.hpp"

// The heuristic alternate optimization loop. Each step re-estimates the
// latent character masks from the current attention (no gradient), freezes
// them, and takes one joint Adam step on the text encoder, heads, and
// denoiser. Ground-truth mask guidance is active only during the warm-up
// phase.

namespace dreamtext {

struct TrainState {
    TrainConfig config;
    Model model;
    std::vector<Tensor> params;
    AdamState adam;
    Rng rng{0};
    long long step = 0;
};

// Loss-subset switches for the ablation harness; they select which objectives
// are evaluated at all (weights of zero already silence a term's gradient).
struct RunOverrides {
    bool enable_align = true;
    bool enable_id = true;
};

inline bool log_enabled() {
    const char* v = std::getenv("DREAMTEXT_LOG");
    return !(v && std::string(v) == "quiet");
}

inline TrainState init_train_state(const TrainConfig& config) {
    TrainState st;
    st.config = config;
    st.model = init_model(config.dims, config.seed);
    st.params = st.model.params();
    st.adam = make_adam_state(st.params);
    st.rng = Rng(config.seed, 0x747261696Eull);  // training stream
    return st;
}

inline TrainState state_from_checkpoint(const std::string& path, const TrainConfig& config) {
    RestoredCheckpoint restored = restore_checkpoint(path, &config);
    TrainState st;
    st.config = config;
    st.model = std::move(restored.model);
    st.params = st.model.params();
    st.adam = std::move(restored.adam);
    st.rng.restore(restored.rng);
    st.step = restored.step;
    return st;
}

inline std::vector<const GlyphSample*> draw_batch(TrainState& state, const Corpus& corpus) {
    std::vector<const GlyphSample*> batch;
    batch.reserve(static_cast<std::size_t>(state.config.batch_size));
    for (int i = 0; i < state.config.batch_size; ++i) {
        const int idx = state.rng.uniform_int(0, static_cast<int>(corpus.samples.size()) - 1);
        batch.push_back(&corpus.samples[static_cast<std::size_t>(idx)]);
    }
    return batch;
}

// One alternate-optimization step over a batch. Per example: sample (t, eps),
// run the denoiser, extract masks from this step's own attention, then score
// every objective against the frozen masks. One backward pass, one joint Adam
// update.
inline LossReport train_step(TrainState& state, const std::vector<const GlyphSample*>& batch,
                             const RunOverrides& ov = {}) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const TrainConfig& cfg = state.config;
    Model& model = state.model;
    const bool in_warmup = state.step < cfg.warmup_steps;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Tape tape;
    Tensor lm_sum = Tensor::scalar(0.0);
    Tensor la_sum = Tensor::scalar(0.0);
    Tensor lal_sum = Tensor::scalar(0.0);
    Tensor lid_sum = Tensor::scalar(0.0);
    Tensor lw_sum = Tensor::scalar(0.0);

    for (const GlyphSample* sp : batch) {
        const GlyphSample& s = *sp;
        const int t = state.rng.uniform_int(1, model.schedule.steps);
        Tensor eps = Tensor::randn(s.image.shape(), state.rng);
        Tensor z_t = forward_diffuse(s.image, t, eps, model.schedule);

        Tensor y = encode_text(model.enc, s.text);
        auto [eps_hat, stack] = predict_noise(model.den, z_t, t, y, s.region_mask, model.schedule);

        const std::vector<int> active = s.active_positions();
        const LatentCharMasks masks = latent_char_masks(stack, active, model.dims.mask_sigma);
        const Tensor mask_union = union_masks(masks);

        lm_sum = add(lm_sum, masked_diffusion_loss(eps, eps_hat, mask_union, cfg.weights.gamma));
        la_sum = add(la_sum, attention_loss(stack, masks));
        if (ov.enable_align) {
            const Tensor crop = crop_text_region(s, model.dims.crop_size, model.dims.crop_size);
            auto [t_feat, v_feat] = align_features(model.heads, y, crop);
            lal_sum = add(lal_sum, align_loss(t_feat, v_feat));
        }
        if (ov.enable_id) {
            lid_sum = add(lid_sum, id_loss(classify_chars(model.heads, y), s.labels, active));
        }
        if (in_warmup) {
            lw_sum = add(lw_sum, warmup_mask_loss(aggregate_attention(stack), s.char_masks, active));
        }
    }

    Tensor l_mask = scale_add(lm_sum, inv_b, 0.0);
    Tensor l_attn = scale_add(la_sum, inv_b, 0.0);
    Tensor l_align = scale_add(lal_sum, inv_b, 0.0);
    Tensor l_id = scale_add(lid_sum, inv_b, 0.0);
    Tensor l_warm = scale_add(lw_sum, inv_b, 0.0);
    Tensor total = weighted_total(l_mask, l_attn, l_align, l_id, in_warmup ? &l_warm : nullptr,
                                  cfg.weights);

    LossReport report;
    try {
        report = total_loss(l_mask.value(), l_attn.value(), l_align.value(), l_id.value(),
                            l_warm.value(), cfg.weights, in_warmup);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error("train_step " + std::to_string(state.step) + ": " + e.what());
    }

    model.zero_grad();
    backward(total, tape);
    adam_step(state.params, state.adam, cfg.lr);
    state.step += 1;
    return report;
}

struct TrainOutcome {
    LossReport final_report;
    double final_miou = 0.0;
};

// Full training run with persistence: per-step metrics records, mIoU and a
// checkpoint every eval_every steps and at the end. Pass a resume checkpoint
// to continue an interrupted run bit-identically.
inline TrainOutcome train(const TrainConfig& config, const std::string& resume_path = {}) {
    config.validate();
    if (config.corpus_dir.empty())
        throw std::invalid_argument("train: config has no corpus_dir");
    Corpus corpus = load_corpus(config.corpus_dir);
    check_corpus_dims(config.dims, corpus.config);

    const bool resuming = !resume_path.empty();
    TrainState state =
        resuming ? state_from_checkpoint(resume_path, config) : init_train_state(config);

    std::ofstream metrics;
    if (!config.metrics_path.empty()) {
        metrics.open(config.metrics_path,
                     resuming ? (std::ios::out | std::ios::app) : (std::ios::out | std::ios::trunc));
        if (!metrics)
            throw std::runtime_error("cannot open metrics log '" + config.metrics_path + "'");
    }
    const auto wall_start = std::chrono::steady_clock::now();
    auto wall_ms = [&] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - wall_start)
            .count();
    };
    auto eval_now = [&] {
        return evaluate_model(state.model, corpus.samples, config.eval_count, config.seed);
    };

    double last_miou = std::numeric_limits<double>::quiet_NaN();
    LossReport last_report{};

    if (!resuming && state.step == 0) {
        const EvalResult ev = eval_now();
        last_miou = ev.mean_miou;
        MetricsRecord mr;
        mr.step = 0;
        mr.miou = ev.mean_miou;
        mr.wall_ms = wall_ms();
        if (metrics.is_open()) metrics << metrics_to_line(mr) << "\n";
        if (log_enabled())
            std::cerr << "step 0/" << config.total_steps << " miou=" << ev.mean_miou << "\n";
    }

    while (state.step < config.total_steps) {
        const std::vector<const GlyphSample*> batch = draw_batch(state, corpus);
        last_report = train_step(state, batch);

        MetricsRecord mr;
        mr.step = state.step;
        mr.l_mask = last_report.l_mask;
        mr.l_attn = last_report.l_attn;
        mr.l_align = last_report.l_align;
        mr.l_id = last_report.l_id;
        mr.l_warmup = last_report.l_warmup;
        mr.total = last_report.total;

        const bool do_eval =
            state.step % config.eval_every == 0 || state.step == config.total_steps;
        if (do_eval) {
            const EvalResult ev = eval_now();
            last_miou = ev.mean_miou;
            mr.miou = ev.mean_miou;
            if (!config.checkpoint_path.empty())
                save_checkpoint(config.checkpoint_path, config, state.model, state.adam,
                                state.rng.state(), state.step);
            if (log_enabled())
                std::cerr << "step " << state.step << "/" << config.total_steps
                          << " total=" << last_report.total << " miou=" << ev.mean_miou << "\n";
        }
        mr.wall_ms = wall_ms();
        if (metrics.is_open()) metrics << metrics_to_line(mr) << "\n";
    }

    if (!config.checkpoint_path.empty())
        save_checkpoint(config.checkpoint_path, config, state.model, state.adam,
                        state.rng.state(), state.step);
    if (metrics.is_open() && !metrics)
        throw std::runtime_error("metrics log write failed for '" + config.metrics_path + "'");
    if (std::isnan(last_miou)) last_miou = eval_now().mean_miou;
    return {last_report, last_miou};
}

// ---------------------------------------------------------------------------
// ablation harness
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    LossReport final_report;
    double final_miou = 0.0;
    double probe_mse = 0.0;  // plain diffusion MSE on a fixed probe set
};

// One in-memory training run; shares the caller's corpus.
inline AblationRow run_ablation_row(const std::string& name, const TrainConfig& cfg,
                                    const Corpus& corpus, const RunOverrides& ov) {
    TrainState state = init_train_state(cfg);
    AblationRow row;
    row.name = name;
    while (state.step < cfg.total_steps) {
        const std::vector<const GlyphSample*> batch = draw_batch(state, corpus);
        row.final_report = train_step(state, batch, ov);
    }
    row.final_miou =
        evaluate_model(state.model, corpus.samples, cfg.eval_count, cfg.seed).mean_miou;
    row.probe_mse = probe_reconstruction_mse(state.model, corpus.samples,
                                             std::min<int>(16, cfg.eval_count), cfg.seed);
    if (log_enabled())
        std::cerr << "ablation row " << name << ": miou=" << row.final_miou
                  << " probe_mse=" << row.probe_mse << "\n";
    return row;
}

// Cumulative loss rows mirror the ablation ladder (Base, then adding the
// masked weighting, attention, alignment, and id objectives); the warm-up
// preset sweeps the guided fraction of training.
inline std::vector<AblationRow> ablation_matrix(const TrainConfig& base,
                                                const std::string& preset) {
    base.validate();
    if (base.corpus_dir.empty())
        throw std::invalid_argument("ablation_matrix: config has no corpus_dir");
    Corpus corpus = load_corpus(base.corpus_dir);
    check_corpus_dims(base.dims, corpus.config);

    std::vector<AblationRow> rows;
    if (preset == "losses") {
        TrainConfig c = base;
        c.weights.gamma = 0.0;
        c.weights.alpha = 0.0;
        c.weights.beta = 0.0;
        c.warmup_steps = 0;
        rows.push_back(run_ablation_row("Base", c, corpus, {false, false}));

        c = base;
        c.weights.alpha = 0.0;
        c.weights.beta = 0.0;
        rows.push_back(run_ablation_row("+L_mask", c, corpus, {false, false}));

        c = base;
        c.weights.beta = 0.0;
        rows.push_back(run_ablation_row("+L_attn", c, corpus, {false, false}));

        c = base;
        rows.push_back(run_ablation_row("+L_align", c, corpus, {true, false}));

        c = base;
        rows.push_back(run_ablation_row("+L_id", c, corpus, {true, true}));
    } else if (preset == "warmup") {
        for (const int pct : {10, 20, 25, 30}) {
            TrainConfig c = base;
            c.warmup_steps = base.total_steps * pct / 100;
            rows.push_back(run_ablation_row(std::to_string(pct) + "%", c, corpus, {}));
        }
    } else {
        throw std::invalid_argument("ablation_matrix: unknown preset '" + preset +
                                    "' (expected 'losses' or 'warmup')");
    }
    return rows;
}

}  // namespace dreamtext
