// Command-line front end: corpus generation, training, evaluation, attention
// visualization, and the ablation harness.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dreamtext/dreamtext.hpp"

namespace {

using namespace dreamtext;

TrainConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line.empty())
        throw std::runtime_error("config file '" + path + "' is empty");
    return config_from_record(parse_record(line));
}

void add_train_flags(CLI::App* cmd, TrainConfig& cfg, std::string& config_path) {
    cmd->add_option("--config", config_path, "config file (one line record); flags override");
    cmd->add_option("--corpus", cfg.corpus_dir, "corpus directory");
    cmd->add_option("--steps", cfg.total_steps, "total training steps");
    cmd->add_option("--warmup", cfg.warmup_steps, "warm-up steps with GT mask guidance");
    cmd->add_option("--lr", cfg.lr, "learning rate");
    cmd->add_option("--batch", cfg.batch_size, "batch size");
    cmd->add_option("--seed", cfg.seed, "training seed");
    cmd->add_option("--alpha", cfg.weights.alpha, "attention loss weight");
    cmd->add_option("--beta", cfg.weights.beta, "align/id loss weight");
    cmd->add_option("--gamma", cfg.weights.gamma, "masked diffusion extra weight");
    cmd->add_option("--eval-every", cfg.eval_every, "steps between evaluations");
    cmd->add_option("--eval-count", cfg.eval_count, "samples per evaluation");
    cmd->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint output path");
    cmd->add_option("--metrics", cfg.metrics_path, "metrics log output path");
    cmd->add_option("--sigma", cfg.dims.mask_sigma, "gaussian blur sigma for mask extraction");
}

// Pull corpus geometry into the model dims so the handshake holds without
// repeating the numbers on the command line.
void adopt_corpus_dims(TrainConfig& cfg) {
    const Corpus corpus = load_corpus(cfg.corpus_dir);
    cfg.dims.channels = corpus.config.channels;
    cfg.dims.height = corpus.config.height;
    cfg.dims.width = corpus.config.width;
    cfg.dims.n_max = corpus.config.n_max;
    cfg.dims.alphabet_size = corpus.config.alphabet_size();
}

int run(int argc, char** argv) {
    CLI::App app{"DreamText: desk-scale cross-attention denoiser training"};
    app.require_subcommand(1);

    // gen-data -------------------------------------------------------------
    CorpusConfig corpus_cfg;
    std::string gen_out;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic glyph corpus");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--count", corpus_cfg.count, "number of samples");
    gen->add_option("--seed", corpus_cfg.seed, "corpus seed");
    gen->add_option("--height", corpus_cfg.height, "image height");
    gen->add_option("--width", corpus_cfg.width, "image width");
    gen->add_option("--n-max", corpus_cfg.n_max, "max characters per word");
    gen->add_option("--alphabet", corpus_cfg.alphabet, "ordered character set");
    gen->add_option("--fonts", corpus_cfg.fonts, "number of font variants");
    gen->add_option("--min-len", corpus_cfg.min_len, "min word length");
    gen->add_option("--max-len", corpus_cfg.max_len, "max word length");

    // train ------------------------------------------------------------------
    TrainConfig train_cfg;
    std::string train_config_path, resume_path;
    CLI::App* train_cmd = app.add_subcommand("train", "run the alternate-optimization training");
    add_train_flags(train_cmd, train_cfg, train_config_path);
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    // eval -------------------------------------------------------------------
    std::string eval_ckpt, eval_corpus;
    int eval_count = 32;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate mIoU of a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--corpus", eval_corpus, "corpus directory")->required();
    eval_cmd->add_option("--count", eval_count, "samples to evaluate");

    // viz --------------------------------------------------------------------
    std::string viz_ckpt, viz_corpus, viz_out;
    int viz_sample = 0;
    bool viz_masks = false;
    CLI::App* viz_cmd = app.add_subcommand("viz", "render attention overlay for one sample");
    viz_cmd->add_option("--checkpoint", viz_ckpt, "checkpoint path")->required();
    viz_cmd->add_option("--corpus", viz_corpus, "corpus directory")->required();
    viz_cmd->add_option("--sample", viz_sample, "sample index");
    viz_cmd->add_option("--out", viz_out, "output .ppm path")->required();
    viz_cmd->add_flag("--masks", viz_masks, "render binary masks instead of attention");

    // ablate -----------------------------------------------------------------
    TrainConfig ablate_cfg;
    std::string ablate_config_path, preset = "losses";
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run an ablation preset");
    add_train_flags(ablate_cmd, ablate_cfg, ablate_config_path);
    ablate_cmd->add_option("--preset", preset, "losses | warmup");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
            return app.exit(e);
        app.exit(e);
        return 2;
    }

    if (gen->parsed()) {
        make_corpus(corpus_cfg, gen_out);
        std::printf("gen-data: wrote %d samples (%dx%d, alphabet %d, %d fonts) to %s\n",
                    corpus_cfg.count, corpus_cfg.height, corpus_cfg.width,
                    corpus_cfg.alphabet_size(), corpus_cfg.fonts, gen_out.c_str());
        return 0;
    }

    if (train_cmd->parsed()) {
        TrainConfig cfg = train_cfg;
        if (!train_config_path.empty()) {
            // File supplies the baseline; explicitly passed flags override it.
            cfg = load_config_file(train_config_path);
            if (train_cmd->count("--corpus")) cfg.corpus_dir = train_cfg.corpus_dir;
            if (train_cmd->count("--steps")) cfg.total_steps = train_cfg.total_steps;
            if (train_cmd->count("--warmup")) cfg.warmup_steps = train_cfg.warmup_steps;
            if (train_cmd->count("--lr")) cfg.lr = train_cfg.lr;
            if (train_cmd->count("--batch")) cfg.batch_size = train_cfg.batch_size;
            if (train_cmd->count("--seed")) cfg.seed = train_cfg.seed;
            if (train_cmd->count("--alpha")) cfg.weights.alpha = train_cfg.weights.alpha;
            if (train_cmd->count("--beta")) cfg.weights.beta = train_cfg.weights.beta;
            if (train_cmd->count("--gamma")) cfg.weights.gamma = train_cfg.weights.gamma;
            if (train_cmd->count("--eval-every")) cfg.eval_every = train_cfg.eval_every;
            if (train_cmd->count("--eval-count")) cfg.eval_count = train_cfg.eval_count;
            if (train_cmd->count("--checkpoint")) cfg.checkpoint_path = train_cfg.checkpoint_path;
            if (train_cmd->count("--metrics")) cfg.metrics_path = train_cfg.metrics_path;
            if (train_cmd->count("--sigma")) cfg.dims.mask_sigma = train_cfg.dims.mask_sigma;
        }
        if (cfg.corpus_dir.empty())
            throw std::runtime_error("train: --corpus (or a config with corpus_dir) is required");
        adopt_corpus_dims(cfg);
        if (cfg.checkpoint_path.empty()) cfg.checkpoint_path = "checkpoint.bin";
        if (cfg.metrics_path.empty()) cfg.metrics_path = "metrics.log";
        const TrainOutcome outcome = train(cfg, resume_path);
        std::printf("train: %lld steps done, final total=%.6f mIoU=%.4f checkpoint=%s\n",
                    cfg.total_steps, outcome.final_report.total, outcome.final_miou,
                    cfg.checkpoint_path.c_str());
        return 0;
    }

    if (eval_cmd->parsed()) {
        const EvalResult r = eval_checkpoint(eval_ckpt, eval_corpus, eval_count);
        std::printf("mIoU=%.6f (n=%zu)\n", r.mean_miou, r.per_sample.size());
        return 0;
    }

    if (viz_cmd->parsed()) {
        RestoredCheckpoint restored = restore_checkpoint(viz_ckpt);
        Corpus corpus = load_corpus(viz_corpus);
        check_corpus_dims(restored.model.dims, corpus.config);
        if (viz_sample < 0 || viz_sample >= static_cast<int>(corpus.samples.size()))
            throw std::runtime_error("viz: sample index " + std::to_string(viz_sample) +
                                     " outside corpus of " +
                                     std::to_string(corpus.samples.size()));
        const GlyphSample& s = corpus.samples[static_cast<std::size_t>(viz_sample)];
        if (viz_masks) {
            const LatentCharMasks masks =
                eval_sample_masks(restored.model, s, viz_sample, restored.config.seed);
            render_attention_overlay(s, masks.masks, viz_out);
        } else {
            // Layer-averaged attention at the middle evaluation timestep.
            const std::vector<int> ts = eval_timesteps(restored.model.schedule);
            Rng noise(restored.config.seed, static_cast<std::uint64_t>(viz_sample) * 4 + 1);
            Tensor eps = Tensor::randn(s.image.shape(), noise);
            Tensor z_t = forward_diffuse(s.image, ts[1], eps, restored.model.schedule);
            Tensor y = encode_text(restored.model.enc, s.text);
            auto [eps_hat, stack] = predict_noise(restored.model.den, z_t, ts[1], y,
                                                  s.region_mask, restored.model.schedule);
            render_attention_overlay(s, aggregate_attention(stack), viz_out);
        }
        std::printf("viz: wrote %s\n", viz_out.c_str());
        return 0;
    }

    if (ablate_cmd->parsed()) {
        TrainConfig cfg = ablate_cfg;
        if (!ablate_config_path.empty()) cfg = load_config_file(ablate_config_path);
        if (cfg.corpus_dir.empty())
            throw std::runtime_error("ablate: --corpus (or a config with corpus_dir) is required");
        adopt_corpus_dims(cfg);
        const std::vector<AblationRow> rows = ablation_matrix(cfg, preset);
        std::printf("%-10s %12s %12s %12s %12s\n", "row", "total", "l_mask", "probe_mse", "mIoU");
        for (const AblationRow& r : rows)
            std::printf("%-10s %12.6f %12.6f %12.6f %12.4f\n", r.name.c_str(),
                        r.final_report.total, r.final_report.l_mask, r.probe_mse, r.final_miou);
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
