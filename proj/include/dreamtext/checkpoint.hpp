#pragma once

#include <string>
#include <vector>

#include "dreamtext/config.hpp"
#include "dreamtext/io.hpp"
#include "dreamtext/model.hpp"
#include "dreamtext/optim.hpp"

// Checkpoint assembly on top of the raw container format: model parameters
// under their own names, Adam moments under adam.m./adam.v. prefixes.

namespace dreamtext {

inline void save_checkpoint(const std::string& path, const TrainConfig& config, Model& model,
                            const AdamState& adam, const Rng::State& rng, long long step) {
    CheckpointData ckpt;
    ckpt.step = step;
    ckpt.rng = rng;
    ckpt.adam_step_count = adam.step_count;
    ckpt.config_line = encode_record(config_to_record(config));

    std::size_t index = 0;
    model.for_each_param([&](const std::string& name, Tensor& t) {
        ckpt.tensors.push_back({name, t.detach()});
        ckpt.tensors.push_back({"adam.m." + name, Tensor::from(t.shape(), adam.m.at(index))});
        ckpt.tensors.push_back({"adam.v." + name, Tensor::from(t.shape(), adam.v.at(index))});
        ++index;
    });
    save_checkpoint_file(path, ckpt);
}

struct RestoredCheckpoint {
    TrainConfig config;
    Model model;
    AdamState adam;
    Rng::State rng;
    long long step = 0;
};

// Rebuilds a model from the config echoed in the checkpoint. When `expected`
// is given, tensor shapes are validated against that config instead, so a
// stale checkpoint cannot silently load into a differently-sized model.
inline RestoredCheckpoint restore_checkpoint(const std::string& path,
                                             const TrainConfig* expected = nullptr) {
    const CheckpointData ckpt = load_checkpoint_file(path);
    RestoredCheckpoint out;
    out.config = config_from_record(parse_record(ckpt.config_line));
    const TrainConfig& cfg = expected ? *expected : out.config;

    out.model = init_model(cfg.dims, cfg.seed);
    out.step = ckpt.step;
    out.rng = ckpt.rng;

    std::vector<Tensor> params = out.model.params();
    out.adam = make_adam_state(params);
    out.adam.step_count = ckpt.adam_step_count;

    std::size_t index = 0;
    out.model.for_each_param([&](const std::string& name, Tensor& t) {
        const Tensor& stored = find_tensor(ckpt.tensors, name, path);
        if (stored.shape() != t.shape())
            throw std::runtime_error("checkpoint '" + path + "' tensor '" + name + "' has shape " +
                                     detail::shape_str(stored.shape()) + ", config expects " +
                                     detail::shape_str(t.shape()));
        t.data() = stored.data();
        out.adam.m.at(index) = find_tensor(ckpt.tensors, "adam.m." + name, path).data();
        out.adam.v.at(index) = find_tensor(ckpt.tensors, "adam.v." + name, path).data();
        ++index;
    });
    return out;
}

}  // namespace dreamtext
