#include <gtest/gtest.h>

#include <cmath>

#include "dreamtext/losses.hpp"
#include "dreamtext/model.hpp"
#include "test_util.hpp"

using namespace dreamtext;

namespace {

AttentionStack stack_from_maps(std::vector<Tensor> maps, int h, int w) {
    AttentionStack s;
    s.maps = std::move(maps);
    s.height = h;
    s.width = w;
    return s;
}

LatentCharMasks masks_of(Tensor m, std::vector<int> active) {
    LatentCharMasks out;
    out.masks = std::move(m);
    out.active_tokens = std::move(active);
    return out;
}

}  // namespace

TEST(MaskedDiffusionLoss, GammaZeroIsPlainMse) {
    Rng rng(1);
    Tensor eps = testutil::random_tensor({1, 4, 4}, rng);
    Tensor eps_hat = testutil::random_tensor({1, 4, 4}, rng);
    Tensor mask = Tensor::zeros({4, 4});
    for (double& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;

    Tensor weighted = masked_diffusion_loss(eps, eps_hat, mask, 0.0);
    Tensor d = sub(eps, eps_hat);
    Tensor plain = mean(mul(d, d));
    EXPECT_EQ(weighted.value(), plain.value());  // bit-for-bit
}

TEST(MaskedDiffusionLoss, PerfectPredictionIsZero) {
    Rng rng(2);
    Tensor eps = testutil::random_tensor({1, 4, 4}, rng);
    Tensor mask = Tensor::full({4, 4}, 1.0);
    EXPECT_DOUBLE_EQ(masked_diffusion_loss(eps, eps, mask, 1.0).value(), 0.0);
}

TEST(MaskedDiffusionLoss, HalfMaskedUnitErrorCase) {
    // err = 1 everywhere, mask covers half the pixels, gamma = 1:
    // mean of {1, 4} over the two halves = 2.5.
    Tensor eps = Tensor::full({1, 2, 2}, 1.0);
    Tensor eps_hat = Tensor::zeros({1, 2, 2});
    Tensor mask = Tensor::zeros({2, 2});
    mask(0, 0) = 1.0;
    mask(0, 1) = 1.0;
    EXPECT_DOUBLE_EQ(masked_diffusion_loss(eps, eps_hat, mask, 1.0).value(), 2.5);
}

TEST(MaskedDiffusionLoss, RejectsShapeMismatch) {
    EXPECT_THROW(masked_diffusion_loss(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 3}),
                                       Tensor::zeros({2, 2}), 1.0),
                 std::invalid_argument);
    EXPECT_THROW(masked_diffusion_loss(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 2}),
                                       Tensor::zeros({3, 3}), 1.0),
                 std::invalid_argument);
}

TEST(AttentionLoss, PerfectAttentionIsZero) {
    Tensor m = Tensor::zeros({2, 4, 4});
    m(0, 1, 1) = 1.0;
    m(1, 2, 2) = 1.0;
    AttentionStack stack = stack_from_maps({m.detach(), m.detach()}, 4, 4);
    EXPECT_DOUBLE_EQ(attention_loss(stack, masks_of(m, {0, 1})).value(), 0.0);
}

TEST(AttentionLoss, UniformAttentionAgainstEmptyMask) {
    const int n = 4;
    Tensor uniform = Tensor::full({n, 4, 4}, 1.0 / n);
    AttentionStack stack = stack_from_maps({uniform}, 4, 4);
    Tensor m = Tensor::zeros({n, 4, 4});
    EXPECT_NEAR(attention_loss(stack, masks_of(m, {0, 1, 2, 3})).value(), 1.0 / (n * n), 1e-15);
}

TEST(AttentionLoss, MatchesScalarReference) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4, h = 4, w = 4, layers = 2;
        std::vector<Tensor> maps;
        for (int l = 0; l < layers; ++l)
            maps.push_back(testutil::random_tensor({n, h, w}, rng, 0.0, 1.0));
        Tensor m = Tensor::zeros({n, h, w});
        for (double& v : m.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        const std::vector<int> active = {0, 2};
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                m(1, i, j) = 0.0;
                m(3, i, j) = 0.0;
            }

        double expect = 0.0;
        for (const Tensor& map : maps)
            for (int tok : active)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        const double d = map(tok, i, j) - m(tok, i, j);
                        expect += d * d;
                    }
        expect /= static_cast<double>(layers) * active.size() * h * w;

        AttentionStack stack = stack_from_maps(std::move(maps), h, w);
        EXPECT_NEAR(attention_loss(stack, masks_of(m, active)).value(), expect, 1e-12);
    }
}

TEST(AttentionLoss, RejectsNoActiveTokens) {
    AttentionStack stack = stack_from_maps({Tensor::zeros({2, 2, 2})}, 2, 2);
    EXPECT_THROW(attention_loss(stack, masks_of(Tensor::zeros({2, 2, 2}), {})),
                 std::invalid_argument);
}

TEST(AlignLoss, IdenticalVectorsGiveZero) {
    Tensor t = Tensor::from({3}, {1.0, -2.0, 0.5});
    EXPECT_NEAR(align_loss(t, t).value(), 0.0, 1e-15);
}

TEST(AlignLoss, AntipodalVectorsGiveTwo) {
    Tensor t = Tensor::from({3}, {1.0, -2.0, 0.5});
    Tensor v = scale_add(t, -1.0, 0.0);
    EXPECT_NEAR(align_loss(t, v).value(), 2.0, 1e-15);
}

TEST(AlignLoss, FortyFiveDegreeCase) {
    Tensor t = Tensor::from({2}, {1.0, 0.0});
    Tensor v = Tensor::from({2}, {1.0, 1.0});
    EXPECT_NEAR(align_loss(t, v).value(), 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(AlignLoss, ZeroNormDegeneratesToConstantOne) {
    Tensor t = Tensor::from({2}, {1.0, 2.0});
    t.set_requires_grad(true);
    Tape tape;
    Tensor loss = align_loss(t, Tensor::zeros({2}));
    EXPECT_DOUBLE_EQ(loss.value(), 1.0);
    EXPECT_NE(loss.node()->tape_id, tape.id());  // constant: no gradient path
}

TEST(IdLoss, PerfectPredictionIsZero) {
    Tensor probs = Tensor::zeros({2, 4});
    probs(0, 1) = 1.0;
    probs(1, 3) = 1.0;
    EXPECT_DOUBLE_EQ(id_loss(probs, {1, 3}, {0, 1}).value(), 0.0);
}

TEST(IdLoss, UniformProbsGiveLogK) {
    const int k = 16;
    Tensor probs = Tensor::full({3, k}, 1.0 / k);
    EXPECT_NEAR(id_loss(probs, {0, 5, 9}, {0, 1, 2}).value(), std::log(16.0), 1e-12);
}

TEST(IdLoss, MatchesScalarReference) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = testutil::random_tensor({4, 8}, rng);
        Tensor probs = softmax_rows(logits);
        const std::vector<int> labels = {3, 1, 7, 0};
        const std::vector<int> active = {0, 2};
        double expect = 0.0;
        for (int pos : active) expect += -std::log(probs(pos, labels[static_cast<std::size_t>(pos)]));
        expect /= static_cast<double>(active.size());
        EXPECT_NEAR(id_loss(probs, labels, active).value(), expect, 1e-12);
    }
}

TEST(IdLoss, RejectsBadLabels) {
    Tensor probs = Tensor::full({2, 4}, 0.25);
    EXPECT_THROW(id_loss(probs, {4, 0}, {0}), std::out_of_range);
    EXPECT_THROW(id_loss(probs, {0, 0}, {}), std::invalid_argument);
}

TEST(WarmupMaskLoss, NearPerfectAttentionNearZero) {
    Tensor s = Tensor::zeros({1, 4, 4});
    s(0, 1, 1) = 1.0;
    s(0, 1, 2) = 1.0;
    // Attention pinned at the clamp limits wherever S is 0/1.
    Tensor abar = Tensor::zeros({1, 4, 4});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) abar(0, i, j) = s(0, i, j) > 0.5 ? 1.0 : 0.0;
    EXPECT_LT(warmup_mask_loss(abar, s, {0}).value(), 1e-5);
}

TEST(WarmupMaskLoss, HalfAttentionGivesLogTwo) {
    Rng rng(9);
    Tensor s = Tensor::zeros({2, 4, 4});
    for (double& v : s.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Tensor abar = Tensor::full({2, 4, 4}, 0.5);
    EXPECT_NEAR(warmup_mask_loss(abar, s, {0, 1}).value(), std::log(2.0), 1e-12);
}

TEST(WarmupMaskLoss, MatchesScalarBceReference) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor abar = testutil::random_tensor({3, 4, 4}, rng, 0.01, 0.99);
        Tensor s = Tensor::zeros({3, 4, 4});
        for (double& v : s.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        const std::vector<int> active = {0, 2};
        double expect = 0.0;
        for (int tok : active)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    double a = abar(tok, i, j);
                    a = std::min(1.0 - 1e-6, std::max(1e-6, a));
                    expect += -(s(tok, i, j) * std::log(a) +
                                (1.0 - s(tok, i, j)) * std::log(1.0 - a));
                }
        expect /= static_cast<double>(active.size()) * 16.0;
        EXPECT_NEAR(warmup_mask_loss(abar, s, active).value(), expect, 1e-9);
    }
}

TEST(WarmupMaskLoss, GradientFlowsIntoAttention) {
    Rng rng(13);
    Tensor logits = testutil::random_tensor({16, 2}, rng);
    logits.set_requires_grad(true);
    Tensor s = Tensor::zeros({2, 4, 4});
    s(0, 0, 0) = 1.0;
    Tape tape;
    Tensor abar = reshape(transpose(softmax_rows(logits)), {2, 4, 4});
    backward(warmup_mask_loss(abar, s, {0, 1}), tape);
    double norm = 0.0;
    for (double g : logits.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0);
}

TEST(TotalLoss, AllZeroPartsGiveZero) {
    LossWeights w;
    LossReport r = total_loss(0, 0, 0, 0, 0, w, false);
    EXPECT_DOUBLE_EQ(r.total, 0.0);
}

TEST(TotalLoss, PaperWeightCombination) {
    LossWeights w;  // alpha 0.01, beta 0.001
    LossReport r = total_loss(1, 1, 1, 1, 0, w, false);
    EXPECT_NEAR(r.total, 1.012, 1e-15);
}

TEST(TotalLoss, BasePlusMaskConfiguration) {
    LossWeights w;
    w.alpha = 0.0;
    w.beta = 0.0;
    LossReport r = total_loss(0.7, 123.0, 456.0, 789.0, 0, w, false);
    EXPECT_DOUBLE_EQ(r.total, 0.7);
}

TEST(TotalLoss, DecompositionIdentityOnRandomParts) {
    Rng rng(17);
    LossWeights w;
    for (int trial = 0; trial < 20; ++trial) {
        const double lm = rng.uniform(), la = rng.uniform(), lal = rng.uniform(),
                     lid = rng.uniform(), lw = rng.uniform();
        const bool warm = trial % 2 == 0;
        LossReport r = total_loss(lm, la, lal, lid, lw, w, warm);
        const double expect =
            r.l_mask + w.alpha * r.l_attn + w.beta * (r.l_align + r.l_id) +
            (warm ? w.warmup_weight * r.l_warmup : 0.0);
        EXPECT_NEAR(r.total, expect, 1e-12);
        if (!warm) EXPECT_DOUBLE_EQ(r.l_warmup, 0.0);
    }
}

TEST(TotalLoss, NonFinitePartNamesOffender) {
    LossWeights w;
    try {
        total_loss(1.0, std::nan(""), 0, 0, 0, w, false);
        FAIL() << "expected error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("l_attn"), std::string::npos);
    }
}

TEST(WeightedTotal, GraphAgreesWithReportBitwise) {
    Rng rng(19);
    LossWeights w;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor lm = Tensor::scalar(rng.uniform());
        Tensor la = Tensor::scalar(rng.uniform());
        Tensor lal = Tensor::scalar(rng.uniform());
        Tensor lid = Tensor::scalar(rng.uniform());
        Tensor lw = Tensor::scalar(rng.uniform());
        const bool warm = trial % 2 == 0;
        Tensor total = weighted_total(lm, la, lal, lid, warm ? &lw : nullptr, w);
        LossReport r = total_loss(lm.value(), la.value(), lal.value(), lid.value(), lw.value(), w,
                                  warm);
        EXPECT_EQ(total.value(), r.total);
    }
}

TEST(Losses, MaskPathContributesNoGradient) {
    // Perturbing sigma changes loss values but the gradient reaches the model
    // only through the live attention, never through the masks.
    ModelDims dims;
    dims.alphabet_size = 8;
    dims.n_max = 4;
    dims.height = 8;
    dims.width = 8;
    dims.d_emb = 8;
    dims.d = 8;
    dims.d_align = 8;
    dims.d_img = 8;
    dims.feat_width = 8;
    dims.layers = 2;
    dims.crop_size = 8;
    dims.patch = 4;
    dims.timesteps = 10;
    Model m = init_model(dims, 23);
    Rng rng(29);
    Tensor z_t = testutil::random_tensor({1, 8, 8}, rng);
    Tensor b = Tensor::full({1, 8, 8}, 1.0);
    Tensor eps_target = testutil::random_tensor({1, 8, 8}, rng);

    auto grads_with_sigma = [&](double sigma) {
        m.zero_grad();
        Tape tape;
        Tensor y = encode_text(m.enc, {1, 2});
        auto [eps_hat, stack] = predict_noise(m.den, z_t, 3, y, b, m.schedule);
        LatentCharMasks masks = latent_char_masks(stack, {0, 1}, sigma);
        Tensor loss = masked_diffusion_loss(eps_target, eps_hat, union_masks(masks), 1.0);
        backward(loss, tape);
        std::vector<double> g;
        m.for_each_param([&](const std::string&, Tensor& p) {
            g.insert(g.end(), p.grad().begin(), p.grad().end());
        });
        return g;
    };

    // The gradient w.r.t. eps_hat depends on the mask *values*, so different
    // sigmas give different gradients; what must hold is that the extraction
    // itself adds no gradient path, which NoGradientFlowsThroughExtraction in
    // maskops_test pins down. Here we assert the weaker, user-visible fact:
    // gradients stay finite and well-defined for any sigma.
    for (double sigma : {0.5, 1.0, 2.0}) {
        const std::vector<double> g = grads_with_sigma(sigma);
        for (double v : g) EXPECT_TRUE(std::isfinite(v));
    }
}
