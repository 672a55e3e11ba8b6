#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dreamtext/config.hpp"
#include "dreamtext/io.hpp"
#include "test_util.hpp"

using namespace dreamtext;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(Records, EncodeParseRoundTrip) {
    Record rec;
    rec.emplace_back("step", "12");
    rec.emplace_back("total", format_double(0.1234567890123456789));
    rec.emplace_back("name", "sample_00001.dt");
    const std::string line = encode_record(rec);
    const Record back = parse_record(line);
    EXPECT_EQ(back, rec);
}

TEST(Records, DoublesRoundTripExactly) {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform_int(-12, 12));
        EXPECT_EQ(parse_double(format_double(v)), v);
    }
}

TEST(Records, RejectsMalformedTokens) {
    EXPECT_THROW(parse_record("novalue"), std::invalid_argument);
    EXPECT_THROW(parse_record("=x"), std::invalid_argument);
    Record rec;
    rec.emplace_back("bad key", "v");
    EXPECT_THROW(encode_record(rec), std::invalid_argument);
}

TEST(Metrics, LineRoundTripIdempotent) {
    MetricsRecord m;
    m.step = 41;
    m.l_mask = 0.25;
    m.l_attn = 1.0 / 3.0;
    m.l_align = 0.9999999999999999;
    m.l_id = 2.718281828459045;
    m.l_warmup = 0.0;
    m.total = m.l_mask + 0.01 * m.l_attn + 0.001 * (m.l_align + m.l_id);
    m.wall_ms = 77;

    const std::string line = metrics_to_line(m);
    const MetricsRecord back = metrics_from_line(line);
    EXPECT_EQ(metrics_to_line(back), line);  // write -> parse -> write
    EXPECT_FALSE(back.miou.has_value());

    MetricsRecord with_miou = m;
    with_miou.miou = 0.125;
    const std::string line2 = metrics_to_line(with_miou);
    EXPECT_EQ(metrics_to_line(metrics_from_line(line2)), line2);
    EXPECT_TRUE(metrics_from_line(line2).miou.has_value());
}

TEST(Metrics, LoadRejectsNonIncreasingSteps) {
    const std::string dir = testutil::scratch_dir("metrics_order");
    const std::string path = dir + "/log.txt";
    {
        std::ofstream os(path);
        MetricsRecord m;
        m.step = 2;
        os << metrics_to_line(m) << "\n";
        m.step = 2;
        os << metrics_to_line(m) << "\n";
    }
    EXPECT_THROW(load_metrics_log(path), std::runtime_error);
}

TEST(TensorContainer, RoundTripBitwise) {
    const std::string dir = testutil::scratch_dir("container");
    const std::string path = dir + "/t.bin";
    Rng rng(5);
    std::vector<NamedTensor> tensors;
    tensors.push_back({"a", testutil::random_tensor({3, 4}, rng)});
    tensors.push_back({"b.c", testutil::random_tensor({2, 2, 2}, rng)});
    write_tensor_container(path, kSampleMagic, tensors);

    const std::vector<NamedTensor> back = read_tensor_container(path, kSampleMagic);
    ASSERT_EQ(back.size(), tensors.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].name, tensors[i].name);
        EXPECT_EQ(back[i].tensor.shape(), tensors[i].tensor.shape());
        EXPECT_EQ(back[i].tensor.data(), tensors[i].tensor.data());
    }
    EXPECT_THROW(read_tensor_container(path, kCheckpointMagic), std::runtime_error);
}

TEST(Checkpoint, SaveLoadSaveByteIdentical) {
    const std::string dir = testutil::scratch_dir("ckpt_bytes");
    Rng rng(9);
    CheckpointData ckpt;
    ckpt.step = 123;
    ckpt.rng = {0xDEADBEEFCAFEull, true, -0.7071067811865476};
    ckpt.adam_step_count = 123;
    ckpt.config_line = "total_steps=10 lr=0.001";
    ckpt.tensors.push_back({"w", testutil::random_tensor({4, 4}, rng)});
    ckpt.tensors.push_back({"adam.m.w", testutil::random_tensor({4, 4}, rng)});

    const std::string p1 = dir + "/a.ckpt", p2 = dir + "/b.ckpt";
    save_checkpoint_file(p1, ckpt);
    CheckpointData loaded = load_checkpoint_file(p1);
    EXPECT_EQ(loaded.step, ckpt.step);
    EXPECT_EQ(loaded.rng.s, ckpt.rng.s);
    EXPECT_EQ(loaded.rng.has_spare, ckpt.rng.has_spare);
    EXPECT_EQ(loaded.rng.spare, ckpt.rng.spare);
    EXPECT_EQ(loaded.config_line, ckpt.config_line);
    save_checkpoint_file(p2, loaded);
    EXPECT_EQ(read_file(p1), read_file(p2));
}

TEST(Config, RecordRoundTrip) {
    TrainConfig c;
    c.total_steps = 321;
    c.warmup_steps = 77;
    c.lr = 3.5e-4;
    c.batch_size = 5;
    c.seed = 987654321;
    c.weights.gamma = 0.25;
    c.dims.height = 16;
    c.dims.width = 24;
    c.corpus_dir = "/tmp/corpus";
    c.metrics_path = "/tmp/metrics.log";
    c.eval_every = 13;

    const Record rec = config_to_record(c);
    const TrainConfig back = config_from_record(rec);
    EXPECT_EQ(encode_record(config_to_record(back)), encode_record(rec));
    EXPECT_EQ(back.total_steps, c.total_steps);
    EXPECT_EQ(back.lr, c.lr);
    EXPECT_EQ(back.dims.width, 24);
    EXPECT_EQ(back.corpus_dir, c.corpus_dir);
}

TEST(Config, ValidateRejectsBadValues) {
    TrainConfig c;
    c.warmup_steps = c.total_steps + 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lr = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Ppm, RejectsSizeMismatch) {
    const std::string dir = testutil::scratch_dir("ppm");
    EXPECT_THROW(write_ppm(dir + "/x.ppm", 2, 2, std::vector<unsigned char>(11)),
                 std::invalid_argument);
}
