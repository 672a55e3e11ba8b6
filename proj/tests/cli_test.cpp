#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_util.hpp"

// End-to-end smoke tests against the built binary.

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args, const std::string& workdir) {
    const std::string out_file = workdir + "/cmd_output.txt";
    const std::string cmd = "cd " + workdir + " && DREAMTEXT_LOG=quiet " DREAMTEXT_CLI_PATH " " +
                            args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream is(out_file);
    r.output = std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return r;
}

}  // namespace

TEST(Cli, PipelineSmoke) {
    const std::string dir = testutil::scratch_dir("cli_pipeline");
    CmdResult gen = run_cli("gen-data --count 10 --out corpus --seed 3", dir);
    EXPECT_EQ(gen.exit_code, 0) << gen.output;
    EXPECT_NE(gen.output.find("gen-data: wrote 10 samples"), std::string::npos) << gen.output;

    CmdResult train = run_cli(
        "train --corpus corpus --steps 0 --warmup 0 --checkpoint ckpt.bin --metrics m.log "
        "--eval-count 4",
        dir);
    EXPECT_EQ(train.exit_code, 0) << train.output;
    EXPECT_TRUE(std::filesystem::exists(dir + "/ckpt.bin"));

    CmdResult eval = run_cli("eval --checkpoint ckpt.bin --corpus corpus --count 4", dir);
    EXPECT_EQ(eval.exit_code, 0) << eval.output;
    EXPECT_NE(eval.output.find("mIoU="), std::string::npos) << eval.output;

    CmdResult viz = run_cli("viz --checkpoint ckpt.bin --corpus corpus --sample 1 --out o.ppm", dir);
    EXPECT_EQ(viz.exit_code, 0) << viz.output;
    EXPECT_TRUE(std::filesystem::exists(dir + "/o.ppm"));

    CmdResult viz_masks = run_cli(
        "viz --checkpoint ckpt.bin --corpus corpus --sample 0 --out masks.ppm --masks", dir);
    EXPECT_EQ(viz_masks.exit_code, 0) << viz_masks.output;
}

TEST(Cli, TrainWithShortRunProducesMetrics) {
    const std::string dir = testutil::scratch_dir("cli_train_short");
    ASSERT_EQ(run_cli("gen-data --count 8 --out corpus --seed 4 --height 16 --width 16 "
                      "--min-len 1 --max-len 2",
                      dir)
                  .exit_code,
              0);
    CmdResult train = run_cli(
        "train --corpus corpus --steps 3 --warmup 1 --batch 2 --eval-every 2 --eval-count 2 "
        "--checkpoint c.bin --metrics m.log",
        dir);
    EXPECT_EQ(train.exit_code, 0) << train.output;
    EXPECT_NE(train.output.find("train: 3 steps done"), std::string::npos) << train.output;

    std::ifstream log(dir + "/m.log");
    int lines = 0;
    std::string line;
    while (std::getline(log, line))
        if (!line.empty()) ++lines;
    EXPECT_EQ(lines, 4);  // step-0 record + one per step
}

TEST(Cli, AblateEmitsTableRows) {
    const std::string dir = testutil::scratch_dir("cli_ablate");
    ASSERT_EQ(run_cli("gen-data --count 6 --out corpus --seed 9 --height 16 --width 16 "
                      "--min-len 1 --max-len 2",
                      dir)
                  .exit_code,
              0);
    CmdResult ablate = run_cli(
        "ablate --corpus corpus --preset losses --steps 2 --warmup 1 --batch 2 --eval-count 2",
        dir);
    EXPECT_EQ(ablate.exit_code, 0) << ablate.output;
    for (const char* row : {"Base", "+L_mask", "+L_attn", "+L_align", "+L_id"})
        EXPECT_NE(ablate.output.find(row), std::string::npos) << ablate.output;
}

TEST(Cli, ConfigFileWithFlagOverride) {
    const std::string dir = testutil::scratch_dir("cli_config");
    ASSERT_EQ(run_cli("gen-data --count 6 --out corpus --seed 2 --height 16 --width 16 "
                      "--min-len 1 --max-len 2",
                      dir)
                  .exit_code,
              0);
    {
        std::ofstream cfg(dir + "/run.cfg");
        cfg << "total_steps=99 warmup_steps=0 lr=0.001 batch_size=2 seed=8 alpha=0.01 "
               "beta=0.001 gamma=1 warmup_weight=1 alphabet_size=16 n_max=8 channels=1 "
               "height=16 width=16 d_emb=8 d=8 d_align=8 d_img=8 feat_width=8 layers=2 "
               "crop_size=8 patch=4 timesteps=10 beta_min=0.0001 beta_max=0.02 mask_sigma=1 "
               "corpus_dir=corpus eval_every=5 eval_count=2\n";
    }
    CmdResult train = run_cli(
        "train --config run.cfg --steps 2 --checkpoint c.bin --metrics m.log", dir);
    EXPECT_EQ(train.exit_code, 0) << train.output;
    EXPECT_NE(train.output.find("train: 2 steps done"), std::string::npos) << train.output;
}

TEST(Cli, UnknownSubcommandExitsTwo) {
    const std::string dir = testutil::scratch_dir("cli_unknown");
    EXPECT_EQ(run_cli("frobnicate", dir).exit_code, 2);
    EXPECT_EQ(run_cli("train --no-such-flag", dir).exit_code, 2);
}

TEST(Cli, HelpExitsZeroEverywhere) {
    const std::string dir = testutil::scratch_dir("cli_help");
    EXPECT_EQ(run_cli("--help", dir).exit_code, 0);
    for (const char* sub : {"gen-data", "train", "eval", "viz", "ablate"})
        EXPECT_EQ(run_cli(std::string(sub) + " --help", dir).exit_code, 0) << sub;
}

TEST(Cli, ErrorsExitNonZeroWithDiagnostic) {
    const std::string dir = testutil::scratch_dir("cli_errors");
    CmdResult r = run_cli("eval --checkpoint missing.bin --corpus nowhere", dir);
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.output.find("error:"), std::string::npos) << r.output;
}
