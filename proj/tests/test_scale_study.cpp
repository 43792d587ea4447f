#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace lpm;

namespace {

ScaleStudyConfig tiny_study() {
    ScaleStudyConfig cfg;
    cfg.synth.n_p = 40;
    cfg.synth.n_r = 6;
    cfg.synth.n_c = 3;
    cfg.synth.noise_sigma = 0.05;
    cfg.perturbation_ladder = {5, 15};
    cfg.context_ladder = {1, 3};
    cfg.seeds = {0, 1};
    cfg.validation_perturbations = 5;
    cfg.test_perturbations = 10;
    cfg.context_axis_perturbations = 8;
    cfg.train = fixtures::tiny_train_config();
    cfg.train.max_epochs = 4;
    return cfg;
}

}  // namespace

TEST(ScaleStudy, OneRowPerSeedAxisAndLevel) {
    const auto cfg = tiny_study();
    std::size_t streamed = 0;
    const auto rows = run_scale_study<float>(cfg, [&](const ScaleRow&) { ++streamed; });
    ASSERT_EQ(rows.size(), 2u * (2 + 2));
    EXPECT_EQ(streamed, rows.size());
    EXPECT_EQ(rows[0].axis, "perturbations");
    EXPECT_EQ(rows[0].level, 5u);
    EXPECT_EQ(rows[1].level, 15u);
    EXPECT_EQ(rows[2].axis, "contexts");
    EXPECT_EQ(rows[3].level, 3u);
    EXPECT_EQ(rows[4].seed, 1u);
    // NoPerturb reference is shared across the perturbation ladder of a seed.
    EXPECT_EQ(rows[0].noperturb_pearson, rows[1].noperturb_pearson);
    for (const auto& r : rows) {
        EXPECT_GE(r.pearson, -1.0);
        EXPECT_LE(r.pearson, 1.0);
        EXPECT_LE(r.report.epochs_run, 4u);
    }

    std::ostringstream csv;
    write_scale_csv(rows, csv);
    const auto text = csv.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "axis,level,seed,pearson,noperturb_pearson");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 9);
}

TEST(ScaleStudy, Deterministic) {
    const auto cfg = tiny_study();
    const auto a = run_scale_study<float>(cfg);
    const auto b = run_scale_study<float>(cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].pearson, b[i].pearson);
        EXPECT_TRUE(a[i].report == b[i].report);
    }
}

TEST(ScaleStudy, ValidatesConfiguration) {
    auto cfg = tiny_study();
    cfg.perturbation_ladder = {30};
    EXPECT_THROW(run_scale_study<float>(cfg), Error);
    cfg = tiny_study();
    cfg.context_ladder = {4};
    EXPECT_THROW(run_scale_study<float>(cfg), Error);
    cfg = tiny_study();
    cfg.perturbation_axis_contexts = 4;
    EXPECT_THROW(run_scale_study<float>(cfg), Error);
    cfg.perturbation_axis_contexts = 0;
    EXPECT_THROW(run_scale_study<float>(cfg), Error);
    cfg = tiny_study();
    cfg.seeds.clear();
    EXPECT_THROW(run_scale_study<float>(cfg), Error);
}
