#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "end2/core/errors.hpp"
#include "end2/evaluation/ablation.hpp"
#include "end2/evaluation/benchmark.hpp"
#include "end2/evaluation/metrics.hpp"
#include "end2/models/checkpoint.hpp"
#include "end2/training/dataset.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace end2::eval {
namespace {

using test::random_images;
using test::smooth_images;
using test::tiny_config;

TEST(BitAccuracy, ReferenceValues) {
  const auto m = torch::tensor({{1.0, 0.0, 1.0, 0.0}});
  EXPECT_EQ(bit_accuracy(m, m), 1.0);
  EXPECT_EQ(bit_accuracy(torch::tensor({{0.9, 0.2, 0.4, 0.1}}), m), 0.75);
  EXPECT_THROW(bit_accuracy(torch::zeros({1, 3}), m), ShapeError);
}

TEST(BitAccuracy, ChanceLevel) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(8);
  const auto scores = torch::rand({10000, 30}, gen);
  const auto bits = (torch::rand({10000, 30}, gen) > 0.5).to(torch::kFloat32);
  EXPECT_NEAR(bit_accuracy(scores, bits), 0.5, 0.01);
}

TEST(Psnr, ReferenceValues) {
  const auto a = torch::rand({2, 3, 16, 16}) * 0.5;
  EXPECT_EQ(psnr(a, a), kIdenticalPsnr);
  EXPECT_NEAR(psnr(a, a + 0.1), 20.0, 0.01);
  EXPECT_NEAR(psnr(a, a + 1.0 / 255.0), 20.0 * std::log10(255.0), 1e-3);
  const auto b = torch::rand({2, 3, 16, 16});
  EXPECT_DOUBLE_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, b.slice(2, 0, 8)), ShapeError);
}

TEST(Ssim, IdentityAndInversion) {
  const auto a = smooth_images(3, 32, 32, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_LT(ssim(a, 1.0 - a), 1.0);
  EXPECT_THROW(ssim(torch::rand({1, 3, 10, 40}), torch::rand({1, 3, 10, 40})), ConfigError);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const auto a = torch::full({1, 3, 16, 16}, 0.25);
  const auto b = a + 0.5;
  const double c1 = 1e-4;
  const double expected = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  EXPECT_NEAR(ssim(a, b), expected, 1e-4);
  EXPECT_NEAR(ssim(a, b), test::reference_ssim(a, b), 1e-4);
}

TEST(Ssim, MatchesLoopReference) {
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto a = random_images(1, 20 + static_cast<int>(i), 24, 100 + i);
    const auto b = (a + 0.1 * torch::randn_like(a)).clamp(0, 1);
    EXPECT_NEAR(ssim(a, b), test::reference_ssim(a, b), 1e-4) << "pair " << i;
  }
}

struct Fixture {
  RunConfig config = tiny_config();
  models::ModelBundle bundle = models::init_models(config, 1);
  ImageBatch images{smooth_images(64, 16, 16, 3)};
};

TEST(Benchmark, UntrainedModelIsAtChance) {
  Fixture f;
  const auto ckpt = models::make_checkpoint(f.config, f.bundle, 0, 0, 1);
  EvalOptions opts;
  opts.seed = 5;
  const auto report = run_benchmark(ckpt, ImageBatch{smooth_images(200, 16, 16, 3)}, suite_preset("table2"), opts);
  ASSERT_EQ(report.rows.size(), 9u);
  for (const auto& row : report.rows) {
    EXPECT_FALSE(row.failed()) << row.distortion << ": " << row.error;
    EXPECT_NEAR(row.acc, 0.5, 0.05) << row.distortion;
    EXPECT_EQ(row.n_samples, 200);
    EXPECT_GE(row.ssim, -1.0);
    EXPECT_LE(row.ssim, 1.0);
  }
  EXPECT_EQ(report.row("identity").psnr, kIdenticalPsnr);
}

TEST(Benchmark, DeterministicAndCsv) {
  Fixture f;
  const std::vector<distortions::Distortion> suite = {distortions::Distortion::parse("identity"),
                                                      distortions::Distortion::parse("jpeg_real(Q=50)")};
  EvalOptions opts;
  opts.batch_size = 7;
  const auto a = run_benchmark(f.bundle.encoder, f.bundle.decoders[0], f.images, suite, opts);
  const auto b = run_benchmark(f.bundle.encoder, f.bundle.decoders[0], f.images, suite, opts);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  const auto csv = a.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "distortion,params,acc,psnr,ssim,n_samples");
  EXPECT_NE(csv.find("identity,,"), std::string::npos);
  EXPECT_NE(csv.find(",identical,"), std::string::npos);
  EXPECT_NE(csv.find("jpeg_real,Q=50,"), std::string::npos);
  EXPECT_TRUE(std::isfinite(a.embed_psnr));
}

TEST(Benchmark, EmptySuiteIsConfigError) {
  Fixture f;
  EXPECT_THROW(run_benchmark(f.bundle.encoder, f.bundle.decoders[0], f.images, {}, {}), ConfigError);
}

TEST(Benchmark, FailingDistortionIsRecordedPerRow) {
  Fixture f;
  DistortionEntry broken;
  broken.name = "external";
  broken.command = ExternalCommandSpec{"/bin/false", {"{input}", "{output}"}, 10.0, 1};
  const std::vector<distortions::Distortion> suite = {distortions::Distortion::from_entry(broken),
                                                      distortions::Distortion::parse("identity")};
  const auto report = run_benchmark(f.bundle.encoder, f.bundle.decoders[0], ImageBatch{f.images.data.slice(0, 0, 4)},
                                    suite, {});
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_TRUE(report.rows[0].failed());
  EXPECT_FALSE(report.rows[1].failed());
  EXPECT_NE(report.to_csv().find("external,,nan"), std::string::npos);
}

TEST(JpegSweep, DeduplicatesQualities) {
  Fixture f;
  const auto ckpt = models::make_checkpoint(f.config, f.bundle, 0, 0, 1);
  const auto report = run_jpeg_sweep(ckpt, ImageBatch{f.images.data.slice(0, 0, 8)}, {50, 40, 50, 10}, {});
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.rows[2].params, "Q=10");
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings[0].find("50"), std::string::npos);
}

TEST(CalibrateStrength, HitsTargetPsnr) {
  Fixture f;
  EvalOptions opts;
  const double s = calibrate_strength(f.bundle.encoder, f.images, 45.0, opts);
  opts.strength = s;
  const auto report = run_benchmark(f.bundle.encoder, f.bundle.decoders[0], f.images,
                                    {distortions::Distortion::parse("identity")}, opts);
  EXPECT_NEAR(report.embed_psnr, 45.0, 0.05);
}

TEST(Ablation, PresetsHaveExpectedCells) {
  const auto base = tiny_config();
  const auto t4 = ablation_preset("table4", base);
  ASSERT_EQ(t4.size(), 5u);
  EXPECT_EQ(t4[0].label, "None");
  EXPECT_FALSE(t4[0].config.strategy.feature_alignment);
  EXPECT_FALSE(t4[0].config.strategy.momentum_update);
  EXPECT_FALSE(t4[0].config.strategy.swapping);
  EXPECT_EQ(t4[4].label, "FA+MU+SL");
  EXPECT_EQ(t4[4].config.strategy, StrategyConfig{});
  const auto t5 = ablation_preset("table5", base);
  ASSERT_EQ(t5.size(), 3u);
  EXPECT_EQ(t5[1].config.strategy.alignment, AlignmentLoss::Mse);
  EXPECT_EQ(t5[2].config.strategy.alignment, AlignmentLoss::Dino);
  EXPECT_THROW(ablation_preset("table9", base), ConfigError);
}

TEST(Ablation, RunsCellsAndIsolatesFailures) {
  auto base = tiny_config();
  base.train.steps = 2;
  auto cells = ablation_preset("table5", base);
  auto broken = cells[0];
  broken.label = "broken";
  broken.config.strategy.variant = Variant::VanillaEnd;
  broken.config.distortions = suite_preset("jpeg50");
  cells.push_back(broken);
  cells.push_back(cells[1]);
  const auto data = training::ImageDataset::from_images({torch::rand({3, 24, 24})});
  const auto report = run_ablation(cells, data, ImageBatch{smooth_images(8, 16, 16, 1)}, suite_preset("train_desk"), {});
  ASSERT_EQ(report.rows.size(), 5u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_FALSE(report.rows[i].failed()) << report.rows[i].label << ": " << report.rows[i].error;
    EXPECT_TRUE(std::isfinite(report.rows[i].acc));
    EXPECT_TRUE(std::isfinite(report.rows[i].psnr));
    EXPECT_TRUE(std::isfinite(report.rows[i].ssim));
  }
  EXPECT_TRUE(report.row("broken").failed());
  EXPECT_EQ(report.rows[4].report.to_csv(), report.rows[1].report.to_csv());
}

TEST(Plot, WritesSvg) {
  const auto path = std::filesystem::temp_directory_path() / "end2_plot.svg";
  write_svg_plot(path, "ACC vs Q", "Q", "ACC", {{"model", {50, 40, 30}, {0.99, 0.95, 0.9}}});
  std::ifstream in(path);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(text.find("<svg"), std::string::npos);
  EXPECT_NE(text.find("polyline"), std::string::npos);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace end2::eval
