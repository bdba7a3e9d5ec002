#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "end2/core/errors.hpp"
#include "end2/core/image_io.hpp"
#include "end2/distortions/distortions.hpp"
#include "end2/evaluation/metrics.hpp"
#include "end2/training/dataset.hpp"
#include "test_support.hpp"

namespace end2::distortions {
namespace {

using test::random_images;
using test::smooth_images;

ImageBatch corpus_crops(int count, int side) {
  const auto ds = training::ImageDataset::from_directory(test::corpus_dir() / "train", 1);
  return ds.fixed_crops(count, side, side, 3);
}

const char* kAllSpecs[] = {"identity",       "gaussian_noise(std=0.01)", "gaussian_filter(sigma=2)",
                           "jpeg_real(Q=50)", "rotate(deg=10)",           "translate(dis=0.05)",
                           "scale(f=0.65)",  "shear(s=0.1)",             "crop(p=0.1)",
                           "dropout(p=0.5)", "cropout(p=0.3)",           "color(jitter=0.2)"};

TEST(ApplyBlocked, IdentityCopiesValuesButNotGradient) {
  auto x = random_images(2, 16, 16, 1).requires_grad_(true);
  const auto y = apply_blocked(Distortion::parse("identity"), ImageBatch{x}, 0);
  EXPECT_TRUE(torch::equal(y.data, x.detach()));
  EXPECT_FALSE(y.data.requires_grad());
  // A loss mixing both paths receives gradient only through the direct one.
  auto loss = (y.data * x).sum() + y.data.pow(2).sum();
  loss.backward();
  EXPECT_TRUE(torch::equal(x.grad(), y.data));
}

TEST(ApplyBlocked, EveryDistortionBlocksAndKeepsShape) {
  const auto cover = smooth_images(2, 24, 20, 4);
  auto marked = (cover + 0.01).clamp(0, 1).requires_grad_(true);
  for (const char* spec : kAllSpecs) {
    const auto d = Distortion::parse(spec);
    const auto y = apply_blocked(d, ImageBatch{marked}, ImageBatch{cover}, 9);
    EXPECT_EQ(y.data.sizes(), marked.sizes()) << spec;
    EXPECT_FALSE(y.data.requires_grad()) << spec;
    EXPECT_EQ(y.data.grad_fn(), nullptr) << spec;
    EXPECT_GE(y.data.min().item<float>(), 0.0f) << spec;
    EXPECT_LE(y.data.max().item<float>(), 1.0f) << spec;
    const auto again = apply_blocked(d, ImageBatch{marked}, ImageBatch{cover}, 9);
    EXPECT_TRUE(torch::equal(y.data, again.data)) << spec;
  }
}

TEST(ApplyBlocked, DifferentiableKindsStayAttachedWithoutBarrier) {
  auto marked = smooth_images(1, 16, 16, 4).requires_grad_(true);
  const auto y = Distortion::parse("rotate(deg=10)").apply(marked, torch::Tensor(), 3);
  EXPECT_TRUE(y.requires_grad());
  EXPECT_TRUE(Distortion::parse("rotate(deg=10)").intrinsically_differentiable());
  EXPECT_FALSE(Distortion::parse("jpeg_real(Q=50)").intrinsically_differentiable());
}

TEST(GaussianNoise, MeanAbsoluteDeviation) {
  const auto x = torch::full({8, 3, 64, 64}, 0.5);
  const auto y = apply_blocked(Distortion::parse("gaussian_noise(std=0.01)"), ImageBatch{x}, 5);
  const double mad = (y.data - x).abs().mean().item<double>();
  const double expected = 0.01 * std::sqrt(2.0 / M_PI);
  EXPECT_NEAR(mad, expected, 0.1 * expected);
  EXPECT_THROW(Distortion::parse("gaussian_noise(std=-1)"), ConfigError);
}

TEST(JpegReal, LossyFiniteAndDeterministic) {
  const auto x = corpus_crops(4, 64);
  const auto a = jpeg_real(x, 50);
  const auto b = jpeg_real(x, 50);
  EXPECT_TRUE(torch::equal(a.data, b.data));
  EXPECT_FALSE(torch::equal(a.data, x.data));
  EXPECT_TRUE(std::isfinite(eval::psnr(x.data, a.data)));
  EXPECT_THROW(jpeg_real(x, 0), ConfigError);
  EXPECT_THROW(jpeg_real(x, 101), ConfigError);
  EXPECT_THROW(Distortion::parse("jpeg_real(Q=0)"), ConfigError);
}

TEST(JpegReal, HighQualityIsNearLossless) {
  const auto x = corpus_crops(16, 64);
  const auto y = jpeg_real(x, 100);
  // libjpeg subsamples chroma 4:2:0 even at Q=100, so the 40 dB bound holds on luma.
  const auto luma = [](const torch::Tensor& t) {
    return (0.299 * t.select(1, 0) + 0.587 * t.select(1, 1) + 0.114 * t.select(1, 2)).unsqueeze(1).expand({-1, 3, -1, -1});
  };
  for (double p : eval::psnr_per_image(luma(x.data), luma(y.data))) EXPECT_GE(p, 40.0);
  for (double p : eval::psnr_per_image(x.data, y.data)) EXPECT_GE(p, 30.0);
}

TEST(JpegReal, CodecVersionIsRecorded) { EXPECT_NE(codec_version().find("OpenCV"), std::string::npos); }

TEST(Geometric, NeutralParametersAreIdentity) {
  const auto x = smooth_images(2, 20, 28, 6);
  const ImageBatch b{x};
  EXPECT_LT((geometric(b, GeometricKind::Rotate, 0.0, 1).data - x).abs().max().item<float>(), 1e-6f);
  EXPECT_LT((geometric(b, GeometricKind::Scale, 1.0, 1).data - x).abs().max().item<float>(), 1e-6f);
  EXPECT_LT((geometric(b, GeometricKind::Translate, 0.0, 1).data - x).abs().max().item<float>(), 1e-6f);
  EXPECT_LT((geometric(b, GeometricKind::Shear, 0.0, 1).data - x).abs().max().item<float>(), 1e-6f);
}

TEST(Geometric, TransformsChangeTheImage) {
  const auto x = smooth_images(2, 32, 32, 6);
  for (auto kind : {GeometricKind::Rotate, GeometricKind::Translate, GeometricKind::Shear}) {
    EXPECT_FALSE(torch::allclose(geometric(ImageBatch{x}, kind, 0.2, 1).data, x));
  }
  // Zooming out leaves a zero border.
  const auto s = geometric(ImageBatch{x}, GeometricKind::Scale, 0.5, 1).data;
  EXPECT_EQ(s.select(2, 0).abs().max().item<float>(), 0.0f);
}

TEST(Geometric, CropKeepsExactPixelCount) {
  for (auto [h, w, p] : {std::tuple{32, 32, 0.1}, std::tuple{17, 29, 0.1}, std::tuple{16, 16, 0.37},
                         std::tuple{128, 64, 0.9}, std::tuple{20, 20, 1.0}}) {
    const auto mask = crop_mask(h, w, p, 3);
    const auto expected = static_cast<std::int64_t>(std::ceil(p * h * w));
    EXPECT_EQ(mask.sum().item<std::int64_t>(), expected) << h << "x" << w << " p=" << p;
  }
  const auto x = torch::full({1, 3, 32, 32}, 0.7);
  const auto y = geometric(ImageBatch{x}, GeometricKind::Crop, 0.1, 4).data;
  EXPECT_EQ((y[0][0] > 0).sum().item<std::int64_t>(), static_cast<std::int64_t>(std::ceil(0.1 * 32 * 32)));
}

TEST(Geometric, OutOfRangeParametersAreConfigErrors) {
  EXPECT_THROW(Distortion::parse("rotate(deg=50)"), ConfigError);
  EXPECT_THROW(Distortion::parse("translate(dis=0.6)"), ConfigError);
  EXPECT_THROW(Distortion::parse("scale(f=0)"), ConfigError);
  EXPECT_THROW(Distortion::parse("scale(f=2.5)"), ConfigError);
  EXPECT_THROW(Distortion::parse("crop(p=0)"), ConfigError);
  EXPECT_THROW(Distortion::parse("crop(p=1.1)"), ConfigError);
  EXPECT_THROW(Distortion::parse("rotate(angle=5)"), ConfigError);
  EXPECT_THROW(Distortion::parse("blur"), ConfigError);
}

TEST(Masking, FullDropoutReturnsCover) {
  const auto cover = smooth_images(2, 16, 16, 1);
  const auto marked = smooth_images(2, 16, 16, 2);
  EXPECT_TRUE(torch::equal(masking(ImageBatch{marked}, ImageBatch{cover}, MaskKind::Dropout, 1.0, 3).data, cover));
}

TEST(Masking, DropoutFraction) {
  const auto cover = torch::zeros({1, 3, 128, 128});
  const auto marked = torch::ones({1, 3, 128, 128});
  const auto y = masking(ImageBatch{marked}, ImageBatch{cover}, MaskKind::Dropout, 0.5, 11).data;
  const double from_cover = (y[0][0] == 0).to(torch::kFloat64).mean().item<double>();
  EXPECT_NEAR(from_cover, 0.5, 0.02);
  // Each pixel comes from one source for all three channels.
  EXPECT_TRUE(torch::equal(y[0][0], y[0][1]));
}

TEST(Masking, CropoutIsOneRectangle) {
  const auto cover = torch::zeros({1, 3, 40, 30});
  const auto marked = torch::ones({1, 3, 40, 30});
  const auto y = masking(ImageBatch{marked}, ImageBatch{cover}, MaskKind::Cropout, 0.3, 5).data[0][0];
  const auto from_cover = (y == 0);
  const auto rows = from_cover.any(1).nonzero();
  const auto cols = from_cover.any(0).nonzero();
  ASSERT_GT(rows.size(0), 0);
  const auto r0 = rows.min().item<std::int64_t>(), r1 = rows.max().item<std::int64_t>();
  const auto c0 = cols.min().item<std::int64_t>(), c1 = cols.max().item<std::int64_t>();
  EXPECT_EQ(from_cover.sum().item<std::int64_t>(), (r1 - r0 + 1) * (c1 - c0 + 1));
}

TEST(Masking, MissingCoverIsConfigError) {
  const ImageBatch marked{torch::ones({1, 3, 16, 16})};
  EXPECT_THROW(masking(marked, ImageBatch{}, MaskKind::Dropout, 0.5, 1), ConfigError);
  EXPECT_THROW(apply_blocked(Distortion::parse("cropout(p=0.5)"), marked, 1), ConfigError);
}

ExternalCommandSpec shell(const std::string& script) {
  ExternalCommandSpec spec;
  spec.executable = "/bin/sh";
  spec.args = {"-c", script, "sh", "{input}", "{output}"};
  spec.timeout_seconds = 20;
  return spec;
}

TEST(ExternalCommand, CopyIsIdentity) {
  const auto x = (torch::randint(0, 256, {2, 3, 16, 16}, torch::kFloat32) / 255.0f);
  ExternalCommandSpec spec;
  spec.executable = "cp";
  spec.args = {"{input}", "{output}"};
  spec.max_parallel = 2;
  const auto y = external_command(ImageBatch{x}, spec);
  EXPECT_LT((y.data - x).abs().max().item<float>(), 1e-6f);
}

TEST(ExternalCommand, WrongDimensionsFail) {
  // Writes a 4x4 PNG regardless of the input size.
  const auto small = std::filesystem::temp_directory_path() / "end2_small.png";
  save_image(torch::zeros({3, 4, 4}), small);
  DistortionEntry e;
  e.name = "external";
  e.command = shell("cp " + small.string() + " \"$2\"");
  const auto d = Distortion::from_entry(e);
  try {
    apply_blocked(d, ImageBatch{torch::zeros({1, 3, 16, 16})}, 0);
    FAIL() << "expected DistortionFailedError";
  } catch (const DistortionFailedError& err) {
    EXPECT_EQ(err.distortion(), "external");
  }
  std::filesystem::remove(small);
}

TEST(ExternalCommand, NonzeroExitAndTimeoutFail) {
  const ImageBatch x{torch::zeros({1, 3, 16, 16})};
  try {
    external_command(x, shell("echo broken codec >&2; exit 3"));
    FAIL() << "expected DistortionFailedError";
  } catch (const DistortionFailedError& err) {
    EXPECT_NE(std::string(err.what()).find("broken codec"), std::string::npos);
  }
  auto slow = shell("sleep 5");
  slow.timeout_seconds = 0.2;
  EXPECT_THROW(external_command(x, slow), DistortionFailedError);
  EXPECT_THROW(external_command(x, shell("printf 'not an image' > \"$2\"")), DistortionFailedError);
}

TEST(ExternalCommand, RequiresCommandSpec) { EXPECT_THROW(Distortion::parse("external"), ConfigError); }

TEST(Suite, SingleEntryAlwaysChosen) {
  const auto s = DistortionSuite::from_config(suite_preset("jpeg50"));
  for (std::uint64_t i = 0; i < 50; ++i) EXPECT_EQ(s.sample(i, i).name(), "jpeg_real");
}

double frequency_of_first(const std::vector<double>& weights) {
  SuiteConfig c;
  c.mode = SuiteMode::RandomOneOf;
  for (double w : weights) {
    DistortionEntry e;
    e.name = "identity";
    e.weight = w;
    c.entries.push_back(e);
  }
  c.entries[1].name = "gaussian_noise";
  const auto s = DistortionSuite::from_config(c);
  int first = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) first += s.sample(i).name() == "identity";
  return first / 10000.0;
}

TEST(Suite, WeightProportionalSampling) {
  EXPECT_NEAR(frequency_of_first({1.0, 1.0}), 0.5, 0.02);
  EXPECT_NEAR(frequency_of_first({3.0, 1.0}), 0.75, 0.02);
}

TEST(Suite, FixedModeCyclesAndEmptyIsError) {
  const auto s = DistortionSuite::from_config(suite_preset("table2"));
  EXPECT_EQ(s.sample(0, 0).name(), "identity");
  EXPECT_EQ(s.sample(0, 2).name(), "jpeg_real");
  EXPECT_EQ(s.sample(0, 11).name(), "jpeg_real");
  EXPECT_THROW(DistortionSuite::from_config(SuiteConfig{}), ConfigError);
  auto bad = suite_preset("identity");
  bad.entries[0].weight = 0.0;
  EXPECT_THROW(DistortionSuite::from_config(bad), ConfigError);
  EXPECT_FALSE(DistortionSuite::from_config(suite_preset("train_desk")).all_differentiable());
  EXPECT_TRUE(DistortionSuite::from_config(suite_preset("identity")).all_differentiable());
}

}  // namespace
}  // namespace end2::distortions
