// Acceptance suite: one PASS/FAIL line per criterion.
//
//   end2_acceptance [criterion ...] [--work DIR]
//
// With no criteria listed all ten run. Training artifacts go under DIR
// (default: <tmp>/end2_acceptance).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "end2/cli/commands.hpp"
#include "end2/core/errors.hpp"
#include "end2/core/rng.hpp"
#include "end2/evaluation/ablation.hpp"
#include "end2/evaluation/benchmark.hpp"
#include "end2/evaluation/metrics.hpp"
#include "end2/losses/losses.hpp"
#include "end2/models/checkpoint.hpp"
#include "end2/training/dataset.hpp"
#include "end2/training/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace end2;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

fs::path corpus() { return fs::path(END2_TEST_DATA_DIR) / "corpus"; }

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

double max_rel_diff(const torch::Tensor& a, const torch::Tensor& b) {
  const double denom = std::max(b.abs().max().item<double>(), 1e-30);
  return (a - b).abs().max().item<double>() / denom;
}

// Desk protocol of criterion 5: 32x32 crops, n=8, batch 16.
RunConfig desk_config(std::uint64_t seed, const SuiteConfig& suite) {
  RunConfig c = preset_config("desk");
  c.seed = seed;
  c.distortions = suite;
  c.data.train_dir = (corpus() / "train").string();
  c.data.heldout_dir = (corpus() / "heldout").string();
  c.data.eval_samples = 256;
  c.train.eval_every = 0;
  c.train.checkpoint_every = 0;
  c.train.deterministic = true;
  return c;
}

ImageBatch heldout_crops(const RunConfig& c) {
  return training::ImageDataset::from_directory(c.data.heldout_dir, derive_seed(c.seed, "dataset.heldout"))
      .fixed_crops(c.data.eval_samples, c.height, c.width, derive_seed(c.seed, "heldout"));
}

models::Checkpoint train(const RunConfig& c, const std::string& tag) {
  const auto data = training::ImageDataset::from_directory(c.data.train_dir, derive_seed(c.seed, "dataset"));
  training::TrainLoopOptions opts;
  const auto dir = g_work / tag;
  fs::create_directories(dir);
  opts.log_path = dir / "train_log.jsonl";
  auto ckpt = training::train_loop(c, data, opts).checkpoint;
  models::save_checkpoint(ckpt, dir / "final.ckpt");
  return ckpt;
}

eval::EvalReport evaluate(const models::Checkpoint& ckpt, const SuiteConfig& suite) {
  eval::EvalOptions opts;
  opts.seed = derive_seed(ckpt.config.seed, "acceptance.eval");
  opts.batch_size = ckpt.config.eval.batch_size;
  return eval::run_benchmark(ckpt, heldout_crops(ckpt.config), suite, opts);
}

// A desk-scale batch of natural-image crops and random messages.
std::pair<ImageBatch, torch::Tensor> desk_batch(const RunConfig& c, std::uint64_t seed) {
  const auto data = training::ImageDataset::from_directory(corpus() / "train", seed);
  return {data.fixed_crops(c.train.batch_size, c.height, c.width, seed),
          make_message_batch(seed, c.train.batch_size, c.message_length)};
}

// ---------------------------------------------------------------------------

Outcome c1_hypersphere_identity() {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto s = torch::randn({1, 256}, gen, opts);
    auto t = torch::randn({1, 256}, gen, opts);
    s = s / s.norm();
    t = t / t.norm();
    const double loss =
        losses::feature_alignment_loss(ProjectedVector{s}, ProjectedVector{t}).item<double>();
    const auto* ps = s.data_ptr<double>();
    const auto* pt = t.data_ptr<double>();
    double sq = 0.0;
    for (int k = 0; k < 256; ++k) sq += (ps[k] - pt[k]) * (ps[k] - pt[k]);
    worst = std::max(worst, std::abs(loss - sq));
  }
  return {worst < 1e-6, "max |(2-2cos) - |s-t|^2| = " + sci(worst)};
}

Outcome c2_gradient_routing() {
  auto cfg = preset_config("desk");
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    training::Trainer trainer(cfg, models::init_models(cfg, 100 + trial));
    trainer.state().step = static_cast<std::int64_t>(trial);
    const auto [x, m] = desk_batch(cfg, 7 + trial);
    auto& enc = trainer.state().models.encoder.parameters();
    enc.zero_grad();
    trainer.forward(x, m, true).total.total.backward();
    std::vector<torch::Tensor> full;
    for (const auto& [name, t] : enc) full.push_back(t.grad().clone());
    enc.zero_grad();
    trainer.forward(x, m, false).total.total.backward();
    std::size_t i = 0;
    for (const auto& [name, t] : enc) worst = std::max(worst, max_rel_diff(full[i++], t.grad()));
    enc.zero_grad();
  }

  // Teacher-side features receive exactly zero gradient from L_{s,t}.
  const auto bundle = models::init_models(cfg, 5);
  const auto [x, m] = desk_batch(cfg, 3);
  auto z_t = bundle.decoders[0].extract_features(x).values.detach().requires_grad_(true);
  auto z_s = bundle.decoders[1].extract_features(x).values.detach().requires_grad_(true);
  const auto loss = losses::feature_alignment_loss(bundle.projection.project(FeatureVector{z_s}),
                                                    bundle.projection.project(FeatureVector{z_t}));
  const auto grads = torch::autograd::grad({loss}, {z_t, z_s}, {}, false, false, true);
  const bool teacher_zero = !grads[0].defined() || grads[0].abs().max().item<double>() == 0.0;
  const bool student_nonzero = grads[1].defined() && grads[1].abs().max().item<double>() > 0.0;
  return {worst < 1e-6 && teacher_zero && student_nonzero,
          "encoder grad max rel err " + sci(worst) + ", teacher-feature grad " +
              (teacher_zero ? "exactly zero" : "NONZERO")};
}

Outcome c3_momentum_exactness() {
  const auto cfg = preset_config("desk");
  const auto a = models::init_models(cfg, 11);
  const auto b = models::init_models(cfg, 12);
  const auto& t0 = a.decoders[0].parameters();
  const auto& s = b.decoders[1].parameters();
  std::int64_t mismatches = 0, checked = 0;
  bool endpoints = true;
  for (double tau : {0.0, 0.5, 0.999, 1.0}) {
    auto t = t0.clone();
    training::momentum_update(t, s, tau);
    for (const auto& name : t.names()) {
      const auto* pt = t0.at(name).data_ptr<float>();
      const auto* ps = s.at(name).data_ptr<float>();
      const auto* out = t.at(name).data_ptr<float>();
      for (std::int64_t i = 0; i < t.at(name).numel(); ++i, ++checked) {
        const float expected = static_cast<float>(tau * pt[i] + (1.0 - tau) * ps[i]);
        if (out[i] != expected) ++mismatches;
        if (tau == 1.0 && out[i] != pt[i]) endpoints = false;
        if (tau == 0.0 && out[i] != ps[i]) endpoints = false;
      }
    }
  }
  return {mismatches == 0 && endpoints, std::to_string(mismatches) + " mismatches over " + std::to_string(checked) +
                                            " elements; endpoints " + (endpoints ? "exact" : "NOT exact")};
}

std::vector<float> sorted_values(const training::TrainerState& s) {
  std::vector<float> v;
  for (const auto& d : s.models.decoders) {
    for (const auto& [name, t] : d.parameters()) {
      const auto flat = t.detach().contiguous().view(-1);
      v.insert(v.end(), flat.data_ptr<float>(), flat.data_ptr<float>() + flat.numel());
    }
  }
  std::sort(v.begin(), v.end());
  return v;
}

Outcome c4_swap_correctness() {
  auto cfg = preset_config("desk");
  cfg.train.swap_interval = 3;
  training::Trainer trainer(cfg);
  std::vector<std::int64_t> swaps;
  trainer.set_observer([&](training::TraceEvent e, std::int64_t step) {
    if (e == training::TraceEvent::Swap) swaps.push_back(step);
  });
  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto [x, m] = desk_batch(cfg, 20 + i);
    trainer.train_step(x, m);
  }
  const bool schedule = swaps == std::vector<std::int64_t>{2, 5};

  auto& st = trainer.state();
  const auto before = sorted_values(st);
  const auto teacher_before = st.teacher().parameters().clone();
  const auto student_before = st.student().parameters().clone();
  const int index_before = st.teacher_index;
  st.step = 2;
  training::maybe_swap(st, 3);
  const bool conserved = sorted_values(st) == before;
  const bool exchanged = st.teacher().parameters().identical(student_before) &&
                         st.student().parameters().identical(teacher_before) && st.teacher_index != index_before;
  training::maybe_swap(st, 3);
  const bool involution = st.teacher_index == index_before && st.teacher().parameters().identical(teacher_before) &&
                          st.student().parameters().identical(student_before) &&
                          st.teacher().role() == models::Role::Teacher && st.student().role() == models::Role::Student;

  std::string fired;
  for (auto s : swaps) fired += (fired.empty() ? "" : ",") + std::to_string(s);
  return {schedule && conserved && exchanged && involution,
          "swaps after steps {" + fired + "}; multiset " + (conserved ? "conserved" : "CHANGED") + "; double swap " +
              (involution ? "is identity" : "NOT identity")};
}

Outcome c5_desk_training() {
  const auto cfg = desk_config(0, suite_preset("train_desk"));
  const auto ckpt = train(cfg, "c5");
  SuiteConfig suite;
  suite.mode = SuiteMode::Fixed;
  suite.entries = {parse_distortion("identity"), parse_distortion("gaussian_noise(std=0.01)")};
  const auto r = evaluate(ckpt, suite);
  const double clean = r.row("identity").acc;
  const double noise = r.row("gaussian_noise").acc;
  return {clean >= 0.95 && noise >= 0.90 && r.embed_psnr >= 30.0,
          std::to_string(cfg.train.steps) + " steps: clean ACC " + fmt(clean) + " (>= 0.95), noise ACC " + fmt(noise) +
              " (>= 0.90), PSNR " + fmt(r.embed_psnr, 2) + " dB (>= 30)"};
}

Outcome c6_real_jpeg_advantage() {
  SuiteConfig jpeg;
  jpeg.mode = SuiteMode::Fixed;
  jpeg.entries = {parse_distortion("jpeg_real(Q=50)")};
  bool all = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto with = train(desk_config(seed, suite_preset("jpeg50")), "c6_jpeg_seed" + std::to_string(seed));
    const auto without = train(desk_config(seed, suite_preset("identity")), "c6_clean_seed" + std::to_string(seed));
    const double a = evaluate(with, jpeg).rows[0].acc;
    const double b = evaluate(without, jpeg).rows[0].acc;
    const double gap = 100.0 * (a - b);
    all = all && gap >= 15.0;
    detail += (detail.empty() ? "" : "; ") + ("seed " + std::to_string(seed) + ": " + fmt(100 * a, 2) + " vs " +
                                             fmt(100 * b, 2) + " (+" + fmt(gap, 2) + ")");
  }
  return {all, "JPEG Q=50 ACC, jpeg-trained vs noise-free, need +15: " + detail};
}

Outcome c7_ablation_ordering() {
  const auto combined = suite_preset("combined");
  bool all = true;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto cells = eval::ablation_preset("table4", desk_config(seed, combined));
    const auto& none = cells.front();
    const auto& full = cells.back();
    const double a = evaluate(train(full.config, "c7_full_seed" + std::to_string(seed)), combined).mean_acc();
    const double b = evaluate(train(none.config, "c7_none_seed" + std::to_string(seed)), combined).mean_acc();
    const double gap = 100.0 * (a - b);
    all = all && gap >= 5.0;
    detail += (detail.empty() ? "" : "; ") + ("seed " + std::to_string(seed) + ": " + fmt(100 * a, 2) + " vs " +
                                             fmt(100 * b, 2) + " (" + (gap >= 0 ? "+" : "") + fmt(gap, 2) + ")");
  }
  return {all, "combined-suite mean ACC, FA+MU+SL vs None, need +5: " + detail};
}

Outcome c8_metric_oracles() {
  std::vector<std::string> failures;
  const auto a = torch::rand({4, 3, 32, 32}, at::make_generator<at::CPUGeneratorImpl>(2)) * 0.5;
  const double p = eval::psnr(a, a + 0.1);
  if (std::abs(p - 20.0) > 0.01) failures.push_back("psnr " + fmt(p));
  const double s_same = eval::ssim(a, a);
  if (std::abs(s_same - 1.0) > 1e-12) failures.push_back("ssim identical " + fmt(s_same, 8));

  auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
  const auto scores = torch::rand({10000}, gen);
  const auto bits = (torch::rand({10000}, gen) > 0.5).to(torch::kFloat32);
  const double chance = eval::bit_accuracy(scores, bits);
  if (std::abs(chance - 0.5) > 0.01) failures.push_back("chance acc " + fmt(chance));

  double worst = 0.0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto g = at::make_generator<at::CPUGeneratorImpl>(40 + i);
    const auto x = torch::rand({1, 3, 24 + static_cast<std::int64_t>(i), 32}, g);
    const auto y = (x + 0.05 * torch::randn(x.sizes(), g)).clamp(0, 1);
    worst = std::max(worst, std::abs(eval::ssim(x, y) - test::reference_ssim(x, y)));
  }
  if (worst >= 1e-4) failures.push_back("ssim vs reference " + sci(worst));
  std::string detail = "psnr " + fmt(p, 4) + " dB, ssim(x,x) " + fmt(s_same, 6) + ", chance ACC " + fmt(chance) +
                       ", ssim max |diff| vs reference " + sci(worst);
  return {failures.empty(), detail};
}

Outcome c9_baseline_contracts() {
  auto cfg = preset_config("desk");

  auto tdsl = cfg;
  tdsl.strategy.variant = Variant::Tdsl;
  tdsl.train.steps = 8;
  tdsl.strategy.tdsl_stage1_fraction = 0.5;
  training::Trainer t(tdsl);
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto [x, m] = desk_batch(tdsl, 60 + i);
    t.train_step(x, m);
  }
  const auto frozen = t.state().models.encoder.parameters().clone();
  bool stage2 = true;
  for (std::uint64_t i = 4; i < 8; ++i) {
    stage2 = stage2 && t.in_second_stage();
    const auto [x, m] = desk_batch(tdsl, 60 + i);
    t.train_step(x, m);
  }
  const bool encoder_frozen = stage2 && t.state().models.encoder.parameters().identical(frozen);

  auto asl = cfg;
  asl.strategy.variant = Variant::ForwardAsl;
  bool asl_equal = true;
  for (std::int64_t step = 0; step < 3; ++step) {
    auto for_end2 = models::init_models(cfg, 4);
    std::swap(for_end2.decoders[0], for_end2.decoders[1]);  // END2 student = decoder 0 of ForwardASL
    training::Trainer e(cfg, std::move(for_end2));
    training::Trainer f(asl, models::init_models(cfg, 4));
    e.state().step = step;
    f.state().step = step;
    const auto [x, m] = desk_batch(cfg, 80 + static_cast<std::uint64_t>(step));
    const auto re = e.forward(x, m);
    const auto rf = f.forward(x, m);
    asl_equal = asl_equal && re.distortion == rf.distortion && torch::equal(re.m_student, rf.m_student);
  }

  auto vanilla = cfg;
  vanilla.strategy.variant = Variant::VanillaEnd;
  vanilla.distortions = suite_preset("jpeg50");
  bool rejected = false;
  try {
    training::validate_strategy(vanilla);
  } catch (const ConfigError&) {
    rejected = true;
  }

  return {encoder_frozen && asl_equal && rejected,
          std::string("TDSL stage-2 encoder ") + (encoder_frozen ? "bit-identical" : "CHANGED") +
              "; ForwardASL vs END2 student " + (asl_equal ? "equal" : "DIFFERENT") + "; VanillaEND+jpeg_real " +
              (rejected ? "rejected" : "ACCEPTED")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome c10_determinism() {
  auto cfg = desk_config(9, suite_preset("train_desk"));
  cfg.train.steps = 30;
  cfg.train.checkpoint_every = 10;
  cfg.data.eval_samples = 16;
  const auto config_path = g_work / "c10_config.json";
  fs::create_directories(g_work);
  save_config(cfg, config_path);
  std::ostringstream sink;
  std::vector<fs::path> runs;
  for (const char* name : {"c10_a", "c10_b"}) {
    cli::CommonOptions o;
    o.config = config_path;
    o.deterministic = true;
    o.out = g_work / name;
    fs::remove_all(*o.out);
    runs.push_back(cli::cmd_train(o, sink, sink).checkpoints());
  }
  int compared = 0;
  bool identical = true;
  for (const auto& entry : fs::directory_iterator(runs[0])) {
    const auto other = runs[1] / entry.path().filename();
    identical = identical && fs::exists(other) && slurp(entry.path()) == slurp(other);
    ++compared;
  }
  return {identical && compared >= 3,
          std::to_string(compared) + " checkpoint files " + (identical ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"hypersphere alignment identity", c1_hypersphere_identity},
      {"gradient-barrier routing", c2_gradient_routing},
      {"momentum update exactness", c3_momentum_exactness},
      {"swap correctness", c4_swap_correctness},
      {"desk-scale END2 training", c5_desk_training},
      {"real-JPEG advantage over 3 seeds", c6_real_jpeg_advantage},
      {"ablation ordering over 3 seeds", c7_ablation_ordering},
      {"metric oracles", c8_metric_oracles},
      {"baseline contracts", c9_baseline_contracts},
      {"determinism", c10_determinism},
  };

  std::set<int> selected;
  g_work = fs::temp_directory_path() / "end2_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      selected.insert(std::atoi(arg.c_str()));
    }
  }
  fs::create_directories(g_work);
  torch::set_num_threads(1);

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!r.pass) ++failed;
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << r.detail
              << " [" << fmt(secs, 1) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
