// end2: train, embed, extract, benchmark, ablate and distort.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "end2/cli/commands.hpp"
#include "end2/core/errors.hpp"

namespace {

void add_common(CLI::App* cmd, end2::cli::CommonOptions& common, std::string& config, std::uint64_t& seed,
                bool& deterministic, std::string& preset, std::string& out) {
  cmd->add_option("--config", config, "JSON run configuration");
  cmd->add_option("--seed", seed, "master seed");
  cmd->add_flag("--deterministic,!--no-deterministic", deterministic, "single-threaded bit-reproducible mode");
  cmd->add_option("--preset", preset, "base configuration")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--out", out, "output directory");
  cmd->callback([cmd, &common, &config, &seed, &deterministic, &preset, &out] {
    if (cmd->count("--config")) common.config = config;
    if (cmd->count("--seed")) common.seed = seed;
    if (cmd->count("--deterministic") || cmd->count("--no-deterministic")) common.deterministic = deterministic;
    if (cmd->count("--preset")) common.preset = preset;
    if (cmd->count("--out")) common.out = out;
  });
}

end2::ExportDecoder parse_decoder(const std::string& s) {
  if (s == "student") return end2::ExportDecoder::Student;
  if (s == "teacher") return end2::ExportDecoder::Teacher;
  return end2::ExportDecoder::Average;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"END2 dual-decoder robust watermarking"};
  app.require_subcommand(1);

  end2::cli::CommonOptions common;
  std::string config, preset, out;
  std::uint64_t seed = 0;
  bool deterministic = true;

  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  add_common(train, common, config, seed, deterministic, preset, out);

  end2::cli::EmbedArgs embed_args;
  std::string message;
  auto* embed = app.add_subcommand("embed", "watermark one image");
  add_common(embed, common, config, seed, deterministic, preset, out);
  embed->add_option("--checkpoint", embed_args.checkpoint)->required()->check(CLI::ExistingFile);
  embed->add_option("--input", embed_args.input)->required();
  embed->add_option("--output", embed_args.output)->required();
  embed->add_option("--message", message, "bit string such as 01101001");
  embed->add_option("--message-seed", embed_args.message_seed, "draw a random message from this seed");
  double strength = 1.0;
  embed->add_option("--strength", strength, "embedding strength");

  end2::cli::ExtractArgs extract_args;
  std::string decoder;
  auto* extract = app.add_subcommand("extract", "recover the message from one image");
  add_common(extract, common, config, seed, deterministic, preset, out);
  extract->add_option("--checkpoint", extract_args.checkpoint)->required()->check(CLI::ExistingFile);
  extract->add_option("--input", extract_args.input)->required();
  extract->add_option("--decoder", decoder, "student, teacher or average")
      ->check(CLI::IsMember({"student", "teacher", "average"}));

  end2::cli::BenchArgs bench_args;
  std::string data;
  double target_psnr = 0.0;
  auto* bench = app.add_subcommand("bench", "robustness benchmark of a checkpoint");
  add_common(bench, common, config, seed, deterministic, preset, out);
  bench->add_option("--checkpoint", bench_args.checkpoint)->required()->check(CLI::ExistingFile);
  bench->add_option("--suite", bench_args.suite, "table2, jpeg_sweep, combined or a distortion spec");
  bench->add_option("--data", data, "held-out image directory");
  bench->add_option("--strength", strength, "embedding strength");
  bench->add_option("--target-psnr", target_psnr, "calibrate the strength to this embedding PSNR");

  end2::cli::AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "train and compare strategy variants");
  add_common(ablate, common, config, seed, deterministic, preset, out);
  ablate->add_option("--table", ablate_args.preset, "table4 or table5")->check(CLI::IsMember({"table4", "table5"}));
  ablate->add_option("--suite", ablate_args.eval_suite, "evaluation suite");

  end2::cli::DistortArgs distort_args;
  auto* distort = app.add_subcommand("distort", "apply a distortion to image files");
  add_common(distort, common, config, seed, deterministic, preset, out);
  distort->add_option("--spec", distort_args.spec, "e.g. jpeg_real(Q=50)")->required();
  distort->add_option("inputs", distort_args.inputs, "image files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      end2::cli::cmd_train(common, std::cout, std::cerr);
    } else if (*embed) {
      if (embed->count("--message")) embed_args.message = message;
      if (embed->count("--strength")) embed_args.strength = strength;
      end2::cli::cmd_embed(embed_args, std::cout, std::cerr);
    } else if (*extract) {
      if (extract->count("--decoder")) extract_args.decoder = parse_decoder(decoder);
      end2::cli::cmd_extract(extract_args, std::cout, std::cerr);
    } else if (*bench) {
      if (bench->count("--data")) bench_args.data = data;
      if (bench->count("--strength")) bench_args.strength = strength;
      if (bench->count("--target-psnr")) bench_args.target_psnr = target_psnr;
      end2::cli::cmd_bench(bench_args, common, std::cout, std::cerr);
    } else if (*ablate) {
      end2::cli::cmd_ablate(ablate_args, common, std::cout, std::cerr);
    } else if (*distort) {
      end2::cli::cmd_distort(distort_args, common, std::cout);
    }
  } catch (const end2::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return end2::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
