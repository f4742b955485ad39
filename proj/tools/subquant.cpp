// subquant quantize|sweep|reorder|overhead|eval --config <file> [--jobs N] [--seed S] [--out DIR]

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "subquant/commands.hpp"
#include "subquant/error.hpp"

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitBadInput = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sub-layerwise post-training weight quantization"};
  app.require_subcommand(1);

  std::string config;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration")->required();
    cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_option("--out", out, "output directory (overrides $SUBQUANT_OUT and the config)");
    cmd->add_flag("-q,--quiet", quiet, "no progress output");
  };
  using Command = subquant::CommandResult (*)(subquant::RunConfig, const subquant::CommandOptions&);
  const std::pair<const char*, Command> commands[] = {
      {"quantize", subquant::cmd_quantize}, {"sweep", subquant::cmd_sweep},   {"reorder", subquant::cmd_reorder},
      {"overhead", subquant::cmd_overhead}, {"eval", subquant::cmd_eval},
  };
  const char* help[] = {
      "calibrate all layers and write the quantized bundle",
      "calibrate over a grid of #Row x #Col settings",
      "search channel reorderings per residual block, then recalibrate",
      "analytic computation and memory overhead",
      "top-1 accuracy and distances on a labeled eval set",
  };
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].first, help[i]));
    add_common(subs.back());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadInput;
  }

  try {
    subquant::CommandOptions opts;
    opts.jobs = jobs;
    opts.seed = seed;
    if (out) opts.out = *out;
    opts.log = quiet ? nullptr : &std::cerr;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const auto result = commands[i].second(subquant::load_run_config(config), opts);
      for (const auto& f : result.files) std::cout << (result.output_dir / f).string() << '\n';
    }
    return 0;
  } catch (const subquant::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}
