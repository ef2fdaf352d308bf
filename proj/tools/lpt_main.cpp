// lpt: pretrain, finetune, sgds, sample and eval commands.

#include <iostream>

#include "CLI11.hpp"
#include "lpt/app/commands.hpp"
#include "lpt/util/log.hpp"

int main(int argc, char** argv) {
  using namespace lpt::app;
  CLI::App app{"Latent prompt transformer: training, sampling and gradual distribution shifting"};
  app.require_subcommand(1);
  app.fallthrough();

  CommandOptions opts;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug | info | warn | error | off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "run config (TOML)")->required()->check(CLI::ExistingFile);
    sub->add_option("--checkpoint", opts.checkpoint, "checkpoint to start from");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_flag("--dry-run", opts.dry_run, "validate and print the resolved config, then exit");
  };
  const std::pair<const char*, const char*> stages[] = {
      {"pretrain", "fit prior and generator on the unlabelled corpus"},
      {"finetune", "fit all parameters on (sequence, property) pairs"},
      {"sgds", "shift the dataset toward better oracle scores"},
      {"eval", "report sequence NLL and property fit on held-out data"},
  };
  for (const auto& [name, help] : stages) add_common(app.add_subcommand(name, help));
  auto* sample = app.add_subcommand("sample", "decode sequences, conditioned on --target if given");
  add_common(sample);
  sample->add_option("--target", opts.target, "raw-unit y* per objective")->delimiter(',');
  sample->add_option("--count", opts.count, "number of sequences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  for (auto* sub : app.get_subcommands()) {
    opts.command = sub->get_name();
    if (sub->count("--seed")) opts.seed = seed;
  }
  if (log_level == "debug") lpt::log::set_level(lpt::log::Level::debug);
  if (log_level == "warn") lpt::log::set_level(lpt::log::Level::warn);
  if (log_level == "error") lpt::log::set_level(lpt::log::Level::error);
  if (log_level == "off") lpt::log::set_level(lpt::log::Level::off);

  try {
    return run_command(opts, std::cout);
  } catch (const std::exception& e) {
    return report_error(e);
  }
}
