#include <exception>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "patchguard/cli.hpp"

namespace pg = patchguard;

int main(int argc, char** argv) {
  CLI::App app{"Certified patch-robust classification with small receptive fields"};
  app.require_subcommand(1);

  struct Command {
    std::string name;
    std::string help;
  };
  const Command commands[] = {
      {"gen-data", "write the synthetic training and evaluation datasets"},
      {"train", "train a model and write a checkpoint"},
      {"certify", "robust masking predictions and certificates per image"},
      {"attack", "PGD patch attack per image, split by certification"},
      {"diagnose", "incorrect local predictions and a local logits histogram"},
      {"oracle", "brute-force verification corpora"},
      {"sweep", "clean and provable accuracy over parameter settings"},
  };

  std::string config_path;
  std::map<std::string, std::string> overrides;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("-c,--config", config_path, "key=value config file");
    for (const auto& key : pg::config_keys())
      sub->add_option_function<std::string>(
             "--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
             key.help + " (default: " + (key.default_value.empty() ? "empty" : key.default_value) + ")")
          ->type_name("VALUE");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    std::map<std::string, std::string> values;
    if (!config_path.empty()) values = pg::read_config_file(config_path);
    for (const auto& [k, v] : overrides) values[k] = v;
    const pg::ExperimentConfig cfg = pg::make_config(values);

    if (command == "gen-data") {
      pg::cmd_gen_data(cfg, std::cout);
    } else if (command == "train") {
      pg::cmd_train(cfg, std::cout);
    } else if (command == "certify") {
      pg::cmd_certify(cfg, std::cout);
    } else if (command == "attack") {
      const auto s = pg::cmd_attack(cfg, std::cout);
      if (cfg.attack_defended && s.certified_successes > 0) {
        std::cerr << "soundness violation: an attack succeeded on a certified image\n";
        return 1;
      }
    } else if (command == "diagnose") {
      pg::cmd_diagnose(cfg, std::cout);
    } else if (command == "oracle") {
      if (pg::cmd_oracle(cfg, std::cout).violations > 0) {
        std::cerr << "oracle found violations\n";
        return 1;
      }
    } else if (command == "sweep") {
      pg::cmd_eval_sweep(cfg, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
