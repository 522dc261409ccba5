// pdcn: prepare data, inspect models, train, evaluate and classify crops.
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdcn/app.hpp"

namespace {

std::string flag_name(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return "--" + key;
}

// Every config key becomes a flag on every command.
struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_file, "key = value config file");
    for (const auto& key : pdcn::config_keys()) cmd->add_option(flag_name(key), values[key], "config key " + key);
  }

  pdcn::RunConfig resolve(CLI::App* cmd) const {
    pdcn::RunConfig c;
    if (!config_file.empty()) pdcn::apply_config_file(c, config_file);
    for (const auto& [key, value] : values)
      if (cmd->count(flag_name(key)) > 0) pdcn::config_set(c, key, value);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pedestrian demographic classifier"};
  app.require_subcommand(1);

  Overrides prep_o, train_o, eval_o, infer_o;
  auto* prepare = app.add_subcommand("prepare", "crop, split and balance an annotated corpus");
  prep_o.attach(prepare);

  auto* inspect = app.add_subcommand("inspect", "print the parameter ledger of a model id or checkpoint");
  std::string target;
  inspect->add_option("target", target, "model id (1-8) or checkpoint path")->required();

  auto* train = app.add_subcommand("train", "train a registry model on a prepared manifest");
  train_o.attach(train);

  auto* evaluate = app.add_subcommand("evaluate", "metrics report for one split");
  eval_o.attach(evaluate);

  auto* infer = app.add_subcommand("infer", "classify images with a checkpoint");
  infer_o.attach(infer);
  std::vector<std::string> images;
  infer->add_option("images", images, "image files (binary PPM)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pdcn::app::kInvalid;
  }

  try {
    if (*prepare) return pdcn::app::cmd_prepare(prep_o.resolve(prepare), std::cout, std::cerr);
    if (*inspect) return pdcn::app::cmd_inspect(target, std::cout);
    if (*train) return pdcn::app::cmd_train(train_o.resolve(train), std::cout, std::cerr);
    if (*evaluate) return pdcn::app::cmd_evaluate(eval_o.resolve(evaluate), std::cout, std::cerr);
    if (*infer) return pdcn::app::cmd_infer(infer_o.resolve(infer), images, std::cout, std::cerr);
  } catch (const pdcn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pdcn::app::kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pdcn::app::kInvalid;
  }
  return pdcn::app::kInvalid;
}
