#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mapkit/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_out = true) {
  cmd->add_option("--config", o.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "overrides the config seed");
  auto* out = cmd->add_option("--out", o.out, "output directory");
  if (needs_out) out->required();
  cmd->add_flag("--force", o.force, "overwrite a nonempty output directory");
  cmd->add_option("--set", o.sets, "extra key=value overrides, applied after --config")->allow_extra_args(false);
}

mapkit::RunConfig resolve(const CommonOptions& o) {
  mapkit::RunConfig cfg = o.config.empty() ? mapkit::RunConfig{} : mapkit::RunConfig::load(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

void print_report(const mapkit::MetricReport& r) {
  std::cout << mapkit::MetricReport::csv_header() << "\n" << r.csv_row() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mapkit: SD-map conditioned lane topology pipeline"};
  app.require_subcommand(1);

  CommonOptions gen_o, pre_o, train_o, ft_o, eval_o;
  std::string pre_mode;
  std::string fusion;
  std::string ft_checkpoint, ft_detections, eval_checkpoint;
  bool eval_oracle = false;
  std::vector<std::string> report_dirs;
  std::string report_out;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic scene corpus");
  add_common(gen, gen_o);

  auto* pre = app.add_subcommand("pretrain", "pretrain the map encoder");
  add_common(pre, pre_o);
  pre->add_option("--mode", pre_mode, "ae or mae")->check(CLI::IsMember({"ae", "mae"}));

  auto* train = app.add_subcommand("train", "train all heads jointly");
  add_common(train, train_o);
  train->add_option("--sdmap-fusion", fusion, "on or off")->check(CLI::IsMember({"on", "off"}));

  auto* ft = app.add_subcommand("finetune-topology", "fine-tune the topology heads with the rest frozen");
  add_common(ft, ft_o);
  ft->add_option("--checkpoint", ft_checkpoint, "model checkpoint to start from");
  ft->add_option("--detections", ft_detections, "directory of per-scene detection files");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  add_common(ev, eval_o);
  ev->add_option("--checkpoint", eval_checkpoint, "model checkpoint");
  ev->add_flag("--oracle", eval_oracle, "replay ground truth as predictions");

  auto* rep = app.add_subcommand("report", "merge run directories into one table");
  rep->add_option("runs", report_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", report_out, "write the table to this file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cfg = resolve(gen_o);
      cfg.validate();
      mapkit::cmd_gen_data(cfg, gen_o.out, gen_o.force, &std::cerr);
    } else if (pre->parsed()) {
      auto cfg = resolve(pre_o);
      if (!pre_mode.empty()) cfg.pretrain_mode = pre_mode;
      cfg.validate();
      mapkit::cmd_pretrain(cfg, pre_o.out, pre_o.force, &std::cerr);
    } else if (train->parsed()) {
      auto cfg = resolve(train_o);
      if (!fusion.empty()) cfg.sdmap_fusion = fusion == "on";
      cfg.validate();
      const auto res = mapkit::cmd_train(cfg, train_o.out, train_o.force, &std::cerr);
      print_report(res.final_report);
    } else if (ft->parsed()) {
      auto cfg = resolve(ft_o);
      if (!ft_checkpoint.empty()) cfg.checkpoint = ft_checkpoint;
      if (!ft_detections.empty()) cfg.detections = ft_detections;
      cfg.validate();
      const auto res = mapkit::cmd_finetune_topology(cfg, ft_o.out, ft_o.force, &std::cerr);
      print_report(res.after);
    } else if (ev->parsed()) {
      auto cfg = resolve(eval_o);
      if (!eval_checkpoint.empty()) cfg.checkpoint = eval_checkpoint;
      if (eval_oracle) cfg.oracle = true;
      cfg.validate();
      print_report(mapkit::cmd_eval(cfg, eval_o.out, eval_o.force, &std::cerr));
    } else if (rep->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const std::string table = mapkit::cmd_report(dirs);
      if (report_out.empty()) {
        std::cout << table;
      } else {
        std::ofstream f(report_out, std::ios::binary);
        if (!(f << table)) throw std::runtime_error("cannot write " + report_out);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "mapkit: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
