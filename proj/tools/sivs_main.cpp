// CLI for the image-to-video synthesis pipeline. Every subcommand reads one
// key=value config file; a handful of flags override per-invocation options.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sivs/pipeline.hpp"

namespace {

struct Cli {
  std::string config;
  std::string out;
  long long seed = -1;
  sivs::CmdOpts opts;
  std::vector<int> cell;  // --cell X Y
  long long starts_override = -1, samples_override = -1;
  bool no_x0 = false, no_adain = false, gan = false;
};

sivs::RunConfig load_config(const Cli& cli) {
  sivs::RunConfig cfg;
  if (!cli.config.empty()) cfg = sivs::run_config_from_kv(sivs::parse_kv_file(cli.config));
  if (cli.seed >= 0) cfg.seed = static_cast<std::uint64_t>(cli.seed);
  if (!cli.out.empty()) cfg.out_dir = cli.out;
  if (cli.opts.no_cinn) cfg.use_cinn = false;
  if (cli.no_x0) cfg.use_x0 = false;
  if (cli.no_adain) cfg.use_adain = false;
  if (cli.gan) cfg.gan = true;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Cli& cli) {
  cmd->add_option("--config", cli.config, "key=value config file");
  cmd->add_option("--seed", cli.seed, "override run.seed");
  cmd->add_option("--out", cli.out, "override run.out (artifact directory)");
}

void add_ablations(CLI::App* cmd, Cli& cli) {
  cmd->add_flag("--no-cinn", cli.opts.no_cinn, "ablation: draw z ~ N(0,I), skip the flow");
  cmd->add_flag("--no-x0", cli.no_x0, "ablation: decoder ignores the start frame");
  cmd->add_flag("--no-adain", cli.no_adain, "ablation: decoder ignores the latent style path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bijective image-to-video synthesis"};
  app.require_subcommand(1);
  Cli cli;

  CLI::App* gen = app.add_subcommand("gen-data", "write the train/val/test benchmark");
  add_common(gen, cli);

  CLI::App* bb = app.add_subcommand("train-backbone", "train the frozen feature nets");
  add_common(bb, cli);

  CLI::App* s1 = app.add_subcommand("train-stage1", "train the video autoencoder");
  add_common(s1, cli);
  add_ablations(s1, cli);
  s1->add_flag("--gan", cli.gan, "enable the adversarial terms");

  CLI::App* s2 = app.add_subcommand("train-stage2", "train the conditional flow");
  add_common(s2, cli);
  add_ablations(s2, cli);

  CLI::App* sy = app.add_subcommand("synthesize", "sample clips from test start frames");
  add_common(sy, cli);
  add_ablations(sy, cli);
  sy->add_option("--chain", cli.opts.chain, "feed each clip's last frame back in k times")
      ->check(CLI::PositiveNumber);
  sy->add_option("--starts", cli.starts_override, "limit the number of start frames");
  sy->add_option("--samples", cli.samples_override, "samples per start frame");

  CLI::App* ct = app.add_subcommand("control", "synthesize with a requested attribute");
  add_common(ct, cli);
  ct->add_option("--bin", cli.opts.bin, "requested direction bin");
  ct->add_option("--cell", cli.cell, "requested endpoint cell X Y")->expected(2);
  ct->add_option("--starts", cli.starts_override, "limit the number of start frames");
  ct->add_option("--samples", cli.samples_override, "samples per start frame");

  CLI::App* tr = app.add_subcommand("transfer", "re-enact one clip's motion on other starts");
  add_common(tr, cli);
  tr->add_option("--source", cli.opts.source, "test clip whose motion is transferred");
  tr->add_option("--targets", cli.opts.targets, "number of target start frames");

  CLI::App* vv = app.add_subcommand("v2v-control", "rewrite each clip's direction attribute");
  add_common(vv, cli);
  vv->add_option("--bin", cli.opts.bin, "fixed target bin (default: rotate the source)");
  vv->add_option("--rotate", cli.opts.rotate, "bins to rotate the source direction by");
  vv->add_option("--starts", cli.starts_override, "limit the number of clips");

  CLI::App* ev = app.add_subcommand("evaluate", "distribution metrics against the test split");
  add_common(ev, cli);
  add_ablations(ev, cli);
  ev->add_option("--samples", cli.samples_override, "samples per start frame");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    sivs::RunConfig cfg = load_config(cli);
    if (cli.starts_override >= 0) cfg.synth_starts = cli.starts_override;
    if (cli.samples_override > 0) {
      cfg.synth_samples = cli.samples_override;
      cfg.eval_samples = cli.samples_override;
    }
    if (cli.cell.size() == 2) {
      cli.opts.cell_x = cli.cell[0];
      cli.opts.cell_y = cli.cell[1];
    }
    if (gen->parsed()) return sivs::cmd_gen_data(cfg);
    if (bb->parsed()) return sivs::cmd_train_backbone(cfg);
    if (s1->parsed()) return sivs::cmd_train_stage1(cfg);
    if (s2->parsed()) return sivs::cmd_train_stage2(cfg);
    if (sy->parsed()) return sivs::cmd_synthesize(cfg, cli.opts);
    if (ct->parsed()) return sivs::cmd_control(cfg, cli.opts);
    if (tr->parsed()) return sivs::cmd_transfer(cfg, cli.opts);
    if (vv->parsed()) return sivs::cmd_v2v_control(cfg, cli.opts);
    if (ev->parsed()) return sivs::cmd_evaluate(cfg, cli.opts);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const sivs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const sivs::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const sivs::Error& e) {  // DataError, ShapeError, other I/O failures
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
