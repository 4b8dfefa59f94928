#ifndef SIVS_CONFIG_HPP
#define SIVS_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

// Run configuration: UTF-8 key=value lines with '#' comments and dotted
// section prefixes (stage1.lr=2e-4). Unknown keys are errors, so typos fail
// loudly instead of silently training with defaults.

namespace sivs {

struct KvMap {
  std::vector<std::pair<std::string, std::string>> items;  // file order

  const std::string* find(const std::string& key) const;
  void set(const std::string& key, const std::string& value);  // replace or append
};

KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

struct RunConfig {
  // data.*: benchmark location and generation parameters
  std::string data_dir = "data/drift";
  std::string data_kind = "drift";
  std::int64_t data_n_train = 800, data_n_val = 100, data_n_test = 100;
  std::int64_t data_frames = 9, data_height = 16, data_width = 16;
  std::int64_t data_direction_bins = 8;
  std::uint64_t data_seed = 1;

  // model.*
  std::int64_t d_z = 16;  // latent width (64 mirrors the source setting)
  std::int64_t channels = 1, base = 32, embed_dim = 32, dec_blocks = 3;
  std::int64_t flow_blocks = 20, flows_per_block = 8;
  std::string control = "none";  // none | direction | endpoint
  bool use_cinn = true, use_x0 = true, use_adain = true;

  // stage1.*
  std::int64_t stage1_steps = 2000, stage1_batch = 16;
  double stage1_lr = 2e-4, stage1_beta1 = 0.5, stage1_beta2 = 0.9;
  double stage1_weight_decay = 1e-5;
  double beta = 1e-5;  // KL weight
  double lambda = 10.0, lambda_f = 10.0, lambda_gp = 10.0;
  double frame_ae_weight = 1.0;
  bool gan = false;
  bool stage1_resume = false;
  std::int64_t stage1_save_every = 500, stage1_log_every = 10;

  // stage2.*
  std::int64_t stage2_steps = 2000, stage2_batch = 64;
  double stage2_lr = 1e-5;  // linearly decayed to zero over the step budget
  double stage2_beta1 = 0.9, stage2_beta2 = 0.999;
  bool stage2_resume = false;
  std::int64_t stage2_save_every = 500, stage2_log_every = 10;

  // backbone.*
  std::int64_t backbone_epochs = 22, backbone_batch = 32;
  double backbone_lr = 2e-3;
  std::int64_t backbone_n_train = 800, backbone_n_val = 150;

  // eval.* / synth.*
  std::int64_t eval_samples = 5;
  std::int64_t synth_samples = 5;
  std::int64_t synth_starts = -1;  // -1: every test start frame

  // run.*
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const;  // range checks -> ConfigError
};

// Typed view of a KvMap; throws ConfigError on unknown keys or bad values.
RunConfig run_config_from_kv(const KvMap& kv);

// Every key, deterministic order; parses back to an identical config.
std::string run_config_to_text(const RunConfig& cfg);

}  // namespace sivs

#endif
