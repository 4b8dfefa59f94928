#include "sivs/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sivs/error.hpp"

namespace sivs {

const std::string* KvMap::find(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return &v;
  return nullptr;
}

void KvMap::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items)
    if (k == key) {
      v = value;
      return;
    }
  items.emplace_back(key, value);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.find(key))
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key +
                        "'");
    kv.items.emplace_back(key, value);
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

namespace {

// typed readers; every consumed key is crossed off so leftovers can be
// reported as unknown
struct KvReader {
  const KvMap& kv;
  std::vector<bool> used;
  explicit KvReader(const KvMap& m) : kv(m), used(m.items.size(), false) {}

  const std::string* take(const std::string& key) {
    for (std::size_t i = 0; i < kv.items.size(); ++i)
      if (kv.items[i].first == key) {
        used[i] = true;
        return &kv.items[i].second;
      }
    return nullptr;
  }

  void str(const std::string& key, std::string& out) {
    if (const std::string* v = take(key)) out = *v;
  }
  void i64(const std::string& key, std::int64_t& out) {
    if (const std::string* v = take(key)) {
      try {
        std::size_t pos = 0;
        out = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + *v + "'");
      }
    }
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const std::string* v = take(key)) {
      try {
        std::size_t pos = 0;
        out = std::stoull(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + *v +
                          "'");
      }
    }
  }
  void f64(const std::string& key, double& out) {
    if (const std::string* v = take(key)) {
      try {
        std::size_t pos = 0;
        out = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + *v + "'");
      }
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const std::string* v = take(key)) {
      if (*v == "true" || *v == "1")
        out = true;
      else if (*v == "false" || *v == "0")
        out = false;
      else
        throw ConfigError("config key '" + key + "': expected true/false, got '" + *v + "'");
    }
  }

  void finish() const {
    for (std::size_t i = 0; i < kv.items.size(); ++i)
      if (!used[i]) throw ConfigError("unknown config key '" + kv.items[i].first + "'");
  }
};

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (d_z < 2 || d_z % 2 != 0)
    throw ConfigError("model.d_z must be even and >= 2, got " + std::to_string(d_z));
  if (data_frames < 2) throw ConfigError("data.frames must be >= 2");
  if (control != "none" && control != "direction" && control != "endpoint")
    throw ConfigError("model.control must be none|direction|endpoint, got '" + control + "'");
  if (flow_blocks < 1 || flows_per_block < 1)
    throw ConfigError("model.flow_blocks and model.flows_per_block must be >= 1");
  if (stage1_batch < 1 || stage2_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (stage1_steps < 1 || stage2_steps < 1) throw ConfigError("step counts must be >= 1");
  if (eval_samples < 2)
    throw ConfigError("eval.samples must be >= 2 (diversity needs sample pairs)");
  if (synth_samples < 1) throw ConfigError("synth.samples must be >= 1");
  if (data_direction_bins < 2) throw ConfigError("data.direction_bins must be >= 2");
  if (stage1_log_every < 1 || stage2_log_every < 1 || stage1_save_every < 1 ||
      stage2_save_every < 1)
    throw ConfigError("log/save intervals must be >= 1");
}

RunConfig run_config_from_kv(const KvMap& kv) {
  RunConfig c;
  KvReader r(kv);
  r.str("data.dir", c.data_dir);
  r.str("data.kind", c.data_kind);
  r.i64("data.n_train", c.data_n_train);
  r.i64("data.n_val", c.data_n_val);
  r.i64("data.n_test", c.data_n_test);
  r.i64("data.frames", c.data_frames);
  r.i64("data.height", c.data_height);
  r.i64("data.width", c.data_width);
  r.i64("data.direction_bins", c.data_direction_bins);
  r.u64("data.seed", c.data_seed);

  r.i64("model.d_z", c.d_z);
  r.i64("model.channels", c.channels);
  r.i64("model.base", c.base);
  r.i64("model.embed_dim", c.embed_dim);
  r.i64("model.dec_blocks", c.dec_blocks);
  r.i64("model.flow_blocks", c.flow_blocks);
  r.i64("model.flows_per_block", c.flows_per_block);
  r.str("model.control", c.control);
  r.boolean("model.use_cinn", c.use_cinn);
  r.boolean("model.use_x0", c.use_x0);
  r.boolean("model.use_adain", c.use_adain);

  r.i64("stage1.steps", c.stage1_steps);
  r.i64("stage1.batch", c.stage1_batch);
  r.f64("stage1.lr", c.stage1_lr);
  r.f64("stage1.beta1", c.stage1_beta1);
  r.f64("stage1.beta2", c.stage1_beta2);
  r.f64("stage1.weight_decay", c.stage1_weight_decay);
  r.f64("stage1.beta", c.beta);
  r.f64("stage1.lambda", c.lambda);
  r.f64("stage1.lambda_f", c.lambda_f);
  r.f64("stage1.lambda_gp", c.lambda_gp);
  r.f64("stage1.frame_ae_weight", c.frame_ae_weight);
  r.boolean("stage1.gan", c.gan);
  r.boolean("stage1.resume", c.stage1_resume);
  r.i64("stage1.save_every", c.stage1_save_every);
  r.i64("stage1.log_every", c.stage1_log_every);

  r.i64("stage2.steps", c.stage2_steps);
  r.i64("stage2.batch", c.stage2_batch);
  r.f64("stage2.lr", c.stage2_lr);
  r.f64("stage2.beta1", c.stage2_beta1);
  r.f64("stage2.beta2", c.stage2_beta2);
  r.boolean("stage2.resume", c.stage2_resume);
  r.i64("stage2.save_every", c.stage2_save_every);
  r.i64("stage2.log_every", c.stage2_log_every);

  r.i64("backbone.epochs", c.backbone_epochs);
  r.i64("backbone.batch", c.backbone_batch);
  r.f64("backbone.lr", c.backbone_lr);
  r.i64("backbone.n_train", c.backbone_n_train);
  r.i64("backbone.n_val", c.backbone_n_val);

  r.i64("eval.samples", c.eval_samples);
  r.i64("synth.samples", c.synth_samples);
  r.i64("synth.starts", c.synth_starts);

  r.u64("run.seed", c.seed);
  r.str("run.out", c.out_dir);
  r.finish();
  c.validate();
  return c;
}

std::string run_config_to_text(const RunConfig& c) {
  std::ostringstream o;
  o << "data.dir = " << c.data_dir << "\n"
    << "data.kind = " << c.data_kind << "\n"
    << "data.n_train = " << c.data_n_train << "\n"
    << "data.n_val = " << c.data_n_val << "\n"
    << "data.n_test = " << c.data_n_test << "\n"
    << "data.frames = " << c.data_frames << "\n"
    << "data.height = " << c.data_height << "\n"
    << "data.width = " << c.data_width << "\n"
    << "data.direction_bins = " << c.data_direction_bins << "\n"
    << "data.seed = " << c.data_seed << "\n"
    << "model.d_z = " << c.d_z << "\n"
    << "model.channels = " << c.channels << "\n"
    << "model.base = " << c.base << "\n"
    << "model.embed_dim = " << c.embed_dim << "\n"
    << "model.dec_blocks = " << c.dec_blocks << "\n"
    << "model.flow_blocks = " << c.flow_blocks << "\n"
    << "model.flows_per_block = " << c.flows_per_block << "\n"
    << "model.control = " << c.control << "\n"
    << "model.use_cinn = " << (c.use_cinn ? "true" : "false") << "\n"
    << "model.use_x0 = " << (c.use_x0 ? "true" : "false") << "\n"
    << "model.use_adain = " << (c.use_adain ? "true" : "false") << "\n"
    << "stage1.steps = " << c.stage1_steps << "\n"
    << "stage1.batch = " << c.stage1_batch << "\n"
    << "stage1.lr = " << fmt_g(c.stage1_lr) << "\n"
    << "stage1.beta1 = " << fmt_g(c.stage1_beta1) << "\n"
    << "stage1.beta2 = " << fmt_g(c.stage1_beta2) << "\n"
    << "stage1.weight_decay = " << fmt_g(c.stage1_weight_decay) << "\n"
    << "stage1.beta = " << fmt_g(c.beta) << "\n"
    << "stage1.lambda = " << fmt_g(c.lambda) << "\n"
    << "stage1.lambda_f = " << fmt_g(c.lambda_f) << "\n"
    << "stage1.lambda_gp = " << fmt_g(c.lambda_gp) << "\n"
    << "stage1.frame_ae_weight = " << fmt_g(c.frame_ae_weight) << "\n"
    << "stage1.gan = " << (c.gan ? "true" : "false") << "\n"
    << "stage1.resume = " << (c.stage1_resume ? "true" : "false") << "\n"
    << "stage1.save_every = " << c.stage1_save_every << "\n"
    << "stage1.log_every = " << c.stage1_log_every << "\n"
    << "stage2.steps = " << c.stage2_steps << "\n"
    << "stage2.batch = " << c.stage2_batch << "\n"
    << "stage2.lr = " << fmt_g(c.stage2_lr) << "\n"
    << "stage2.beta1 = " << fmt_g(c.stage2_beta1) << "\n"
    << "stage2.beta2 = " << fmt_g(c.stage2_beta2) << "\n"
    << "stage2.resume = " << (c.stage2_resume ? "true" : "false") << "\n"
    << "stage2.save_every = " << c.stage2_save_every << "\n"
    << "stage2.log_every = " << c.stage2_log_every << "\n"
    << "backbone.epochs = " << c.backbone_epochs << "\n"
    << "backbone.batch = " << c.backbone_batch << "\n"
    << "backbone.lr = " << fmt_g(c.backbone_lr) << "\n"
    << "backbone.n_train = " << c.backbone_n_train << "\n"
    << "backbone.n_val = " << c.backbone_n_val << "\n"
    << "eval.samples = " << c.eval_samples << "\n"
    << "synth.samples = " << c.synth_samples << "\n"
    << "synth.starts = " << c.synth_starts << "\n"
    << "run.seed = " << c.seed << "\n"
    << "run.out = " << c.out_dir << "\n";
  return o.str();
}

}  // namespace sivs
