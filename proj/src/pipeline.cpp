#include "sivs/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <utility>

#include "sivs/batches.hpp"
#include "sivs/motion.hpp"
#include "sivs/ppm.hpp"

namespace sivs {

namespace {

namespace fs = std::filesystem;

// Every stochastic consumer owns a private stream seeded by mixing the run
// seed with a fixed tag and its step/sample coordinates, so batch order,
// resume points, and evaluation order cannot shift any draw. The tag values
// are pinned in docs/formats.md.
constexpr std::uint64_t kTagStage1Batch = 0x51B1;
constexpr std::uint64_t kTagStage1Eps = 0x51E5;
constexpr std::uint64_t kTagStage1Probe = 0x51F0;
constexpr std::uint64_t kTagStage2Batch = 0x52B1;
constexpr std::uint64_t kTagStage2Eps = 0x52E5;
constexpr std::uint64_t kTagSynth = 0x53A0;
constexpr std::uint64_t kTagControl = 0x53C0;
constexpr std::uint64_t kTagEval = 0x53E0;
constexpr std::uint64_t kTagInitStage1 = 0xA101;
constexpr std::uint64_t kTagInitStage2 = 0xA102;
constexpr std::uint64_t kTagInitDisc = 0xA1D1;
constexpr std::uint64_t kTagBackbone = 0xBB00;

Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a) {
  return Rng(Rng::mix(Rng::mix(seed, tag), a));
}

Rng stream2(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b) {
  return Rng(Rng::mix(Rng::mix(Rng::mix(seed, tag), a), b));
}

// uniform batch indices with replacement
std::vector<std::int64_t> draw_batch(Rng rng, std::int64_t n, std::int64_t b) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(b));
  for (auto& i : idx)
    i = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n)));
  return idx;
}

Tensor<float> normal_tensor(Rng& rng, Shape s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& e : v) e = static_cast<float>(rng.next_normal());
  return Tensor<float>::from(std::move(s), std::move(v));
}

Tensor<double> to_double(const Tensor<float>& x) {
  std::vector<double> v(static_cast<std::size_t>(x.size()));
  for (std::int64_t i = 0; i < x.size(); ++i) v[static_cast<std::size_t>(i)] = x.data()[i];
  return Tensor<double>::from(x.shape, std::move(v));
}

Tensor<float> to_float(const Tensor<double>& x) {
  std::vector<float> v(static_cast<std::size_t>(x.size()));
  for (std::int64_t i = 0; i < x.size(); ++i)
    v[static_cast<std::size_t>(i)] = static_cast<float>(x.data()[i]);
  return Tensor<float>::from(x.shape, std::move(v));
}

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string zpad(std::int64_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*lld", width, static_cast<long long>(v));
  return buf;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_dataset(const RunConfig& cfg, const Dataset& ds, const std::string& name) {
  auto bad = [&](const char* field, std::int64_t got, std::int64_t want) {
    throw ConfigError(name + ": " + field + " is " + std::to_string(got) +
                      " but the config expects " + std::to_string(want));
  };
  if (static_cast<std::int64_t>(ds.frames) != cfg.data_frames)
    bad("frames", ds.frames, cfg.data_frames);
  if (static_cast<std::int64_t>(ds.channels) != cfg.channels)
    bad("channels", ds.channels, cfg.channels);
  if (static_cast<std::int64_t>(ds.height) != cfg.data_height)
    bad("height", ds.height, cfg.data_height);
  if (static_cast<std::int64_t>(ds.width) != cfg.data_width)
    bad("width", ds.width, cfg.data_width);
  if (static_cast<std::int64_t>(ds.direction_bins) != cfg.data_direction_bins)
    bad("direction_bins", ds.direction_bins, cfg.data_direction_bins);
}

void check_data_compat(const RunConfig& cur, const RunConfig& snap, const std::string& what) {
  auto req = [&](const char* key, std::int64_t a, std::int64_t b) {
    if (a != b)
      throw ConfigError(what + ": config mismatch on " + key + " (checkpoint " +
                        std::to_string(b) + ", current " + std::to_string(a) + ")");
  };
  req("data.frames", cur.data_frames, snap.data_frames);
  req("data.height", cur.data_height, snap.data_height);
  req("data.width", cur.data_width, snap.data_width);
  req("data.direction_bins", cur.data_direction_bins, snap.data_direction_bins);
  req("model.channels", cur.channels, snap.channels);
}

Checkpoint load_checkpoint_file(const std::string& path, const char* hint) {
  if (!fs::exists(path))
    throw DataError("missing checkpoint: " + path + " (" + hint + ")");
  return load_checkpoint(path);
}

RunConfig snapshot_config(const Checkpoint& ck) {
  RunConfig snap = run_config_from_kv(parse_kv_text(ck.config_text));
  snap.validate();
  return snap;
}

// [B,C,T,H,W] -> [B,C,H,W], last time slice
Tensor<float> last_frame(const Tensor<float>& clip) {
  const std::int64_t b = clip.dim(0), c = clip.dim(1), t = clip.dim(2);
  const std::int64_t hw = clip.dim(3) * clip.dim(4);
  std::vector<float> v(static_cast<std::size_t>(b * c * hw));
  for (std::int64_t i = 0; i < b * c; ++i)
    std::memcpy(v.data() + i * hw, clip.data() + (i * t + (t - 1)) * hw,
                static_cast<std::size_t>(hw) * sizeof(float));
  return Tensor<float>::from({b, c, clip.dim(3), clip.dim(4)}, std::move(v));
}

// mean posterior-mean reconstruction error over a dataset slice
double recon_l1(const VideoVae<float>& vae, const Tensor<float>& clips, const Tensor<float>& x0s,
                std::int64_t batch) {
  NoGradGuard ng;
  const std::int64_t n = clips.dim(0);
  double acc = 0;
  for (std::int64_t at = 0; at < n; at += batch) {
    const std::int64_t k = std::min(batch, n - at);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = at + i;
    auto x = gather_rows(clips, idx);
    auto x0 = gather_rows(x0s, idx);
    auto [mu, lv] = vae.enc(x);
    (void)lv;
    auto xh = vae.dec(x0, mu);
    acc += static_cast<double>(l1_distance(x, xh).value()) * static_cast<double>(k);
  }
  return acc / static_cast<double>(n);
}

// ---- stage checkpoint shapes ------------------------------------------------

void save_stage1_ckpt(const RunConfig& cfg, const ParamMap<float>& pm, const Adam<float>& opt,
                      std::int64_t step, const std::string& path) {
  Checkpoint ck;
  ck.config_text = run_config_to_text(cfg);
  record_params(ck, pm);
  record_adam(ck, opt, pm);
  ck.add_scalar("meta.step", static_cast<float>(step));
  save_checkpoint(ck, path);
}

void save_stage2_ckpt(const RunConfig& cfg, const FlowStack<float>& flow,
                      const ParamMap<float>& pm, const Adam<float>& opt, std::int64_t step,
                      const std::string& path) {
  Checkpoint ck;
  ck.config_text = run_config_to_text(cfg);
  record_params(ck, pm);
  record_adam(ck, opt, pm);
  for (std::size_t i = 0; i < flow.units.size(); ++i) {
    const auto& perm = flow.units[i].perm;
    std::vector<float> v(perm.begin(), perm.end());
    ck.add("flow.unit" + std::to_string(i) + ".perm",
           {static_cast<std::int64_t>(perm.size())}, std::move(v));
  }
  ck.add_scalar("meta.step", static_cast<float>(step));
  save_checkpoint(ck, path);
}

void restore_flow_perms(const Checkpoint& ck, FlowStack<float>& flow) {
  for (std::size_t i = 0; i < flow.units.size(); ++i) {
    const std::string name = "flow.unit" + std::to_string(i) + ".perm";
    const CkptRecord* rec = ck.find(name);
    if (!rec) throw DataError("checkpoint is missing record '" + name + "'");
    auto& u = flow.units[i];
    if (rec->data.size() != u.perm.size())
      throw DataError("checkpoint record '" + name + "' has the wrong width");
    for (std::size_t j = 0; j < u.perm.size(); ++j)
      u.perm[j] = static_cast<int>(rec->data[j]);
    for (std::size_t j = 0; j < u.perm.size(); ++j)
      u.inv_perm[static_cast<std::size_t>(u.perm[j])] = static_cast<int>(j);
    u.actnorm.initialized = true;
  }
}

// ---- batched synthesis core -------------------------------------------------

// One row of Gaussian residuals per entry of `rngs`, one link after another;
// conditioning is re-embedded from the running last frame, so --chain feeds
// each link's final frame back in as the next start frame.
struct SynthBatch {
  Tensor<float> clips;          // [B, C, chain*T, H, W]
  std::vector<double> nu0, z0;  // first-link residuals/latents, row-major [B, d]
};

SynthBatch synth_batch(const Stage1Model& s1, const FlowStack<double>* flow,
                       const Tensor<float>& x0_in, const Tensor<float>& ctrl,
                       std::vector<Rng>& rngs, std::int64_t chain) {
  NoGradGuard ng;
  const std::int64_t b = x0_in.dim(0), d = s1.cfg.d_z;
  const auto& dims = s1.vae.dims;
  const std::int64_t t = dims.frames, fsz = dims.channels * dims.height * dims.width;
  SynthBatch out;
  std::vector<float> acc(static_cast<std::size_t>(b * dims.channels * chain * t *
                                                  dims.height * dims.width));
  Tensor<float> cur = x0_in;
  for (std::int64_t link = 0; link < chain; ++link) {
    std::vector<double> nu(static_cast<std::size_t>(b * d));
    for (std::int64_t r = 0; r < b; ++r)
      for (std::int64_t j = 0; j < d; ++j)
        nu[static_cast<std::size_t>(r * d + j)] = rngs[static_cast<std::size_t>(r)].next_normal();
    Tensor<double> nut = Tensor<double>::from({b, d}, nu);
    Tensor<float> cond = build_conditioning(s1.vae.fenc(cur), ctrl);
    Tensor<double> zd = flow ? flow->forward(nut, to_double(cond)).first : nut;
    Tensor<float> clip = s1.vae.dec(cur, to_float(zd));  // [B,C,T,H,W]
    for (std::int64_t i = 0; i < b * dims.channels; ++i)
      std::memcpy(acc.data() + (i * chain + link) * t * fsz / dims.channels,
                  clip.data() + i * t * fsz / dims.channels,
                  static_cast<std::size_t>(t * fsz / dims.channels) * sizeof(float));
    if (link == 0) {
      out.nu0 = std::move(nu);
      out.z0.assign(zd.data(), zd.data() + zd.size());
    }
    if (link + 1 < chain) cur = last_frame(clip);
  }
  out.clips = Tensor<float>::from({b, dims.channels, chain * t, dims.height, dims.width},
                                  std::move(acc));
  return out;
}

// control row for one clip's own labels, repeated per sample row
Tensor<float> control_for_clip(const RunConfig& cfg, const DynSpec& spec, std::int64_t b) {
  if (cfg.control == "none") return {};
  std::vector<DynSpec> reps(static_cast<std::size_t>(b), spec);
  return control_rows(cfg, reps);
}

void write_clip_frames(const std::string& dir, const float* clip, std::int64_t frames,
                       std::int64_t h, std::int64_t w) {
  fs::create_directories(dir);
  for (std::int64_t t = 0; t < frames; ++t)
    write_ppm(dir + "/frame" + zpad(t, 2) + ".ppm", clip + t * h * w, h, w);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

// ---- public helpers ----------------------------------------------------------

std::int64_t control_width(const RunConfig& cfg) {
  if (cfg.control == "none") return 0;
  if (cfg.control == "direction") return cfg.data_direction_bins;
  if (cfg.control == "endpoint") return 20;
  throw ConfigError("unknown control mode '" + cfg.control + "'");
}

Tensor<float> control_rows(const RunConfig& cfg, const std::vector<DynSpec>& specs) {
  const std::int64_t w = control_width(cfg);
  if (w == 0) return {};
  const std::int64_t b = static_cast<std::int64_t>(specs.size());
  std::vector<float> v(static_cast<std::size_t>(b * w), 0.f);
  for (std::int64_t i = 0; i < b; ++i) {
    const DynSpec& s = specs[static_cast<std::size_t>(i)];
    if (cfg.control == "direction") {
      if (s.direction_bin >= cfg.data_direction_bins)
        throw DataError("clip label direction_bin out of range");
      v[static_cast<std::size_t>(i * w + s.direction_bin)] = 1.f;
    } else {
      if (s.endpoint_x >= 10 || s.endpoint_y >= 10)
        throw DataError("clip label endpoint cell out of range");
      v[static_cast<std::size_t>(i * w + s.endpoint_x)] = 1.f;
      v[static_cast<std::size_t>(i * w + 10 + s.endpoint_y)] = 1.f;
    }
  }
  return Tensor<float>::from({b, w}, std::move(v));
}

Tensor<float> control_fill(const RunConfig& cfg, int bin, int cell_x, int cell_y,
                           std::int64_t b) {
  const std::int64_t w = control_width(cfg);
  if (w == 0) throw ConfigError("control_fill: model has no control conditioning");
  std::vector<float> v(static_cast<std::size_t>(b * w), 0.f);
  for (std::int64_t i = 0; i < b; ++i) {
    if (cfg.control == "direction") {
      if (bin < 0 || bin >= cfg.data_direction_bins)
        throw ConfigError("--bin must be in [0, " + std::to_string(cfg.data_direction_bins) +
                          ")");
      v[static_cast<std::size_t>(i * w + bin)] = 1.f;
    } else {
      if (cell_x < 0 || cell_x >= 10 || cell_y < 0 || cell_y >= 10)
        throw ConfigError("--cell coordinates must be in [0, 10)");
      v[static_cast<std::size_t>(i * w + cell_x)] = 1.f;
      v[static_cast<std::size_t>(i * w + 10 + cell_y)] = 1.f;
    }
  }
  return Tensor<float>::from({b, w}, std::move(v));
}

VaeDims vae_dims_from(const RunConfig& cfg) {
  VaeDims d;
  d.channels = cfg.channels;
  d.frames = cfg.data_frames - 1;  // the start frame conditions, the rest are modeled
  d.height = cfg.data_height;
  d.width = cfg.data_width;
  d.d_z = cfg.d_z;
  d.base = cfg.base;
  d.dec_blocks = cfg.dec_blocks;
  d.embed_dim = cfg.embed_dim;
  d.use_x0 = cfg.use_x0;
  d.use_adain = cfg.use_adain;
  return d;
}

FlowStack<double> flow_to_double(const FlowStack<float>& f) {
  const std::int64_t hidden = f.units.empty() ? 2 : f.units[0].coupling.fc1.w.dim(0);
  Rng r(0);
  FlowStack<double> g(f.d, f.d_cond, static_cast<int>(f.units.size()), 1, hidden, r);
  auto cast_into = [](const Tensor<float>& src, Tensor<double>& dst) {
    if (src.size() != dst.size()) throw ShapeError("flow_to_double: parameter width changed");
    for (std::int64_t k = 0; k < src.size(); ++k) dst.data()[k] = src.data()[k];
  };
  for (std::size_t i = 0; i < f.units.size(); ++i) {
    const auto& a = f.units[i];
    auto& b = g.units[i];
    cast_into(a.actnorm.log_scale, b.actnorm.log_scale);
    cast_into(a.actnorm.bias, b.actnorm.bias);
    b.actnorm.initialized = a.actnorm.initialized;
    cast_into(a.coupling.fc1.w, b.coupling.fc1.w);
    cast_into(a.coupling.fc1.b, b.coupling.fc1.b);
    cast_into(a.coupling.fc2.w, b.coupling.fc2.w);
    cast_into(a.coupling.fc2.b, b.coupling.fc2.b);
    b.perm = a.perm;
    b.inv_perm = a.inv_perm;
  }
  return g;
}

namespace {

void req_key(const std::string& what, const char* key, const std::string& a,
             const std::string& b) {
  if (a != b)
    throw ConfigError(what + ": config mismatch on " + key + " (checkpoint " + b +
                      ", current " + a + ")");
}

void req_int(const std::string& what, const char* key, std::int64_t a, std::int64_t b) {
  req_key(what, key, std::to_string(a), std::to_string(b));
}

}  // namespace

void check_stage1_compat(const RunConfig& cur, const RunConfig& snap, const std::string& what) {
  req_int(what, "model.d_z", cur.d_z, snap.d_z);
  req_int(what, "model.channels", cur.channels, snap.channels);
  req_int(what, "model.base", cur.base, snap.base);
  req_int(what, "model.embed_dim", cur.embed_dim, snap.embed_dim);
  req_int(what, "model.dec_blocks", cur.dec_blocks, snap.dec_blocks);
  req_int(what, "model.use_x0", cur.use_x0, snap.use_x0);
  req_int(what, "model.use_adain", cur.use_adain, snap.use_adain);
  check_data_compat(cur, snap, what);
}

void check_stage2_compat(const RunConfig& cur, const RunConfig& snap, const std::string& what) {
  req_int(what, "model.d_z", cur.d_z, snap.d_z);
  req_int(what, "model.embed_dim", cur.embed_dim, snap.embed_dim);
  req_int(what, "model.flow_blocks", cur.flow_blocks, snap.flow_blocks);
  req_int(what, "model.flows_per_block", cur.flows_per_block, snap.flows_per_block);
  req_key(what, "model.control", cur.control, snap.control);
  check_data_compat(cur, snap, what);
}

Stage1Model load_stage1(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path, "run train-stage1 first");
  Stage1Model m;
  m.cfg = snapshot_config(ck);
  Rng r(0);
  m.vae = VideoVae<float>(vae_dims_from(m.cfg), r);
  ParamMap<float> pm;
  m.vae.collect(pm, "vae");
  restore_params(ck, pm);
  m.step = static_cast<std::int64_t>(ck.scalar("meta.step"));
  return m;
}

Stage2Model load_stage2(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path, "run train-stage2 first");
  Stage2Model m;
  m.cfg = snapshot_config(ck);
  Rng r(0);
  m.flow = FlowStack<float>(m.cfg.d_z, m.cfg.embed_dim + control_width(m.cfg),
                            static_cast<int>(m.cfg.flow_blocks),
                            static_cast<int>(m.cfg.flows_per_block), 4 * m.cfg.d_z, r);
  ParamMap<float> pm;
  m.flow.collect(pm, "flow");
  restore_params(ck, pm);
  restore_flow_perms(ck, m.flow);
  m.step = static_cast<std::int64_t>(ck.scalar("meta.step"));
  return m;
}

BackboneSet load_backbone(const std::string& path) {
  Checkpoint ck = load_checkpoint_file(path, "run train-backbone first");
  BackboneSet bb;
  bb.cfg = snapshot_config(ck);
  const RunConfig& c = bb.cfg;
  const std::int64_t t = c.data_frames - 1;
  Rng r(0);
  bb.frame_net = FrameNet<float>(c.channels, c.data_height, c.data_width, 3, r);
  bb.clip_fvd = ClipNet<float>(c.channels, t, c.data_height, c.data_width, 3, r);
  bb.clip_dtfvd = ClipNet<float>(c.channels, t, c.data_height, c.data_width,
                                 static_cast<int>(c.data_direction_bins), r);
  bb.clip_fvd16 = ClipNet<float>(c.channels, 16, c.data_height, c.data_width, 3, r);
  ParamMap<float> pm;
  bb.frame_net.collect(pm, "frame_net");
  bb.clip_fvd.collect(pm, "clip_fvd");
  bb.clip_dtfvd.collect(pm, "clip_dtfvd");
  bb.clip_fvd16.collect(pm, "clip_fvd16");
  restore_params(ck, pm);
  bb.acc_frame = ck.scalar("meta.acc.frame");
  bb.acc_fvd = ck.scalar("meta.acc.clip_fvd");
  bb.acc_dtfvd = ck.scalar("meta.acc.clip_dtfvd");
  bb.acc_fvd16 = ck.scalar("meta.acc.clip_fvd16");
  return bb;
}

// ---- commands ----------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  BenchmarkSpec spec;
  spec.kind = parse_data_kind(cfg.data_kind);
  spec.n_train = static_cast<std::uint32_t>(cfg.data_n_train);
  spec.n_val = static_cast<std::uint32_t>(cfg.data_n_val);
  spec.n_test = static_cast<std::uint32_t>(cfg.data_n_test);
  spec.frames = static_cast<std::uint32_t>(cfg.data_frames);
  spec.height = static_cast<std::uint32_t>(cfg.data_height);
  spec.width = static_cast<std::uint32_t>(cfg.data_width);
  spec.direction_bins = static_cast<std::uint32_t>(cfg.data_direction_bins);
  spec.seed = cfg.data_seed;
  make_benchmark(spec, cfg.data_dir);
  std::cout << "gen-data: wrote " << cfg.data_dir << " (" << cfg.data_n_train << "/"
            << cfg.data_n_val << "/" << cfg.data_n_test << " clips, kind " << cfg.data_kind
            << ")\n";
  return 0;
}

int cmd_train_backbone(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  const std::int64_t t = cfg.data_frames - 1;

  BenchmarkSpec base;
  base.frames = static_cast<std::uint32_t>(cfg.data_frames);
  base.height = static_cast<std::uint32_t>(cfg.data_height);
  base.width = static_cast<std::uint32_t>(cfg.data_width);
  base.direction_bins = static_cast<std::uint32_t>(cfg.data_direction_bins);

  const auto n_tr = static_cast<std::uint32_t>(cfg.backbone_n_train);
  const auto n_va = static_cast<std::uint32_t>(cfg.backbone_n_val);
  const int ep = static_cast<int>(cfg.backbone_epochs);
  const float lr = static_cast<float>(cfg.backbone_lr);

  Checkpoint ck;
  ck.config_text = run_config_to_text(cfg);
  ParamMap<float> pm;

  // clip-kind nets train on a mixed-kind set generated just for them
  BenchmarkSpec mix = base;
  mix.kind = DataKind::mixed;
  mix.seed = Rng::mix(cfg.seed, kTagBackbone + 1);
  Dataset mtr = generate_dataset(mix, n_tr, 11);
  Dataset mva = generate_dataset(mix, n_va, 12);

  Rng r1 = stream(cfg.seed, kTagBackbone, 1);
  FrameNet<float> frame_net(cfg.channels, cfg.data_height, cfg.data_width, 3, r1);
  frame_net.collect(pm, "frame_net");
  ClassifierCfg cc;
  cc.batch = cfg.backbone_batch;
  cc.lr = lr;
  cc.seed = Rng::mix(cfg.seed, kTagBackbone + 2);
  cc.epochs = std::max(2, ep / 4);
  const double acc_frame =
      train_classifier(frame_net, pm, all_frames_tensor(mtr), frame_kind_labels(mtr),
                       all_frames_tensor(mva), frame_kind_labels(mva), cc);

  Rng r2 = stream(cfg.seed, kTagBackbone, 2);
  ClipNet<float> clip_fvd(cfg.channels, t, cfg.data_height, cfg.data_width, 3, r2);
  ParamMap<float> pm_fvd;
  clip_fvd.collect(pm_fvd, "clip_fvd");
  cc.epochs = std::max(3, ep / 2);
  cc.seed = Rng::mix(cfg.seed, kTagBackbone + 3);
  const double acc_fvd =
      train_classifier(clip_fvd, pm_fvd, clips_tensor(mtr, 1, t), kind_labels(mtr),
                       clips_tensor(mva, 1, t), kind_labels(mva), cc);
  clip_fvd.collect(pm, "clip_fvd");

  // the dynamics net learns direction bins on a drift-only set
  BenchmarkSpec dspec = base;
  dspec.kind = DataKind::drift;
  dspec.seed = Rng::mix(cfg.seed, kTagBackbone + 4);
  Dataset dtr = generate_dataset(dspec, n_tr, 13);
  Dataset dva = generate_dataset(dspec, n_va, 14);
  Rng r3 = stream(cfg.seed, kTagBackbone, 3);
  ClipNet<float> clip_dtfvd(cfg.channels, t, cfg.data_height, cfg.data_width,
                            static_cast<int>(cfg.data_direction_bins), r3);
  ParamMap<float> pm_dt;
  clip_dtfvd.collect(pm_dt, "clip_dtfvd");
  cc.epochs = ep;
  cc.seed = Rng::mix(cfg.seed, kTagBackbone + 5);
  const double acc_dtfvd =
      train_classifier(clip_dtfvd, pm_dt, clips_tensor(dtr, 1, t), direction_labels(dtr),
                       clips_tensor(dva, 1, t), direction_labels(dva), cc);
  clip_dtfvd.collect(pm, "clip_dtfvd");

  // 16-frame variant for chained-clip evaluation
  BenchmarkSpec m16 = base;
  m16.kind = DataKind::mixed;
  m16.frames = 17;
  m16.seed = Rng::mix(cfg.seed, kTagBackbone + 6);
  Dataset str16 = generate_dataset(m16, std::max<std::uint32_t>(n_tr / 2, 60), 15);
  Dataset sva16 = generate_dataset(m16, std::max<std::uint32_t>(n_va / 2, 30), 16);
  Rng r4 = stream(cfg.seed, kTagBackbone, 4);
  ClipNet<float> clip_fvd16(cfg.channels, 16, cfg.data_height, cfg.data_width, 3, r4);
  ParamMap<float> pm16;
  clip_fvd16.collect(pm16, "clip_fvd16");
  cc.epochs = std::max(2, ep / 4);
  cc.seed = Rng::mix(cfg.seed, kTagBackbone + 7);
  const double acc_fvd16 =
      train_classifier(clip_fvd16, pm16, clips_tensor(str16, 1, 16), kind_labels(str16),
                       clips_tensor(sva16, 1, 16), kind_labels(sva16), cc);
  clip_fvd16.collect(pm, "clip_fvd16");

  record_params(ck, pm);
  ck.add_scalar("meta.acc.frame", static_cast<float>(acc_frame));
  ck.add_scalar("meta.acc.clip_fvd", static_cast<float>(acc_fvd));
  ck.add_scalar("meta.acc.clip_dtfvd", static_cast<float>(acc_dtfvd));
  ck.add_scalar("meta.acc.clip_fvd16", static_cast<float>(acc_fvd16));
  save_checkpoint(ck, cfg.out_dir + "/backbone.sivc");

  const auto seed = cfg.seed;
  std::vector<MetricRow> rows{
      {"backbone-acc-frame", "val", acc_frame, mva.clips() * cfg.data_frames, seed},
      {"backbone-acc-clip-fvd", "val", acc_fvd, mva.clips(), seed},
      {"backbone-acc-clip-dtfvd", "val", acc_dtfvd, dva.clips(), seed},
      {"backbone-acc-clip-fvd16", "val", acc_fvd16, sva16.clips(), seed},
  };
  write_metrics_csv(cfg.out_dir + "/backbone_report.csv", rows);
  std::cout << "train-backbone: frame " << acc_frame << ", clip_fvd " << acc_fvd
            << ", clip_dtfvd " << acc_dtfvd << ", clip_fvd16 " << acc_fvd16 << " ("
            << fmt_g(elapsed_s(t0)) << " s)\n";
  return 0;
}

int cmd_train_stage1(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  Dataset train = read_dataset(cfg.data_dir + "/train.sivs");
  Dataset val = read_dataset(cfg.data_dir + "/val.sivs");
  check_dataset(cfg, train, "train.sivs");
  check_dataset(cfg, val, "val.sivs");
  const std::int64_t tm = cfg.data_frames - 1;
  Tensor<float> clips = clips_tensor(train, 1, tm);
  Tensor<float> x0s = start_frames_tensor(train);
  const std::int64_t n = train.clips();

  BackboneSet bb = load_backbone(cfg.out_dir + "/backbone.sivc");
  check_data_compat(cfg, bb.cfg, "backbone.sivc");
  auto fnet = std::make_shared<FrameNet<float>>(std::move(bb.frame_net));
  PerceptualFn<float> phi = make_frame_perceptual<float>(fnet);

  VaeDims dims = vae_dims_from(cfg);
  Rng init = stream(cfg.seed, kTagInitStage1, 0);
  VideoVae<float> vae(dims, init);
  ParamMap<float> pm;
  vae.collect(pm, "vae");
  Adam<float> opt(static_cast<float>(cfg.stage1_lr), static_cast<float>(cfg.stage1_beta1),
                  static_cast<float>(cfg.stage1_beta2),
                  static_cast<float>(cfg.stage1_weight_decay));

  DiscriminatorPair<float> disc;
  ParamMap<float> dpm;
  Adam<float> dopt(static_cast<float>(cfg.stage1_lr), static_cast<float>(cfg.stage1_beta1),
                   static_cast<float>(cfg.stage1_beta2), 0.f);
  if (cfg.gan) {
    Rng dinit = stream(cfg.seed, kTagInitDisc, 0);
    disc = DiscriminatorPair<float>(cfg.channels, dinit);
    disc.collect(dpm, "disc");
  }

  const std::string ck_path = cfg.out_dir + "/stage1.sivc";
  const std::string dck_path = cfg.out_dir + "/stage1_disc.sivc";
  std::int64_t start = 0;
  if (cfg.stage1_resume) {
    Checkpoint ck = load_checkpoint_file(ck_path, "stage1.resume needs a previous run");
    RunConfig snap = snapshot_config(ck);
    check_stage1_compat(cfg, snap, ck_path);
    restore_params(ck, pm);
    restore_adam(ck, opt, pm);
    start = static_cast<std::int64_t>(ck.scalar("meta.step"));
    if (cfg.gan) {
      Checkpoint dck = load_checkpoint_file(dck_path, "stage1.resume with stage1.gan=true");
      restore_params(dck, dpm);
      restore_adam(dck, dopt, dpm);
    }
  }
  if (start >= cfg.stage1_steps) {
    std::cout << "stage 1: checkpoint already at step " << start << ", nothing to do\n";
    return 0;
  }

  std::ofstream log;
  if (start == 0) {
    log.open(cfg.out_dir + "/stage1_loss.csv", std::ios::trunc);
    log << "step,total,l1,perceptual,kl,frame_ae,g_spatial,g_temporal,fm,d_loss,gp\n";
  } else {
    log.open(cfg.out_dir + "/stage1_loss.csv", std::ios::app);
  }
  if (!log) throw DataError("cannot open stage1_loss.csv for writing");

  Stage1Weights w;
  w.lambda = cfg.lambda;
  w.lambda_f = cfg.lambda_f;
  w.beta = cfg.beta;
  w.gan = cfg.gan;

  double vt = 0;
  for (std::int64_t s = start; s < cfg.stage1_steps; ++s) {
    auto idx = draw_batch(stream(cfg.seed, kTagStage1Batch, static_cast<std::uint64_t>(s)), n,
                          cfg.stage1_batch);
    Tensor<float> x = gather_rows(clips, idx);
    Tensor<float> x0 = gather_rows(x0s, idx);
    Rng eps_rng = stream(cfg.seed, kTagStage1Eps, static_cast<std::uint64_t>(s));

    Tensor<float> fake;
    double vl1 = 0, vperc = 0, vkl = 0, vfae = 0, vgs = 0, vgt = 0, vfm = 0;
    {
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      auto [mu, lv] = vae.enc(x);
      auto zs = reparameterize(mu, lv, normal_tensor(eps_rng, mu.shape));
      auto xh = vae.dec(x0, zs);
      Stage1Parts<float> parts = stage1_loss(x, xh, mu, lv, w, phi, cfg.gan ? &disc : nullptr);
      auto emb = vae.fenc(x0);
      auto fae = l1_distance(x0, vae.fdec(emb));
      auto total = add(parts.total, scale(fae, static_cast<float>(cfg.frame_ae_weight)));
      vt = total.value();
      vl1 = parts.l1.value();
      vperc = parts.perceptual.value();
      vkl = parts.kl.value();
      vfae = fae.value();
      vgs = parts.g_spatial.value();
      vgt = parts.g_temporal.value();
      vfm = parts.fm.value();
      if (!std::isfinite(vt))
        throw NumericError("stage 1: non-finite loss at step " + std::to_string(s));
      pm.zero_grad();
      tape.backward(total);
      opt.step(pm);
      if (cfg.gan) fake = detach(xh);
    }

    double vdl = 0, vgp = 0;
    if (cfg.gan) {
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      auto real_s = disc.d_spatial(x);
      auto real_t = disc.d_temporal(x);
      auto fake_s = disc.d_spatial(fake);
      auto fake_t = disc.d_temporal(fake);
      auto hs = hinge_losses(real_s.logits, fake_s.logits);
      auto ht = hinge_losses(real_t.logits, fake_t.logits);
      Rng prng = stream(cfg.seed, kTagStage1Probe, static_cast<std::uint64_t>(s));
      auto probe = normal_tensor(prng, x.shape);
      auto gp = gradient_penalty_probe([&disc](const Tensor<float>& v) { return disc.d_temporal(v); },
                                       x, probe, static_cast<float>(cfg.lambda_gp), 1e-2f);
      auto dtotal = add(add(hs.first, ht.first), gp);
      vdl = static_cast<double>(hs.first.value()) + ht.first.value();
      vgp = gp.value();
      if (!std::isfinite(dtotal.value()))
        throw NumericError("stage 1: non-finite discriminator loss at step " + std::to_string(s));
      dpm.zero_grad();
      tape.backward(dtotal);
      dopt.step(dpm);
    }

    if (s % cfg.stage1_log_every == 0 || s + 1 == cfg.stage1_steps)
      log << s << ',' << fmt_g(vt) << ',' << fmt_g(vl1) << ',' << fmt_g(vperc) << ','
          << fmt_g(vkl) << ',' << fmt_g(vfae) << ',' << fmt_g(vgs) << ',' << fmt_g(vgt) << ','
          << fmt_g(vfm) << ',' << fmt_g(vdl) << ',' << fmt_g(vgp) << '\n';
    if ((s + 1) % cfg.stage1_save_every == 0 || s + 1 == cfg.stage1_steps) {
      save_stage1_ckpt(cfg, pm, opt, s + 1, ck_path);
      if (cfg.gan) {
        Checkpoint dck;
        dck.config_text = run_config_to_text(cfg);
        record_params(dck, dpm);
        record_adam(dck, dopt, dpm);
        dck.add_scalar("meta.step", static_cast<float>(s + 1));
        save_checkpoint(dck, dck_path);
      }
    }
  }
  log.close();

  // held-out reconstruction through the posterior mean, plus a few sheets
  Tensor<float> vclips = clips_tensor(val, 1, tm);
  Tensor<float> vx0 = start_frames_tensor(val);
  const double rl1 = recon_l1(vae, vclips, vx0, std::min<std::int64_t>(16, val.clips()));
  write_metrics_csv(cfg.out_dir + "/stage1_metrics.csv",
                    {{"recon-l1", "val", rl1, val.clips(), cfg.seed}});
  {
    NoGradGuard ng;
    const std::int64_t hw = cfg.data_height * cfg.data_width;
    for (std::int64_t i = 0; i < std::min<std::int64_t>(4, val.clips()); ++i) {
      std::vector<std::int64_t> one{i};
      auto x = gather_rows(vclips, one);
      auto x0 = gather_rows(vx0, one);
      auto xh = vae.dec(x0, vae.enc(x).first);
      std::vector<float> sheet(static_cast<std::size_t>(2 * tm * hw));
      std::memcpy(sheet.data(), x.data(), static_cast<std::size_t>(tm * hw) * sizeof(float));
      std::memcpy(sheet.data() + tm * hw, xh.data(),
                  static_cast<std::size_t>(tm * hw) * sizeof(float));
      write_contact_sheet(cfg.out_dir + "/recon_val_" + std::to_string(i) + ".ppm",
                          sheet.data(), 2, tm, cfg.data_height, cfg.data_width);
    }
  }
  const double secs = elapsed_s(t0);
  const std::int64_t done = cfg.stage1_steps - start;
  std::cout << "stage 1: " << done << " steps in " << fmt_g(secs) << " s ("
            << fmt_g(secs / std::max<std::int64_t>(1, done)) << " s/step), final total "
            << fmt_g(vt) << ", val recon-l1 " << fmt_g(rl1) << "\n";
  return 0;
}

int cmd_train_stage2(const RunConfig& cfg) {
  if (!cfg.use_cinn)
    throw ConfigError("train-stage2: model.use_cinn=false leaves nothing to train");
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  Stage1Model s1 = load_stage1(cfg.out_dir + "/stage1.sivc");
  check_stage1_compat(cfg, s1.cfg, "stage1.sivc");
  Dataset train = read_dataset(cfg.data_dir + "/train.sivs");
  check_dataset(cfg, train, "train.sivs");
  const std::int64_t tm = cfg.data_frames - 1;
  Tensor<float> clips = clips_tensor(train, 1, tm);
  Tensor<float> x0s = start_frames_tensor(train);
  Tensor<float> ctrl_all = control_rows(cfg, train.specs);
  const std::int64_t n = train.clips();

  Rng init = stream(cfg.seed, kTagInitStage2, 0);
  FlowStack<float> flow(cfg.d_z, cfg.embed_dim + control_width(cfg),
                        static_cast<int>(cfg.flow_blocks),
                        static_cast<int>(cfg.flows_per_block), 4 * cfg.d_z, init);
  ParamMap<float> pm;
  flow.collect(pm, "flow");
  Adam<float> opt(static_cast<float>(cfg.stage2_lr), static_cast<float>(cfg.stage2_beta1),
                  static_cast<float>(cfg.stage2_beta2), 0.f);

  const std::string ck_path = cfg.out_dir + "/stage2.sivc";
  std::int64_t start = 0;
  if (cfg.stage2_resume) {
    Checkpoint ck = load_checkpoint_file(ck_path, "stage2.resume needs a previous run");
    RunConfig snap = snapshot_config(ck);
    check_stage2_compat(cfg, snap, ck_path);
    restore_params(ck, pm);
    restore_adam(ck, opt, pm);
    restore_flow_perms(ck, flow);
    start = static_cast<std::int64_t>(ck.scalar("meta.step"));
  }
  if (start >= cfg.stage2_steps) {
    std::cout << "stage 2: checkpoint already at step " << start << ", nothing to do\n";
    return 0;
  }

  std::ofstream log;
  if (start == 0) {
    log.open(cfg.out_dir + "/stage2_nll.csv", std::ios::trunc);
    log << "step,nll,lr\n";
  } else {
    log.open(cfg.out_dir + "/stage2_nll.csv", std::ios::app);
  }
  if (!log) throw DataError("cannot open stage2_nll.csv for writing");

  double first_nll = 0, nv = 0;
  for (std::int64_t s = start; s < cfg.stage2_steps; ++s) {
    auto idx = draw_batch(stream(cfg.seed, kTagStage2Batch, static_cast<std::uint64_t>(s)), n,
                          cfg.stage2_batch);
    Tensor<float> zt, cond;
    {
      // the stage-1 model is frozen: targets and conditioning are constants
      NoGradGuard ng;
      auto x = gather_rows(clips, idx);
      auto x0 = gather_rows(x0s, idx);
      auto [mu, lv] = s1.vae.enc(x);
      Rng er = stream(cfg.seed, kTagStage2Eps, static_cast<std::uint64_t>(s));
      zt = reparameterize(mu, lv, normal_tensor(er, mu.shape));
      Tensor<float> ctrl = ctrl_all.defined() ? gather_rows(ctrl_all, idx) : Tensor<float>();
      cond = build_conditioning(s1.vae.fenc(x0), ctrl);
    }
    if (s == 0 && !flow.actnorm_initialized()) flow.initialize_actnorm(zt, cond);
    const double lr_s = cfg.stage2_lr * (1.0 - static_cast<double>(s) /
                                                   static_cast<double>(cfg.stage2_steps));
    opt.lr = static_cast<float>(lr_s);
    {
      Tape<float> tape;
      Tape<float>::Scope scope(tape);
      auto nll = flow_nll(flow, zt, cond);
      nv = nll.value();
      pm.zero_grad();
      tape.backward(nll);
      opt.step(pm);
    }
    if (s == start) first_nll = nv;
    if (s % cfg.stage2_log_every == 0 || s + 1 == cfg.stage2_steps)
      log << s << ',' << fmt_g(nv) << ',' << fmt_g(lr_s) << '\n';
    if ((s + 1) % cfg.stage2_save_every == 0 || s + 1 == cfg.stage2_steps)
      save_stage2_ckpt(cfg, flow, pm, opt, s + 1, ck_path);
  }
  log.close();
  const double secs = elapsed_s(t0);
  const std::int64_t done = cfg.stage2_steps - start;
  std::cout << "stage 2: " << done << " steps in " << fmt_g(secs) << " s, NLL "
            << fmt_g(first_nll) << " -> " << fmt_g(nv) << " (identity-init reference "
            << fmt_g(static_cast<double>(cfg.d_z) / 2.0 * (1.0 + std::log(2.0 * 3.14159265358979323846)))
            << ")\n";
  return 0;
}

namespace {

// common load for the synthesis-side commands
struct SynthSetup {
  Stage1Model s1;
  std::unique_ptr<FlowStack<double>> flow;  // null when the flow is ablated
  Dataset test;
};

SynthSetup synth_setup(const RunConfig& cfg, bool want_flow, const char* cmd) {
  SynthSetup su;
  su.s1 = load_stage1(cfg.out_dir + "/stage1.sivc");
  check_stage1_compat(cfg, su.s1.cfg, "stage1.sivc");
  if (want_flow) {
    Stage2Model s2 = load_stage2(cfg.out_dir + "/stage2.sivc");
    check_stage2_compat(cfg, s2.cfg, "stage2.sivc");
    su.flow = std::make_unique<FlowStack<double>>(flow_to_double(s2.flow));
  } else if (cfg.control != "none") {
    throw ConfigError(std::string(cmd) +
                      ": control conditioning runs through the flow; it cannot be combined "
                      "with --no-cinn / model.use_cinn=false");
  }
  su.test = read_dataset(cfg.data_dir + "/test.sivs");
  check_dataset(cfg, su.test, "test.sivs");
  return su;
}

}  // namespace

int cmd_synthesize(const RunConfig& cfg, const CmdOpts& opts) {
  const bool use_flow = cfg.use_cinn && !opts.no_cinn;
  SynthSetup su = synth_setup(cfg, use_flow, "synthesize");
  const std::int64_t n = su.test.clips();
  const std::int64_t starts = cfg.synth_starts < 0 ? n : std::min(cfg.synth_starts, n);
  const std::int64_t s_per = cfg.synth_samples;
  const std::int64_t chain = std::max<std::int64_t>(1, opts.chain);
  const std::int64_t tm = cfg.data_frames - 1, d = cfg.d_z;
  const std::string dir = cfg.out_dir + "/synth";
  fs::create_directories(dir);

  std::ofstream lat(dir + "/latents.csv", std::ios::trunc);
  lat << "start,sample";
  for (std::int64_t j = 0; j < d; ++j) lat << ",nu" << j;
  for (std::int64_t j = 0; j < d; ++j) lat << ",z" << j;
  lat << '\n';

  Tensor<float> x0s = start_frames_tensor(su.test);
  for (std::int64_t i = 0; i < starts; ++i) {
    std::vector<std::int64_t> reps(static_cast<std::size_t>(s_per), i);
    Tensor<float> x0 = gather_rows(x0s, reps);
    Tensor<float> ctrl = control_for_clip(cfg, su.test.specs[static_cast<std::size_t>(i)], s_per);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(s_per));
    for (std::int64_t s = 0; s < s_per; ++s)
      rngs.push_back(stream2(cfg.seed, kTagSynth, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(s)));
    SynthBatch sb = synth_batch(su.s1, su.flow.get(), x0, ctrl, rngs, chain);
    const std::int64_t frames = chain * tm;
    const std::int64_t fhw = cfg.data_height * cfg.data_width;
    for (std::int64_t s = 0; s < s_per; ++s) {
      const float* clip = sb.clips.data() + s * cfg.channels * frames * fhw;
      const std::string stem = dir + "/clip" + zpad(i, 3) + "_s" + zpad(s, 2);
      write_clip_frames(stem, clip, frames, cfg.data_height, cfg.data_width);
      write_contact_sheet(stem + "_sheet.ppm", clip, chain, tm, cfg.data_height,
                          cfg.data_width);
      lat << i << ',' << s;
      for (std::int64_t j = 0; j < d; ++j)
        lat << ',' << fmt_g(sb.nu0[static_cast<std::size_t>(s * d + j)]);
      for (std::int64_t j = 0; j < d; ++j)
        lat << ',' << fmt_g(sb.z0[static_cast<std::size_t>(s * d + j)]);
      lat << '\n';
    }
  }
  lat.close();
  std::cout << "synthesize: wrote " << starts * s_per << " clips (" << starts << " starts x "
            << s_per << " samples, chain " << chain << ") under " << dir << "\n";
  return 0;
}

int cmd_control(const RunConfig& cfg, const CmdOpts& opts) {
  if (cfg.control == "none")
    throw ConfigError("control: the model was trained without control conditioning "
                      "(set model.control and retrain)");
  if (!cfg.use_cinn || opts.no_cinn)
    throw ConfigError("control: requested-attribute synthesis needs the flow");
  const bool direction = cfg.control == "direction";
  if (direction && opts.bin < 0)
    throw ConfigError("control: --bin is required for a direction-conditioned model");
  if (!direction && (opts.cell_x < 0 || opts.cell_y < 0))
    throw ConfigError("control: --cell X Y is required for an endpoint-conditioned model");

  SynthSetup su = synth_setup(cfg, true, "control");
  const std::int64_t n = su.test.clips();
  const std::int64_t starts = cfg.synth_starts < 0 ? n : std::min(cfg.synth_starts, n);
  const std::int64_t s_per = cfg.synth_samples;
  const std::int64_t tm = cfg.data_frames - 1;
  const std::int64_t hw = cfg.data_height * cfg.data_width;
  const std::string dir = cfg.out_dir + "/control";
  fs::create_directories(dir);

  std::ofstream rep(cfg.out_dir + "/control_report.csv", std::ios::trunc);
  if (direction)
    rep << "start,sample,requested,realized,match\n";
  else
    rep << "start,sample,req_x,req_y,real_x,real_y,match\n";

  Tensor<float> x0s = start_frames_tensor(su.test);
  Tensor<float> ctrl = control_fill(cfg, opts.bin, opts.cell_x, opts.cell_y, s_per);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < starts; ++i) {
    std::vector<std::int64_t> reps(static_cast<std::size_t>(s_per), i);
    Tensor<float> x0 = gather_rows(x0s, reps);
    std::vector<Rng> rngs;
    for (std::int64_t s = 0; s < s_per; ++s)
      rngs.push_back(stream2(cfg.seed, kTagControl, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(s)));
    SynthBatch sb = synth_batch(su.s1, su.flow.get(), x0, ctrl, rngs, 1);
    for (std::int64_t s = 0; s < s_per; ++s) {
      const float* clip = sb.clips.data() + s * cfg.channels * tm * hw;
      bool ok = false;
      if (direction) {
        MotionEstimate me = estimate_motion(clip, static_cast<int>(tm),
                                            static_cast<int>(cfg.data_height),
                                            static_cast<int>(cfg.data_width));
        const int realized = me.direction_bin(static_cast<int>(cfg.data_direction_bins));
        ok = realized == opts.bin;
        rep << i << ',' << s << ',' << opts.bin << ',' << realized << ',' << (ok ? 1 : 0)
            << '\n';
      } else {
        Centroid c = frame_peak(clip + (tm - 1) * hw, static_cast<int>(cfg.data_height),
                                static_cast<int>(cfg.data_width));
        const int rx = c.cell_x(10, static_cast<int>(cfg.data_width));
        const int ry = c.cell_y(10, static_cast<int>(cfg.data_height));
        ok = rx == opts.cell_x && ry == opts.cell_y;
        rep << i << ',' << s << ',' << opts.cell_x << ',' << opts.cell_y << ',' << rx << ','
            << ry << ',' << (ok ? 1 : 0) << '\n';
      }
      hits += ok ? 1 : 0;
      if (i < 8)
        write_contact_sheet(dir + "/clip" + zpad(i, 3) + "_s" + zpad(s, 2) + "_sheet.ppm",
                            clip, 1, tm, cfg.data_height, cfg.data_width);
    }
  }
  rep.close();
  const double acc = static_cast<double>(hits) / static_cast<double>(starts * s_per);
  const std::string name = direction ? "control-direction-accuracy" : "control-endpoint-accuracy";
  write_metrics_csv(cfg.out_dir + "/control_summary.csv",
                    {{name, "synth", acc, starts * s_per, cfg.seed}});
  std::cout << "control: " << name << " " << fmt_g(acc) << " over " << starts * s_per
            << " clips\n";
  return 0;
}

int cmd_transfer(const RunConfig& cfg, const CmdOpts& opts) {
  if (!cfg.use_cinn || opts.no_cinn)
    throw ConfigError("transfer: motion transfer needs the flow");
  SynthSetup su = synth_setup(cfg, true, "transfer");
  const std::int64_t n = su.test.clips();
  if (opts.source < 0 || opts.source >= n)
    throw DataError("transfer: --source " + std::to_string(opts.source) +
                    " is outside the test split (0.." + std::to_string(n - 1) + ")");
  const std::int64_t targets = opts.targets < 0 ? n : std::min(opts.targets, n);
  const std::int64_t tm = cfg.data_frames - 1, d = cfg.d_z;
  const std::int64_t hw = cfg.data_height * cfg.data_width;
  const std::string dir = cfg.out_dir + "/transfer";
  fs::create_directories(dir);

  NoGradGuard ng;
  Tensor<float> clips = clips_tensor(su.test, 1, tm);
  Tensor<float> x0s = start_frames_tensor(su.test);
  const DynSpec& src_spec = su.test.specs[static_cast<std::size_t>(opts.source)];

  // the source motion code is the posterior mean, normalized against the
  // source's own conditioning
  std::vector<std::int64_t> one{opts.source};
  Tensor<float> x_src = gather_rows(clips, one);
  Tensor<float> x0_src = gather_rows(x0s, one);
  Tensor<float> z_src = su.s1.vae.enc(x_src).first;
  Tensor<float> ctrl_src = control_for_clip(cfg, src_spec, 1);
  Tensor<float> c_src = build_conditioning(su.s1.vae.fenc(x0_src), ctrl_src);
  Tensor<double> nu_t = su.flow->inverse(to_double(z_src), to_double(c_src)).first;
  Tensor<double> z_rt = su.flow->forward(nu_t, to_double(c_src)).first;
  double rt_err = 0;
  for (std::int64_t j = 0; j < d; ++j)
    rt_err = std::max(rt_err, std::abs(z_rt.data()[j] - static_cast<double>(z_src.data()[j])));

  // re-synthesize the same residual against every target's conditioning,
  // carrying the source's control labels when the model is conditioned
  std::vector<std::int64_t> tidx(static_cast<std::size_t>(targets));
  for (std::int64_t j = 0; j < targets; ++j) tidx[static_cast<std::size_t>(j)] = j;
  Tensor<float> x0_t = gather_rows(x0s, tidx);
  Tensor<float> ctrl_t = control_for_clip(cfg, src_spec, targets);
  Tensor<float> c_t = build_conditioning(su.s1.vae.fenc(x0_t), ctrl_t);
  std::vector<double> nu_rep(static_cast<std::size_t>(targets * d));
  for (std::int64_t j = 0; j < targets; ++j)
    std::memcpy(nu_rep.data() + j * d, nu_t.data(), static_cast<std::size_t>(d) * sizeof(double));
  Tensor<double> z_t =
      su.flow->forward(Tensor<double>::from({targets, d}, std::move(nu_rep)), to_double(c_t)).first;
  Tensor<float> xh = su.s1.vae.dec(x0_t, to_float(z_t));

  std::ofstream rep(cfg.out_dir + "/transfer_report.csv", std::ios::trunc);
  rep << "target,source,src_bin,realized_bin,match,self_l1,nu_roundtrip\n";
  std::int64_t hits = 0;
  double self_l1 = -1;
  for (std::int64_t j = 0; j < targets; ++j) {
    const float* clip = xh.data() + j * cfg.channels * tm * hw;
    MotionEstimate me = estimate_motion(clip, static_cast<int>(tm),
                                        static_cast<int>(cfg.data_height),
                                        static_cast<int>(cfg.data_width));
    const int realized = me.direction_bin(static_cast<int>(cfg.data_direction_bins));
    const bool ok = realized == static_cast<int>(src_spec.direction_bin);
    hits += ok ? 1 : 0;
    double sl = -1;
    if (j == opts.source) {
      double acc = 0;
      for (std::int64_t k = 0; k < cfg.channels * tm * hw; ++k)
        acc += std::abs(static_cast<double>(clip[k]) - x_src.data()[k]);
      sl = acc / static_cast<double>(cfg.channels * tm * hw);
      self_l1 = sl;
    }
    rep << j << ',' << opts.source << ',' << static_cast<int>(src_spec.direction_bin) << ','
        << realized << ',' << (ok ? 1 : 0) << ',' << fmt_g(sl) << ',' << fmt_g(rt_err) << '\n';
    if (j < 8) {
      // sheet: source motion window on top, transferred clip below
      std::vector<float> sheet(static_cast<std::size_t>(2 * tm * hw));
      std::memcpy(sheet.data(), x_src.data(), static_cast<std::size_t>(tm * hw) * sizeof(float));
      std::memcpy(sheet.data() + tm * hw, clip, static_cast<std::size_t>(tm * hw) * sizeof(float));
      write_contact_sheet(dir + "/target" + zpad(j, 3) + "_sheet.ppm", sheet.data(), 2, tm,
                          cfg.data_height, cfg.data_width);
    }
  }
  rep.close();
  const double acc = static_cast<double>(hits) / static_cast<double>(targets);
  std::cout << "transfer: direction match " << fmt_g(acc) << " over " << targets
            << " targets, self-L1 " << fmt_g(self_l1) << ", residual round-trip "
            << fmt_g(rt_err) << "\n";
  return 0;
}

int cmd_v2v_control(const RunConfig& cfg, const CmdOpts& opts) {
  if (cfg.control != "direction")
    throw ConfigError("v2v-control: needs a direction-conditioned model (model.control=direction)");
  if (!cfg.use_cinn || opts.no_cinn)
    throw ConfigError("v2v-control: attribute rewriting needs the flow");
  SynthSetup su = synth_setup(cfg, true, "v2v-control");
  const std::int64_t n = su.test.clips();
  const std::int64_t starts = cfg.synth_starts < 0 ? n : std::min(cfg.synth_starts, n);
  const std::int64_t tm = cfg.data_frames - 1;
  const std::int64_t hw = cfg.data_height * cfg.data_width;
  const std::int64_t bins = cfg.data_direction_bins;
  const std::string dir = cfg.out_dir + "/v2v";
  fs::create_directories(dir);

  NoGradGuard ng;
  Tensor<float> clips = clips_tensor(su.test, 1, tm);
  Tensor<float> x0s = start_frames_tensor(su.test);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(starts));
  for (std::int64_t i = 0; i < starts; ++i) idx[static_cast<std::size_t>(i)] = i;
  Tensor<float> x = gather_rows(clips, idx);
  Tensor<float> x0 = gather_rows(x0s, idx);
  Tensor<float> z_mean = su.s1.vae.enc(x).first;
  Tensor<float> emb = su.s1.vae.fenc(x0);

  // one-hots for the source labels and for the rewritten targets
  std::vector<float> src_oh(static_cast<std::size_t>(starts * bins), 0.f);
  std::vector<float> tgt_oh(static_cast<std::size_t>(starts * bins), 0.f);
  std::vector<int> tgt_bin(static_cast<std::size_t>(starts));
  for (std::int64_t i = 0; i < starts; ++i) {
    const int sb = su.test.specs[static_cast<std::size_t>(i)].direction_bin;
    const int tb = opts.bin >= 0 ? opts.bin
                                 : static_cast<int>((sb + opts.rotate) % bins +
                                                    (((sb + opts.rotate) % bins) < 0 ? bins : 0));
    tgt_bin[static_cast<std::size_t>(i)] = tb;
    src_oh[static_cast<std::size_t>(i * bins + sb)] = 1.f;
    tgt_oh[static_cast<std::size_t>(i * bins + tb)] = 1.f;
  }
  Tensor<float> c_src =
      build_conditioning(emb, Tensor<float>::from({starts, bins}, std::move(src_oh)));
  Tensor<float> c_tgt =
      build_conditioning(emb, Tensor<float>::from({starts, bins}, std::move(tgt_oh)));

  Tensor<double> nu = su.flow->inverse(to_double(z_mean), to_double(c_src)).first;
  Tensor<double> z_new = su.flow->forward(nu, to_double(c_tgt)).first;
  Tensor<float> xh = su.s1.vae.dec(x0, to_float(z_new));

  std::ofstream rep(cfg.out_dir + "/v2v_report.csv", std::ios::trunc);
  rep << "clip,src_bin,target_bin,realized_bin,match,speed_src,speed_out\n";
  std::int64_t hits = 0;
  std::vector<double> ratios;
  for (std::int64_t i = 0; i < starts; ++i) {
    const float* out_clip = xh.data() + i * cfg.channels * tm * hw;
    const float* src_clip = x.data() + i * cfg.channels * tm * hw;
    MotionEstimate mo = estimate_motion(out_clip, static_cast<int>(tm),
                                        static_cast<int>(cfg.data_height),
                                        static_cast<int>(cfg.data_width));
    MotionEstimate ms = estimate_motion(src_clip, static_cast<int>(tm),
                                        static_cast<int>(cfg.data_height),
                                        static_cast<int>(cfg.data_width));
    const int realized = mo.direction_bin(static_cast<int>(bins));
    const bool ok = realized == tgt_bin[static_cast<std::size_t>(i)];
    hits += ok ? 1 : 0;
    if (ms.speed > 1e-9) ratios.push_back(mo.speed / ms.speed);
    rep << i << ',' << static_cast<int>(su.test.specs[static_cast<std::size_t>(i)].direction_bin)
        << ',' << tgt_bin[static_cast<std::size_t>(i)] << ',' << realized << ',' << (ok ? 1 : 0)
        << ',' << fmt_g(ms.speed) << ',' << fmt_g(mo.speed) << '\n';
    if (i < 8) {
      std::vector<float> sheet(static_cast<std::size_t>(2 * tm * hw));
      std::memcpy(sheet.data(), src_clip, static_cast<std::size_t>(tm * hw) * sizeof(float));
      std::memcpy(sheet.data() + tm * hw, out_clip,
                  static_cast<std::size_t>(tm * hw) * sizeof(float));
      write_contact_sheet(dir + "/clip" + zpad(i, 3) + "_sheet.ppm", sheet.data(), 2, tm,
                          cfg.data_height, cfg.data_width);
    }
  }
  rep.close();
  const double acc = static_cast<double>(hits) / static_cast<double>(starts);
  const double med = median(ratios);
  write_metrics_csv(cfg.out_dir + "/v2v_summary.csv",
                    {{"v2v-direction-accuracy", "synth", acc, starts, cfg.seed},
                     {"v2v-speed-ratio-median", "synth", med, starts, cfg.seed}});
  std::cout << "v2v-control: direction match " << fmt_g(acc) << ", median speed ratio "
            << fmt_g(med) << " over " << starts << " clips\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const CmdOpts& opts) {
  const bool use_flow = cfg.use_cinn && !opts.no_cinn;
  SynthSetup su = synth_setup(cfg, use_flow, "evaluate");
  BackboneSet bb = load_backbone(cfg.out_dir + "/backbone.sivc");
  check_data_compat(cfg, bb.cfg, "backbone.sivc");
  Dataset train = read_dataset(cfg.data_dir + "/train.sivs");
  check_dataset(cfg, train, "train.sivs");

  const std::int64_t n = su.test.clips();
  if (n < 50)
    std::cerr << "warning: evaluate: only " << n
              << " test clips; distribution metrics will be noisy\n";
  const std::int64_t s_per = cfg.eval_samples;
  const std::int64_t tm = cfg.data_frames - 1;
  const std::int64_t hw = cfg.data_height * cfg.data_width;
  const std::int64_t clip_len = cfg.channels * tm * hw;

  // generate eval_samples clips per test start, conditioned on each clip's
  // own labels when the model is control-conditioned
  Tensor<float> x0s = start_frames_tensor(su.test);
  std::vector<float> gen(static_cast<std::size_t>(n * s_per * clip_len));
  std::int64_t ctrl_hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<std::int64_t> reps(static_cast<std::size_t>(s_per), i);
    Tensor<float> x0 = gather_rows(x0s, reps);
    const DynSpec& spec = su.test.specs[static_cast<std::size_t>(i)];
    Tensor<float> ctrl = control_for_clip(cfg, spec, s_per);
    std::vector<Rng> rngs;
    for (std::int64_t s = 0; s < s_per; ++s)
      rngs.push_back(stream2(cfg.seed, kTagEval, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(s)));
    SynthBatch sb = synth_batch(su.s1, su.flow.get(), x0, ctrl, rngs, 1);
    std::memcpy(gen.data() + i * s_per * clip_len, sb.clips.data(),
                static_cast<std::size_t>(s_per * clip_len) * sizeof(float));
    if (cfg.control != "none") {
      for (std::int64_t s = 0; s < s_per; ++s) {
        const float* clip = sb.clips.data() + s * clip_len;
        if (cfg.control == "direction") {
          MotionEstimate me = estimate_motion(clip, static_cast<int>(tm),
                                              static_cast<int>(cfg.data_height),
                                              static_cast<int>(cfg.data_width));
          ctrl_hits +=
              me.direction_bin(static_cast<int>(cfg.data_direction_bins)) == spec.direction_bin;
        } else {
          Centroid c = frame_peak(clip + (tm - 1) * hw, static_cast<int>(cfg.data_height),
                                  static_cast<int>(cfg.data_width));
          ctrl_hits += c.cell_x(10, static_cast<int>(cfg.data_width)) == spec.endpoint_x &&
                       c.cell_y(10, static_cast<int>(cfg.data_height)) == spec.endpoint_y;
        }
      }
    }
  }
  Tensor<float> gen_t = Tensor<float>::from({n * s_per, cfg.channels, tm, cfg.data_height,
                                             cfg.data_width},
                                            std::move(gen));
  Tensor<float> real_test = clips_tensor(su.test, 1, tm);
  Tensor<float> real_train = clips_tensor(train, 1, tm);

  std::vector<MetricRow> rows;
  const std::uint64_t seed = cfg.seed;
  auto add_frechet_rows = [&](const ClipNet<float>& net, const std::string& name) {
    Tensor<float> fg = extract_features(net, "feat", gen_t);
    Tensor<float> ft = extract_features(net, "feat", real_test);
    Tensor<float> ftr = extract_features(net, "feat", real_train);
    const std::int64_t f = ft.dim(1);
    auto fit_slice = [&](const Tensor<float>& feats, std::int64_t lo, std::int64_t hi) {
      std::vector<double> r;
      r.reserve(static_cast<std::size_t>((hi - lo) * f));
      for (std::int64_t i = lo; i < hi; ++i)
        for (std::int64_t j = 0; j < f; ++j) r.push_back(feats.data()[i * f + j]);
      return fit_gaussian(r, hi - lo, f);
    };
    GaussianStats g_gen = fit_gaussian(feature_rows(fg), fg.dim(0), f);
    GaussianStats g_test = fit_gaussian(feature_rows(ft), ft.dim(0), f);
    rows.push_back({name, "gen-vs-test", frechet_distance(g_gen, g_test), fg.dim(0), seed});
    const std::int64_t ht = ft.dim(0) / 2, htr = ftr.dim(0) / 2;
    rows.push_back({name, "trainhalf-vs-testhalf",
                    frechet_distance(fit_slice(ftr, 0, htr), fit_slice(ft, 0, ht)),
                    std::min(htr, ht), seed});
    rows.push_back({name, "testhalf-vs-testhalf",
                    frechet_distance(fit_slice(ft, 0, ht), fit_slice(ft, ht, ft.dim(0))), ht,
                    seed});
    // per-start groups of generated features for sample diversity
    if (name == "desk-fvd") {
      std::vector<std::vector<double>> groups(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        auto& g = groups[static_cast<std::size_t>(i)];
        g.reserve(static_cast<std::size_t>(s_per * f));
        for (std::int64_t s = 0; s < s_per; ++s)
          for (std::int64_t j = 0; j < f; ++j)
            g.push_back(fg.data()[(i * s_per + s) * f + j]);
      }
      rows.push_back({"diversity-euclidean", "gen",
                      diversity(groups, f, DistanceKind::euclidean), n * s_per, seed});
      rows.push_back({"diversity-cosine", "gen", diversity(groups, f, DistanceKind::cosine),
                      n * s_per, seed});
    }
  };
  add_frechet_rows(bb.clip_fvd, "desk-fvd");
  add_frechet_rows(bb.clip_dtfvd, "desk-dtfvd");

  // frame-feature perceptual distance between each real clip and its samples
  {
    NoGradGuard ng;
    auto fnet = std::make_shared<FrameNet<float>>(bb.frame_net);
    PerceptualFn<float> phi = make_frame_perceptual<float>(fnet);
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      std::vector<std::int64_t> reps(static_cast<std::size_t>(s_per), i);
      Tensor<float> xr = gather_rows(real_test, reps);
      std::vector<std::int64_t> gidx(static_cast<std::size_t>(s_per));
      for (std::int64_t s = 0; s < s_per; ++s) gidx[static_cast<std::size_t>(s)] = i * s_per + s;
      acc += phi(xr, gather_rows(gen_t, gidx)).value();
    }
    rows.push_back({"perceptual", "gen-vs-test", acc / static_cast<double>(n), n * s_per, seed});
  }

  rows.push_back({"recon-l1", "test",
                  recon_l1(su.s1.vae, real_test, x0s, std::min<std::int64_t>(16, n)), n, seed});
  if (cfg.control != "none") {
    const std::string name = cfg.control == "direction" ? "control-direction-accuracy"
                                                        : "control-endpoint-accuracy";
    rows.push_back({name, "gen",
                    static_cast<double>(ctrl_hits) / static_cast<double>(n * s_per), n * s_per,
                    seed});
  }

  write_metrics_csv(cfg.out_dir + "/metrics.csv", rows);
  std::cout << format_metrics_table(rows);
  return 0;
}

}  // namespace sivs
