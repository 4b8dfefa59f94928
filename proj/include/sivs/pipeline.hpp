#ifndef SIVS_PIPELINE_HPP
#define SIVS_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sivs/checkpoint.hpp"
#include "sivs/config.hpp"
#include "sivs/flow.hpp"
#include "sivs/metrics.hpp"
#include "sivs/synth_data.hpp"
#include "sivs/video_ae.hpp"

// Command layer: each cmd_* implements one CLI subcommand end to end
// (load data and checkpoints, run, write artifacts under cfg.out_dir).
// All of them return 0; failures are reported by throwing (ConfigError,
// DataError/ShapeError, NumericError), which the CLI maps to exit codes.

namespace sivs {

// Per-invocation options that ride alongside the config file.
struct CmdOpts {
  int bin = -1;                    // requested direction bin
  int cell_x = -1, cell_y = -1;    // requested endpoint cell
  int rotate = 2;                  // v2v: bins to rotate the source direction by
  std::int64_t source = 0;         // transfer/v2v source clip (test split index)
  std::int64_t targets = -1;       // transfer target count (-1: all test clips)
  std::int64_t chain = 1;          // sequential synthesis links
  bool no_cinn = false;            // ablation: draw z ~ N(0,I), skip the flow
};

// Width of the control one-hot block for the configured control mode
// (0 for none, direction_bins for direction, 10+10 for endpoint cells).
std::int64_t control_width(const RunConfig& cfg);

// One-hot control rows for a list of clip labels; undefined tensor when the
// config has no control conditioning.
Tensor<float> control_rows(const RunConfig& cfg, const std::vector<DynSpec>& specs);

// A single control row repeated `b` times (requested-attribute synthesis).
Tensor<float> control_fill(const RunConfig& cfg, int bin, int cell_x, int cell_y,
                           std::int64_t b);

VaeDims vae_dims_from(const RunConfig& cfg);

// Same weights, double precision; used at inference so latent round trips
// through the deep stack stay tight.
FlowStack<double> flow_to_double(const FlowStack<float>& f);

// Checkpoint bundles. Loaders restore weights into freshly built modules
// using the config snapshot embedded in the file; callers re-collect a
// ParamMap afterwards if they need one (pointers into a moved-from bundle
// would dangle, so none is stored here).
struct Stage1Model {
  RunConfig cfg;  // snapshot the checkpoint was trained with
  VideoVae<float> vae;
  std::int64_t step = 0;
};

struct Stage2Model {
  RunConfig cfg;
  FlowStack<float> flow;
  std::int64_t step = 0;
};

struct BackboneSet {
  RunConfig cfg;
  FrameNet<float> frame_net;         // 3-way clip-kind net on single frames
  ClipNet<float> clip_fvd;           // 3-way clip-kind net, model-length clips
  ClipNet<float> clip_dtfvd;         // direction-bin net, model-length clips
  ClipNet<float> clip_fvd16;         // clip-kind net on 16-frame windows
  double acc_frame = 0, acc_fvd = 0, acc_dtfvd = 0, acc_fvd16 = 0;
};

Stage1Model load_stage1(const std::string& path);
Stage2Model load_stage2(const std::string& path);
BackboneSet load_backbone(const std::string& path);

// Fields that define saved-model shape/semantics must match between the
// current config and a checkpoint snapshot; throws ConfigError naming the
// first mismatched key. Stage 1 ignores flow/control settings (the
// autoencoder does not depend on them), so one stage-1 checkpoint can back
// several stage-2 variants.
void check_stage1_compat(const RunConfig& cur, const RunConfig& snap,
                         const std::string& what);
void check_stage2_compat(const RunConfig& cur, const RunConfig& snap,
                         const std::string& what);

int cmd_gen_data(const RunConfig& cfg);
int cmd_train_backbone(const RunConfig& cfg);
int cmd_train_stage1(const RunConfig& cfg);
int cmd_train_stage2(const RunConfig& cfg);
int cmd_synthesize(const RunConfig& cfg, const CmdOpts& opts);
int cmd_control(const RunConfig& cfg, const CmdOpts& opts);
int cmd_transfer(const RunConfig& cfg, const CmdOpts& opts);
int cmd_v2v_control(const RunConfig& cfg, const CmdOpts& opts);
int cmd_evaluate(const RunConfig& cfg, const CmdOpts& opts);

}  // namespace sivs

#endif
