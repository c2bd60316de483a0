#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "iidsu/nn.hpp"

namespace iidsu {

/// Network-level configuration. Scaling knobs keep the architecture shape
/// (4 backbone stages, 4 fusion stages, 5 decoder stages) while shrinking
/// widths and resolutions for desk-size runs.
struct ModelConfig {
  double width_factor = 1.0;  // scales (64,128,256,512) and the fused 1024
  int r = 256;                // input and output map resolution, multiple of 32
  int gru_hidden = 64;
  int attention_heads = 4;
  int eca_kernel = 5;         // odd
  Precision precision = Precision::f32;

  void validate() const;  // throws ConfigError
  int64_t stage_channels(int stage) const;  // 0..3
  int64_t fused_channels() const;
  int scene_extent() const { return r / 32; }
};

enum class HeadId : uint8_t { planning, density, bev, traffic, weather };
constexpr std::array<HeadId, 5> kAllHeads = {
    HeadId::planning, HeadId::density, HeadId::bev, HeadId::traffic,
    HeadId::weather};
const char* head_name(HeadId id);

struct PlanningOut {
  Tensor waypoints;  // {4, 2}, meters, ego frame
  Tensor deltas;     // {4, 2}, per-step increments (waypoints = cumsum)
};

struct ModelOutputs {
  Tensor scene;      // F_DSU, {C, S, S}
  Tensor waypoints;  // {4, 2}
  Tensor deltas;     // {4, 2}
  Tensor density;    // {21, R, R}; per t in {1,2,3}: heat,dx,dy,logw,logl,sin,cos
  Tensor bev;        // {3, R, R} class logits (drivable, lines, other)
  Tensor traffic;    // {2} sigmoid scores (stop-required light, stop sign)
  Tensor weather;    // {4} softmax probabilities
  std::array<Tensor, 5> eca;  // per-head channel weights, indexed by HeadId
};

namespace detail {

struct ResBlock {
  Conv2dLayer c1, c2;
  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& prefix, int64_t channels);
  Tensor forward(const Tensor& x, GradGraph* g) const;
};

struct BackboneStage {
  Conv2dLayer down;  // stem (4x4/4) for stage 0, 2x2/2 otherwise
  std::vector<ResBlock> blocks;
};

struct Backbone {
  std::array<BackboneStage, 4> stages;
  Backbone() = default;
  Backbone(ParamStore& ps, const std::string& prefix, int64_t cin,
           const ModelConfig& cfg);
  /// Runs one stage (downsample conv + residual blocks).
  Tensor stage_forward(int stage, const Tensor& x, GradGraph* g) const;
  /// Returns the four stage feature maps (no fusion in between).
  std::vector<Tensor> forward(const Tensor& x, GradGraph* g) const;
};

struct AttentionBlock {
  AffineLayerNorm ln1, ln2;
  Linear q, k, v, proj;  // proj zero-initialized: the block starts as identity
  Linear mlp1, mlp2;     // mlp2 zero-initialized
  int heads = 4;
  AttentionBlock() = default;
  AttentionBlock(ParamStore& ps, const std::string& prefix, int64_t dim,
                 int heads);
  Tensor forward(const Tensor& tokens, GradGraph* g) const;  // {N, C}
};

struct FusionStage {
  Tensor pos;  // {2*grid*grid, C} learned positional encoding
  AttentionBlock block;
  int patch = 1, grid = 1;
  int64_t channels = 0;
  FusionStage() = default;
  FusionStage(ParamStore& ps, const std::string& prefix, int64_t channels,
              int extent, int heads);
};

struct EcaModule {
  Tensor w;  // {k}
  Tensor b;  // {1}
  EcaModule() = default;
  EcaModule(ParamStore& ps, const std::string& prefix, int kernel);
};

struct Decoder {
  std::vector<Conv2dLayer> stages;  // each used after a nearest 2x upsample
  Decoder() = default;
  Decoder(ParamStore& ps, const std::string& prefix, int64_t cin);
  Tensor forward(const Tensor& x, GradGraph* g) const;
  int64_t out_channels() const;
};

}  // namespace detail

/// The II-DSU network: image and LiDAR backbones exchanging information
/// through four token-fusion stages, a fused scene feature, per-head channel
/// attention, a GRU waypoint planner and four auxiliary perception heads.
class FusionModel {
 public:
  FusionModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// Full forward pass. image {3,R,R}, lidar {4,R,R}, goal {2}.
  ModelOutputs forward(const Tensor& image, const Tensor& lidar,
                       const Tensor& goal, GradGraph* g = nullptr) const;

  /// The interleaved trunk: backbone stage s on both modalities, then fusion
  /// stage s, repeated for s = 0..3. Returns the final (img, lidar) maps that
  /// feed fuse(). Exposed so tests can probe cross-modal coupling.
  std::pair<Tensor, Tensor> trunk_forward(const Tensor& image,
                                          const Tensor& lidar,
                                          GradGraph* g = nullptr) const;

  // Individual operations, exposed for tests and analysis probes.
  std::vector<Tensor> backbone_forward(const Tensor& x, bool image_branch,
                                       GradGraph* g = nullptr) const;
  std::pair<Tensor, Tensor> transfuser_stage(int stage, const Tensor& img_feat,
                                             const Tensor& lidar_feat,
                                             GradGraph* g = nullptr) const;
  Tensor fuse(const Tensor& final_img, const Tensor& final_lidar,
              GradGraph* g = nullptr) const;
  /// Returns (weighted feature, weight vector in (0,1)^C).
  std::pair<Tensor, Tensor> eca_apply(const Tensor& f, HeadId head,
                                      GradGraph* g = nullptr) const;
  PlanningOut planning_head(const Tensor& f, const Tensor& goal,
                            GradGraph* g = nullptr) const;
  Tensor density_head(const Tensor& f, GradGraph* g = nullptr) const;
  Tensor bev_head(const Tensor& f, GradGraph* g = nullptr) const;
  std::pair<Tensor, Tensor> rule_heads(const Tensor& f,
                                       GradGraph* g = nullptr) const;

  // Test hooks for the identity-bypass and coupling properties.
  detail::FusionStage& fusion_stage(int i) { return fusion_[i]; }
  detail::AttentionBlock& attention(int i) { return fusion_[i].block; }
  Conv2dLayer& fuse_conv() { return fuse_conv_; }

 private:
  const detail::EcaModule& eca(HeadId id) const;
  Tensor pooled_vector(const Tensor& f, GradGraph* g) const;

  ModelConfig cfg_;
  ParamStore ps_;
  detail::Backbone img_backbone_, lidar_backbone_;
  std::array<detail::FusionStage, 4> fusion_;
  Conv2dLayer fuse_conv_;
  std::array<detail::EcaModule, 5> eca_;
  std::array<Linear, 3> plan_mlp_;
  Linear plan_h0_;
  std::array<GruCell, 4> plan_gru_;
  Linear plan_delta_;
  detail::Decoder den_decoder_, bev_decoder_;
  Conv2dLayer den_heat_, den_reg_, bev_out_;
  Linear traffic_fc_, weather_fc_;
};

}  // namespace iidsu
