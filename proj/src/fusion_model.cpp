#include "iidsu/fusion_model.hpp"

#include <cmath>

namespace iidsu {

namespace {
constexpr int64_t kBaseChannels[4] = {64, 128, 256, 512};
constexpr int64_t kBaseFused = 1024;
// Keeps GRU inputs (previous waypoint + goal, both in meters) in the
// well-conditioned range of the gate nonlinearities.
constexpr double kPlanInputScale = 0.1;
// Sigmoid heads must emit values strictly inside (0, 1); at f32 a saturated
// logit rounds the sigmoid to exactly 0 or 1, so the heads pin the output
// into the open interval.  Interior values pass through unchanged.
constexpr double kProbClamp = 1e-7;
}  // namespace

void ModelConfig::validate() const {
  if (r < 32 || r % 32 != 0)
    throw ConfigError("model: R must be a positive multiple of 32, got " +
                      std::to_string(r));
  if (width_factor <= 0.0)
    throw ConfigError("model: width_factor must be positive");
  if (attention_heads < 1)
    throw ConfigError("model: attention_heads must be >= 1");
  if (gru_hidden < 1) throw ConfigError("model: gru_hidden must be >= 1");
  if (eca_kernel < 1 || eca_kernel % 2 == 0)
    throw ConfigError("model: eca_kernel must be odd and >= 1");
  for (int s = 0; s < 4; ++s) {
    const double scaled = kBaseChannels[s] * width_factor;
    const int64_t c = static_cast<int64_t>(std::llround(scaled));
    if (c < 1 || std::fabs(scaled - static_cast<double>(c)) > 1e-9)
      throw ConfigError("model: width_factor " + std::to_string(width_factor) +
                        " gives non-integral channels at stage " +
                        std::to_string(s));
    if (c % attention_heads != 0)
      throw ConfigError("model: stage " + std::to_string(s) + " channels (" +
                        std::to_string(c) +
                        ") not divisible by attention_heads");
  }
  const double fused = kBaseFused * width_factor;
  if (std::fabs(fused - std::llround(fused)) > 1e-9 || fused < 16)
    throw ConfigError("model: width_factor gives invalid fused width");
}

int64_t ModelConfig::stage_channels(int stage) const {
  if (stage < 0 || stage > 3)
    throw ContractError("stage index out of range");
  return static_cast<int64_t>(std::llround(kBaseChannels[stage] * width_factor));
}

int64_t ModelConfig::fused_channels() const {
  return static_cast<int64_t>(std::llround(kBaseFused * width_factor));
}

const char* head_name(HeadId id) {
  switch (id) {
    case HeadId::planning: return "planning";
    case HeadId::density: return "density";
    case HeadId::bev: return "bev";
    case HeadId::traffic: return "traffic";
    case HeadId::weather: return "weather";
  }
  throw ContractError("unknown head id");
}

namespace detail {

ResBlock::ResBlock(ParamStore& ps, const std::string& prefix, int64_t channels)
    : c1(ps, prefix + ".c1", channels, channels, 3, 1, 1),
      c2(ps, prefix + ".c2", channels, channels, 3, 1, 1) {}

Tensor ResBlock::forward(const Tensor& x, GradGraph* g) const {
  Tensor h = relu(c1.forward(x, g), g);
  return relu(add(x, c2.forward(h, g), g), g);
}

Backbone::Backbone(ParamStore& ps, const std::string& prefix, int64_t cin,
                   const ModelConfig& cfg) {
  constexpr int kBlocksPerStage = 2;
  for (int s = 0; s < 4; ++s) {
    const int64_t cs = cfg.stage_channels(s);
    BackboneStage st;
    if (s == 0) {
      st.down = Conv2dLayer(ps, prefix + ".stem", cin, cs, 4, 4, 0);
    } else {
      st.down = Conv2dLayer(ps, prefix + ".down" + std::to_string(s),
                            cfg.stage_channels(s - 1), cs, 2, 2, 0);
    }
    for (int b = 0; b < kBlocksPerStage; ++b)
      st.blocks.emplace_back(ps, prefix + ".s" + std::to_string(s) + ".b" +
                                     std::to_string(b),
                             cs);
    stages[s] = std::move(st);
  }
}

Tensor Backbone::stage_forward(int stage, const Tensor& x, GradGraph* g) const {
  if (stage < 0 || stage > 3) throw ContractError("backbone stage out of range");
  if (stage == 0 && (x.extent(1) % 32 != 0 || x.extent(2) % 32 != 0))
    throw ContractError("backbone input extents must be divisible by 32, got " +
                        shape_str(x.shape()));
  Tensor h = relu(stages[stage].down.forward(x, g), g);
  for (const ResBlock& b : stages[stage].blocks) h = b.forward(h, g);
  return h;
}

std::vector<Tensor> Backbone::forward(const Tensor& x, GradGraph* g) const {
  std::vector<Tensor> maps;
  Tensor h = x;
  for (int s = 0; s < 4; ++s) {
    h = stage_forward(s, h, g);
    maps.push_back(h);
  }
  return maps;
}

AttentionBlock::AttentionBlock(ParamStore& ps, const std::string& prefix,
                               int64_t dim, int heads)
    : ln1(ps, prefix + ".ln1", dim, 1),
      ln2(ps, prefix + ".ln2", dim, 1),
      q(ps, prefix + ".q", dim, dim),
      k(ps, prefix + ".k", dim, dim),
      v(ps, prefix + ".v", dim, dim),
      proj(ps, prefix + ".proj", dim, dim, Init::zeros),
      mlp1(ps, prefix + ".mlp1", dim, 2 * dim),
      mlp2(ps, prefix + ".mlp2", 2 * dim, dim, Init::zeros),
      heads(heads) {}

Tensor AttentionBlock::forward(const Tensor& tokens, GradGraph* g) const {
  const int64_t n = tokens.extent(0), c = tokens.extent(1);
  const int64_t d = c / heads;
  Tensor x = ln1.forward(tokens, g);
  Tensor qs = q.forward(x, g), ks = k.forward(x, g), vs = v.forward(x, g);
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(qs, 1, h * d, d, g);
    Tensor kh = slice(ks, 1, h * d, d, g);
    Tensor vh = slice(vs, 1, h * d, d, g);
    Tensor scores =
        scalar_mul(matmul(qh, transpose2d(kh, g), g), scale, g);  // {N, N}
    Tensor attn = softmax(scores, 1, g);
    head_outs.push_back(matmul(attn, vh, g));
  }
  Tensor merged = heads == 1 ? head_outs[0] : concat(head_outs, 1, g);
  Tensor t1 = add(tokens, proj.forward(merged, g), g);
  Tensor m = mlp2.forward(gelu(mlp1.forward(ln2.forward(t1, g), g), g), g);
  (void)n;
  return add(t1, m, g);
}

FusionStage::FusionStage(ParamStore& ps, const std::string& prefix,
                         int64_t channels, int extent, int heads)
    : patch(std::max(1, extent / 8)),
      grid(extent / std::max(1, extent / 8)),
      channels(channels) {
  if (extent % patch != 0)
    throw ConfigError("fusion stage: patch " + std::to_string(patch) +
                      " does not tile extent " + std::to_string(extent));
  pos = ps.param(prefix + ".pos",
                 {static_cast<int64_t>(2) * grid * grid, channels},
                 Init::normal_small);
  block = AttentionBlock(ps, prefix + ".attn", channels, heads);
}

EcaModule::EcaModule(ParamStore& ps, const std::string& prefix, int kernel)
    : w(ps.param(prefix + ".w", {kernel}, Init::fan_in_uniform, kernel)),
      b(ps.param(prefix + ".b", {1}, Init::zeros)) {}

Decoder::Decoder(ParamStore& ps, const std::string& prefix, int64_t cin) {
  // Five (2x upsample + 3x3 conv + ReLU) stages: scene extent R/32 -> R.
  int64_t in = cin;
  for (int s = 0; s < 5; ++s) {
    const int64_t out = std::max<int64_t>(16, cin >> (s + 2));
    stages.emplace_back(ps, prefix + ".s" + std::to_string(s), in, out, 3, 1,
                        1);
    in = out;
  }
}

Tensor Decoder::forward(const Tensor& x, GradGraph* g) const {
  Tensor h = x;
  for (const Conv2dLayer& conv : stages)
    h = relu(conv.forward(upsample_nearest(h, 2, g), g), g);
  return h;
}

int64_t Decoder::out_channels() const { return stages.back().k.extent(0); }

}  // namespace detail

FusionModel::FusionModel(const ModelConfig& cfg, uint64_t seed)
    : cfg_(cfg), ps_(cfg.precision, seed) {
  cfg_.validate();
  img_backbone_ = detail::Backbone(ps_, "img", 3, cfg_);
  lidar_backbone_ = detail::Backbone(ps_, "lidar", 4, cfg_);
  for (int s = 0; s < 4; ++s) {
    const int extent = cfg_.r / (4 << s);
    fusion_[s] =
        detail::FusionStage(ps_, "fusion" + std::to_string(s),
                            cfg_.stage_channels(s), extent,
                            cfg_.attention_heads);
  }
  const int64_t cf = cfg_.fused_channels();
  fuse_conv_ = Conv2dLayer(ps_, "fuse", 2 * cfg_.stage_channels(3), cf, 1, 1, 0);
  for (HeadId h : kAllHeads)
    eca_[static_cast<size_t>(h)] = detail::EcaModule(
        ps_, std::string("eca.") + head_name(h), cfg_.eca_kernel);

  const int64_t d1 = std::max<int64_t>(128, cf / 2);
  const int64_t d2 = std::max<int64_t>(128, cf / 4);
  plan_mlp_[0] = Linear(ps_, "plan.mlp0", cf, d1);
  plan_mlp_[1] = Linear(ps_, "plan.mlp1", d1, d2);
  plan_mlp_[2] = Linear(ps_, "plan.mlp2", d2, 128);
  plan_h0_ = Linear(ps_, "plan.h0", 128, cfg_.gru_hidden);
  for (int t = 0; t < 4; ++t)
    plan_gru_[t] = GruCell(ps_, "plan.gru" + std::to_string(t), 4,
                           cfg_.gru_hidden);
  // Zero-initialized so an untrained planner proposes the origin.
  plan_delta_ = Linear(ps_, "plan.delta", cfg_.gru_hidden, 2, Init::zeros);

  den_decoder_ = detail::Decoder(ps_, "den.dec", cf);
  bev_decoder_ = detail::Decoder(ps_, "bev.dec", cf);
  den_heat_ = Conv2dLayer(ps_, "den.heat", den_decoder_.out_channels(), 3, 1,
                          1, 0);
  den_reg_ = Conv2dLayer(ps_, "den.reg", den_decoder_.out_channels(), 18, 1, 1,
                         0);
  bev_out_ = Conv2dLayer(ps_, "bev.out", bev_decoder_.out_channels(), 3, 1, 1,
                         0);
  traffic_fc_ = Linear(ps_, "traffic.fc", cf, 2);
  weather_fc_ = Linear(ps_, "weather.fc", cf, 4);
}

const detail::EcaModule& FusionModel::eca(HeadId id) const {
  const size_t i = static_cast<size_t>(id);
  if (i >= eca_.size()) throw ContractError("eca_apply: unknown head");
  return eca_[i];
}

std::vector<Tensor> FusionModel::backbone_forward(const Tensor& x,
                                                  bool image_branch,
                                                  GradGraph* g) const {
  return (image_branch ? img_backbone_ : lidar_backbone_).forward(x, g);
}

std::pair<Tensor, Tensor> FusionModel::transfuser_stage(int stage,
                                                        const Tensor& img_feat,
                                                        const Tensor& lidar_feat,
                                                        GradGraph* g) const {
  if (stage < 0 || stage > 3)
    throw ContractError("transfuser_stage: stage index out of range");
  const detail::FusionStage& fs = fusion_[stage];
  const int64_t e = static_cast<int64_t>(fs.grid) * fs.patch;
  for (const Tensor* t : {&img_feat, &lidar_feat}) {
    if (t->rank() != 3 || t->extent(0) != fs.channels || t->extent(1) != e ||
        t->extent(2) != e)
      throw ContractError("transfuser_stage " + std::to_string(stage) +
                          ": expected " + shape_str({fs.channels, e, e}) +
                          ", got " + shape_str(t->shape()));
  }
  const int64_t m = static_cast<int64_t>(fs.grid) * fs.grid;  // per modality

  auto tokenize = [&](const Tensor& map) {
    Tensor pooled = avg_pool_2d(map, fs.patch, g);           // {C, g, g}
    Tensor flat = reshape(pooled, {fs.channels, m}, g);      // {C, m}
    return transpose2d(flat, g);                             // {m, C}
  };
  Tensor tokens = concat({tokenize(img_feat), tokenize(lidar_feat)}, 0, g);
  Tensor tin = add(tokens, fs.pos, g);
  Tensor tout = fs.block.forward(tin, g);
  // Scatter the token-space update back onto the maps as a residual; with
  // zeroed output projections tout == tin exactly, so the stage is a strict
  // identity on both maps.
  Tensor delta = sub(tout, tin, g);

  auto scatter = [&](int64_t offset, const Tensor& base) {
    Tensor part = slice(delta, 0, offset, m, g);             // {m, C}
    Tensor chan = transpose2d(part, g);                      // {C, m}
    Tensor map = reshape(chan, {fs.channels, fs.grid, fs.grid}, g);
    Tensor up = fs.patch == 1 ? map : upsample_nearest(map, fs.patch, g);
    return add(base, up, g);
  };
  return {scatter(0, img_feat), scatter(m, lidar_feat)};
}

std::pair<Tensor, Tensor> FusionModel::trunk_forward(const Tensor& image,
                                                     const Tensor& lidar,
                                                     GradGraph* g) const {
  if (image.rank() != 3 || image.extent(0) != 3 || image.extent(1) != cfg_.r ||
      image.extent(2) != cfg_.r)
    throw ContractError("forward: image must be " +
                        shape_str({3, cfg_.r, cfg_.r}) + ", got " +
                        shape_str(image.shape()));
  if (lidar.rank() != 3 || lidar.extent(0) != 4 || lidar.extent(1) != cfg_.r ||
      lidar.extent(2) != cfg_.r)
    throw ContractError("forward: lidar must be " +
                        shape_str({4, cfg_.r, cfg_.r}) + ", got " +
                        shape_str(lidar.shape()));
  Tensor xi = image, xl = lidar;
  for (int s = 0; s < 4; ++s) {
    xi = img_backbone_.stage_forward(s, xi, g);
    xl = lidar_backbone_.stage_forward(s, xl, g);
    std::tie(xi, xl) = transfuser_stage(s, xi, xl, g);
  }
  return {xi, xl};
}

Tensor FusionModel::fuse(const Tensor& final_img, const Tensor& final_lidar,
                         GradGraph* g) const {
  const int64_t s = cfg_.scene_extent();
  for (const Tensor* t : {&final_img, &final_lidar}) {
    if (t->rank() != 3 || t->extent(1) != s || t->extent(2) != s)
      throw ContractError("fuse: expected spatial extents " +
                          std::to_string(s) + "x" + std::to_string(s) +
                          ", got " + shape_str(t->shape()));
  }
  Tensor cat = concat({final_img, final_lidar}, 0, g);
  return fuse_conv_.forward(cat, g);
}

std::pair<Tensor, Tensor> FusionModel::eca_apply(const Tensor& f, HeadId head,
                                                 GradGraph* g) const {
  const detail::EcaModule& m = eca(head);
  if (f.rank() != 3)
    throw ContractError("eca_apply: expected a C x S x S scene feature, got " +
                        shape_str(f.shape()));
  Tensor pooled = reshape(avg_pool_global(f, g), {f.extent(0)}, g);
  Tensor wv = sigmoid(conv1d_same(pooled, m.w, m.b, g), g);
  return {mul_bias(f, wv, 0, g), wv};
}

Tensor FusionModel::pooled_vector(const Tensor& f, GradGraph* g) const {
  return reshape(avg_pool_global(f, g), {f.extent(0)}, g);
}

PlanningOut FusionModel::planning_head(const Tensor& f, const Tensor& goal,
                                       GradGraph* g) const {
  if (goal.rank() != 1 || goal.extent(0) != 2)
    throw ContractError("planning_head: goal must be a 2-vector");
  for (double v : goal.data())
    if (!std::isfinite(v))
      throw ContractError("planning_head: goal must be finite");

  Tensor fw = eca_apply(f, HeadId::planning, g).first;
  Tensor h = pooled_vector(fw, g);
  for (const Linear& l : plan_mlp_) h = relu(l.forward(h, g), g);
  Tensor state = plan_h0_.forward(h, g);

  Tensor prev = Tensor::zeros({2}, cfg_.precision);
  std::vector<Tensor> wps, deltas;
  for (int t = 0; t < 4; ++t) {
    Tensor inp = scalar_mul(concat({prev, goal}, 0, g), kPlanInputScale, g);
    state = plan_gru_[t].forward(inp, state, g);
    Tensor d = plan_delta_.forward(state, g);
    prev = add(prev, d, g);
    deltas.push_back(reshape(d, {1, 2}, g));
    wps.push_back(reshape(prev, {1, 2}, g));
  }
  return {concat(wps, 0, g), concat(deltas, 0, g)};
}

Tensor FusionModel::density_head(const Tensor& f, GradGraph* g) const {
  Tensor fw = eca_apply(f, HeadId::density, g).first;
  Tensor d = den_decoder_.forward(fw, g);
  Tensor heat = clamp_val(sigmoid(den_heat_.forward(d, g), g), kProbClamp,
                          1.0 - kProbClamp, g);  // {3, R, R}
  Tensor reg = den_reg_.forward(d, g);                // {18, R, R}
  std::vector<Tensor> blocks;
  for (int64_t t = 0; t < 3; ++t) {
    blocks.push_back(slice(heat, 0, t, 1, g));
    blocks.push_back(slice(reg, 0, 6 * t, 6, g));
  }
  return concat(blocks, 0, g);  // {21, R, R}
}

Tensor FusionModel::bev_head(const Tensor& f, GradGraph* g) const {
  Tensor fw = eca_apply(f, HeadId::bev, g).first;
  return bev_out_.forward(bev_decoder_.forward(fw, g), g);  // {3, R, R}
}

std::pair<Tensor, Tensor> FusionModel::rule_heads(const Tensor& f,
                                                  GradGraph* g) const {
  Tensor ft = eca_apply(f, HeadId::traffic, g).first;
  Tensor fx = eca_apply(f, HeadId::weather, g).first;
  Tensor traffic =
      clamp_val(sigmoid(traffic_fc_.forward(pooled_vector(ft, g), g), g),
                kProbClamp, 1.0 - kProbClamp, g);
  Tensor weather = softmax(weather_fc_.forward(pooled_vector(fx, g), g), 0, g);
  return {traffic, weather};
}

ModelOutputs FusionModel::forward(const Tensor& image, const Tensor& lidar,
                                  const Tensor& goal, GradGraph* g) const {
  auto [fi, fl] = trunk_forward(image, lidar, g);
  ModelOutputs out;
  out.scene = fuse(fi, fl, g);
  for (HeadId h : kAllHeads)
    out.eca[static_cast<size_t>(h)] = eca_apply(out.scene, h, g).second;
  PlanningOut plan = planning_head(out.scene, goal, g);
  out.waypoints = plan.waypoints;
  out.deltas = plan.deltas;
  out.density = density_head(out.scene, g);
  out.bev = bev_head(out.scene, g);
  std::tie(out.traffic, out.weather) = rule_heads(out.scene, g);
  return out;
}

}  // namespace iidsu
