#include "h4w/pipeline.hpp"

#include <cmath>

#include "h4w/error.hpp"
#include "h4w/rotations.hpp"

namespace h4w {

std::string_view to_string(WristMode m) {
  switch (m) {
    case WristMode::BodyOnly: return "body_only";
    case WristMode::BodyPlusHandGap: return "body_plus_hand_gap";
    case WristMode::BodyPlusAllJoints: return "body_plus_all_joints";
    case WristMode::BodyPlusMcp: return "body_plus_mcp";
  }
  return "?";
}

WristMode wrist_mode_from_string(std::string_view s) {
  for (WristMode m : {WristMode::BodyOnly, WristMode::BodyPlusHandGap, WristMode::BodyPlusAllJoints, WristMode::BodyPlusMcp})
    if (to_string(m) == s) return m;
  throw Error(ErrorKind::UnknownMode, "unknown wrist input mode '" + std::string(s) + "'");
}

PipelineConfig PipelineConfig::toy() { return PipelineConfig{}; }

PipelineConfig PipelineConfig::reference() {
  PipelineConfig c;
  c.profile = "reference";
  c.image_h = 512;
  c.image_w = 384;
  c.hand_size = 256;
  c.face_size = 192;
  c.backbone = {{64, 2}, {256, 2}, {512, 2}, {1024, 2}, {2048, 2}};
  c.c_joint = 512;
  c.box_hidden = 256;
  c.size_hidden = 256;
  c.nominal_depth = 45.0;
  return c;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
  if (image_h < 4 || image_w < 4 || image_h % 2 || image_w % 2) fail("image size must be even and >= 4");
  if (hand_size < 1 || face_size < 1) fail("crop sizes must be >= 1");
  if (backbone.empty()) fail("backbone needs at least one layer");
  for (const ConvLayer& l : backbone)
    if (l.channels < 1 || l.stride < 1) fail("backbone layers need channels >= 1 and stride >= 1");
  if (depth_bins < 2) fail("depth_bins must be >= 2");
  if (c_joint < 1 || box_hidden < 1 || size_hidden < 1) fail("layer widths must be >= 1");
  for (int m : mcp_local)
    if (m < 0 || m >= joints::kNumHand) fail("mcp_local entries must be hand-local joint indices");
  if (!(focal > 0) || !(body_depth_range > 0) || !(hand_depth_range > 0) || !(nominal_depth > 0) ||
      !(nominal_box_size > 0))
    fail("focal, depth ranges, nominal depth and box size must be positive");
  if (gt_box_prob < 0 || gt_box_prob > 1) fail("gt_box_prob must be in [0, 1]");
  if (!(input_std > 0)) fail("input_std must be positive");
}

int PipelineConfig::total_stride() const {
  int s = 1;
  for (const ConvLayer& l : backbone) s *= l.stride;
  return s;
}

int PipelineConfig::grid_size(int input) const {
  for (const ConvLayer& l : backbone) input = (input + l.stride - 1) / l.stride;
  return input;
}

int PipelineConfig::block1_size(int input) const { return (input + backbone[0].stride - 1) / backbone[0].stride; }

int PipelineConfig::wrist_extra_size() const {
  switch (wrist_mode) {
    case WristMode::BodyOnly: return 0;
    case WristMode::BodyPlusHandGap: return 2 * c_in();
    case WristMode::BodyPlusAllJoints: return 2 * joints::kNumHand * (c_joint + 3);
    case WristMode::BodyPlusMcp: return 8 * (c_joint + 3);
  }
  return 0;
}

Intrinsics PipelineConfig::body_intrinsics() const {
  return Intrinsics{focal, focal, 0.5 * (body_w() - 1), 0.5 * (body_h() - 1)};
}

Intrinsics PipelineConfig::image_intrinsics() const {
  return Intrinsics{2 * focal, 2 * focal, 0.5 * (image_w - 1), 0.5 * (image_h - 1)};
}

GridMap grid_map(const PipelineConfig& cfg, int input) {
  const int s = cfg.total_stride();
  const int g = cfg.grid_size(input);
  return GridMap{static_cast<double>(s), 0.5 * ((input - 1) - s * (g - 1))};
}

namespace {

GridMap block1_map(const PipelineConfig& cfg, int input) {
  const int s = cfg.backbone[0].stride;
  const int g = cfg.block1_size(input);
  return GridMap{static_cast<double>(s), 0.5 * ((input - 1) - s * (g - 1))};
}

Tensor box_tensor(const Box& b) { return Tensor({4}, {b.cx, b.cy, b.w, b.h}); }

// Per-row affine map [N, 2] -> [N, 2]: (a_x x + c_x, a_y y + c_y).
ad::Var affine_xy(ad::Var xy, double ax, double cx, double ay, double cy) {
  const int n = xy.value().dim(0);
  Tensor a({n, 2}), c({n, 2});
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(2 * i)] = ax, a[static_cast<std::size_t>(2 * i + 1)] = ay;
    c[static_cast<std::size_t>(2 * i)] = cx, c[static_cast<std::size_t>(2 * i + 1)] = cy;
  }
  return ad::add_const(ad::mul_const(xy, a), c);
}

// Box in I pixels -> box on the body backbone's first block.
Box image_box_to_block1(const PipelineConfig& cfg, const Box& b) {
  const GridMap mx = block1_map(cfg, cfg.body_w()), my = block1_map(cfg, cfg.body_h());
  return Box{mx.to_grid(image_to_body_px(b.cx)), my.to_grid(image_to_body_px(b.cy)), 0.5 * b.w / mx.stride,
             0.5 * b.h / my.stride};
}

void add_backbone(nn::Params& params, Rng& rng, const std::string& prefix, const PipelineConfig& cfg) {
  int in = 3;
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
    nn::add_conv(params, rng, prefix + ".conv" + std::to_string(i + 1), in, cfg.backbone[i].channels, 3);
    in = cfg.backbone[i].channels;
  }
}

}  // namespace

nn::Params init_pipeline(const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Params p;
  // Independent streams per module so that changing one head's shape leaves
  // every other module's initial weights untouched.
  std::uint64_t stream = 0;
  auto next = [&] { return Rng::derive(seed, stream++); };
  {
    Rng r = next();
    add_backbone(p, r, "body.backbone", cfg);
  }
  {
    Rng r = next();
    add_pose2pose(p, r, "body.p2p", cfg.body_p2p());
  }
  {
    Rng r = next();
    nn::add_conv(p, r, "box.conv1", cfg.c_in() + cfg.depth_bins * joints::kNumBody, cfg.box_hidden, 3);
    nn::add_conv(p, r, "box.conv2", cfg.box_hidden, 3, 1);
    nn::add_dense(p, r, "box.size1", cfg.c_in(), cfg.size_hidden);
    nn::add_dense(p, r, "box.size2", cfg.size_hidden, 2, cfg.head_gain);
    Tensor& b = p.get("box.size2.b");
    b[0] = b[1] = std::log(cfg.nominal_box_size);
  }
  {
    Rng r = next();
    add_backbone(p, r, "hand.backbone", cfg);
  }
  {
    Rng r = next();
    add_pose2pose(p, r, "hand.p2p", cfg.hand_p2p());
  }
  {
    Rng r = next();
    add_rotation_regressor(p, r, "hand.rot", regressor_input_size(cfg.regressor_input, cfg.hand_p2p()), joints::kNumHand,
                           cfg.head_gain);
  }
  {
    Rng r = next();
    add_rotation_regressor(p, r, "body.rot",
                           regressor_input_size(cfg.regressor_input, cfg.body_p2p()) + cfg.wrist_extra_size(),
                           joints::kNumBody, cfg.head_gain);
  }
  {
    Rng r = next();
    nn::add_dense(p, r, "body.shape_cam", cfg.c_in(), 13, cfg.head_gain);
    p.get("body.shape_cam.b")[12] = cfg.nominal_depth;
  }
  {
    Rng r = next();
    add_backbone(p, r, "face.backbone", cfg);
  }
  {
    Rng r = next();
    nn::add_dense(p, r, "face.head", cfg.c_in(), 16, cfg.head_gain);
    Tensor& b = p.get("face.head.b");
    b[0] = b[4] = 1.0;
  }
  return p;
}

BackboneOut backbone_forward(nn::Bound& p, const std::string& prefix, const PipelineConfig& cfg, ad::Var image,
                             std::optional<ad::Var> block1_add) {
  BackboneOut out;
  ad::Var x = image;
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
    x = ad::relu(nn::conv(p, prefix + ".conv" + std::to_string(i + 1), x, cfg.backbone[i].stride));
    if (i == 0) {
      if (block1_add) {
        if (block1_add->shape() != x.shape())
          throw Error(ErrorKind::ShapeMismatch, "injected features " + shape_str(block1_add->shape()) +
                                                    " do not match first block " + shape_str(x.shape()));
        x = ad::add(x, *block1_add);
      }
      out.block1 = x;
    }
  }
  out.out = x;
  return out;
}

Phase1Out bodynet_phase1(nn::Bound& p, const PipelineConfig& cfg, const Tensor& body_image) {
  require_shape(body_image, {3, cfg.body_h(), cfg.body_w()}, "body image");
  ad::Tape& t = p.tape();
  Phase1Out out;
  out.backbone = backbone_forward(p, "body.backbone", cfg, t.constant(body_image));
  const ad::Var F = out.backbone.out;
  out.p2p = pose2pose_forward(p, "body.p2p", F, cfg.body_p2p());

  const Shape& fs = F.shape();
  ad::Var heat = ad::reshape(out.p2p.H, {cfg.depth_bins * joints::kNumBody, fs[1], fs[2]});
  ad::Var maps = ad::relu(nn::conv(p, "box.conv1", ad::concat({F, heat}, 0)));
  maps = nn::conv(p, "box.conv2", maps);
  out.box_centers_grid = grid::soft_argmax_2d(maps);

  const GridMap mx = grid_map(cfg, cfg.body_w()), my = grid_map(cfg, cfg.body_h());
  const ad::Var centers = affine_xy(out.box_centers_grid, 2 * mx.stride, body_to_image_px(mx.offset), 2 * my.stride,
                                    body_to_image_px(my.offset));
  out.box_features = grid::bilinear_sample(F, out.box_centers_grid);
  std::vector<ad::Var> sizes;
  for (int b = 0; b < 3; ++b) {
    ad::Var h = ad::relu(nn::dense(p, "box.size1", ad::slice(out.box_features, 0, b, 1)));
    sizes.push_back(ad::reshape(ad::exp(nn::dense(p, "box.size2", h)), {1, 2}));
  }
  const ad::Var size_px = affine_xy(ad::concat(sizes, 0), cfg.image_w, 0.0, cfg.image_h, 0.0);
  out.boxes = ad::concat({centers, size_px}, 1);
  return out;
}

namespace {

struct SingleHand {
  Pose2PoseOutput p2p;
  ad::Var features;
  ad::Var rot6d;
};

SingleHand run_hand(nn::Bound& p, const PipelineConfig& cfg, ad::Var crop, std::optional<ad::Var> inject) {
  SingleHand h;
  h.features = backbone_forward(p, "hand.backbone", cfg, crop, inject).out;
  h.p2p = pose2pose_forward(p, "hand.p2p", h.features, cfg.hand_p2p());
  h.rot6d = regress_rotations(p, "hand.rot", variant_inputs(cfg.regressor_input, h.p2p, h.features), std::nullopt,
                              joints::kNumHand);
  return h;
}

ad::Var mcp_rows(const PipelineConfig& cfg, const Pose2PoseOutput& o) {
  return ad::gather_rows(ad::concat({o.F_joint, o.P}, 1), cfg.mcp_local);
}

}  // namespace

HandOut handnet_forward(nn::Bound& p, const PipelineConfig& cfg, const Tensor& image, const std::array<Box, 3>& boxes,
                        std::optional<ad::Var> body_block1) {
  require_shape(image, {3, cfg.image_h, cfg.image_w}, "image");
  ad::Tape& t = p.tape();
  const ad::Var img = t.constant(image);
  const int hs = cfg.hand_size;
  const ad::Var crop_r = grid::roi_align(img, t.constant(box_tensor(boxes[kRightHandBox])), hs, hs);
  const ad::Var crop_l = grid::hflip_image(grid::roi_align(img, t.constant(box_tensor(boxes[kLeftHandBox])), hs, hs));
  std::optional<ad::Var> inj_r, inj_l;
  if (body_block1) {
    const int b1 = cfg.block1_size(hs);
    inj_r = grid::roi_align(*body_block1, t.constant(box_tensor(image_box_to_block1(cfg, boxes[kRightHandBox]))), b1, b1);
    inj_l = grid::hflip_image(
        grid::roi_align(*body_block1, t.constant(box_tensor(image_box_to_block1(cfg, boxes[kLeftHandBox]))), b1, b1));
  }
  const SingleHand r = run_hand(p, cfg, crop_r, inj_r);
  const SingleHand l = run_hand(p, cfg, crop_l, inj_l);

  HandOut out;
  out.right = r.p2p;
  out.left = l.p2p;
  out.right_features = r.features;
  out.left_features = l.features;
  out.rot6d_rhand = r.rot6d;
  out.rot6d_lhand_raw = l.rot6d;
  out.theta_rhand = rot::rot6d_to_axis_angle(r.rot6d);
  out.theta_lhand = rot::mirror_rotation(rot::rot6d_to_axis_angle(l.rot6d));
  out.v_m = ad::flatten(ad::concat({mcp_rows(cfg, r.p2p), mcp_rows(cfg, l.p2p)}, 0));
  out.hand_gap = ad::concat({ad::mean_pool_spatial(r.features), ad::mean_pool_spatial(l.features)}, 0);
  out.all_joints = ad::concat({r.p2p.v, l.p2p.v}, 0);
  return out;
}

Phase2Out bodynet_phase2(nn::Bound& p, const PipelineConfig& cfg, const Phase1Out& ph1, const HandOut& hands) {
  Phase2Out out;
  const ad::Var F = ph1.backbone.out;
  out.regressor_input = variant_inputs(cfg.regressor_input, ph1.p2p, F);
  std::optional<ad::Var> extra;
  switch (cfg.wrist_mode) {
    case WristMode::BodyOnly: break;
    case WristMode::BodyPlusHandGap: extra = hands.hand_gap; break;
    case WristMode::BodyPlusAllJoints: extra = hands.all_joints; break;
    case WristMode::BodyPlusMcp: extra = hands.v_m; break;
  }
  if (extra && cfg.detach_vm) extra = ad::detach(*extra);
  out.rot6d_body = regress_rotations(p, "body.rot", out.regressor_input, extra, joints::kNumBody);
  out.theta_body = rot::rot6d_to_axis_angle(out.rot6d_body);
  const ad::Var sc = nn::dense(p, "body.shape_cam", ad::mean_pool_spatial(F));
  out.beta = ad::slice(sc, 0, 0, 10);
  out.trans = ad::slice(sc, 0, 10, 3);
  return out;
}

FaceOut facenet_forward(nn::Bound& p, const PipelineConfig& cfg, const Tensor& image, const Box& face_box) {
  require_shape(image, {3, cfg.image_h, cfg.image_w}, "image");
  ad::Tape& t = p.tape();
  const ad::Var crop = grid::roi_align(t.constant(image), t.constant(box_tensor(face_box)), cfg.face_size, cfg.face_size);
  const ad::Var f = backbone_forward(p, "face.backbone", cfg, crop).out;
  const ad::Var head = nn::dense(p, "face.head", ad::mean_pool_spatial(f));
  FaceOut out;
  out.rot6d_jaw = ad::reshape(ad::slice(head, 0, 0, 6), {1, 6});
  out.theta_jaw = rot::rot6d_to_axis_angle(out.rot6d_jaw);
  out.psi = ad::slice(head, 0, 6, 10);
  return out;
}

namespace {

std::array<Box, 3> boxes_of(const Tensor& b) {
  std::array<Box, 3> out;
  for (int i = 0; i < 3; ++i)
    out[static_cast<std::size_t>(i)] = Box{b[static_cast<std::size_t>(4 * i)], b[static_cast<std::size_t>(4 * i + 1)],
                                           b[static_cast<std::size_t>(4 * i + 2)], b[static_cast<std::size_t>(4 * i + 3)]};
  return out;
}

}  // namespace

std::array<Box, 3> PipelineOutput::predicted_boxes() const { return boxes_of(phase1.boxes.value()); }

ModelParams PipelineOutput::model_params() const {
  ModelParams m;
  m.theta_body = params.theta_body.value();
  m.theta_rhand = params.theta_rhand.value();
  m.theta_lhand = params.theta_lhand.value();
  m.theta_jaw = params.theta_jaw.value();
  m.beta = params.beta.value();
  m.psi = params.psi.value();
  m.trans = params.trans.value();
  return m;
}

Tensor normalize_image(const PipelineConfig& cfg, const Tensor& image) {
  Tensor out = image;
  const double inv = 1.0 / cfg.input_std;
  for (double& v : out.data) v = (v - cfg.input_mean) * inv;
  return out;
}

PipelineOutput full_forward(nn::Bound& p, const PipelineConfig& cfg, const BodyModel& model, const Tensor& raw,
                            const ForwardOptions& opts) {
  require_shape(raw, {3, cfg.image_h, cfg.image_w}, "image");
  const Tensor image = normalize_image(cfg, raw);
  PipelineOutput out;
  out.phase1 = bodynet_phase1(p, cfg, grid::downsample2(image));
  out.crop_boxes = opts.crop_boxes ? *opts.crop_boxes : out.predicted_boxes();
  out.hands = handnet_forward(p, cfg, image, out.crop_boxes,
                              cfg.finger_body_feature ? std::optional<ad::Var>(out.phase1.backbone.block1) : std::nullopt);
  out.phase2 = bodynet_phase2(p, cfg, out.phase1, out.hands);
  out.face = facenet_forward(p, cfg, image, out.crop_boxes[kFaceBox]);
  out.params = body::ParamVars{out.phase2.theta_body, out.hands.theta_rhand, out.hands.theta_lhand, out.face.theta_jaw,
                               out.phase2.beta,       out.face.psi,          out.phase2.trans};
  out.mesh = body::forward_model(model, out.params);
  out.regressed_joints = body::regress_joints(model, out.mesh.vertices);
  return out;
}

}  // namespace h4w
