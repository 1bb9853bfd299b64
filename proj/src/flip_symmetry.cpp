#include <numeric>

#include "h4w/error.hpp"
#include "h4w/pipeline.hpp"

namespace h4w {
namespace {

// Signed permutation: (S y)[i] = sign[i] * y[perm[i]]. Always an involution.
struct SignedPerm {
  std::vector<int> perm;
  std::vector<double> sign;

  static SignedPerm identity(int n) {
    SignedPerm s;
    s.perm.resize(static_cast<std::size_t>(n));
    std::iota(s.perm.begin(), s.perm.end(), 0);
    s.sign.assign(static_cast<std::size_t>(n), 1.0);
    return s;
  }
  // Swaps channels 2k <-> 2k+1; a trailing odd channel maps to itself.
  static SignedPerm pairs(int n) {
    SignedPerm s = identity(n);
    for (int i = 0; i + 1 < n; i += 2) std::swap(s.perm[static_cast<std::size_t>(i)], s.perm[static_cast<std::size_t>(i + 1)]);
    return s;
  }
  int size() const { return static_cast<int>(perm.size()); }
  void append(const SignedPerm& o) {
    const int base = size();
    for (int i = 0; i < o.size(); ++i) {
      perm.push_back(base + o.perm[static_cast<std::size_t>(i)]);
      sign.push_back(o.sign[static_cast<std::size_t>(i)]);
    }
  }
};

// Joint relabeling combined with a per-joint block transform.
SignedPerm per_joint(std::span<const int> pairs, const SignedPerm& block) {
  SignedPerm s;
  const int b = block.size();
  for (std::size_t j = 0; j < pairs.size(); ++j)
    for (int i = 0; i < b; ++i) {
      s.perm.push_back(pairs[j] * b + block.perm[static_cast<std::size_t>(i)]);
      s.sign.push_back(block.sign[static_cast<std::size_t>(i)]);
    }
  return s;
}

// W <- (W + T(W)) / 2 with T(W)[o, c, ky, kx] = W[po(o), pc(c), ky, k-1-kx];
// b <- (b + b[po]) / 2.
void symmetrize_conv(nn::Params& p, const std::string& prefix, const SignedPerm& po, const SignedPerm& pc) {
  Tensor& w = p.get(prefix + ".w");
  Tensor& b = p.get(prefix + ".b");
  const int o_n = w.dim(0), c_n = w.dim(1), k = w.dim(2);
  if (po.size() != o_n || pc.size() != c_n) throw Error(ErrorKind::ShapeMismatch, "flip permutation does not fit " + prefix);
  const Tensor w0 = w, b0 = b;
  auto at = [&](int o, int c, int y, int x) {
    return static_cast<std::size_t>(((o * c_n + c) * k + y) * k + x);
  };
  for (int o = 0; o < o_n; ++o) {
    for (int c = 0; c < c_n; ++c)
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
          const double t = po.sign[static_cast<std::size_t>(o)] * pc.sign[static_cast<std::size_t>(c)] *
                           w0[at(po.perm[static_cast<std::size_t>(o)], pc.perm[static_cast<std::size_t>(c)], y, k - 1 - x)];
          w[at(o, c, y, x)] = 0.5 * (w0[at(o, c, y, x)] + t);
        }
    b[static_cast<std::size_t>(o)] =
        0.5 * (b0[static_cast<std::size_t>(o)] + po.sign[static_cast<std::size_t>(o)] * b0[static_cast<std::size_t>(po.perm[static_cast<std::size_t>(o)])]);
  }
}

// Dense y = W v + b with the flip acting as v -> A v + c and required to act
// as y -> S y. Sets W = (W + S W A) / 2 and b = sym_S(b) - W c / 2.
void symmetrize_dense(nn::Params& p, const std::string& prefix, const SignedPerm& s, const SignedPerm& a,
                      const std::vector<double>& c) {
  Tensor& w = p.get(prefix + ".w");
  Tensor& b = p.get(prefix + ".b");
  const int out = w.dim(0), in = w.dim(1);
  if (s.size() != out || a.size() != in || static_cast<int>(c.size()) != in)
    throw Error(ErrorKind::ShapeMismatch, "flip permutation does not fit " + prefix);
  const Tensor w0 = w, b0 = b;
  auto at = [in](int o, int i) { return static_cast<std::size_t>(o * in + i); };
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i) {
      const int ai = a.perm[static_cast<std::size_t>(i)];
      const double t = s.sign[static_cast<std::size_t>(o)] * a.sign[static_cast<std::size_t>(ai)] *
                       w0[at(s.perm[static_cast<std::size_t>(o)], ai)];
      w[at(o, i)] = 0.5 * (w0[at(o, i)] + t);
    }
  for (int o = 0; o < out; ++o) {
    double wc = 0;
    for (int i = 0; i < in; ++i) wc += w[at(o, i)] * c[static_cast<std::size_t>(i)];
    const double sym = 0.5 * (b0[static_cast<std::size_t>(o)] +
                              s.sign[static_cast<std::size_t>(o)] * b0[static_cast<std::size_t>(s.perm[static_cast<std::size_t>(o)])]);
    b[static_cast<std::size_t>(o)] = sym - 0.5 * wc;
  }
}

// Channel permutation of each backbone layer's output. The first block keeps
// its channels so that injected body features match hand features exactly.
std::vector<SignedPerm> backbone_perms(const PipelineConfig& cfg) {
  std::vector<SignedPerm> out;
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i)
    out.push_back(i == 0 ? SignedPerm::identity(cfg.backbone[i].channels) : SignedPerm::pairs(cfg.backbone[i].channels));
  return out;
}

void symmetrize_backbone(nn::Params& p, const std::string& prefix, const PipelineConfig& cfg) {
  const std::vector<SignedPerm> perms = backbone_perms(cfg);
  SignedPerm in = SignedPerm::identity(3);
  for (std::size_t i = 0; i < perms.size(); ++i) {
    symmetrize_conv(p, prefix + ".conv" + std::to_string(i + 1), perms[i], in);
    in = perms[i];
  }
}

std::vector<int> body_pairs(const BodyModel& model) {
  return std::vector<int>(model.left_right_pairs.begin(), model.left_right_pairs.begin() + joints::kNumBody);
}

// 6D mirror: first two matrix columns under R -> M R M, M = diag(-1, 1, 1).
SignedPerm rot6d_mirror() {
  SignedPerm s = SignedPerm::identity(6);
  s.sign = {1, -1, -1, -1, 1, 1};
  return s;
}

// Flip action on the regressor input of `mode` for the body Pose2Pose.
void regressor_input_action(const PipelineConfig& cfg, const BodyModel& model, const SignedPerm& f_perm,
                            const SignedPerm& feat_perm, SignedPerm& a, std::vector<double>& c) {
  const std::vector<int> pairs = body_pairs(model);
  const double wg = cfg.grid_size(cfg.body_w()) - 1;
  auto coords = [](int n) {
    SignedPerm s = SignedPerm::identity(n);
    s.sign[0] = -1;
    return s;
  };
  SignedPerm block;
  switch (cfg.regressor_input) {
    case RegressorInput::Gap: a = f_perm; c.assign(static_cast<std::size_t>(a.size()), 0.0); return;
    case RegressorInput::JointFeat: block = feat_perm; break;
    case RegressorInput::Coord2d: block = coords(2); break;
    case RegressorInput::Coord3d: block = coords(3); break;
    case RegressorInput::Coord3dPlusFeat:
      block = feat_perm;
      block.append(coords(3));
      break;
  }
  a = per_joint(pairs, block);
  c.assign(static_cast<std::size_t>(a.size()), 0.0);
  const int b = block.size();
  const int x_at = cfg.regressor_input == RegressorInput::JointFeat ? -1 : b - (cfg.regressor_input == RegressorInput::Coord2d ? 2 : 3);
  if (x_at >= 0)
    for (std::size_t j = 0; j < pairs.size(); ++j) c[j * static_cast<std::size_t>(b) + static_cast<std::size_t>(x_at)] = wg;
}

// Swaps the right and left halves of a hand-derived vector.
SignedPerm swap_halves(int n) {
  SignedPerm s = SignedPerm::identity(n);
  for (int i = 0; i < n / 2; ++i) {
    s.perm[static_cast<std::size_t>(i)] = i + n / 2;
    s.perm[static_cast<std::size_t>(i + n / 2)] = i;
  }
  return s;
}

}  // namespace

void flip_symmetrize(nn::Params& p, const PipelineConfig& cfg, const BodyModel& model) {
  cfg.validate();
  for (int side : {cfg.body_w(), cfg.hand_size, cfg.face_size}) {
    int s = side;
    for (const ConvLayer& l : cfg.backbone) {
      if (l.stride > 1 && s % 2 == 0)
        throw Error(ErrorKind::ConfigError, "flip symmetry needs odd widths before every strided layer");
      s = (s + l.stride - 1) / l.stride;
    }
  }
  const std::vector<SignedPerm> bperm = backbone_perms(cfg);
  const SignedPerm& f_perm = bperm.back();
  const std::vector<int> pairs = body_pairs(model);

  symmetrize_backbone(p, "body.backbone", cfg);
  symmetrize_backbone(p, "face.backbone", cfg);

  // Body Pose2Pose: heat channel (joint, depth) pairs with (mirror joint, depth).
  const SignedPerm heat_perm = per_joint(pairs, SignedPerm::identity(cfg.depth_bins));
  const SignedPerm feat_perm = SignedPerm::pairs(cfg.c_joint);
  symmetrize_conv(p, "body.p2p.heat", heat_perm, f_perm);
  symmetrize_conv(p, "body.p2p.feat", feat_perm, f_perm);

  // Box head: left/right hand maps swap, face map stays.
  SignedPerm box_in = f_perm;
  box_in.append(heat_perm);
  const SignedPerm box_hidden = SignedPerm::pairs(cfg.box_hidden);
  symmetrize_conv(p, "box.conv1", box_hidden, box_in);
  SignedPerm maps = SignedPerm::identity(3);
  maps.perm[kLeftHandBox] = kRightHandBox;
  maps.perm[kRightHandBox] = kLeftHandBox;
  symmetrize_conv(p, "box.conv2", maps, box_hidden);
  symmetrize_dense(p, "box.size1", SignedPerm::identity(cfg.size_hidden), f_perm,
                   std::vector<double>(static_cast<std::size_t>(cfg.c_in()), 0.0));

  // Body rotations from the Pose2Pose input plus the hand-derived extra.
  SignedPerm a;
  std::vector<double> c;
  regressor_input_action(cfg, model, f_perm, feat_perm, a, c);
  if (const int extra = cfg.wrist_extra_size(); extra > 0) {
    a.append(swap_halves(extra));
    c.resize(c.size() + static_cast<std::size_t>(extra), 0.0);
  }
  symmetrize_dense(p, "body.rot", per_joint(pairs, rot6d_mirror()), a, c);

  // Shape and camera: beta fixed, t_x negated.
  SignedPerm sc = SignedPerm::identity(13);
  sc.sign[10] = -1;
  symmetrize_dense(p, "body.shape_cam", sc, f_perm, std::vector<double>(static_cast<std::size_t>(cfg.c_in()), 0.0));

  // Face: jaw 6D mirrored, expression fixed.
  SignedPerm face = rot6d_mirror();
  face.append(SignedPerm::identity(10));
  symmetrize_dense(p, "face.head", face, f_perm, std::vector<double>(static_cast<std::size_t>(cfg.c_in()), 0.0));
}

PipelineConfig flip_symmetric_config() {
  PipelineConfig c;
  c.profile = "toy";
  c.image_h = 40;
  c.image_w = 34;
  c.hand_size = 17;
  c.face_size = 17;
  c.backbone = {{8, 2}, {8, 2}, {8, 2}, {8, 1}};
  c.c_joint = 4;
  c.box_hidden = 4;
  c.size_hidden = 8;
  c.focal = 1500.0;
  return c;
}

}  // namespace h4w
