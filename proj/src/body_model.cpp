#include "h4w/body_model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "h4w/error.hpp"
#include "h4w/random.hpp"
#include "h4w/rotations.hpp"

namespace h4w {
namespace {

using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;

Vec3 row3(const Tensor& t, int i) {
  const double* p = t.ptr() + 3 * static_cast<std::size_t>(i);
  return Vec3(p[0], p[1], p[2]);
}

void set_row3(Tensor& t, int i, const Vec3& v) {
  double* p = t.ptr() + 3 * static_cast<std::size_t>(i);
  p[0] = v.x(), p[1] = v.y(), p[2] = v.z();
}

}  // namespace

void BodyModel::validate() const {
  const int k = num_joints();
  if (k < 1) throw Error(ErrorKind::InvalidTree, "model has no joints");
  const int v = template_vertices.rank() == 2 ? template_vertices.dim(0) : -1;
  if (v < 1) throw Error(ErrorKind::ShapeMismatch, "template_vertices must be [V,3]");
  require_shape(template_vertices, {v, 3}, "template_vertices");
  require_shape(rest_joints, {k, 3}, "rest_joints");
  require_shape(skin_weights, {v, k}, "skin_weights");
  require_shape(shape_dirs, {v, 3, 10}, "shape_dirs");
  require_shape(expr_dirs, {v, 3, 10}, "expr_dirs");
  if (joint_regressor.rank() != 2 || joint_regressor.dim(1) != v)
    throw Error(ErrorKind::ShapeMismatch, "joint_regressor must be [J,V]");
  if (static_cast<int>(left_right_pairs.size()) != k || static_cast<int>(vertex_part.size()) != v)
    throw Error(ErrorKind::ShapeMismatch, "index tables do not match model size");
  (void)topological_order();
  for (int i = 0; i < v; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      const double w = skin_weights[static_cast<std::size_t>(i * k + j)];
      if (w < 0.0) throw Error(ErrorKind::Degenerate, "negative skinning weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorKind::Degenerate, "skinning weights do not sum to 1");
  }
  for (int r = 0; r < joint_regressor.dim(0); ++r) {
    double s = 0.0;
    for (int i = 0; i < v; ++i) s += joint_regressor[static_cast<std::size_t>(r * v + i)];
    if (std::abs(s - 1.0) > 1e-9) throw Error(ErrorKind::Degenerate, "joint regressor row does not sum to 1");
  }
  for (int j = 0; j < k; ++j) {
    const int p = left_right_pairs[static_cast<std::size_t>(j)];
    if (p < 0 || p >= k || left_right_pairs[static_cast<std::size_t>(p)] != j)
      throw Error(ErrorKind::Degenerate, "left_right_pairs is not an involution");
  }
  for (const auto& hand : mcp_indices)
    for (int m : hand)
      if (m < 0 || m >= k) throw Error(ErrorKind::Degenerate, "MCP index out of range");
  if (k == joints::kNumJoints) {
    for (int m : mcp_indices[0])
      if (parents[static_cast<std::size_t>(m)] != joints::kLeftWrist)
        throw Error(ErrorKind::InvalidTree, "left MCP joint is not a child of the left wrist");
    for (int m : mcp_indices[1])
      if (parents[static_cast<std::size_t>(m)] != joints::kRightWrist)
        throw Error(ErrorKind::InvalidTree, "right MCP joint is not a child of the right wrist");
  }
}

std::vector<int> BodyModel::topological_order() const {
  const int k = num_joints();
  int roots = 0;
  std::vector<std::vector<int>> children(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    const int p = parents[static_cast<std::size_t>(j)];
    if (p == -1) {
      ++roots;
    } else if (p < 0 || p >= k || p == j) {
      throw Error(ErrorKind::InvalidTree, "joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
    } else {
      children[static_cast<std::size_t>(p)].push_back(j);
    }
  }
  if (roots != 1) throw Error(ErrorKind::InvalidTree, "expected exactly one root, found " + std::to_string(roots));
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    if (parents[static_cast<std::size_t>(j)] == -1) order.push_back(j);
  for (std::size_t head = 0; head < order.size(); ++head)
    for (int c : children[static_cast<std::size_t>(order[head])]) order.push_back(c);
  if (static_cast<int>(order.size()) != k) throw Error(ErrorKind::InvalidTree, "kinematic parents contain a cycle");
  return order;
}

std::vector<int> BodyModel::vertices_of(Part part) const {
  std::vector<int> out;
  for (int i = 0; i < num_vertices(); ++i)
    if (vertex_part[static_cast<std::size_t>(i)] == part) out.push_back(i);
  return out;
}

void ModelParams::validate() const {
  require_shape(theta_body, {joints::kNumBody, 3}, "theta_body");
  require_shape(theta_rhand, {joints::kNumHand, 3}, "theta_rhand");
  require_shape(theta_lhand, {joints::kNumHand, 3}, "theta_lhand");
  require_shape(theta_jaw, {1, 3}, "theta_jaw");
  require_shape(beta, {10}, "beta");
  require_shape(psi, {10}, "psi");
  require_shape(trans, {3}, "trans");
  for (const Tensor* t : {&theta_body, &theta_rhand, &theta_lhand, &theta_jaw, &beta, &psi, &trans})
    for (double x : t->data)
      if (!std::isfinite(x)) throw Error(ErrorKind::Degenerate, "non-finite model parameter");
}

Tensor ModelParams::full_pose() const {
  Tensor out({joints::kNumJoints, 3});
  auto put = [&](const Tensor& src, int first) { std::copy(src.data.begin(), src.data.end(), out.data.begin() + 3 * first); };
  put(theta_body, 0);
  put(theta_jaw, joints::kJaw);
  put(theta_lhand, joints::kLeftHandBegin);
  put(theta_rhand, joints::kRightHandBegin);
  return out;
}

std::vector<double> ModelParams::flat_without_trans() const {
  std::vector<double> out;
  for (const Tensor* t : {&theta_body, &theta_rhand, &theta_lhand, &theta_jaw, &beta, &psi})
    out.insert(out.end(), t->data.begin(), t->data.end());
  return out;
}

ModelParams mirror_params(const ModelParams& p) {
  // Joint pairing of the toy layout: body L/R swap, hands swap blocks.
  static constexpr int kBodyPair[joints::kNumBody] = {0,  2,  1,  3,  5,  4,  6,  8,  7,  9,  11,
                                                      10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20};
  auto mirror_rows = [](const Tensor& src, std::span<const int> pair) {
    Tensor out(src.shape);
    for (int r = 0; r < src.dim(0); ++r) {
      const int s = pair.empty() ? r : pair[static_cast<std::size_t>(r)];
      const AxisAngle m = mirror_rotation(AxisAngle{row3(src, s)});
      set_row3(out, r, m.v);
    }
    return out;
  };
  ModelParams out = p;
  out.theta_body = mirror_rows(p.theta_body, kBodyPair);
  out.theta_jaw = mirror_rows(p.theta_jaw, {});
  out.theta_lhand = mirror_rows(p.theta_rhand, {});
  out.theta_rhand = mirror_rows(p.theta_lhand, {});
  out.trans[0] = -p.trans[0];
  return out;
}

MeshOutput forward_model(const BodyModel& model, const ModelParams& params) {
  params.validate();
  ad::Tape tape;
  const body::MeshVars m = body::forward_model(model, body::to_vars(tape, params, false));
  return MeshOutput{m.vertices.value(), m.joints.value()};
}

Tensor regress_joints(const BodyModel& model, const Tensor& vertices) {
  ad::Tape tape;
  return body::regress_joints(model, tape.constant(vertices)).value();
}

Tensor perspective_project(const Tensor& points, const Intrinsics& k) {
  ad::Tape tape;
  return body::perspective_project(tape.constant(points), k).value();
}

std::vector<int> mirror_vertex_permutation(const BodyModel& model, double tol) {
  const int v = model.num_vertices();
  std::vector<int> perm(static_cast<std::size_t>(v), -1);
  for (int i = 0; i < v; ++i) {
    Vec3 m = row3(model.template_vertices, i);
    m.x() = -m.x();
    for (int j = 0; j < v; ++j)
      if ((row3(model.template_vertices, j) - m).cwiseAbs().maxCoeff() <= tol) {
        perm[static_cast<std::size_t>(i)] = j;
        break;
      }
    if (perm[static_cast<std::size_t>(i)] < 0)
      throw Error(ErrorKind::Degenerate, "template vertex " + std::to_string(i) + " has no mirror partner");
  }
  return perm;
}

// ---------------------------------------------------------------------------
// Toy model construction

namespace {

struct Bone {
  int parent, child;
};

double bone_radius(int child) {
  if (child >= joints::kLeftHandBegin) return 0.008;
  if (child == joints::kJaw) return 0.03;
  if (child == joints::kHead) return 0.07;
  if (child == 1 || child == 2 || child == 3 || child == 6 || child == 9 || child == 12) return 0.08;
  return 0.045;
}

Part bone_part(int child) {
  if (child >= joints::kRightHandBegin) return Part::RightHand;
  if (child >= joints::kLeftHandBegin) return Part::LeftHand;
  if (child == joints::kJaw || child == joints::kHead) return Part::Face;
  return Part::Body;
}

// Smooth field that is mirror-symmetric: f(Mp) = M f(p).
struct SymmetricField {
  std::array<Vec3, 2> freq[3];
  std::array<double, 2> phase[3], amp[3];

  static SymmetricField random(Rng& rng) {
    SymmetricField f;
    for (int c = 0; c < 3; ++c)
      for (int m = 0; m < 2; ++m) {
        f.freq[c][static_cast<std::size_t>(m)] = Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4));
        f.phase[c][static_cast<std::size_t>(m)] = rng.uniform(0, 2 * std::numbers::pi);
        f.amp[c][static_cast<std::size_t>(m)] = rng.uniform(-1, 1);
      }
    return f;
  }

  Vec3 operator()(const Vec3& p) const {
    // Even in x for the y, z components and odd for the x component, smooth at x = 0.
    const Vec3 q(4.0 * p.x() * p.x(), p.y(), p.z());
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t m = 0; m < 2; ++m) s += amp[c][m] * std::cos(freq[c][m].dot(q) + phase[c][m]);
      out[c] = s;
    }
    out.x() *= 4.0 * p.x();
    return out;
  }
};

}  // namespace

BodyModel build_toy_model(const ToyModelConfig& cfg) {
  using namespace joints;
  BodyModel m;
  const int k = kNumJoints;
  m.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 12};
  m.parents.resize(static_cast<std::size_t>(k));

  std::vector<Vec3> j(static_cast<std::size_t>(k), Vec3::Zero());
  auto both = [&](int left, int right, const Vec3& pos) {
    j[static_cast<std::size_t>(left)] = pos;
    j[static_cast<std::size_t>(right)] = Vec3(-pos.x(), pos.y(), pos.z());
  };
  j[0] = Vec3(0, 0, 0);
  both(1, 2, Vec3(0.09, 0.08, 0.0));
  j[3] = Vec3(0, -0.10, 0.0);
  both(4, 5, Vec3(0.10, 0.48, 0.0));
  j[6] = Vec3(0, -0.23, 0.0);
  both(7, 8, Vec3(0.10, 0.88, 0.02));
  j[9] = Vec3(0, -0.36, 0.0);
  both(10, 11, Vec3(0.10, 0.93, -0.10));
  j[12] = Vec3(0, -0.50, 0.0);
  both(13, 14, Vec3(0.07, -0.45, 0.0));
  j[15] = Vec3(0, -0.62, 0.0);
  both(16, 17, Vec3(0.18, -0.46, 0.0));
  both(18, 19, Vec3(0.28, -0.22, 0.0));
  both(20, 21, Vec3(0.36, 0.02, 0.0));
  j[22] = Vec3(0, -0.54, -0.06);

  // Hands: fingers continue along the forearm direction.
  const Vec3 d = (j[20] - j[18]).normalized();
  const Vec3 n(d.y(), -d.x(), 0.0);
  const double spread[4] = {0.027, 0.009, -0.027, -0.009};  // index, middle, pinky, ring
  const double lengths[3] = {0.03, 0.025, 0.02};
  for (int f = 0; f < 5; ++f) {
    Vec3 base, dir;
    if (f < 4) {
      base = j[20] + 0.085 * d + spread[f] * n;
      dir = d;
    } else {
      base = j[20] + 0.03 * d + 0.035 * n + Vec3(0, 0, -0.015);
      dir = (d + n + Vec3(0, 0, -0.3)).normalized();
    }
    Vec3 p = base;
    for (int s = 0; s < 3; ++s) {
      const int local = 3 * f + s;
      both(kLeftHandBegin + local, kRightHandBegin + local, p);
      m.parents[static_cast<std::size_t>(kLeftHandBegin + local)] = s == 0 ? kLeftWrist : kLeftHandBegin + local - 1;
      m.parents[static_cast<std::size_t>(kRightHandBegin + local)] = s == 0 ? kRightWrist : kRightHandBegin + local - 1;
      p += lengths[s] * dir;
    }
  }
  m.rest_joints = Tensor({k, 3});
  for (int i = 0; i < k; ++i) set_row3(m.rest_joints, i, j[static_cast<std::size_t>(i)]);

  m.left_right_pairs.resize(static_cast<std::size_t>(k));
  static constexpr int kBodyPair[kNumBody] = {0, 2, 1, 3, 5, 4, 6, 8, 7, 9, 11, 10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20};
  for (int i = 0; i < kNumBody; ++i) m.left_right_pairs[static_cast<std::size_t>(i)] = kBodyPair[i];
  m.left_right_pairs[kJaw] = kJaw;
  for (int i = 0; i < kNumHand; ++i) {
    m.left_right_pairs[static_cast<std::size_t>(kLeftHandBegin + i)] = kRightHandBegin + i;
    m.left_right_pairs[static_cast<std::size_t>(kRightHandBegin + i)] = kLeftHandBegin + i;
  }
  for (int q = 0; q < 4; ++q) {
    m.mcp_indices[0][static_cast<std::size_t>(q)] = kLeftHandBegin + kMcpLocal[static_cast<std::size_t>(q)];
    m.mcp_indices[1][static_cast<std::size_t>(q)] = kRightHandBegin + kMcpLocal[static_cast<std::size_t>(q)];
  }

  std::vector<Bone> bones;
  for (int c = 1; c < k; ++c) bones.push_back({m.parents[static_cast<std::size_t>(c)], c});

  constexpr int kRingPoints = 6;
  const int rings = std::max(1, static_cast<int>(std::lround(static_cast<double>(cfg.vertex_budget) /
                                                             (static_cast<double>(bones.size()) * kRingPoints))));
  const int v = static_cast<int>(bones.size()) * rings * kRingPoints;

  m.template_vertices = Tensor({v, 3});
  m.skin_weights = Tensor({v, k});
  m.joint_regressor = Tensor({k, v});
  m.vertex_part.assign(static_cast<std::size_t>(v), Part::Body);
  std::vector<std::vector<int>> regress_sets(static_cast<std::size_t>(k));

  int vi = 0;
  for (const Bone& b : bones) {
    const Vec3 p = j[static_cast<std::size_t>(b.parent)];
    const Vec3 c = j[static_cast<std::size_t>(b.child)];
    const Vec3 e = (c - p).normalized();
    Vec3 u = Vec3::UnitZ() - Vec3::UnitZ().dot(e) * e;
    if (u.norm() < 1e-6) u = Vec3::UnitY() - Vec3::UnitY().dot(e) * e;
    u.normalize();
    const Vec3 w = e.cross(u);
    const double radius = bone_radius(b.child);
    const int grand = m.parents[static_cast<std::size_t>(b.parent)];
    for (int r = 0; r < rings; ++r) {
      const double s = (r + 0.5) / rings;
      const Vec3 center = p + s * (c - p);
      const double wc = 0.5 * s * s;
      const double wg = grand >= 0 ? 0.5 * (1 - s) * (1 - s) : 0.0;
      for (int q = 0; q < kRingPoints; ++q, ++vi) {
        const double phi = 2.0 * std::numbers::pi * q / kRingPoints;
        set_row3(m.template_vertices, vi, center + radius * (std::cos(phi) * u + std::sin(phi) * w));
        double* wrow = m.skin_weights.ptr() + static_cast<std::size_t>(vi) * k;
        wrow[b.child] += wc;
        if (grand >= 0) wrow[grand] += wg;
        wrow[b.parent] += 1.0 - wc - wg;
        m.vertex_part[static_cast<std::size_t>(vi)] = bone_part(b.child);
        if (r == 0) regress_sets[static_cast<std::size_t>(b.parent)].push_back(vi);
        if (r == rings - 1) regress_sets[static_cast<std::size_t>(b.child)].push_back(vi);
      }
    }
  }
  for (int jj = 0; jj < k; ++jj) {
    const auto& set = regress_sets[static_cast<std::size_t>(jj)];
    for (int idx : set) m.joint_regressor[static_cast<std::size_t>(jj) * v + idx] = 1.0 / static_cast<double>(set.size());
  }

  // Shape and expression bases: smooth mirror-symmetric random fields.
  Rng rng(cfg.seed);
  m.shape_dirs = Tensor({v, 3, 10});
  m.expr_dirs = Tensor({v, 3, 10});
  const Vec3 head = j[kHead];
  for (int basis = 0; basis < 10; ++basis) {
    const SymmetricField fs = SymmetricField::random(rng);
    const SymmetricField fe = SymmetricField::random(rng);
    for (int i = 0; i < v; ++i) {
      const Vec3 x = row3(m.template_vertices, i);
      const Vec3 ds = 0.01 * fs(x);
      const double local = std::exp(-(x - head).squaredNorm() / (2.0 * 0.12 * 0.12));
      const Vec3 de = 0.005 * local * fe(x);
      for (int c = 0; c < 3; ++c) {
        m.shape_dirs[(static_cast<std::size_t>(i) * 3 + c) * 10 + basis] = ds[c];
        m.expr_dirs[(static_cast<std::size_t>(i) * 3 + c) * 10 + basis] = de[c];
      }
    }
  }
  m.validate();
  return m;
}

}  // namespace h4w

// ---------------------------------------------------------------------------
// Differentiable forward pass

namespace h4w::body {

ParamVars to_vars(ad::Tape& tape, const ModelParams& p, bool requires_grad) {
  return ParamVars{tape.leaf(p.theta_body, requires_grad), tape.leaf(p.theta_rhand, requires_grad),
                   tape.leaf(p.theta_lhand, requires_grad), tape.leaf(p.theta_jaw, requires_grad),
                   tape.leaf(p.beta, requires_grad),        tape.leaf(p.psi, requires_grad),
                   tape.leaf(p.trans, requires_grad)};
}

ad::Var full_pose(const ParamVars& p) {
  return ad::concat({p.theta_body, p.theta_jaw, p.theta_lhand, p.theta_rhand}, 0);
}

MeshVars forward_model(const BodyModel& model, const ParamVars& params) {
  return forward_model(model, full_pose(params), params.beta, params.psi, params.trans);
}

namespace {

struct SparseWeights {
  std::vector<int> offset, joint;
  std::vector<double> weight;
};

SparseWeights sparse_weights(const BodyModel& model) {
  SparseWeights s;
  const int v = model.num_vertices(), k = model.num_joints();
  s.offset.reserve(static_cast<std::size_t>(v) + 1);
  s.offset.push_back(0);
  for (int i = 0; i < v; ++i) {
    for (int jj = 0; jj < k; ++jj) {
      const double w = model.skin_weights[static_cast<std::size_t>(i) * k + jj];
      if (w != 0.0) s.joint.push_back(jj), s.weight.push_back(w);
    }
    s.offset.push_back(static_cast<int>(s.joint.size()));
  }
  return s;
}

struct Kinematics {
  std::vector<RowMat3> local, global;  // R_k, RG_k
  std::vector<Vec3> gtrans;            // tG_k
  std::vector<Vec3> skin_trans;        // tG_k - RG_k J_k
  Tensor shaped;                       // [V,3]
};

Kinematics run_kinematics(const BodyModel& model, const std::vector<int>& order, const Tensor& pose,
                          const Tensor& beta, const Tensor& psi) {
  const int v = model.num_vertices(), k = model.num_joints();
  Kinematics kin;
  kin.local.resize(static_cast<std::size_t>(k));
  kin.global.resize(static_cast<std::size_t>(k));
  kin.gtrans.resize(static_cast<std::size_t>(k));
  kin.skin_trans.resize(static_cast<std::size_t>(k));
  for (int jj = 0; jj < k; ++jj) {
    double r[9];
    rot::rodrigues_forward(pose.ptr() + 3 * jj, r);
    kin.local[static_cast<std::size_t>(jj)] = Eigen::Map<RowMat3>(r);
  }
  for (int jj : order) {
    const int p = model.parents[static_cast<std::size_t>(jj)];
    const Vec3 rest = row3(model.rest_joints, jj);
    if (p < 0) {
      kin.global[static_cast<std::size_t>(jj)] = kin.local[static_cast<std::size_t>(jj)];
      kin.gtrans[static_cast<std::size_t>(jj)] = rest;
    } else {
      const auto& gp = kin.global[static_cast<std::size_t>(p)];
      kin.global[static_cast<std::size_t>(jj)] = gp * kin.local[static_cast<std::size_t>(jj)];
      kin.gtrans[static_cast<std::size_t>(jj)] = gp * (rest - row3(model.rest_joints, p)) + kin.gtrans[static_cast<std::size_t>(p)];
    }
    kin.skin_trans[static_cast<std::size_t>(jj)] =
        kin.gtrans[static_cast<std::size_t>(jj)] - kin.global[static_cast<std::size_t>(jj)] * rest;
  }
  kin.shaped = model.template_vertices;
  for (int i = 0; i < v; ++i)
    for (int c = 0; c < 3; ++c) {
      const double* sd = model.shape_dirs.ptr() + (static_cast<std::size_t>(i) * 3 + c) * 10;
      const double* ed = model.expr_dirs.ptr() + (static_cast<std::size_t>(i) * 3 + c) * 10;
      double acc = 0.0;
      for (int b = 0; b < 10; ++b) acc += sd[b] * beta[static_cast<std::size_t>(b)] + ed[b] * psi[static_cast<std::size_t>(b)];
      kin.shaped[static_cast<std::size_t>(i) * 3 + c] += acc;
    }
  return kin;
}

}  // namespace

MeshVars forward_model(const BodyModel& model, ad::Var pose, ad::Var beta, ad::Var psi, ad::Var trans) {
  ad::check_same_tape({pose, beta, psi, trans});
  const int v = model.num_vertices(), k = model.num_joints();
  require_shape(pose.value(), {k, 3}, "forward_model pose");
  require_shape(beta.value(), {10}, "forward_model beta");
  require_shape(psi.value(), {10}, "forward_model psi");
  require_shape(trans.value(), {3}, "forward_model trans");
  const std::vector<int> order = model.topological_order();
  const SparseWeights sw = sparse_weights(model);
  const Kinematics kin = run_kinematics(model, order, pose.value(), beta.value(), psi.value());
  const Vec3 t = row3(trans.value(), 0);

  Tensor out({v + k, 3});
  for (int i = 0; i < v; ++i) {
    RowMat3 a = RowMat3::Zero();
    Vec3 b = Vec3::Zero();
    for (int e = sw.offset[static_cast<std::size_t>(i)]; e < sw.offset[static_cast<std::size_t>(i) + 1]; ++e) {
      const int jj = sw.joint[static_cast<std::size_t>(e)];
      const double w = sw.weight[static_cast<std::size_t>(e)];
      a += w * kin.global[static_cast<std::size_t>(jj)];
      b += w * kin.skin_trans[static_cast<std::size_t>(jj)];
    }
    set_row3(out, i, a * row3(kin.shaped, i) + b + t);
  }
  for (int jj = 0; jj < k; ++jj) set_row3(out, v + jj, kin.gtrans[static_cast<std::size_t>(jj)] + t);

  const BodyModel* mp = &model;
  ad::Var combined = pose.tape->record(
      std::move(out), {pose.id, beta.id, psi.id, trans.id},
      [mp, order, sw, ip = pose.id, ib = beta.id, ie = psi.id, it = trans.id, v, k](ad::Tape& tp, int self) {
        const BodyModel& model = *mp;
        auto g = tp.incoming(self);
        const Kinematics kin = run_kinematics(model, order, tp.value(ip), tp.value(ib), tp.value(ie));

        std::vector<Eigen::Matrix<double, 3, 4>> g_skin(static_cast<std::size_t>(k), Eigen::Matrix<double, 3, 4>::Zero());
        Tensor g_shaped({v, 3});
        Vec3 g_trans = Vec3::Zero();
        for (int i = 0; i < v; ++i) {
          const Vec3 gv(g[3 * static_cast<std::size_t>(i)], g[3 * static_cast<std::size_t>(i) + 1],
                        g[3 * static_cast<std::size_t>(i) + 2]);
          if (gv.isZero(0.0)) continue;
          g_trans += gv;
          const Vec3 x = row3(kin.shaped, i);
          RowMat3 a = RowMat3::Zero();
          for (int e = sw.offset[static_cast<std::size_t>(i)]; e < sw.offset[static_cast<std::size_t>(i) + 1]; ++e) {
            const int jj = sw.joint[static_cast<std::size_t>(e)];
            const double w = sw.weight[static_cast<std::size_t>(e)];
            a += w * kin.global[static_cast<std::size_t>(jj)];
            auto& gs = g_skin[static_cast<std::size_t>(jj)];
            gs.leftCols<3>() += w * gv * x.transpose();
            gs.col(3) += w * gv;
          }
          set_row3(g_shaped, i, a.transpose() * gv);
        }

        std::vector<RowMat3> g_global(static_cast<std::size_t>(k));
        std::vector<Vec3> g_gtrans(static_cast<std::size_t>(k));
        for (int jj = 0; jj < k; ++jj) {
          const Vec3 rest = row3(model.rest_joints, jj);
          const auto& gs = g_skin[static_cast<std::size_t>(jj)];
          g_global[static_cast<std::size_t>(jj)] = gs.leftCols<3>() - gs.col(3) * rest.transpose();
          const std::size_t o = 3 * static_cast<std::size_t>(v + jj);
          const Vec3 gj(g[o], g[o + 1], g[o + 2]);
          g_gtrans[static_cast<std::size_t>(jj)] = gs.col(3) + gj;
          g_trans += gj;
        }

        std::vector<RowMat3> g_local(static_cast<std::size_t>(k), RowMat3::Zero());
        for (auto it_o = order.rbegin(); it_o != order.rend(); ++it_o) {
          const int jj = *it_o;
          const int p = model.parents[static_cast<std::size_t>(jj)];
          const RowMat3& gg = g_global[static_cast<std::size_t>(jj)];
          if (p < 0) {
            g_local[static_cast<std::size_t>(jj)] = gg;
            continue;
          }
          const RowMat3& gp = kin.global[static_cast<std::size_t>(p)];
          const Vec3 offset = row3(model.rest_joints, jj) - row3(model.rest_joints, p);
          g_global[static_cast<std::size_t>(p)] += gg * kin.local[static_cast<std::size_t>(jj)].transpose() +
                                                   g_gtrans[static_cast<std::size_t>(jj)] * offset.transpose();
          g_gtrans[static_cast<std::size_t>(p)] += g_gtrans[static_cast<std::size_t>(jj)];
          g_local[static_cast<std::size_t>(jj)] = gp.transpose() * gg;
        }

        if (tp.requires_grad(ip)) {
          auto& gpose = tp.grad_buffer(ip);
          const Tensor& pose = tp.value(ip);
          for (int jj = 0; jj < k; ++jj) {
            const RowMat3& gl = g_local[static_cast<std::size_t>(jj)];
            double d[3];
            rot::rodrigues_backward(pose.ptr() + 3 * jj, gl.data(), d);
            for (int c = 0; c < 3; ++c) gpose[3 * static_cast<std::size_t>(jj) + c] += d[c];
          }
        }
        auto basis_grad = [&](int id, const Tensor& dirs) {
          if (!tp.requires_grad(id)) return;
          auto& gb = tp.grad_buffer(id);
          for (int i = 0; i < v; ++i)
            for (int c = 0; c < 3; ++c) {
              const double gsc = g_shaped[static_cast<std::size_t>(i) * 3 + c];
              if (gsc == 0.0) continue;
              const double* d = dirs.ptr() + (static_cast<std::size_t>(i) * 3 + c) * 10;
              for (int b = 0; b < 10; ++b) gb[static_cast<std::size_t>(b)] += gsc * d[b];
            }
        };
        basis_grad(ib, model.shape_dirs);
        basis_grad(ie, model.expr_dirs);
        if (tp.requires_grad(it)) {
          auto& gt = tp.grad_buffer(it);
          for (int c = 0; c < 3; ++c) gt[static_cast<std::size_t>(c)] += g_trans[c];
        }
      });
  return MeshVars{ad::slice(combined, 0, 0, v), ad::slice(combined, 0, v, k)};
}

ad::Var regress_joints(const BodyModel& model, ad::Var vertices) {
  const Tensor& vv = vertices.value();
  if (vv.rank() != 2 || vv.dim(1) != 3 || vv.dim(0) != model.joint_regressor.dim(1))
    throw Error(ErrorKind::ShapeMismatch, "regress_joints: vertices " + shape_str(vv.shape) + " vs regressor " +
                                              shape_str(model.joint_regressor.shape));
  return ad::matmul(vertices.tape->constant(model.joint_regressor), vertices);
}

ad::Var perspective_project(ad::Var points, const Intrinsics& k) {
  const Tensor& p = points.value();
  if (p.rank() != 2 || p.dim(1) != 3)
    throw Error(ErrorKind::ShapeMismatch, "perspective_project expects [N,3], got " + shape_str(p.shape));
  const int n = p.dim(0);
  Tensor out({n, 2});
  for (int i = 0; i < n; ++i) {
    const double x = p[3 * static_cast<std::size_t>(i)], y = p[3 * static_cast<std::size_t>(i) + 1],
                 z = p[3 * static_cast<std::size_t>(i) + 2];
    if (!(z > 1e-6)) throw Error(ErrorKind::BehindCamera, "point " + std::to_string(i) + " has depth " + std::to_string(z));
    out[2 * static_cast<std::size_t>(i)] = k.fx * x / z + k.cx;
    out[2 * static_cast<std::size_t>(i) + 1] = k.fy * y / z + k.cy;
  }
  return points.tape->record(std::move(out), {points.id}, [ip = points.id, k, n](ad::Tape& t, int self) {
    auto g = t.incoming(self);
    const Tensor& p = t.value(ip);
    auto& gp = t.grad_buffer(ip);
    for (int i = 0; i < n; ++i) {
      const std::size_t o = 3 * static_cast<std::size_t>(i);
      const double x = p[o], y = p[o + 1], z = p[o + 2];
      const double gu = g[2 * static_cast<std::size_t>(i)], gv = g[2 * static_cast<std::size_t>(i) + 1];
      gp[o] += gu * k.fx / z;
      gp[o + 1] += gv * k.fy / z;
      gp[o + 2] += -(gu * k.fx * x + gv * k.fy * y) / (z * z);
    }
  });
}

}  // namespace h4w::body
