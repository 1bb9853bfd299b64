#include "h4w/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <json.hpp>

#include "h4w/error.hpp"

namespace h4w {
namespace {

using Points = Eigen::Matrix<double, 3, Eigen::Dynamic>;

Points to_points(const Tensor& t) {
  Points p(3, t.dim(0));
  for (int i = 0; i < t.dim(0); ++i)
    for (int c = 0; c < 3; ++c) p(c, i) = t[static_cast<std::size_t>(3 * i + c)];
  return p;
}

void check_pair(const Tensor& pred, const Tensor& gt) {
  if (pred.rank() != 2 || pred.dim(1) != 3 || pred.shape != gt.shape || pred.dim(0) < 1)
    throw Error(ErrorKind::ShapeMismatch, "metric inputs must be matching [N,3], got " + shape_str(pred.shape) + " and " +
                                              shape_str(gt.shape));
}

Tensor rows(const Tensor& t, const std::vector<int>& idx) {
  Tensor out({static_cast<int>(idx.size()), 3});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int c = 0; c < 3; ++c) out[3 * i + static_cast<std::size_t>(c)] = t[static_cast<std::size_t>(3 * idx[i] + c)];
  return out;
}

}  // namespace

double rooted_error(const Tensor& pred, const Tensor& gt, const double pred_root[3], const double gt_root[3]) {
  check_pair(pred, gt);
  double s = 0;
  for (int i = 0; i < pred.dim(0); ++i) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const auto k = static_cast<std::size_t>(3 * i + c);
      const double d = (pred[k] - pred_root[c]) - (gt[k] - gt_root[c]);
      d2 += d * d;
    }
    s += std::sqrt(d2);
  }
  return 1000.0 * s / pred.dim(0);
}

double mpjpe(const Tensor& pred, const Tensor& gt, int root) {
  check_pair(pred, gt);
  if (root < 0 || root >= pred.dim(0)) throw Error(ErrorKind::ShapeMismatch, "root index out of range");
  const auto r = static_cast<std::size_t>(3 * root);
  return rooted_error(pred, gt, pred.ptr() + r, gt.ptr() + r);
}

Tensor pa_align(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  if (pred.dim(0) < 3) throw Error(ErrorKind::Degenerate, "Procrustes alignment needs at least 3 points");
  const Points src = to_points(pred), dst = to_points(gt);
  const Eigen::Vector3d ms = src.rowwise().mean(), md = dst.rowwise().mean();
  const Eigen::Matrix3d cov = (dst.colwise() - md) * (src.colwise() - ms).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(cov).singularValues();
  if (!(sv(0) > 0) || sv(1) <= 1e-12 * sv(0)) throw Error(ErrorKind::Degenerate, "cross-covariance has rank < 2");
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, true);
  const Points aligned = (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
  Tensor out(pred.shape);
  for (int i = 0; i < pred.dim(0); ++i)
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(3 * i + c)] = aligned(c, i);
  return out;
}

double pa_mpjpe(const Tensor& pred, const Tensor& gt) {
  const double zero[3] = {0, 0, 0};
  return rooted_error(pa_align(pred, gt), gt, zero, zero);
}

const PartMetrics& MetricReport::part(std::string_view name) const {
  for (std::size_t i = 0; i < kMetricParts.size(); ++i)
    if (name == kMetricParts[i]) return parts[i];
  throw Error(ErrorKind::ConfigError, "unknown metric part '" + std::string(name) + "'");
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  for (std::size_t i = 0; i < kMetricParts.size(); ++i) {
    const PartMetrics& m = parts[i];
    j[kMetricParts[i]] = {{"mpjpe", m.mpjpe}, {"pa_mpjpe", m.pa_mpjpe}, {"mpvpe", m.mpvpe}, {"pa_mpvpe", m.pa_mpvpe}};
  }
  return j.dump(2);
}

MetricReport evaluate(const BodyModel& model, const Tensor& pred_vertices, const Tensor& pred_joints,
                      const Tensor& gt_vertices, const Tensor& gt_joints, HandRoot hand_root) {
  using namespace joints;
  check_pair(pred_vertices, gt_vertices);
  check_pair(pred_joints, gt_joints);
  if (pred_joints.dim(0) != model.num_joints() || pred_vertices.dim(0) != model.num_vertices())
    throw Error(ErrorKind::ShapeMismatch, "prediction does not match the body model");

  auto part = [&](const std::vector<int>& jidx, const std::vector<int>& vidx, int root) {
    const auto r = static_cast<std::size_t>(3 * root);
    const Tensor pj = rows(pred_joints, jidx), gj = rows(gt_joints, jidx);
    const Tensor pv = rows(pred_vertices, vidx), gv = rows(gt_vertices, vidx);
    PartMetrics m;
    m.mpjpe = rooted_error(pj, gj, pred_joints.ptr() + r, gt_joints.ptr() + r);
    m.pa_mpjpe = pa_mpjpe(pj, gj);
    m.mpvpe = rooted_error(pv, gv, pred_joints.ptr() + r, gt_joints.ptr() + r);
    m.pa_mpvpe = pa_mpjpe(pv, gv);
    return m;
  };
  auto range = [](int begin, int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = begin + i;
    return v;
  };
  auto hand_joints = [&](int wrist, int begin) {
    std::vector<int> v = {wrist};
    for (int i = 0; i < kNumHand; ++i) v.push_back(begin + i);
    return v;
  };

  MetricReport rep;
  rep.samples = 1;
  rep.parts[0] = part(range(0, model.num_joints()), range(0, model.num_vertices()), kPelvis);
  rep.parts[1] = part(range(0, kNumBody), model.vertices_of(Part::Body), kPelvis);
  rep.parts[2] = part(hand_joints(kLeftWrist, kLeftHandBegin), model.vertices_of(Part::LeftHand),
                      hand_root == HandRoot::Wrist ? kLeftWrist : kPelvis);
  rep.parts[3] = part(hand_joints(kRightWrist, kRightHandBegin), model.vertices_of(Part::RightHand),
                      hand_root == HandRoot::Wrist ? kRightWrist : kPelvis);
  const PartMetrics& l = rep.parts[2];
  const PartMetrics& r = rep.parts[3];
  rep.parts[4] = {0.5 * (l.mpjpe + r.mpjpe), 0.5 * (l.pa_mpjpe + r.pa_mpjpe), 0.5 * (l.mpvpe + r.mpvpe),
                  0.5 * (l.pa_mpvpe + r.pa_mpvpe)};
  rep.parts[5] = part({kNeck, kHead, kJaw}, model.vertices_of(Part::Face), kNeck);
  return rep;
}

void accumulate(MetricReport& acc, const MetricReport& one) {
  const double n = acc.samples, m = one.samples;
  if (m == 0) return;
  auto mix = [&](double a, double b) { return (a * n + b * m) / (n + m); };
  for (std::size_t i = 0; i < acc.parts.size(); ++i) {
    PartMetrics& a = acc.parts[i];
    const PartMetrics& b = one.parts[i];
    a = {mix(a.mpjpe, b.mpjpe), mix(a.pa_mpjpe, b.pa_mpjpe), mix(a.mpvpe, b.mpvpe), mix(a.pa_mpvpe, b.pa_mpvpe)};
  }
  acc.samples += one.samples;
}

}  // namespace h4w
