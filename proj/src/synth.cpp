#include "h4w/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "h4w/error.hpp"
#include "h4w/random.hpp"

namespace h4w {
namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

void fill_uniform(Rng& rng, Tensor& t, double half) {
  for (double& v : t.data) v = rng.uniform(-half, half);
}

}  // namespace

std::array<double, 3> joint_color(const BodyModel& model, int joint) {
  const int c = std::min(joint, model.left_right_pairs[static_cast<std::size_t>(joint)]);
  const double hue = std::fmod(0.61803398874989485 * c, 1.0);
  const double value = (c % 3 == 0) ? 1.0 : (c % 3 == 1 ? 0.8 : 0.6);
  return hsv_to_rgb(hue, 1.0, value);
}

Tensor render_blobs(const BodyModel& model, const Tensor& joints_2d, int height, int width, double sigma,
                    std::span<const double> amplitude, std::span<const char> keep) {
  require_shape(joints_2d, {model.num_joints(), 2}, "joints_2d");
  if (!keep.empty() && static_cast<int>(keep.size()) != model.num_joints())
    throw Error(ErrorKind::ShapeMismatch, "keep mask must have one entry per joint");
  if (!amplitude.empty() && static_cast<int>(amplitude.size()) != model.num_joints())
    throw Error(ErrorKind::ShapeMismatch, "amplitudes must have one entry per joint");
  const auto plane = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  // Each pixel shows the color of its strongest blob, scaled by that blob.
  std::vector<double> best(plane, 0.0);
  std::vector<int> owner(plane, -1);
  const double radius = 4.0 * sigma;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int j = 0; j < model.num_joints(); ++j) {
    if (!keep.empty() && !keep[static_cast<std::size_t>(j)]) continue;
    const double x = joints_2d[static_cast<std::size_t>(2 * j)], y = joints_2d[static_cast<std::size_t>(2 * j + 1)];
    const double a = amplitude.empty() ? 1.0 : amplitude[static_cast<std::size_t>(j)];
    const int x0 = std::max(0, static_cast<int>(std::ceil(x - radius)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(x + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(y - radius)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(y + radius)));
    for (int r = y0; r <= y1; ++r)
      for (int c = x0; c <= x1; ++c) {
        const double g = a * std::exp(-((c - x) * (c - x) + (r - y) * (r - y)) * inv);
        const auto at = static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c);
        if (g > best[at]) {
          best[at] = g;
          owner[at] = j;
        }
      }
  }
  Tensor img({3, height, width});
  for (std::size_t at = 0; at < plane; ++at) {
    if (owner[at] < 0) continue;
    const auto col = joint_color(model, owner[at]);
    for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + at] = col[ch] * best[at];
  }
  return img;
}

std::vector<double> depth_amplitudes(const SynthConfig& scfg, const Tensor& joints_3d) {
  const int k = joints_3d.dim(0);
  std::vector<double> a(static_cast<std::size_t>(k));
  const double root = joints_3d[3 * joints::kPelvis + 2];
  for (int j = 0; j < k; ++j)
    a[static_cast<std::size_t>(j)] =
        std::clamp(scfg.shade_base - scfg.shade_slope * (joints_3d[static_cast<std::size_t>(3 * j + 2)] - root), 0.2, 1.0);
  return a;
}

std::array<Box, 3> part_boxes(const PipelineConfig& pcfg, const SynthConfig& scfg, const Sample& s) {
  using namespace joints;
  const double f = pcfg.image_intrinsics().fx;
  auto box = [&](const std::vector<int>& ids, int depth_joint, double min_size) {
    double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
    for (int j : ids)
      for (int c = 0; c < 2; ++c) {
        const double v = s.joints_2d[static_cast<std::size_t>(2 * j + c)];
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
    const double depth = s.joints_3d[static_cast<std::size_t>(3 * depth_joint + 2)] + s.params.trans[2];
    const double side = std::max(scfg.box_margin * std::max(hi[0] - lo[0], hi[1] - lo[1]), min_size * f / depth);
    return Box{0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), side, side};
  };
  auto hand = [](int wrist, int begin) {
    std::vector<int> v = {wrist};
    for (int i = 0; i < kNumHand; ++i) v.push_back(begin + i);
    return v;
  };
  std::array<Box, 3> out;
  out[kLeftHandBox] = box(hand(kLeftWrist, kLeftHandBegin), kLeftWrist, scfg.hand_min_size);
  out[kRightHandBox] = box(hand(kRightWrist, kRightHandBegin), kRightWrist, scfg.hand_min_size);
  out[kFaceBox] = box({kNeck, kHead, kJaw}, kHead, scfg.face_min_size);
  return out;
}

void annotate(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, Sample& s) {
  const MeshOutput mesh = forward_model(model, s.params);
  Tensor j = regress_joints(model, mesh.vertices);
  s.joints_2d = perspective_project(j, pcfg.image_intrinsics());
  for (int i = 0; i < j.dim(0); ++i)
    for (int c = 0; c < 3; ++c) j[static_cast<std::size_t>(3 * i + c)] -= s.params.trans[static_cast<std::size_t>(c)];
  s.joints_3d = std::move(j);
  s.boxes = part_boxes(pcfg, scfg, s);
}

Sample sample_scene(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, std::uint64_t seed) {
  using namespace joints;
  Rng rng(seed);
  for (int attempt = 0; attempt < scfg.max_attempts; ++attempt) {
    Sample s;
    s.seed = seed;
    ModelParams& p = s.params;
    fill_uniform(rng, p.theta_body, scfg.body_range);
    for (int w : {kLeftWrist, kRightWrist})
      for (int c = 0; c < 3; ++c) p.theta_body[static_cast<std::size_t>(3 * w + c)] = rng.uniform(-scfg.wrist_range, scfg.wrist_range);
    fill_uniform(rng, p.theta_rhand, scfg.finger_range);
    fill_uniform(rng, p.theta_lhand, scfg.finger_range);
    fill_uniform(rng, p.theta_jaw, scfg.jaw_range);
    fill_uniform(rng, p.beta, scfg.shape_range);
    fill_uniform(rng, p.psi, scfg.expr_range);
    p.trans[0] = rng.uniform(-scfg.lateral_range, scfg.lateral_range);
    p.trans[1] = scfg.vertical_offset + rng.uniform(-scfg.lateral_range, scfg.lateral_range);
    p.trans[2] = rng.uniform(scfg.depth_min, scfg.depth_max);
    try {
      annotate(model, pcfg, scfg, s);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::BehindCamera) continue;
      throw;
    }
    bool in_frame = true;
    for (int j = 0; j < model.num_joints(); ++j) {
      const double x = s.joints_2d[static_cast<std::size_t>(2 * j)], y = s.joints_2d[static_cast<std::size_t>(2 * j + 1)];
      if (x < scfg.frame_margin || x > pcfg.image_w - 1 - scfg.frame_margin || y < scfg.frame_margin ||
          y > pcfg.image_h - 1 - scfg.frame_margin)
        in_frame = false;
    }
    if (!in_frame) continue;

    std::vector<char> keep(static_cast<std::size_t>(model.num_joints()), 1);
    if (scfg.blob_dropout > 0)
      for (int j = kLeftHandBegin; j < kNumJoints; ++j) keep[static_cast<std::size_t>(j)] = !rng.bernoulli(scfg.blob_dropout);
    s.image = render_blobs(model, s.joints_2d, pcfg.image_h, pcfg.image_w, scfg.sigma, depth_amplitudes(scfg, s.joints_3d), keep);
    for (double& v : s.image.data) v = std::clamp(v + scfg.noise * rng.normal(), 0.0, 1.0);
    return s;
  }
  throw Error(ErrorKind::BehindCamera, "could not sample an in-frame subject in " + std::to_string(scfg.max_attempts) +
                                           " attempts (seed " + std::to_string(seed) + ")");
}

Sample flip_sample(const BodyModel& model, const Sample& s) {
  const int w = s.image.dim(2);
  const int k = model.num_joints();
  Sample f;
  f.seed = s.seed;
  f.image = grid::hflip_image(s.image);
  f.params = mirror_params(s.params);
  f.joints_3d = Tensor({k, 3});
  f.joints_2d = Tensor({k, 2});
  for (int j = 0; j < k; ++j) {
    const auto p = static_cast<std::size_t>(model.left_right_pairs[static_cast<std::size_t>(j)]);
    const auto jj = static_cast<std::size_t>(j);
    f.joints_3d[3 * jj] = -s.joints_3d[3 * p];
    f.joints_3d[3 * jj + 1] = s.joints_3d[3 * p + 1];
    f.joints_3d[3 * jj + 2] = s.joints_3d[3 * p + 2];
    f.joints_2d[2 * jj] = (w - 1) - s.joints_2d[2 * p];
    f.joints_2d[2 * jj + 1] = s.joints_2d[2 * p + 1];
  }
  auto flip = [w](Box b) {
    b.cx = (w - 1) - b.cx;
    return b;
  };
  f.boxes[kLeftHandBox] = flip(s.boxes[kRightHandBox]);
  f.boxes[kRightHandBox] = flip(s.boxes[kLeftHandBox]);
  f.boxes[kFaceBox] = flip(s.boxes[kFaceBox]);
  return f;
}

std::vector<Sample> make_split(const BodyModel& model, const PipelineConfig& pcfg, const SynthConfig& scfg, int n,
                               std::uint64_t seed, int workers) {
  if (n < 1) throw Error(ErrorKind::ConfigError, "split size must be >= 1");
  std::vector<Sample> out(static_cast<std::size_t>(n));
  auto work = [&](int begin, int stride) {
    for (int i = begin; i < n; i += stride)
      out[static_cast<std::size_t>(i)] =
          sample_scene(model, pcfg, scfg, Rng::derive(seed, static_cast<std::uint64_t>(i)).bits());
  };
  workers = std::clamp(workers, 1, n);
  if (workers == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        work(w, workers);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

namespace {

constexpr char kMagic[8] = {'H', '4', 'W', 'D', 'S', 'E', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof v);
  }
  void tensor(const Tensor& t) {
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put<std::int32_t>(d);
    const auto* p = reinterpret_cast<const char*>(t.ptr());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(double));
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const char> b) : bytes_(b) {}
  template <class T>
  T get() {
    T v{};
    need(sizeof v);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  Tensor tensor() {
    const auto rank = get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorKind::IOFailure, "corrupt tensor rank in dataset");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::int32_t>();
      if (d < 0) throw Error(ErrorKind::IOFailure, "negative dimension in dataset");
      shape.push_back(d);
    }
    Tensor t(shape);
    need(t.size() * sizeof(double));
    std::memcpy(t.ptr(), bytes_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
    return t;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::IOFailure, "truncated dataset record");
  }
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> encode(const Sample& s) {
  Writer w;
  w.put<std::uint64_t>(s.seed);
  w.tensor(s.image);
  for (const Tensor* t : {&s.params.theta_body, &s.params.theta_rhand, &s.params.theta_lhand, &s.params.theta_jaw,
                          &s.params.beta, &s.params.psi, &s.params.trans})
    w.tensor(*t);
  w.tensor(s.joints_3d);
  w.tensor(s.joints_2d);
  for (const Box& b : s.boxes) {
    w.put(b.cx);
    w.put(b.cy);
    w.put(b.w);
    w.put(b.h);
  }
  return std::move(w.bytes);
}

Sample decode(std::span<const char> bytes) {
  Reader r(bytes);
  Sample s;
  s.seed = r.get<std::uint64_t>();
  s.image = r.tensor();
  for (Tensor* t : {&s.params.theta_body, &s.params.theta_rhand, &s.params.theta_lhand, &s.params.theta_jaw,
                    &s.params.beta, &s.params.psi, &s.params.trans})
    *t = r.tensor();
  s.joints_3d = r.tensor();
  s.joints_2d = r.tensor();
  for (Box& b : s.boxes) {
    b.cx = r.get<double>();
    b.cy = r.get<double>();
    b.w = r.get<double>();
    b.h = r.get<double>();
  }
  if (!r.done()) throw Error(ErrorKind::IOFailure, "trailing bytes in dataset record");
  try {
    s.params.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::IOFailure, std::string("corrupt dataset record: ") + e.what());
  }
  return s;
}

}  // namespace

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::vector<std::vector<char>> records;
  for (const Sample& s : samples) records.push_back(encode(s));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  Writer head;
  head.put(kVersion);
  head.put<std::uint64_t>(records.size());
  std::uint64_t offset = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t) * (1 + records.size());
  for (const auto& r : records) {
    head.put(offset);
    offset += sizeof(std::uint64_t) + r.size();
  }
  os.write(kMagic, sizeof kMagic);
  os.write(head.bytes.data(), static_cast<std::streamsize>(head.bytes.size()));
  for (const auto& r : records) {
    const std::uint64_t n = r.size();
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(r.data(), static_cast<std::streamsize>(r.size()));
  }
  if (!os) throw Error(ErrorKind::IOFailure, "write failed: " + path.string());
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IOFailure, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw Error(ErrorKind::IOFailure, path.string() + " is not a dataset file");
  Reader head(std::span<const char>(bytes).subspan(sizeof kMagic));
  const auto version = head.get<std::uint32_t>();
  if (version != kVersion) throw Error(ErrorKind::IOFailure, "unsupported dataset version " + std::to_string(version));
  const auto count = head.get<std::uint64_t>();
  if (count > bytes.size()) throw Error(ErrorKind::IOFailure, "corrupt dataset header");
  std::vector<Sample> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto off = head.get<std::uint64_t>();
    if (off + sizeof(std::uint64_t) > bytes.size()) throw Error(ErrorKind::IOFailure, "dataset index out of range");
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + off, sizeof len);
    if (off + sizeof len + len > bytes.size()) throw Error(ErrorKind::IOFailure, "dataset record out of range");
    out.push_back(decode(std::span<const char>(bytes).subspan(off + sizeof len, len)));
  }
  return out;
}

std::uint64_t sample_hash(const Sample& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : encode(s)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace h4w
