#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "h4w/synth.hpp"
#include "test_util.hpp"

using namespace h4w;
using test::error_kind;
using test::at;
using test::max_abs_diff;

namespace {

const BodyModel& toy_model() {
  static const BodyModel m = build_toy_model();
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("h4w_synth_" + name);
}

}  // namespace

TEST_CASE("sampling is deterministic per seed") {
  const PipelineConfig cfg = PipelineConfig::toy();
  const SynthConfig scfg;
  const Sample a = sample_scene(toy_model(), cfg, scfg, 42);
  const Sample b = sample_scene(toy_model(), cfg, scfg, 42);
  CHECK(a == b);
  CHECK(sample_hash(a) == sample_hash(b));
  const Sample c = sample_scene(toy_model(), cfg, scfg, 43);
  CHECK(!(a.image == c.image));
  CHECK(a.image.shape == Shape{3, cfg.image_h, cfg.image_w});
  for (double v : a.image.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (int w : {joints::kLeftWrist, joints::kRightWrist})
    for (int c2 = 0; c2 < 3; ++c2) CHECK(std::abs(at(a.params.theta_body, w, c2)) <= scfg.wrist_range);
  for (double v : a.params.theta_rhand.data) CHECK(std::abs(v) <= scfg.finger_range);
  CHECK(a.params.trans[2] >= scfg.depth_min);
  CHECK(a.params.trans[2] <= scfg.depth_max);
}

TEST_CASE("annotations are consistent with the projection of the posed model") {
  const PipelineConfig cfg = PipelineConfig::toy();
  const SynthConfig scfg;
  const Intrinsics k = cfg.image_intrinsics();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Sample s = sample_scene(toy_model(), cfg, scfg, seed);
    for (int j = 0; j < joints::kNumJoints; ++j) {
      const double X = at(s.joints_3d, j, 0) + s.params.trans[0];
      const double Y = at(s.joints_3d, j, 1) + s.params.trans[1];
      const double Z = at(s.joints_3d, j, 2) + s.params.trans[2];
      CHECK(at(s.joints_2d, j, 0) == doctest::Approx(k.fx * X / Z + k.cx).epsilon(1e-12));
      CHECK(at(s.joints_2d, j, 1) == doctest::Approx(k.fy * Y / Z + k.cy).epsilon(1e-12));
      CHECK(at(s.joints_2d, j, 0) >= scfg.frame_margin);
      CHECK(at(s.joints_2d, j, 0) <= cfg.image_w - 1 - scfg.frame_margin);
    }
  }
}

TEST_CASE("zero pose without noise renders blobs at the rest-pose projections") {
  const PipelineConfig cfg = PipelineConfig::toy();
  SynthConfig scfg;
  scfg.noise = 0;
  const BodyModel& model = toy_model();
  Sample s;
  s.params.trans = Tensor({3}, {0.0, scfg.vertical_offset, 180.0});
  annotate(model, cfg, scfg, s);
  const Tensor rest = regress_joints(model, model.template_vertices);
  CHECK(max_abs_diff(s.joints_3d, rest) < 1e-12);
  const Tensor img = render_blobs(model, s.joints_2d, cfg.image_h, cfg.image_w, scfg.sigma);
  // A lone blob placed at an integer pixel peaks exactly at its color there.
  const int j = joints::kHead;
  Tensor one(s.joints_2d.shape);
  for (double& v : one.data) v = -100;
  at(one, j, 0) = std::round(at(s.joints_2d, j, 0));
  at(one, j, 1) = std::round(at(s.joints_2d, j, 1));
  const Tensor single = render_blobs(model, one, cfg.image_h, cfg.image_w, scfg.sigma);
  const auto color = joint_color(model, j);
  const int x = static_cast<int>(at(one, j, 0)), y = static_cast<int>(at(one, j, 1));
  for (int c = 0; c < 3; ++c) {
    CHECK(at(single, c, y, x) == doctest::Approx(color[static_cast<std::size_t>(c)]));
    CHECK(at(single, c, y, x + 12) == 0.0);
  }
  // Every rendered joint is a local brightness maximum near its projection.
  for (int jj = 0; jj < joints::kNumBody; ++jj) {
    const int px = static_cast<int>(std::lround(at(s.joints_2d, jj, 0))), py = static_cast<int>(std::lround(at(s.joints_2d, jj, 1)));
    double e = 0;
    for (int c = 0; c < 3; ++c) e += at(img, c, py, px);
    CHECK(e > 0.3);
  }
}

TEST_CASE("render_blobs matches a dominant-blob loop oracle") {
  const BodyModel& model = toy_model();
  Rng rng(3);
  const int H = 20, W = 16;
  Tensor j2({model.num_joints(), 2});
  for (int j = 0; j < model.num_joints(); ++j) at(j2, j, 0) = rng.uniform(0, W - 1), at(j2, j, 1) = rng.uniform(0, H - 1);
  std::vector<double> amp(static_cast<std::size_t>(model.num_joints()));
  for (double& a : amp) a = rng.uniform(0.2, 1);
  std::vector<char> keep(amp.size(), 1);
  keep[5] = keep[30] = 0;
  const double sigma = 1.5;
  const Tensor img = render_blobs(model, j2, H, W, sigma, amp, keep);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double best = 0;
      int who = -1;
      for (int j = 0; j < model.num_joints(); ++j) {
        if (!keep[static_cast<std::size_t>(j)]) continue;
        const double dx = x - at(j2, j, 0), dy = y - at(j2, j, 1);
        if (std::abs(dx) > 4 * sigma || std::abs(dy) > 4 * sigma) continue;
        const double g = amp[static_cast<std::size_t>(j)] * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        if (g > best) best = g, who = j;
      }
      for (int c = 0; c < 3; ++c) {
        const double want = who < 0 ? 0.0 : joint_color(model, who)[static_cast<std::size_t>(c)] * best;
        CHECK(at(img, c, y, x) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  CHECK(error_kind([&] { (void)render_blobs(model, Tensor({3, 2}), H, W, sigma); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("stored boxes match a recomputation from the projected joints") {
  const PipelineConfig cfg = PipelineConfig::toy();
  const SynthConfig scfg;
  const double f = cfg.image_intrinsics().fx;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = sample_scene(toy_model(), cfg, scfg, seed);
    const std::vector<std::pair<int, std::vector<int>>> parts = {
        {kLeftHandBox, {20, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37}},
        {kRightHandBox, {21, 38, 39, 40, 41, 42, 43, 44, 45, 46, 47, 48, 49, 50, 51, 52}},
        {kFaceBox, {joints::kNeck, joints::kHead, joints::kJaw}}};
    for (const auto& [b, ids] : parts) {
      double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
      for (int j : ids) {
        x0 = std::min(x0, at(s.joints_2d, j, 0)), x1 = std::max(x1, at(s.joints_2d, j, 0));
        y0 = std::min(y0, at(s.joints_2d, j, 1)), y1 = std::max(y1, at(s.joints_2d, j, 1));
      }
      const int depth_joint = b == kFaceBox ? joints::kHead : ids[0];
      const double min_size = b == kFaceBox ? scfg.face_min_size : scfg.hand_min_size;
      const double z = at(s.joints_3d, depth_joint, 2) + s.params.trans[2];
      const double side = std::max(scfg.box_margin * std::max(x1 - x0, y1 - y0), min_size * f / z);
      const Box& got = s.boxes[static_cast<std::size_t>(b)];
      CHECK(got.cx == doctest::Approx(0.5 * (x0 + x1)));
      CHECK(got.cy == doctest::Approx(0.5 * (y0 + y1)));
      CHECK(got.w == doctest::Approx(side));
      CHECK(got.h == doctest::Approx(side));
      for (int j : ids) {
        CHECK(std::abs(at(s.joints_2d, j, 0) - got.cx) <= 0.5 * got.w);
        CHECK(std::abs(at(s.joints_2d, j, 1) - got.cy) <= 0.5 * got.h);
      }
    }
  }
}

TEST_CASE("flipping a sample equals generating the mirrored scene") {
  const PipelineConfig cfg = PipelineConfig::toy();
  const SynthConfig scfg;
  const BodyModel& model = toy_model();
  for (std::uint64_t seed : {5u, 6u}) {
    const Sample s = sample_scene(model, cfg, scfg, seed);
    const Sample f = flip_sample(model, s);
    Sample m;
    m.params = mirror_params(s.params);
    annotate(model, cfg, scfg, m);
    CHECK(max_abs_diff(f.joints_3d, m.joints_3d) < 1e-9);
    CHECK(max_abs_diff(f.joints_2d, m.joints_2d) < 1e-9);
    for (int b = 0; b < 3; ++b) {
      CHECK(f.boxes[static_cast<std::size_t>(b)].cx == doctest::Approx(m.boxes[static_cast<std::size_t>(b)].cx));
      CHECK(f.boxes[static_cast<std::size_t>(b)].w == doctest::Approx(m.boxes[static_cast<std::size_t>(b)].w));
    }
    const Tensor direct = render_blobs(model, m.joints_2d, cfg.image_h, cfg.image_w, scfg.sigma,
                                       depth_amplitudes(scfg, m.joints_3d));
    const Tensor flipped = grid::hflip_image(render_blobs(model, s.joints_2d, cfg.image_h, cfg.image_w, scfg.sigma,
                                                          depth_amplitudes(scfg, s.joints_3d)));
    CHECK(max_abs_diff(direct, flipped) < 1e-9);
    const Sample back = flip_sample(model, f);
    CHECK(back.image == s.image);
    CHECK(max_abs_diff(back.joints_2d, s.joints_2d) < 1e-12);
    CHECK(max_abs_diff(back.params.theta_body, s.params.theta_body) < 1e-12);
    CHECK(max_abs_diff(back.params.theta_lhand, s.params.theta_lhand) < 1e-12);
  }
}

TEST_CASE("out-of-reach placements exhaust the retry budget") {
  const PipelineConfig cfg = PipelineConfig::toy();
  SynthConfig scfg;
  scfg.depth_min = -5.0;
  scfg.depth_max = -4.0;
  CHECK(error_kind([&] { (void)sample_scene(toy_model(), cfg, scfg, 1); }) == ErrorKind::BehindCamera);
  scfg = SynthConfig{};
  scfg.depth_min = scfg.depth_max = 3.0;  // far too close: always out of frame
  CHECK(error_kind([&] { (void)sample_scene(toy_model(), cfg, scfg, 1); }) == ErrorKind::BehindCamera);
}

TEST_CASE("splits: worker independence, persistence and hashing") {
  const PipelineConfig cfg = PipelineConfig::toy();
  const SynthConfig scfg;
  const std::vector<Sample> a = make_split(toy_model(), cfg, scfg, 6, 99, 1);
  const std::vector<Sample> b = make_split(toy_model(), cfg, scfg, 6, 99, 3);
  CHECK(a == b);
  CHECK(error_kind([&] { (void)make_split(toy_model(), cfg, scfg, 0, 99); }) == ErrorKind::ConfigError);

  const auto path = temp_file("roundtrip.bin");
  save_dataset(a, path);
  CHECK(load_dataset(path) == a);

  const std::vector<Sample> other = make_split(toy_model(), cfg, scfg, 6, 100, 1);
  std::set<std::uint64_t> ha, hb;
  for (const Sample& s : a) ha.insert(sample_hash(s));
  for (const Sample& s : other) hb.insert(sample_hash(s));
  CHECK(ha.size() == a.size());
  for (std::uint64_t h : hb) CHECK(ha.count(h) == 0);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  CHECK(error_kind([&] { (void)load_dataset(path); }) == ErrorKind::IOFailure);
  {
    std::ofstream os(path, std::ios::binary);
    os << "H4WDSET";
  }
  CHECK(error_kind([&] { (void)load_dataset(path); }) == ErrorKind::IOFailure);
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTADATASET_____________";
  }
  CHECK(error_kind([&] { (void)load_dataset(path); }) == ErrorKind::IOFailure);
  std::filesystem::remove(path);
  CHECK(error_kind([&] { (void)load_dataset(path); }) == ErrorKind::IOFailure);
}

TEST_CASE("hand blob dropout only removes hand joints") {
  const PipelineConfig cfg = PipelineConfig::toy();
  SynthConfig scfg;
  scfg.noise = 0;
  const Sample full = sample_scene(toy_model(), cfg, scfg, 8);
  scfg.blob_dropout = 1.0;
  const Sample dropped = sample_scene(toy_model(), cfg, scfg, 8);
  CHECK(dropped.params == full.params);
  const Tensor body_only = [&] {
    std::vector<char> keep(static_cast<std::size_t>(joints::kNumJoints), 0);
    for (int j = 0; j < joints::kLeftHandBegin; ++j) keep[static_cast<std::size_t>(j)] = 1;
    return render_blobs(toy_model(), full.joints_2d, cfg.image_h, cfg.image_w, scfg.sigma,
                        depth_amplitudes(scfg, full.joints_3d), keep);
  }();
  CHECK(max_abs_diff(dropped.image, body_only) < 1e-12);
}
