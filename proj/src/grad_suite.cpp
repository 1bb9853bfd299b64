#include "h4w/grad_suite.hpp"

#include <chrono>
#include <json.hpp>

#include "h4w/gradcheck.hpp"
#include "h4w/losses.hpp"
#include "h4w/rotations.hpp"
#include "h4w/synth.hpp"

namespace h4w {
namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Projects a tensor output onto fixed random weights so every entry matters.
ad::Var project(ad::Var y, Rng& rng) {
  return ad::sum(ad::mul_const(y, random_tensor(rng, y.shape(), -1, 1)));
}

GradSuiteCase check(const std::string& name, const ad::ScalarFn& f, const std::vector<Tensor>& inputs, double tol,
                     std::size_t probes = 0, const std::vector<std::string>& block_names = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  ad::GradCheckOptions opts;
  opts.tol = tol;
  opts.max_entries_per_block = probes;
  const ad::GradCheckReport r = ad::grad_check(f, inputs, opts);
  GradSuiteCase c;
  c.name = name;
  c.max_rel_error = r.max_rel_error;
  c.tol = tol;
  c.passed = r.passed;
  std::size_t worst = 0;
  for (std::size_t b = 0; b < r.blocks.size(); ++b)
    if (r.blocks[b].rel_error > r.blocks[worst].rel_error) worst = b;
  if (!r.blocks.empty())
    c.worst_block = worst < block_names.size() ? block_names[worst] : "input " + std::to_string(worst);
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

}  // namespace

std::vector<GradSuiteCase> run_gradient_suite(const BodyModel& model, const PipelineConfig& cfg, std::uint64_t seed) {
  std::vector<GradSuiteCase> out;
  Rng rng(seed);
  const double op_tol = 1e-4;

  {
    const Tensor vol = random_tensor(rng, {3, 4, 5, 6}, -2, 2);
    const std::uint64_t s = rng.bits();
    out.push_back(check("soft_argmax_3d",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(grid::soft_argmax_3d(in[0]), w);
                        },
                        {vol}, op_tol));
  }
  {
    const Tensor maps = random_tensor(rng, {3, 5, 7}, -2, 2);
    const std::uint64_t s = rng.bits();
    out.push_back(check("soft_argmax_2d",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(grid::soft_argmax_2d(in[0]), w);
                        },
                        {maps}, op_tol));
  }
  {
    const Tensor feat = random_tensor(rng, {3, 6, 7}, -1, 1);
    Tensor pts({4, 2});
    for (int i = 0; i < 4; ++i) {
      pts[static_cast<std::size_t>(2 * i)] = rng.uniform(0.2, 5.8);
      pts[static_cast<std::size_t>(2 * i + 1)] = rng.uniform(0.2, 4.8);
    }
    const std::uint64_t s = rng.bits();
    out.push_back(check("bilinear_sample",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(grid::bilinear_sample(in[0], in[1]), w);
                        },
                        {feat, pts}, op_tol));
  }
  {
    const Tensor img = random_tensor(rng, {2, 10, 9}, 0, 1);
    const Tensor box({4}, {4.31, 5.17, 5.53, 6.29});
    const std::uint64_t s = rng.bits();
    out.push_back(check("roi_align",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(grid::roi_align(in[0], in[1], 5, 4), w);
                        },
                        {img, box}, op_tol));
  }
  {
    const Tensor r6 = random_tensor(rng, {5, 6}, -1, 1);
    const std::uint64_t s = rng.bits();
    out.push_back(check("rot6d_to_matrix",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(rot::rot6d_to_matrix(in[0]), w);
                        },
                        {r6}, op_tol));
  }
  {
    Tensor aa = random_tensor(rng, {5, 3}, -2, 2);
    for (int c = 0; c < 3; ++c) aa[static_cast<std::size_t>(c)] *= 1e-3;  // near the identity
    const std::uint64_t s = rng.bits();
    out.push_back(check("axis_angle_to_matrix",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(rot::axis_angle_to_matrix(in[0]), w);
                        },
                        {aa}, op_tol));
  }
  {
    const Tensor x = random_tensor(rng, {3, 9, 8}, -1, 1);
    const Tensor wt = random_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5);
    const Tensor b = random_tensor(rng, {4}, -0.5, 0.5);
    const std::uint64_t s = rng.bits();
    out.push_back(check("conv2d",
                        [s](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(ad::conv2d(in[0], in[1], in[2], 2), w);
                        },
                        {x, wt, b}, op_tol));
  }
  {
    const int k = model.num_joints();
    const Tensor pose = random_tensor(rng, {k, 3}, -0.5, 0.5);
    const Tensor beta = random_tensor(rng, {10}, -1, 1);
    const Tensor psi = random_tensor(rng, {10}, -1, 1);
    const Tensor trans({3}, {0.1, -0.2, 4.0});
    const std::uint64_t s = rng.bits();
    out.push_back(check("forward_model",
                        [s, &model](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          const body::MeshVars m = body::forward_model(model, in[0], in[1], in[2], in[3]);
                          return ad::add(project(m.vertices, w), project(m.joints, w));
                        },
                        {pose, beta, psi, trans}, op_tol, 40));
  }
  {
    Tensor pts = random_tensor(rng, {6, 3}, -0.5, 0.5);
    for (int i = 0; i < 6; ++i) pts[static_cast<std::size_t>(3 * i + 2)] += 3.0;
    const std::uint64_t s = rng.bits();
    const Intrinsics k = cfg.body_intrinsics();
    out.push_back(check("perspective_project",
                        [s, k](ad::Tape&, std::span<const ad::Var> in) {
                          Rng w(s);
                          return project(body::perspective_project(in[0], k), w);
                        },
                        {pts}, op_tol));
  }
  {
    const nn::Params params = init_pipeline(cfg, rng.bits());
    const Sample sample = sample_scene(model, cfg, SynthConfig{}, rng.bits());
    const LossConfig lc;
    std::vector<Tensor> blocks;
    for (const std::string& n : params.names()) blocks.push_back(params.get(n));
    const auto loss = [&](ad::Tape& tape, std::span<const ad::Var> in) {
      nn::Bound b(tape, params);
      for (std::size_t i = 0; i < in.size(); ++i) b.bind(params.names()[i], in[i]);
      const PipelineOutput o = full_forward(b, cfg, model, sample.image, {sample.boxes});
      return total_loss(cfg, lc, o, sample).total;
    };
    out.push_back(check("full_pipeline_loss", loss, blocks, 1e-3, 2, params.names()));
  }
  return out;
}

std::string gradient_suite_to_json(const std::vector<GradSuiteCase>& cases) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const GradSuiteCase& c : cases)
    j.push_back({{"name", c.name},
                 {"max_rel_error", c.max_rel_error},
                 {"tol", c.tol},
                 {"passed", c.passed},
                 {"worst_block", c.worst_block}});
  return j.dump(2);
}

}  // namespace h4w
