#include "h4w/train.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "h4w/error.hpp"

namespace h4w {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, n_train, n_val, epochs, batch_size, lr, decay_epoch, beta1,
                                                beta2, hflip_prob, data_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, body_range, wrist_range, finger_range, jaw_range,
                                                shape_range, expr_range, depth_min, depth_max, lateral_range,
                                                vertical_offset, sigma, shade_base, shade_slope, noise, blob_dropout, box_margin, hand_min_size,
                                                face_min_size, frame_margin, max_attempts)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, w_param, w_coord, w_box, coord_heatmap, coord_joints3d,
                                                coord_joints2d)

namespace {

using nlohmann::json;

// Synthetic split seeds: stream 0 feeds training, stream 1 validation.
std::uint64_t split_seed(const RunConfig& cfg, int which) { return Rng::derive(cfg.train.data_seed, which).bits(); }

template <class T>
T section(const json& j, const char* name, const T& defaults) {
  if (!j.contains(name)) return defaults;
  const json& s = j.at(name);
  if (!s.is_object()) throw Error(ErrorKind::ConfigError, std::string("section '") + name + "' must be an object");
  const json known = defaults;
  for (const auto& [key, value] : s.items())
    if (!known.contains(key)) throw Error(ErrorKind::ConfigError, std::string("unknown key '") + key + "' in " + name);
  T out = defaults;
  from_json(s, out);
  return out;
}

}  // namespace

RunConfig RunConfig::for_profile(const std::string& profile) {
  RunConfig c;
  if (profile == "reference") {
    c.pipeline = PipelineConfig::reference();
    c.train.batch_size = 96;
  } else if (profile != "toy") {
    throw Error(ErrorKind::ConfigError, "unknown profile '" + profile + "'");
  }
  return c;
}

void RunConfig::validate() const {
  pipeline.validate();
  const TrainConfig& t = train;
  if (t.n_train < 1 || t.n_val < 1 || t.epochs < 0 || t.batch_size < 1 || !(t.lr > 0) || t.hflip_prob < 0 ||
      t.hflip_prob > 1)
    throw Error(ErrorKind::ConfigError, "invalid train section");
  if (synth.max_attempts < 1 || !(synth.sigma > 0) || synth.depth_min <= 0 || synth.depth_max < synth.depth_min ||
      synth.blob_dropout < 0 || synth.blob_dropout > 1 || synth.box_margin < 1)
    throw Error(ErrorKind::ConfigError, "invalid synth section");
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["pipeline"] = json::parse(config_to_json(cfg.pipeline));
  j["train"] = cfg.train;
  j["synth"] = cfg.synth;
  j["loss"] = cfg.loss;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (key != "pipeline" && key != "train" && key != "synth" && key != "loss")
        throw Error(ErrorKind::ConfigError, "unknown config section '" + key + "'");
    RunConfig c;
    if (j.contains("pipeline")) c.pipeline = config_from_json(j.at("pipeline").dump());
    if (c.pipeline.profile == "reference") c.train.batch_size = 96;
    c.train = section(j, "train", c.train);
    c.synth = section(j, "synth", c.synth);
    c.loss = section(j, "loss", c.loss);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("malformed config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

std::vector<Sample> train_split(const BodyModel& model, const RunConfig& cfg, int workers) {
  return make_split(model, cfg.pipeline, cfg.synth, cfg.train.n_train, split_seed(cfg, 0), workers);
}

std::vector<Sample> val_split(const BodyModel& model, const RunConfig& cfg, int workers) {
  return make_split(model, cfg.pipeline, cfg.synth, cfg.train.n_val, split_seed(cfg, 1), workers);
}

BatchGrad batch_gradient(const BodyModel& model, const RunConfig& cfg, const nn::Params& params,
                         std::span<const Sample* const> batch, std::span<const char> use_gt_boxes) {
  if (batch.empty() || use_gt_boxes.size() != batch.size())
    throw Error(ErrorKind::ShapeMismatch, "batch and box choices must be non-empty and of equal length");
  BatchGrad out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Tape tape;
    nn::Bound bound(tape, params);
    ForwardOptions opts;
    if (use_gt_boxes[i]) opts.crop_boxes = batch[i]->boxes;
    const PipelineOutput pred = full_forward(bound, cfg.pipeline, model, batch[i]->image, opts);
    const LossVars loss = total_loss(cfg.pipeline, cfg.loss, pred, *batch[i]);
    tape.backward(loss.total);
    const LossBreakdown v = loss.values();
    out.loss.l_param += inv * v.l_param;
    out.loss.l_coord += inv * v.l_coord;
    out.loss.l_box += inv * v.l_box;
    out.loss.total += inv * v.total;
    for (auto& [name, g] : bound.grads()) {
      auto& acc = out.grads[name];
      if (acc.empty()) acc.assign(g.size(), 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) acc[k] += inv * g[k];
    }
  }
  return out;
}

Trainer::Trainer(const BodyModel& model, RunConfig cfg, std::uint64_t seed)
    : Trainer(model, cfg, seed, init_pipeline(cfg.pipeline, seed)) {}

Trainer::Trainer(const BodyModel& model, RunConfig cfg, std::uint64_t seed, nn::Params init)
    : model_(&model),
      cfg_(std::move(cfg)),
      params_(std::move(init)),
      adam_(nn::AdamConfig{cfg_.train.lr, cfg_.train.beta1, cfg_.train.beta2, 1e-8}),
      rng_(Rng::derive(seed, 0x7472616e)) {
  cfg_.validate();
}

StepRecord Trainer::step(std::span<const Sample* const> batch) {
  std::vector<Sample> flipped;
  flipped.reserve(batch.size());
  std::vector<const Sample*> used(batch.begin(), batch.end());
  std::vector<char> gt_boxes(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (rng_.bernoulli(cfg_.train.hflip_prob)) {
      flipped.push_back(flip_sample(*model_, *batch[i]));
      used[i] = &flipped.back();
    }
    gt_boxes[i] = rng_.bernoulli(cfg_.pipeline.gt_box_prob);
  }
  const bool decayed = cfg_.train.decay_epoch >= 0 && epoch_ >= cfg_.train.decay_epoch;
  adam_.set_lr(decayed ? 0.1 * cfg_.train.lr : cfg_.train.lr);
  BatchGrad g = batch_gradient(*model_, cfg_, params_, used, gt_boxes);
  adam_.step(params_, g.grads);
  StepRecord rec{static_cast<int>(adam_.steps()), epoch_, adam_.lr(), g.loss};
  curve_.push_back(rec);
  return rec;
}

void Trainer::fit(const std::vector<Sample>& data, const std::function<void(const StepRecord&)>& on_step) {
  if (data.empty()) throw Error(ErrorKind::ConfigError, "no training data");
  std::vector<std::size_t> order(data.size());
  for (; epoch_ < cfg_.train.epochs; ++epoch_) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.bits() % i]);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.train.batch_size)) {
      std::vector<const Sample*> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + static_cast<std::size_t>(cfg_.train.batch_size)); ++k)
        batch.push_back(&data[order[k]]);
      const StepRecord rec = step(batch);
      if (on_step) on_step(rec);
    }
  }
}

LossBreakdown mean_loss(const BodyModel& model, const RunConfig& cfg, const nn::Params& params,
                        const std::vector<Sample>& data) {
  LossBreakdown acc;
  const double inv = 1.0 / static_cast<double>(data.size());
  for (const Sample& s : data) {
    ad::Tape tape;
    nn::Bound bound(tape, params, false);
    const LossBreakdown v = total_loss(cfg.pipeline, cfg.loss, full_forward(bound, cfg.pipeline, model, s.image), s).values();
    acc.l_param += inv * v.l_param;
    acc.l_coord += inv * v.l_coord;
    acc.l_box += inv * v.l_box;
    acc.total += inv * v.total;
  }
  return acc;
}

MetricReport evaluate_split(const BodyModel& model, const PipelineConfig& cfg, const nn::Params& params,
                            const std::vector<Sample>& data, HandRoot hand_root) {
  MetricReport acc;
  for (const Sample& s : data) {
    ad::Tape tape;
    nn::Bound bound(tape, params, false);
    const PipelineOutput pred = full_forward(bound, cfg, model, s.image);
    const MeshOutput gt = forward_model(model, s.params);
    accumulate(acc, evaluate(model, pred.mesh.vertices.value(), pred.regressed_joints.value(), gt.vertices,
                             regress_joints(model, gt.vertices), hand_root));
  }
  return acc;
}

std::string curve_to_json(const std::vector<StepRecord>& curve) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const StepRecord& r : curve)
    j.push_back({{"step", r.step},
                 {"epoch", r.epoch},
                 {"lr", r.lr},
                 {"l_param", r.loss.l_param},
                 {"l_coord", r.loss.l_coord},
                 {"l_box", r.loss.l_box},
                 {"total", r.loss.total}});
  return j.dump(1);
}

namespace {

struct Variant {
  std::string table, label;
  PipelineConfig config;
};

std::vector<Variant> ablation_variants(const PipelineConfig& base, const AblationOptions& opts) {
  // Every table varies one factor around the full model.
  PipelineConfig ours = base;
  ours.wrist_mode = WristMode::BodyPlusMcp;
  ours.finger_body_feature = false;
  ours.regressor_input = RegressorInput::Coord3dPlusFeat;
  std::vector<Variant> v;
  auto with = [&](auto&& edit) {
    PipelineConfig c = ours;
    edit(c);
    return c;
  };
  if (opts.wrist_input) {
    const std::pair<WristMode, const char*> rows[] = {{WristMode::BodyOnly, "Body"},
                                                      {WristMode::BodyPlusHandGap, "Body + Hand GAP"},
                                                      {WristMode::BodyPlusAllJoints, "Body + All hand joints"},
                                                      {WristMode::BodyPlusMcp, "Body + MCP joints (Ours)"}};
    for (const auto& [mode, label] : rows)
      v.push_back({"wrist_input", label, with([&](PipelineConfig& c) { c.wrist_mode = mode; })});
  }
  if (opts.finger_body_feature) {
    v.push_back({"finger_body_feature", "With body features", with([](PipelineConfig& c) { c.finger_body_feature = true; })});
    v.push_back({"finger_body_feature", "Without body features (Ours)", ours});
  }
  if (opts.regressor_input) {
    const std::pair<RegressorInput, const char*> rows[] = {
        {RegressorInput::Gap, "GAP feat."},
        {RegressorInput::JointFeat, "Joint feat."},
        {RegressorInput::Coord2d, "2D joint coord."},
        {RegressorInput::Coord3d, "3D joint coord."},
        {RegressorInput::Coord3dPlusFeat, "3D joint coord. + joint feat. (Ours)"}};
    for (const auto& [mode, label] : rows)
      v.push_back({"regressor_input", label, with([&](PipelineConfig& c) { c.regressor_input = mode; })});
  }
  return v;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  for (const MetricReport& r : reports) {
    MetricReport one = r;
    one.samples = 1;
    accumulate(m, one);
  }
  m.samples = reports.empty() ? 0 : reports.front().samples;
  return m;
}

}  // namespace

std::vector<AblationRow> run_ablation(const BodyModel& model, const RunConfig& base, const AblationOptions& opts) {
  base.validate();
  const std::vector<Sample> train = train_split(model, base, opts.workers);
  const std::vector<Sample> val = val_split(model, base, opts.workers);
  std::map<std::string, std::vector<MetricReport>> cache;
  std::vector<AblationRow> rows;
  for (const Variant& v : ablation_variants(base.pipeline, opts)) {
    const std::string key = config_to_json(v.config);
    if (!cache.count(key)) {
      std::vector<MetricReport> reports;
      for (std::uint64_t seed : opts.seeds) {
        RunConfig rc = base;
        rc.pipeline = v.config;
        Trainer t(model, rc, seed);
        t.fit(train);
        reports.push_back(evaluate_split(model, rc.pipeline, t.params(), val, HandRoot::Pelvis));
        if (opts.log)
          opts.log(v.table + " | " + v.label + " | seed " + std::to_string(seed) + " | hands MPVPE " +
                   std::to_string(reports.back().part("hands_avg").mpvpe));
      }
      cache[key] = std::move(reports);
    }
    rows.push_back({v.table, v.label, v.config, cache[key], mean_report(cache[key])});
  }
  return rows;
}

std::string ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const AblationRow& r : rows) {
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (const MetricReport& m : r.per_seed) seeds.push_back(nlohmann::ordered_json::parse(m.to_json()));
    j.push_back({{"table", r.table},
                 {"label", r.label},
                 {"mean", nlohmann::ordered_json::parse(r.mean.to_json())},
                 {"per_seed", seeds}});
  }
  return j.dump(2);
}

std::string ablation_to_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  std::string table;
  for (const AblationRow& r : rows) {
    if (r.table != table) {
      table = r.table;
      os << "\n[" << table << "]\n";
      os << "variant | hands MPVPE | hands PA-MPVPE | hands MPJPE | all MPVPE | body MPJPE\n";
    }
    const PartMetrics& h = r.mean.part("hands_avg");
    os << r.label << " | " << h.mpvpe << " | " << h.pa_mpvpe << " | " << h.mpjpe << " | " << r.mean.part("all").mpvpe
       << " | " << r.mean.part("body").mpjpe << "\n";
  }
  return os.str();
}

}  // namespace h4w
