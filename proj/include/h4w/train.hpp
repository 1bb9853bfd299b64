#pragma once

// Training, evaluation and ablation drivers shared by the CLI and tests.

#include <functional>
#include <string>
#include <vector>

#include "h4w/losses.hpp"
#include "h4w/metrics.hpp"
#include "h4w/synth.hpp"

namespace h4w {

struct TrainConfig {
  int n_train = 512;
  int n_val = 64;
  int epochs = 10;
  int batch_size = 8;    // reference setting: 96
  double lr = 1e-4;
  int decay_epoch = -1;  // lr x0.1 from this epoch on; -1 disables
  double beta1 = 0.9, beta2 = 0.999;
  double hflip_prob = 0.5;
  std::uint64_t data_seed = 1;  // master seed of the synthetic splits

  bool operator==(const TrainConfig&) const = default;
};

// Everything a CLI run needs; serialized as one JSON object with sections
// "pipeline", "train", "synth" and "loss".
struct RunConfig {
  PipelineConfig pipeline;
  TrainConfig train;
  SynthConfig synth;
  LossConfig loss;

  static RunConfig for_profile(const std::string& profile);
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};
std::string run_config_to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys throw ConfigError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Splits derived from train.data_seed: training and validation never share
// sample seeds.
std::vector<Sample> train_split(const BodyModel& model, const RunConfig& cfg, int workers = 1);
std::vector<Sample> val_split(const BodyModel& model, const RunConfig& cfg, int workers = 1);

struct StepRecord {
  int step = 0, epoch = 0;
  double lr = 0;
  LossBreakdown loss;  // batch mean
};

class Trainer {
 public:
  Trainer(const BodyModel& model, RunConfig cfg, std::uint64_t seed);
  Trainer(const BodyModel& model, RunConfig cfg, std::uint64_t seed, nn::Params init);

  // One Adam step on `batch`: random flips and teacher-forced boxes are drawn
  // from the trainer's stream; gradients are the batch mean.
  StepRecord step(std::span<const Sample* const> batch);
  // Shuffled mini-batches over `data` for cfg.train.epochs epochs.
  void fit(const std::vector<Sample>& data, const std::function<void(const StepRecord&)>& on_step = {});

  const nn::Params& params() const { return params_; }
  const std::vector<StepRecord>& curve() const { return curve_; }
  int epoch() const { return epoch_; }

 private:
  const BodyModel* model_;
  RunConfig cfg_;
  nn::Params params_;
  nn::Adam adam_;
  Rng rng_;
  int epoch_ = 0;
  std::vector<StepRecord> curve_;
};

// Gradient of the mean loss over `batch` with fixed augmentation choices.
struct BatchGrad {
  LossBreakdown loss;
  std::map<std::string, std::vector<double>> grads;
};
BatchGrad batch_gradient(const BodyModel& model, const RunConfig& cfg, const nn::Params& params,
                         std::span<const Sample* const> batch, std::span<const char> use_gt_boxes);

// Mean loss with predicted boxes and no augmentation.
LossBreakdown mean_loss(const BodyModel& model, const RunConfig& cfg, const nn::Params& params,
                        const std::vector<Sample>& data);

// Metrics of predictions from predicted boxes against GT meshes.
MetricReport evaluate_split(const BodyModel& model, const PipelineConfig& cfg, const nn::Params& params,
                            const std::vector<Sample>& data, HandRoot hand_root = HandRoot::Wrist);

std::string curve_to_json(const std::vector<StepRecord>& curve);

// Ablation tables.
struct AblationRow {
  std::string table;  // "wrist_input", "finger_body_feature", "regressor_input"
  std::string label;
  PipelineConfig config;
  std::vector<MetricReport> per_seed;  // pelvis-rooted hands
  MetricReport mean;
};
struct AblationOptions {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  bool wrist_input = true, finger_body_feature = true, regressor_input = true;
  int workers = 1;
  std::function<void(const std::string&)> log;
};
std::vector<AblationRow> run_ablation(const BodyModel& model, const RunConfig& base, const AblationOptions& opts);
std::string ablation_to_json(const std::vector<AblationRow>& rows);
std::string ablation_to_table(const std::vector<AblationRow>& rows);

}  // namespace h4w
