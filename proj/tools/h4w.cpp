// Command-line entry points: train, eval, gradcheck, ablate, gen-data.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 failed check.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "h4w/error.hpp"
#include "h4w/grad_suite.hpp"
#include "h4w/train.hpp"

namespace fs = std::filesystem;
using namespace h4w;

namespace {

constexpr int kExitRuntime = 1, kExitConfig = 2, kExitCheck = 3;

struct CommonOpts {
  std::string config;
  std::string profile = "toy";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = "runs";
  int workers = 1;
  std::string body_model;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config, "run config (JSON)");
  cmd->add_option("--profile", o.profile, "default profile when the config names none")
      ->check(CLI::IsMember({"toy", "reference"}));
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&o](std::uint64_t s) { o.seed = s, o.seed_given = true; }, "run seed (default 0)");
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--workers", o.workers, "threads for data generation")->check(CLI::PositiveNumber);
  cmd->add_option("--body-model", o.body_model, "body model file (default: built-in toy model)");
}

RunConfig resolve_config(const CommonOpts& o) {
  if (o.config.empty()) return RunConfig::for_profile(o.profile);
  std::ifstream is(o.config);
  if (!is) throw Error(ErrorKind::ConfigError, "cannot open config " + o.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, o.config + ": " + e.what());
  }
  if (j.is_object()) {
    auto& p = j["pipeline"];
    if (p.is_null()) p = nlohmann::json::object();
    if (p.is_object() && !p.contains("profile")) p["profile"] = o.profile;
  }
  return run_config_from_json(j.dump());
}

BodyModel resolve_model(const CommonOpts& o) {
  return o.body_model.empty() ? build_toy_model() : load_body_model(o.body_model);
}

fs::path prepare_out(const CommonOpts& o) {
  fs::create_directories(o.out_dir);
  return fs::path(o.out_dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (text.empty() || text.back() != '\n') os << "\n";
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::ordered_json loss_json(const LossBreakdown& l) {
  return {{"l_param", l.l_param}, {"l_coord", l.l_coord}, {"l_box", l.l_box}, {"total", l.total}};
}

HandRoot parse_hand_root(const std::string& s) { return s == "pelvis" ? HandRoot::Pelvis : HandRoot::Wrist; }

int cmd_train(const CommonOpts& o, const std::string& data_path, const std::string& hand_root) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = resolve_config(o);
  const BodyModel model = resolve_model(o);
  const fs::path out = prepare_out(o);
  const std::vector<Sample> train = data_path.empty() ? train_split(model, cfg, o.workers) : load_dataset(data_path);
  const std::vector<Sample> val = val_split(model, cfg, o.workers);
  std::cout << "train: " << train.size() << " samples, " << cfg.train.epochs << " epochs, seed " << o.seed << "\n";

  Trainer trainer(model, cfg, o.seed);
  const std::size_t per_epoch = (train.size() + static_cast<std::size_t>(cfg.train.batch_size) - 1) /
                                static_cast<std::size_t>(cfg.train.batch_size);
  trainer.fit(train, [&](const StepRecord& r) {
    if (static_cast<std::size_t>(r.step) % per_epoch == 0)
      std::cout << "epoch " << r.epoch + 1 << " step " << r.step << " loss " << r.loss.total << " lr " << r.lr << "\n";
  });

  const MetricReport metrics = evaluate_split(model, cfg.pipeline, trainer.params(), val, parse_hand_root(hand_root));
  nlohmann::ordered_json report;
  report["seed"] = o.seed;
  report["steps"] = trainer.curve().size();
  report["final_batch_loss"] = trainer.curve().empty() ? nlohmann::ordered_json() : loss_json(trainer.curve().back().loss);
  report["val_loss"] = loss_json(mean_loss(model, cfg, trainer.params(), val));
  report["val_metrics"] = nlohmann::ordered_json::parse(metrics.to_json());

  save_checkpoint(trainer.params(), out / "checkpoint.bin");
  write_text(out / "loss_curve.json", curve_to_json(trainer.curve()));
  write_text(out / "report.json", report.dump(2));
  write_text(out / "config.json", run_config_to_json(cfg));
  std::cout << "hands MPVPE " << metrics.part("hands_avg").mpvpe << " mm, all MPVPE " << metrics.part("all").mpvpe
            << " mm\nwrote " << out.string() << " in " << elapsed(t0) << " s\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& data_path,
             const std::string& hand_root) {
  const RunConfig cfg = resolve_config(o);
  const BodyModel model = resolve_model(o);
  const nn::Params params = load_checkpoint(checkpoint);
  const std::vector<Sample> data = data_path.empty() ? val_split(model, cfg, o.workers) : load_dataset(data_path);
  const MetricReport r = evaluate_split(model, cfg.pipeline, params, data, parse_hand_root(hand_root));
  const fs::path out = prepare_out(o);
  write_text(out / "eval_report.json", r.to_json());
  std::cout << "part | MPJPE | PA-MPJPE | MPVPE | PA-MPVPE (mm), " << r.samples << " samples\n";
  for (std::size_t i = 0; i < kMetricParts.size(); ++i) {
    const PartMetrics& m = r.parts[i];
    std::cout << kMetricParts[i] << " | " << m.mpjpe << " | " << m.pa_mpjpe << " | " << m.mpvpe << " | " << m.pa_mpvpe
              << "\n";
  }
  return 0;
}

int cmd_gradcheck(const CommonOpts& o) {
  const RunConfig cfg = resolve_config(o);
  const BodyModel model = resolve_model(o);
  const auto cases = run_gradient_suite(model, cfg.pipeline, o.seed);
  bool ok = true;
  for (const GradSuiteCase& c : cases) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " rel " << c.max_rel_error << " at " << c.worst_block
              << " (tol " << c.tol << ", " << c.seconds << " s)\n";
    ok = ok && c.passed;
  }
  write_text(prepare_out(o) / "gradcheck.json", gradient_suite_to_json(cases));
  return ok ? 0 : kExitCheck;
}

int cmd_ablate(const CommonOpts& o, int num_seeds, const std::vector<std::string>& tables) {
  const RunConfig cfg = resolve_config(o);
  const BodyModel model = resolve_model(o);
  AblationOptions opts;
  opts.seeds.clear();
  for (int i = 0; i < num_seeds; ++i) opts.seeds.push_back(o.seed + static_cast<std::uint64_t>(i));
  if (!tables.empty()) {
    auto has = [&](const char* t) { return std::find(tables.begin(), tables.end(), t) != tables.end(); };
    opts.wrist_input = has("wrist_input");
    opts.finger_body_feature = has("finger_body_feature");
    opts.regressor_input = has("regressor_input");
  }
  opts.workers = o.workers;
  const auto t0 = std::chrono::steady_clock::now();
  opts.log = [&](const std::string& line) { std::cout << line << " (" << elapsed(t0) << " s)\n" << std::flush; };
  const auto rows = run_ablation(model, cfg, opts);
  const std::string table = ablation_to_table(rows);
  const fs::path out = prepare_out(o);
  write_text(out / "ablation.json", ablation_to_json(rows));
  write_text(out / "ablation.txt", table);
  std::cout << table;
  return 0;
}

int cmd_gen_data(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  if (o.seed_given) cfg.train.data_seed = o.seed;
  const BodyModel model = resolve_model(o);
  const fs::path out = prepare_out(o);
  const auto train = train_split(model, cfg, o.workers);
  const auto val = val_split(model, cfg, o.workers);
  save_dataset(train, out / "train.bin");
  save_dataset(val, out / "val.bin");
  nlohmann::ordered_json index;
  for (const auto& [name, split] : {std::pair{"train", &train}, std::pair{"val", &val}}) {
    nlohmann::ordered_json hashes = nlohmann::ordered_json::array();
    for (const Sample& s : *split) hashes.push_back(sample_hash(s));
    index[name] = {{"count", split->size()}, {"hashes", hashes}};
  }
  write_text(out / "index.json", index.dump(2));
  std::cout << "wrote " << train.size() << " training and " << val.size() << " validation samples to " << out.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-body mesh recovery toolkit"};
  app.require_subcommand(1);
  CommonOpts common;

  auto* train = app.add_subcommand("train", "train a pipeline and write checkpoint, loss curve and report");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation variants");
  auto* gen = app.add_subcommand("gen-data", "write the synthetic training and validation splits");
  for (auto* c : {train, eval, grad, ablate, gen}) add_common(c, common);

  std::string data_path, checkpoint, hand_root = "wrist";
  train->add_option("--data", data_path, "training dataset file (default: generated split)");
  train->add_option("--hand-root", hand_root, "root of the hand metrics")->check(CLI::IsMember({"wrist", "pelvis"}));
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset file (default: generated validation split)");
  eval->add_option("--hand-root", hand_root, "root of the hand metrics")->check(CLI::IsMember({"wrist", "pelvis"}));
  int num_seeds = 3;
  std::vector<std::string> tables;
  ablate->add_option("--num-seeds", num_seeds, "seeds per variant, starting at --seed")->check(CLI::PositiveNumber);
  ablate->add_option("--tables", tables, "subset of tables")
      ->check(CLI::IsMember({"wrist_input", "finger_body_feature", "regressor_input"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(common, data_path, hand_root);
    if (*eval) return cmd_eval(common, checkpoint, data_path, hand_root);
    if (*grad) return cmd_gradcheck(common);
    if (*ablate) return cmd_ablate(common, num_seeds, tables);
    if (*gen) return cmd_gen_data(common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::ConfigError || e.kind() == ErrorKind::UnknownMode ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
