#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vsap/cli.hpp"
#include "vsap/error.hpp"
#include "vsap/io.hpp"
#include "vsap/kernels.hpp"
#include "vsap/rng.hpp"
#include "vsap/tasks.hpp"

namespace vsap::cli {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const ordered_json& j) { io::write_text(path, j.dump(2) + "\n"); }

void write_snapshot(const fs::path& dir, const std::string& command, const ordered_json& config) {
  ordered_json s;
  s["command"] = command;
  s["version"] = kVersion;
  s["kernels"] = kernels::active().name;
  s["config"] = config;
  write_json(dir / "config.json", s);
}

Dataset load_dataset(const fs::path& path) {
  if (!fs::exists(path / "manifest.json")) {
    throw Error(Errc::kIo, "no dataset at " + path.string() + " (run `vsap generate` first)");
  }
  return Dataset::load(path);
}

std::vector<EnvId> eval_envs(const ordered_json& config, const Dataset& ds) {
  const auto split = config.at("eval").at("split").get<std::string>();
  if (split == "val") return ds.split.val;
  if (split == "train") return ds.split.train;
  throw Error(Errc::kConfig, "eval.split must be \"train\" or \"val\"");
}

// The trained encoder, or with eval.random_encoder the untrained one a fresh
// training run would start from.
EncoderState eval_encoder(const ordered_json& config, const Paths& paths, const Dataset& ds) {
  if (config.at("eval").at("random_encoder").get<bool>()) {
    const TrainConfig tc = train_config(config);
    std::vector<std::size_t> dims = kDefaultEncoderDims;
    dims.front() = static_cast<std::size_t>(ds.spec.patch_size) * ds.spec.patch_size * 3;
    return init_encoder(derive_seed(tc.seed, "encoder"), dims, tc.activation);
  }
  if (!fs::exists(paths.checkpoint)) {
    throw Error(Errc::kIo, "checkpoint not found: " + paths.checkpoint.string() + " (run `vsap train` first)");
  }
  return load_checkpoint(paths.checkpoint).encoder;
}

ordered_json group_json(const SegGroupMetrics& g) {
  return {{"mAP", g.map},           {"mIoU", g.miou},       {"jaccard_paper", g.jaccard_paper},
          {"jaccard", g.jaccard},   {"classes", g.classes}, {"pixels", g.pixels}};
}

// Log lines beyond the checkpointed step belong to an interrupted run and
// are replayed on resume.
void truncate_log(const fs::path& path, std::uint64_t rows, const std::string& header) {
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    std::string line;
    while (lines.size() < rows + 1 && std::getline(in, line)) lines.push_back(line);
  }
  std::ofstream out(path, std::ios::trunc);
  if (lines.empty()) lines.push_back(header);
  for (const auto& l : lines) out << l << '\n';
}

constexpr const char* kValidationHeader = "epoch,step,vsap,exact_ap,chance_ap";

ordered_json resumable_part(const ordered_json& config) {
  ordered_json c = config;
  // Results do not depend on these.
  c["train"].erase("max_steps");
  c.erase("threads");
  c.erase("paths");
  return c;
}

}  // namespace

int cmd_generate(const ordered_json& config, const Paths& paths) {
  const GenerateSpec spec = generate_spec(config);
  const Dataset ds = generate_dataset(spec);
  ds.save(paths.out);
  write_snapshot(paths.out, "generate", config);
  std::size_t views = 0;
  for (const auto& [id, env] : ds.environments) views += env.views.size();
  std::cout << "generated " << ds.environments.size() << " environments, " << views << " views in "
            << paths.out.string() << "\n";
  return kExitOk;
}

int cmd_train(const ordered_json& config, const Paths& paths) {
  const Dataset ds = load_dataset(paths.dataset);
  const TrainConfig tc = train_config(config);
  const auto max_steps = config.at("train").at("max_steps").get<std::uint64_t>();
  ensure_dir(paths.out);
  const fs::path ckpt_path = paths.out / "checkpoint.bin";
  const fs::path metrics_path = paths.out / "metrics.csv";
  const fs::path validation_path = paths.out / "validation.csv";
  // Validation batches mix envs_per_batch environments like training ones.
  const bool validate = config.at("train").at("validate_each_epoch").get<bool>() &&
                        ds.split.val.size() >= static_cast<std::size_t>(tc.envs_per_batch);
  const fs::path snapshot_path = paths.out / "config.json";

  std::unique_ptr<Trainer> trainer;
  if (fs::exists(ckpt_path)) {
    if (fs::exists(snapshot_path)) {
      const auto prev = ordered_json::parse(io::read_text(snapshot_path));
      if (resumable_part(prev.at("config")) != resumable_part(config)) {
        throw Error(Errc::kConfig, "existing run in " + paths.out.string() + " used a different configuration");
      }
    }
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::cout << "resuming from step " << ckpt.train_step << "\n";
    truncate_log(metrics_path, ckpt.train_step, metrics_header());
    trainer = std::make_unique<Trainer>(tc, ds, std::move(ckpt));
    if (validate) {
      const std::uint64_t epochs_done = trainer->steps_per_epoch() ? trainer->step() / trainer->steps_per_epoch() : 0;
      truncate_log(validation_path, epochs_done, kValidationHeader);
    }
  } else {
    trainer = std::make_unique<Trainer>(tc, ds);
    std::ofstream(metrics_path, std::ios::trunc) << metrics_header() << '\n';
    if (validate) std::ofstream(validation_path, std::ios::trunc) << kValidationHeader << '\n';
  }
  write_snapshot(paths.out, "train", config);

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw Error(Errc::kIo, "cannot open " + metrics_path.string());
  std::ofstream validation;
  if (validate) validation.open(validation_path, std::ios::app);
  const RetrievalSpec rs = retrieval_spec(config);
  trainer->run(max_steps == 0 ? UINT64_MAX : max_steps, [&](const StepMetrics& m, const Trainer& t) {
    metrics << metrics_row(m) << '\n';
    if (validate && t.steps_per_epoch() > 0 && t.step() % t.steps_per_epoch() == 0) {
      const RetrievalReport r = eval_retrieval(encoder_embedder(t.encoder()), ds, ds.split.val, rs);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%llu,%llu,%.17g,%.17g,%.17g", static_cast<unsigned long long>(t.step() / t.steps_per_epoch()),
                    static_cast<unsigned long long>(t.step()), r.vsap, r.exact_ap, r.chance_ap);
      validation << buf << '\n';
      validation.flush();
    }
    if (tc.checkpoint_every > 0 && t.step() % static_cast<std::uint64_t>(tc.checkpoint_every) == 0) {
      metrics.flush();
      save_checkpoint(ckpt_path, t.checkpoint());
    }
  });
  metrics.flush();
  save_checkpoint(ckpt_path, trainer->checkpoint());
  std::cout << "trained to step " << trainer->step() << " of " << trainer->total_steps() << "\n";
  return kExitOk;
}

int cmd_eval_retrieval(const ordered_json& config, const Paths& paths) {
  const Dataset ds = load_dataset(paths.dataset);
  const EncoderState enc = eval_encoder(config, paths, ds);
  const auto& e = config.at("eval");
  const RetrievalSpec rs = retrieval_spec(config);
  ensure_dir(paths.out);
  const Embedder embed = encoder_embedder(enc);
  ordered_json report;
  report["encoder"] = e.at("random_encoder").get<bool>() ? "random" : "checkpoint";
  for (const char* split : {"train", "val"}) {
    const auto& envs = std::string(split) == "train" ? ds.split.train : ds.split.val;
    if (envs.empty()) continue;
    const RetrievalReport r = eval_retrieval(embed, ds, envs, rs);
    report[split] = {{"vsap", r.vsap},
                     {"exact_ap", r.exact_ap},
                     {"chance_ap", r.chance_ap},
                     {"batches", r.batches},
                     {"landmarks", r.landmarks},
                     {"positive_pairs", r.positive_pairs},
                     {"universe_pairs", r.universe_pairs}};
    std::printf("%-5s vsap %.4f  exact AP %.4f  (chance %.4f)\n", split, r.vsap, r.exact_ap, r.chance_ap);
  }
  write_json(paths.out / "retrieval.json", report);
  write_snapshot(paths.out, "eval-retrieval", config);
  return kExitOk;
}

int cmd_eval_segment(const ordered_json& config, const Paths& paths) {
  const Dataset ds = load_dataset(paths.dataset);
  const Embedder embed = encoder_embedder(eval_encoder(config, paths, ds));
  const auto& e = config.at("eval");
  const int patch = ds.spec.patch_size;
  const LabelledPatches train =
      labelled_patches(embed, ds, ds.split.train, patch, e.at("probe_views_per_env").get<int>());
  ProbeTrainSpec ps;
  ps.learning_rate = e.at("probe_learning_rate").get<double>();
  ps.max_steps = e.at("probe_steps").get<int>();
  const ProbeTrainResult probe = train_probe(train.features, train.labels, ps);
  const auto envs = eval_envs(config, ds);
  const SegMetrics m = eval_segmentation(probe.probe, embed, ds, envs, patch);
  ensure_dir(paths.out);
  ordered_json report;
  report["encoder"] = e.at("random_encoder").get<bool>() ? "random" : "checkpoint";
  report["probe"] = {{"classes", probe.probe.class_ids},
                     {"train_patches", train.labels.size()},
                     {"steps", probe.loss_history.size()},
                     {"final_loss", probe.loss_history.empty() ? 0.0 : probe.loss_history.back()}};
  report["stuff"] = group_json(m.stuff);
  report["things"] = group_json(m.things);
  report["overall"] = group_json(m.overall);
  write_json(paths.out / "segmentation.json", report);
  write_snapshot(paths.out, "eval-segment", config);
  std::printf("overall mAP %.4f  mIoU %.4f  jaccard %.4f\n", m.overall.map, m.overall.miou, m.overall.jaccard);
  return kExitOk;
}

int cmd_eval_pose(const ordered_json& config, const Paths& paths) {
  const Dataset ds = load_dataset(paths.dataset);
  const Embedder embed = encoder_embedder(eval_encoder(config, paths, ds));
  const auto& e = config.at("eval");
  const auto envs = eval_envs(config, ds);
  const auto pairs = select_pose_pairs(ds, envs, e.at("pose_pairs").get<std::size_t>(), eval_seed(config),
                                       e.at("min_overlap").get<double>(), e.at("max_overlap").get<double>());
  const PoseBenchmark bench = eval_pose_benchmark(embed, ds, pairs, pose_benchmark_spec(config));

  ensure_dir(paths.out);
  std::ostringstream csv;
  csv << "environment,view_a,view_b,overlap,success,raw_matches,filtered_matches,inliers,rotation_error_deg,"
         "translation_error_m\n";
  char buf[256];
  for (const auto& p : bench.pairs) {
    std::snprintf(buf, sizeof buf, "%u,%u,%u,%.17g,%d,%zu,%zu,%zu,%.17g,%.17g\n", p.pair.environment, p.pair.view_a,
                  p.pair.view_b, p.pair.overlap, p.success ? 1 : 0, p.raw_matches, p.filtered_matches,
                  p.pose.inliers, p.pose.rotation_error_deg, p.pose.translation_error_m);
    csv << buf;
  }
  io::write_text(paths.out / "pose_pairs.csv", csv.str());
  const PoseSummary& s = bench.summary;
  ordered_json report;
  report["encoder"] = e.at("random_encoder").get<bool>() ? "random" : "checkpoint";
  report["summary"] = {{"median_translation_m", s.median_translation_m},
                       {"mean_translation_m", s.mean_translation_m},
                       {"fraction_translation_le_1m", s.fraction_translation_le_1m},
                       {"median_rotation_deg", s.median_rotation_deg},
                       {"mean_rotation_deg", s.mean_rotation_deg},
                       {"fraction_rotation_le_30deg", s.fraction_rotation_le_30deg},
                       {"pairs", s.pairs},
                       {"failures", s.failures}};
  write_json(paths.out / "pose_summary.json", report);
  write_snapshot(paths.out, "eval-pose", config);
  std::printf("pairs %zu  rot med %.2f deg (<=30: %.2f)  trans med %.3f m (<=1m: %.2f)\n", s.pairs,
              s.median_rotation_deg, s.fraction_rotation_le_30deg, s.median_translation_m,
              s.fraction_translation_le_1m);
  return kExitOk;
}

int cmd_coseg(const ordered_json& config, const Paths& paths) {
  const Dataset ds = load_dataset(paths.dataset);
  const Embedder embed = encoder_embedder(eval_encoder(config, paths, ds));
  const auto& e = config.at("eval");
  const auto envs = eval_envs(config, ds);
  if (envs.empty()) throw Error(Errc::kInvalidArgument, "no environments in the evaluation split");
  const auto& views = ds.env(envs.front()).views;
  const auto qi = e.at("coseg_view").get<std::size_t>();
  const auto count = std::min(views.size(), e.at("coseg_views").get<std::size_t>());
  if (qi >= views.size()) throw Error(Errc::kOutOfBounds, "coseg_view beyond the environment's views");
  const double threshold = e.at("coseg_threshold").get<double>();
  if (!(threshold > -1.0 && threshold < 1.0)) throw Error(Errc::kConfig, "coseg_threshold must lie in (-1, 1)");
  std::vector<const PosedView*> targets{&views[qi]};
  for (std::size_t k = 0; k < views.size() && targets.size() < count; ++k) {
    if (k != qi) targets.push_back(&views[k]);
  }
  const int gx = e.at("coseg_gx").get<int>(), gy = e.at("coseg_gy").get<int>();
  const CosegResult r = cosegment(embed, views[qi], gx, gy, targets, threshold, ds.spec.patch_size, ds.normalization);

  ensure_dir(paths.out);
  ordered_json report;
  report["encoder"] = e.at("random_encoder").get<bool>() ? "random" : "checkpoint";
  report["environment"] = envs.front();
  report["query"] = {{"view", views[qi].view_id}, {"gx", gx}, {"gy", gy}};
  report["threshold"] = threshold;
  report["views"] = ordered_json::array();
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const PosedView& v = *targets[k];
    std::string mask;
    for (auto b : r.masks[k]) mask.push_back(b ? '1' : '0');
    const auto file = "overlay_" + std::to_string(v.view_id) + ".ppm";
    io::write_ppm(paths.out / file, v.width, v.height, coseg_overlay(v, r.masks[k], ds.spec.patch_size));
    report["views"].push_back({{"view", v.view_id},
                               {"selected", std::count(mask.begin(), mask.end(), '1')},
                               {"mask", mask},
                               {"overlay", file}});
  }
  write_json(paths.out / "coseg.json", report);
  write_snapshot(paths.out, "coseg", config);
  std::printf("co-segmentation written to %s\n", paths.out.string().c_str());
  return kExitOk;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"vsap: landmark-retrieval patch features on synthetic indoor scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string dataset, checkpoint, out;
    int threads = 0;
    long long seed = -1;
    bool random_encoder = false;
    std::string split;
    long long max_steps = -1;
  };
  Common opt;
  auto add_common = [&](CLI::App* sub, bool uses_checkpoint) {
    sub->add_option("-c,--config", opt.config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "Override, e.g. --set train.epochs=5");
    sub->add_option("--dataset", opt.dataset, "Dataset directory");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", opt.seed, "Root seed")->check(CLI::NonNegativeNumber);
    if (uses_checkpoint) {
      sub->add_option("--checkpoint", opt.checkpoint, "Encoder checkpoint");
      sub->add_flag("--random-encoder", opt.random_encoder, "Evaluate the untrained encoder");
      sub->add_option("--split", opt.split, "Evaluation split (train|val)");
    }
  };
  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  add_common(gen, false);
  auto* train = app.add_subcommand("train", "Train the patch encoder (resumes from an existing checkpoint)");
  add_common(train, false);
  train->add_option("--max-steps", opt.max_steps, "Stop after this many steps in this invocation");
  auto* er = app.add_subcommand("eval-retrieval", "Landmark retrieval AP");
  auto* es = app.add_subcommand("eval-segment", "Linear-probe segmentation");
  auto* ep = app.add_subcommand("eval-pose", "Relative pose benchmark");
  auto* co = app.add_subcommand("coseg", "Co-segmentation by similarity thresholding");
  for (auto* s : {er, es, ep, co}) add_common(s, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    ordered_json config = default_config();
    if (!opt.config_file.empty()) {
      const auto text = io::read_text(opt.config_file);
      const auto file = ordered_json::parse(text, nullptr, false);
      if (file.is_discarded()) throw Error(Errc::kConfig, "config file is not valid JSON");
      merge_config(config, file);
    }
    for (const auto& o : opt.overrides) apply_override(config, o);
    // Explicit flags win over the file and --set.
    if (!opt.dataset.empty()) config["paths"]["dataset"] = opt.dataset;
    if (!opt.checkpoint.empty()) config["paths"]["checkpoint"] = opt.checkpoint;
    if (!opt.out.empty()) config["paths"]["out"] = opt.out;
    if (opt.threads > 0) config["threads"] = opt.threads;
    if (opt.seed >= 0) config["seed"] = opt.seed;
    if (opt.random_encoder) config["eval"]["random_encoder"] = true;
    if (!opt.split.empty()) config["eval"]["split"] = opt.split;
    if (opt.max_steps >= 0) config["train"]["max_steps"] = opt.max_steps;
    const Paths paths = resolve_paths(config, command);

    if (command == "generate") return cmd_generate(config, paths);
    if (command == "train") return cmd_train(config, paths);
    if (command == "eval-retrieval") return cmd_eval_retrieval(config, paths);
    if (command == "eval-segment") return cmd_eval_segment(config, paths);
    if (command == "eval-pose") return cmd_eval_pose(config, paths);
    if (command == "coseg") return cmd_coseg(config, paths);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::kConfig ? kExitUsage : kExitRuntime;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: bad configuration value: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace vsap::cli
