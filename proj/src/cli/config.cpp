#include <cstdlib>
#include <limits>

#include "vsap/cli.hpp"
#include "vsap/error.hpp"
#include "vsap/rng.hpp"

namespace vsap::cli {

using nlohmann::ordered_json;

std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

ordered_json default_config() {
  ordered_json c;
  c["seed"] = 1;
  c["threads"] = 1;
  c["dataset"] = {
      {"num_train_envs", 8},   {"num_val_envs", 2},   {"views_per_env", 48},
      {"width", 64},           {"height", 64},        {"fov_deg", 70.0},
      {"patch_size", 8},       {"num_rooms", 1},      {"objects_per_room", 4},
      {"palette_size", 12},    {"object_library_size", 8}, {"depth_noise_std", 0.0},
  };
  c["train"] = {
      {"tau", kDefaultTau},
      {"rho", kDefaultRadius},
      {"kappa", kDefaultKappa},
      {"batch_views", 16},
      {"envs_per_batch", 2},
      {"landmarks", 64},
      {"min_positives", 2},
      {"epochs", 20},
      {"learning_rate", 1e-4},
      {"embedding_mode", "single"},
      {"exclude_self", true},
      {"activation", "tanh"},
      {"checkpoint_every", 0},
      {"validate_each_epoch", true},
      {"max_steps", 0},
  };
  c["eval"] = {
      {"split", "val"},
      {"random_encoder", false},
      {"num_batches", 8},
      {"kappa", kDefaultKappa},
      {"probe_learning_rate", 1e-4},
      {"probe_steps", 3000},
      {"probe_views_per_env", 8},
      {"pose_pairs", 100},
      {"score_threshold", 0.7},
      {"inlier_threshold_px", 4.0},
      {"continuity", true},
      {"max_deviation", 2.0},
      {"min_overlap", 0.1},
      {"max_overlap", 0.4},
      {"coseg_threshold", 0.7},
      {"coseg_view", 0},
      {"coseg_gx", 4},
      {"coseg_gy", 4},
      {"coseg_views", 4},
  };
  c["paths"] = {{"dataset", ""}, {"checkpoint", ""}, {"out", ""}};
  return c;
}

namespace {

bool is_kappa_key(const std::string& key) { return key == "kappa"; }

void check_type(const std::string& where, const ordered_json& expected, const ordered_json& got) {
  const bool ok = (expected.is_number() && got.is_number()) || (expected.is_boolean() && got.is_boolean()) ||
                  (expected.is_string() && got.is_string()) ||
                  (is_kappa_key(where.substr(where.rfind('.') + 1)) && got.is_string());
  if (!ok) throw Error(Errc::kConfig, "config key '" + where + "' has the wrong type");
  if (expected.is_number_integer() && got.is_number_float()) {
    throw Error(Errc::kConfig, "config key '" + where + "' must be an integer");
  }
}

}  // namespace

double parse_kappa(const ordered_json& v) {
  if (v.is_number()) return v.get<double>();
  const auto s = v.get<std::string>();
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  throw Error(Errc::kConfig, "kappa must be a number or \"inf\"");
}

void merge_config(ordered_json& base, const ordered_json& patch) {
  if (!patch.is_object()) throw Error(Errc::kConfig, "config root must be an object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw Error(Errc::kConfig, "unknown config key '" + key + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      if (!value.is_object()) throw Error(Errc::kConfig, "config section '" + key + "' must be an object");
      for (const auto& [k, v] : value.items()) {
        if (!slot.contains(k)) throw Error(Errc::kConfig, "unknown config key '" + key + "." + k + "'");
        check_type(key + "." + k, slot[k], v);
        slot[k] = v;
      }
    } else {
      check_type(key, slot, value);
      slot = value;
    }
  }
}

void apply_override(ordered_json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(Errc::kConfig, "override must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ordered_json value = ordered_json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  ordered_json patch;
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    patch[path] = value;
  } else {
    patch[path.substr(0, dot)][path.substr(dot + 1)] = value;
  }
  merge_config(config, patch);
}

GenerateSpec generate_spec(const ordered_json& config) {
  const auto& d = config.at("dataset");
  GenerateSpec g;
  g.seed = derive_seed(config.at("seed").get<std::uint64_t>(), "dataset");
  g.num_train_envs = d.at("num_train_envs").get<int>();
  g.num_val_envs = d.at("num_val_envs").get<int>();
  g.views_per_env = d.at("views_per_env").get<int>();
  g.width = d.at("width").get<int>();
  g.height = d.at("height").get<int>();
  g.fov_deg = d.at("fov_deg").get<double>();
  g.patch_size = d.at("patch_size").get<int>();
  g.scene.num_rooms = d.at("num_rooms").get<int>();
  g.scene.objects_per_room = d.at("objects_per_room").get<int>();
  g.scene.palette_size = d.at("palette_size").get<int>();
  g.scene.object_library_size = d.at("object_library_size").get<int>();
  g.render.depth_noise_std = d.at("depth_noise_std").get<double>();
  g.render.noise_seed = derive_seed(g.seed, "depth-noise");
  g.threads = config.at("threads").get<int>();
  return g;
}

TrainConfig train_config(const ordered_json& config) {
  const auto& t = config.at("train");
  TrainConfig c;
  c.seed = derive_seed(config.at("seed").get<std::uint64_t>(), "train");
  c.tau = t.at("tau").get<double>();
  c.rho = t.at("rho").get<double>();
  c.kappa = parse_kappa(t.at("kappa"));
  c.batch_views = t.at("batch_views").get<int>();
  c.envs_per_batch = t.at("envs_per_batch").get<int>();
  c.landmarks = t.at("landmarks").get<std::size_t>();
  c.min_positives = t.at("min_positives").get<std::size_t>();
  c.epochs = t.at("epochs").get<int>();
  c.learning_rate = t.at("learning_rate").get<double>();
  const auto mode = t.at("embedding_mode").get<std::string>();
  if (mode == "single") {
    c.embedding_mode = EmbeddingMode::kSinglePositive;
  } else if (mode == "mean") {
    c.embedding_mode = EmbeddingMode::kPositiveMean;
  } else {
    throw Error(Errc::kConfig, "embedding_mode must be \"single\" or \"mean\"");
  }
  c.exclude_self = t.at("exclude_self").get<bool>();
  c.activation = parse_activation(t.at("activation").get<std::string>());
  c.checkpoint_every = t.at("checkpoint_every").get<int>();
  c.threads = config.at("threads").get<int>();
  c.validate();
  return c;
}

std::uint64_t eval_seed(const ordered_json& config) {
  return derive_seed(config.at("seed").get<std::uint64_t>(), "eval");
}

RetrievalSpec retrieval_spec(const ordered_json& config) {
  const TrainConfig tc = train_config(config);
  const auto& e = config.at("eval");
  RetrievalSpec rs;
  rs.seed = eval_seed(config);
  rs.num_batches = e.at("num_batches").get<int>();
  rs.batch_views = tc.batch_views;
  rs.envs_per_batch = tc.envs_per_batch;
  rs.sampling = tc.sampling();
  rs.kappa = parse_kappa(e.at("kappa"));
  rs.objective = tc.objective();
  return rs;
}

PoseBenchmarkSpec pose_benchmark_spec(const ordered_json& config) {
  const auto& e = config.at("eval");
  PoseBenchmarkSpec spec;
  spec.score_threshold = e.at("score_threshold").get<double>();
  spec.continuity.enabled = e.at("continuity").get<bool>();
  spec.continuity.max_deviation = e.at("max_deviation").get<double>();
  spec.ransac.inlier_threshold_px = e.at("inlier_threshold_px").get<double>();
  spec.ransac.seed = eval_seed(config);
  spec.threads = config.at("threads").get<int>();
  return spec;
}

Paths resolve_paths(const ordered_json& config, const std::string& command) {
  const auto& p = config.at("paths");
  const auto root = output_root();
  Paths out;
  auto pick = [](const ordered_json& v, const std::filesystem::path& fallback) {
    const auto s = v.get<std::string>();
    return s.empty() ? fallback : std::filesystem::path(s);
  };
  out.dataset = pick(p.at("dataset"), root / "dataset");
  out.checkpoint = pick(p.at("checkpoint"), root / "train" / "checkpoint.bin");
  out.out = pick(p.at("out"), command == "generate" ? out.dataset : root / command);
  return out;
}

}  // namespace vsap::cli
