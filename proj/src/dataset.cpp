#include "vsap/dataset.hpp"

#include <algorithm>
#include <set>

#include "json.hpp"
#include "vsap/error.hpp"
#include "vsap/io.hpp"
#include "vsap/parallel.hpp"
#include "vsap/rng.hpp"

namespace vsap {
namespace {

std::uint32_t majority(std::vector<std::uint32_t>& labels) {
  std::sort(labels.begin(), labels.end());
  std::uint32_t best = labels.front();
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < labels.size();) {
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    // Sorted ascending, so strict > keeps the lowest id on ties.
    if (j - i > best_count) {
      best_count = j - i;
      best = labels[i];
    }
    i = j;
  }
  return best;
}

std::string env_dir_name(EnvId id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "env_%04u", id);
  return buf;
}

std::string view_file_name(std::uint32_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%04u.bin", id);
  return buf;
}

}  // namespace

std::vector<PatchRecord> extract_patches(const PosedView& view, int patch_size, double normalization) {
  if (patch_size <= 0 || view.width % patch_size != 0 || view.height % patch_size != 0) {
    throw Error(Errc::kInvalidArgument, "patch size must divide the image dimensions");
  }
  const int gw = view.width / patch_size;
  const int gh = view.height / patch_size;
  std::vector<PatchRecord> records;
  records.reserve(static_cast<std::size_t>(gw) * gh);
  std::vector<std::uint32_t> sem, inst;
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      const int cu = gx * patch_size + patch_size / 2;
      const int cv = gy * patch_size + patch_size / 2;
      const float depth = view.depth[view.index(cu, cv)];
      if (!(depth > 0.0f)) continue;  // background or missing depth
      PatchRecord rec;
      rec.point = unproject({cu + 0.5, cv + 0.5}, depth, view.intr, view.pose, view.environment);
      rec.view_id = view.view_id;
      rec.grid_x = gx;
      rec.grid_y = gy;
      rec.pixels.reserve(static_cast<std::size_t>(patch_size) * patch_size * 3);
      sem.clear();
      inst.clear();
      for (int y = 0; y < patch_size; ++y) {
        for (int x = 0; x < patch_size; ++x) {
          const std::size_t idx = view.index(gx * patch_size + x, gy * patch_size + y);
          for (int c = 0; c < 3; ++c) rec.pixels.push_back(view.rgb[idx * 3 + c] / normalization);
          sem.push_back(view.semantic[idx]);
          inst.push_back(view.instance[idx]);
        }
      }
      rec.semantic = majority(sem);
      rec.instance = majority(inst);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

PatchBatch build_batch(std::span<const PosedView* const> views, const BatchSpec& spec) {
  if (views.empty()) throw Error(Errc::kEmptyBatch, "batch has no views");
  std::vector<std::vector<PatchRecord>> per_view(views.size());
  parallel_for(views.size(), spec.threads, [&](std::size_t v) {
    per_view[v] = extract_patches(*views[v], spec.patch_size, spec.normalization);
  });
  std::size_t n = 0;
  for (const auto& r : per_view) n += r.size();
  const std::size_t dim = static_cast<std::size_t>(spec.patch_size) * spec.patch_size * 3;
  PatchBatch batch;
  batch.num_views = views.size();
  batch.pixels = Matrix(n, dim);
  batch.points.reserve(n);
  std::size_t row = 0;
  for (const auto& recs : per_view) {
    for (const auto& r : recs) {
      std::copy(r.pixels.begin(), r.pixels.end(), batch.pixels.row(row).begin());
      batch.points.push_back(r.point);
      batch.view_ids.push_back(r.view_id);
      batch.view_envs.push_back(r.point.environment);
      batch.grid_x.push_back(r.grid_x);
      batch.grid_y.push_back(r.grid_y);
      batch.semantic.push_back(r.semantic);
      batch.instance.push_back(r.instance);
      ++row;
    }
  }
  return batch;
}

PatchBatch build_batch(std::span<const PosedView> views, const BatchSpec& spec) {
  std::vector<const PosedView*> ptrs;
  ptrs.reserve(views.size());
  for (const auto& v : views) ptrs.push_back(&v);
  return build_batch(std::span<const PosedView* const>(ptrs), spec);
}

void DatasetSplit::validate() const {
  const std::set<EnvId> t(train.begin(), train.end());
  for (EnvId v : val) {
    if (t.count(v)) throw Error(Errc::kInvalidArgument, "environment in both train and val splits");
  }
}

DatasetSplit make_split(std::span<const EnvId> environments, int num_val) {
  if (num_val < 0 || static_cast<std::size_t>(num_val) > environments.size()) {
    throw Error(Errc::kInvalidArgument, "validation count exceeds environment count");
  }
  DatasetSplit s;
  const std::size_t cut = environments.size() - static_cast<std::size_t>(num_val);
  s.train.assign(environments.begin(), environments.begin() + static_cast<std::ptrdiff_t>(cut));
  s.val.assign(environments.begin() + static_cast<std::ptrdiff_t>(cut), environments.end());
  s.validate();
  return s;
}

const EnvironmentData& Dataset::env(EnvId id) const {
  auto it = environments.find(id);
  if (it == environments.end()) throw Error(Errc::kInvalidArgument, "unknown environment");
  return it->second;
}

std::vector<const PosedView*> Dataset::views_of(std::span<const EnvId> envs) const {
  std::vector<const PosedView*> out;
  for (EnvId e : envs) {
    for (const auto& v : env(e).views) out.push_back(&v);
  }
  return out;
}

Dataset generate_dataset(const GenerateSpec& spec) {
  if (spec.num_train_envs < 1 || spec.num_val_envs < 0) {
    throw Error(Errc::kInvalidArgument, "need at least one training environment");
  }
  Dataset ds;
  ds.spec = spec;
  const int total = spec.num_train_envs + spec.num_val_envs;
  std::vector<EnvId> ids;
  for (int e = 0; e < total; ++e) ids.push_back(static_cast<EnvId>(e));
  ds.split = make_split(ids, spec.num_val_envs);
  const Intrinsics intr = Intrinsics::from_fov(spec.width, spec.height, spec.fov_deg);

  for (EnvId id : ids) {
    SceneSpec ss = spec.scene;
    ss.seed = derive_seed(spec.seed, "environment", id);
    EnvironmentData data;
    data.scene = generate_scene(ss, id);
    const auto poses = sample_trajectory(data.scene, spec.views_per_env, derive_seed(spec.seed, "views", id));
    data.views.resize(poses.size());
    parallel_for(poses.size(), spec.threads, [&](std::size_t v) {
      RenderOptions ro = spec.render;
      ro.noise_seed = derive_seed(spec.seed, "depth-noise", (static_cast<std::uint64_t>(id) << 32) | v);
      data.views[v] = render(data.scene, poses[v], intr, ro);
      data.views[v].view_id = static_cast<std::uint32_t>(v);
    });
    ds.environments.emplace(id, std::move(data));
  }
  return ds;
}

std::string Dataset::manifest_json() const {
  nlohmann::ordered_json j;
  j["format"] = "vsap-dataset";
  j["version"] = 1;
  j["seed"] = spec.seed;
  j["image"] = {{"width", spec.width}, {"height", spec.height}, {"fov_deg", spec.fov_deg}};
  j["patch_size"] = spec.patch_size;
  j["normalization"] = normalization;
  j["views_per_env"] = spec.views_per_env;
  j["scene"] = {{"num_rooms", spec.scene.num_rooms},
                {"objects_per_room", spec.scene.objects_per_room},
                {"palette_size", spec.scene.palette_size},
                {"object_library_size", spec.scene.object_library_size}};
  j["render"] = {{"depth_noise_std", spec.render.depth_noise_std}};
  j["split"] = {{"train", split.train}, {"val", split.val}};
  j["environments"] = nlohmann::json::array();
  for (const auto& [id, data] : environments) {
    nlohmann::ordered_json ej;
    ej["id"] = id;
    ej["dir"] = env_dir_name(id);
    ej["num_views"] = data.views.size();
    j["environments"].push_back(ej);
  }
  return j.dump(1) + "\n";
}

void Dataset::save(const std::filesystem::path& root) const {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw Error(Errc::kIo, "cannot create " + root.string());
  for (const auto& [id, data] : environments) {
    const auto dir = root / env_dir_name(id);
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::kIo, "cannot create " + dir.string());
    io::write_text(dir / "scene.json", data.scene.to_json());
    for (const auto& v : data.views) io::write_file(dir / view_file_name(v.view_id), io::encode_view(v));
  }
  io::write_text(root / "manifest.json", manifest_json());
}

Dataset Dataset::load(const std::filesystem::path& root) {
  Dataset ds;
  try {
    const auto j = nlohmann::json::parse(io::read_text(root / "manifest.json"));
    if (j.at("format") != "vsap-dataset") throw Error(Errc::kFormat, "not a dataset manifest");
    ds.spec.seed = j.at("seed").get<std::uint64_t>();
    ds.spec.width = j.at("image").at("width").get<int>();
    ds.spec.height = j.at("image").at("height").get<int>();
    ds.spec.fov_deg = j.at("image").at("fov_deg").get<double>();
    ds.spec.patch_size = j.at("patch_size").get<int>();
    ds.normalization = j.at("normalization").get<double>();
    ds.spec.views_per_env = j.at("views_per_env").get<int>();
    const auto& sj = j.at("scene");
    ds.spec.scene.num_rooms = sj.at("num_rooms").get<int>();
    ds.spec.scene.objects_per_room = sj.at("objects_per_room").get<int>();
    ds.spec.scene.palette_size = sj.at("palette_size").get<int>();
    ds.spec.scene.object_library_size = sj.at("object_library_size").get<int>();
    ds.spec.render.depth_noise_std = j.at("render").at("depth_noise_std").get<double>();
    ds.split.train = j.at("split").at("train").get<std::vector<EnvId>>();
    ds.split.val = j.at("split").at("val").get<std::vector<EnvId>>();
    ds.split.validate();
    ds.spec.num_train_envs = static_cast<int>(ds.split.train.size());
    ds.spec.num_val_envs = static_cast<int>(ds.split.val.size());
    for (const auto& ej : j.at("environments")) {
      const EnvId id = ej.at("id").get<EnvId>();
      const auto dir = root / ej.at("dir").get<std::string>();
      EnvironmentData data;
      data.scene = Scene::from_json(io::read_text(dir / "scene.json"));
      const auto nviews = ej.at("num_views").get<std::uint32_t>();
      for (std::uint32_t v = 0; v < nviews; ++v) {
        data.views.push_back(io::decode_view(io::read_file(dir / view_file_name(v))));
      }
      ds.environments.emplace(id, std::move(data));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kFormat, std::string("dataset manifest: ") + e.what());
  }
  return ds;
}

}  // namespace vsap
