#include "scenefuse.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <new>
#include <string>

#include "binary_io.hpp"
#include "hashing.hpp"
#include "json.hpp"
#include "scenefuse/error.hpp"
#include "scenefuse/pipeline.hpp"
#include "scenefuse/ply.hpp"
#include "scenefuse/renderer.hpp"

using namespace scenefuse;

struct sf_config {
  TrainConfig value;
};

struct sf_dataset {
  SceneSet data;
};

struct sf_model {
  Model value;
};

namespace {

thread_local std::string g_last_error;

sf_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateDepth: return SF_ERR_DEGENERATE_DEPTH;
    case ErrorCode::kDegenerateInput: return SF_ERR_DEGENERATE_INPUT;
    case ErrorCode::kDegenerateNorm: return SF_ERR_DEGENERATE_NORM;
    case ErrorCode::kDegenerateLabels: return SF_ERR_DEGENERATE_LABELS;
    case ErrorCode::kShapeMismatch: return SF_ERR_SHAPE_MISMATCH;
    case ErrorCode::kCapacity: return SF_ERR_CAPACITY;
    case ErrorCode::kConvergenceFailure: return SF_ERR_CONVERGENCE_FAILURE;
    case ErrorCode::kBadParam: return SF_ERR_BAD_PARAM;
    case ErrorCode::kPartitionInfeasible: return SF_ERR_PARTITION_INFEASIBLE;
    case ErrorCode::kPlacementFailure: return SF_ERR_PLACEMENT_FAILURE;
    case ErrorCode::kIo: return SF_ERR_IO;
    case ErrorCode::kFormat: return SF_ERR_FORMAT;
    case ErrorCode::kConfig: return SF_ERR_CONFIG;
    case ErrorCode::kBridge: return SF_ERR_BRIDGE;
  }
  return SF_ERR_INTERNAL;
}

template <typename F>
sf_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SF_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SF_ERR_CAPACITY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SF_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

struct LogFile {
  std::unique_ptr<std::ofstream> stream;

  explicit LogFile(const char* path) {
    if (path == nullptr) return;
    stream = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*stream) throw Error(ErrorCode::kIo, std::string("cannot open log ") + path);
  }
  std::ostream* get() { return stream.get(); }
};

std::string view_stem(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "view_%02d", v);
  return buf;
}

std::vector<Box3D> instance_boxes(const PointCloud& cloud) {
  std::map<int, Box3D> boxes;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const int inst = cloud.inst_label[i];
    if (inst == kNoInstance) continue;
    auto [it, fresh] = boxes.try_emplace(inst);
    Box3D& b = it->second;
    if (fresh) {
      b.min = b.max = cloud.positions[i];
      b.label = cloud.sem_label[i];
    }
    b.min = b.min.cwiseMin(cloud.positions[i]);
    b.max = b.max.cwiseMax(cloud.positions[i]);
  }
  std::vector<Box3D> out;
  for (auto& [inst, b] : boxes) out.push_back(b);
  return out;
}

nlohmann::json pr_json(const PrecisionRecall& pr) { return {{"precision", pr.precision}, {"recall", pr.recall}}; }

Manifest default_manifest() {
  const SceneSpec spec = default_scene_spec();
  Manifest m;
  for (const ClassSpec& c : spec.vocabulary) {
    m.vocabulary.push_back(c.name);
    m.colors.push_back(c.color);
  }
  return m;
}

}  // namespace

extern "C" {

const char* sf_status_name(sf_status status) {
  switch (status) {
    case SF_OK: return "OK";
    case SF_ERR_NULL_ARGUMENT: return "NULL_ARGUMENT";
    case SF_ERR_INTERNAL: return "INTERNAL";
    default: break;
  }
  if (status > SF_OK && status <= SF_ERR_BRIDGE) return error_code_name(static_cast<ErrorCode>(status - 1));
  return "UNKNOWN";
}

const char* sf_last_error(void) { return g_last_error.c_str(); }

void sf_string_free(char* s) { std::free(s); }

sf_status sf_config_new(sf_config** out) {
  if (out == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new sf_config{}; });
}

void sf_config_free(sf_config* config) { delete config; }

sf_status sf_config_merge_json(sf_config* config, const char* json) {
  if (config == nullptr || json == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { config->value = TrainConfig::from_json(json, config->value); });
}

sf_status sf_config_set(sf_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { config->value.set(key, value); });
}

sf_status sf_config_to_json(const sf_config* config, char** out_json) {
  if (config == nullptr || out_json == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { *out_json = dup_string(config->value.to_json()); });
}

sf_status sf_config_hash(const sf_config* config, uint64_t* out_hash) {
  if (config == nullptr || out_hash == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { *out_hash = fnv1a(config->value.to_json()); });
}

sf_status sf_scenegen(const char* spec_json, int n_scenes, int n_test, uint64_t seed, const char* out_dir) {
  if (out_dir == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const SceneSpec spec = spec_json == nullptr ? default_scene_spec() : scene_spec_from_json(spec_json);
    if (n_scenes <= 0 || n_test < 0 || n_test > n_scenes) throw Error(ErrorCode::kBadParam, "bad scene counts");
    gen_dataset(spec, n_scenes, n_test, seed, out_dir);
  });
}

sf_status sf_render(const char* scene_ply, const sf_config* config, const char* out_dir) {
  if (scene_ply == nullptr || config == nullptr || out_dir == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const TrainConfig& c = config->value;
    c.validate();
    const PointCloud cloud = read_ply(scene_ply);
    const TriangleMesh mesh = mesh_scene(cloud);
    const auto cams = camera_ring(Aabb3::of(cloud.positions), c.views, c.elevation, RingParams{c.resolution, c.resolution});
    const auto views = render_views(mesh, cams, kDefaultLight, c.jobs);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json cameras = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < views.size(); ++v) {
      const std::string stem = view_stem(static_cast<int>(v));
      const Framebuffer& fb = views[v].framebuffer;
      write_ppm(dir / (stem + ".ppm"), fb.color);
      write_correspondence(dir / (stem + ".c3dm"), fb);
      write_depth(dir / (stem + ".dpth"), fb);
      const CameraIntrinsics& k = views[v].intrinsics;
      const CameraPose& pose = views[v].pose;
      std::vector<double> rotation;
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) rotation.push_back(pose.rotation(r, col));
      }
      cameras.push_back({{"stem", stem},
                         {"fx", k.fx},
                         {"fy", k.fy},
                         {"cx", k.cx},
                         {"cy", k.cy},
                         {"width", k.width},
                         {"height", k.height},
                         {"rotation", rotation},
                         {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}});
    }
    io::write_file(dir / "cameras.json", cameras.dump(2) + "\n");
  });
}

sf_status sf_propose(const char* scene_ply, const char* views_dir, char** out_json) {
  if (scene_ply == nullptr || views_dir == nullptr || out_json == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const PointCloud cloud = read_ply(scene_ply);
    const std::filesystem::path dir(views_dir);
    nlohmann::json cameras;
    try {
      cameras = nlohmann::json::parse(io::read_file(dir / "cameras.json"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, std::string("bad cameras.json: ") + e.what());
    }
    std::vector<RenderedView> views;
    try {
      for (const auto& cam : cameras) {
        const std::string stem = cam.at("stem").get<std::string>();
        RenderedView v;
        v.framebuffer = read_framebuffer(dir / (stem + ".ppm"), dir / (stem + ".c3dm"), dir / (stem + ".dpth"));
        v.intrinsics = {cam.at("fx").get<double>(), cam.at("fy").get<double>(), cam.at("cx").get<double>(),
                        cam.at("cy").get<double>(), cam.at("width").get<int>(), cam.at("height").get<int>()};
        const auto rot = cam.at("rotation").get<std::vector<double>>();
        const auto tr = cam.at("translation").get<std::vector<double>>();
        if (rot.size() != 9 || tr.size() != 3) throw Error(ErrorCode::kFormat, "camera pose has the wrong size");
        for (int r = 0; r < 3; ++r) {
          for (int col = 0; col < 3; ++col) v.pose.rotation(r, col) = rot[static_cast<std::size_t>(r * 3 + col)];
        }
        v.pose.translation = Vec3(tr[0], tr[1], tr[2]);
        v.intrinsics.validate();
        views.push_back(std::move(v));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, std::string("bad cameras.json: ") + e.what());
    }
    const SceneProposals p = propose_scene(cloud, views);
    const auto gt = instance_boxes(cloud);
    nlohmann::ordered_json out;
    out["proposals"] = nlohmann::json::parse(proposals_to_json(p.united));
    out["counts"] = {{"r2d", p.r2d.size()}, {"r3d", p.r3d.size()}, {"united", p.united.size()}, {"gt", gt.size()}};
    if (!gt.empty()) {
      out["pr"] = {{"r2d", pr_json(proposal_pr(p.r2d, gt))},
                   {"r3d", pr_json(proposal_pr(p.r3d, gt))},
                   {"united", pr_json(proposal_pr(p.united, gt))}};
    }
    *out_json = dup_string(out.dump(2) + "\n");
  });
}

sf_status sf_dataset_open(const char* manifest_path, sf_dataset** out) {
  if (manifest_path == nullptr || out == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new sf_dataset{load_scenes(read_manifest(manifest_path))}; });
}

void sf_dataset_free(sf_dataset* dataset) { delete dataset; }

sf_status sf_dataset_info(const sf_dataset* dataset, char** out_json) {
  if (dataset == nullptr || out_json == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] {
    const Manifest& m = dataset->data.manifest;
    nlohmann::ordered_json j;
    j["root"] = m.root.string();
    j["seed"] = m.seed;
    j["scenes"] = m.scenes.size();
    j["train"] = dataset->data.ids("train").size();
    j["test"] = dataset->data.ids("test").size();
    j["vocabulary"] = m.vocabulary;
    j["base_classes"] = m.base_classes;
    j["novel_classes"] = m.novel_classes;
    *out_json = dup_string(j.dump());
  });
}

sf_status sf_pretrain(const sf_dataset* dataset, const char* provider, const sf_config* config, const char* log_path,
                      sf_model** out) {
  if (dataset == nullptr || provider == nullptr || config == nullptr || out == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] {
    config->value.validate();
    const auto prov = make_provider(provider, dataset->data.manifest, config->value);
    const auto ids = dataset->data.ids("train");
    LogFile log(log_path);
    PretrainResult r = pretrain(dataset->data, ids, *prov, config->value, log.get());
    *out = new sf_model{Model{std::move(r.params), {}, {}}};
  });
}

sf_status sf_finetune(const sf_dataset* dataset, const char* provider, const sf_config* config, double ratio,
                      const sf_model* init, const char* log_path, sf_model** out, char** out_partition_json) {
  if (dataset == nullptr || provider == nullptr || config == nullptr || init == nullptr || out == nullptr) {
    return SF_ERR_NULL_ARGUMENT;
  }
  return guarded([&] {
    config->value.validate();
    const auto prov = make_provider(provider, dataset->data.manifest, config->value);
    const auto ids = dataset->data.ids("train");
    const LabelPartition part = partition_labels(dataset->data, ids, ratio, config->value.seed);
    LogFile log(log_path);
    FinetuneResult r = finetune(dataset->data, part, init->value.encoder, *prov, config->value, log.get());
    if (out_partition_json != nullptr) {
      nlohmann::ordered_json j;
      j["ratio"] = part.ratio;
      j["seed"] = part.seed;
      j["realized"] = part.realized;
      auto names = [&](const std::vector<int>& v) {
        std::vector<std::string> n;
        for (int s : v) n.push_back(dataset->data.scenes[static_cast<std::size_t>(s)].name);
        return n;
      };
      j["labeled"] = names(part.labeled);
      j["unlabeled"] = names(part.unlabeled);
      if (part.split_scene >= 0) {
        j["split"] = {{"scene", dataset->data.scenes[static_cast<std::size_t>(part.split_scene)].name},
                      {"axis", part.split_axis},
                      {"value", part.split_value}};
      }
      *out_partition_json = dup_string(j.dump());
    }
    *out = new sf_model{std::move(r.model)};
  });
}

sf_status sf_model_read(const char* path, sf_model** out) {
  if (path == nullptr || out == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { *out = new sf_model{read_model(path)}; });
}

sf_status sf_model_write(const sf_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return SF_ERR_NULL_ARGUMENT;
  return guarded([&] { write_model(path, model->value); });
}

void sf_model_free(sf_model* model) { delete model; }

int sf_model_has_head(const sf_model* model) { return model != nullptr && model->value.head.has_value(); }

sf_status sf_evaluate(const sf_dataset* dataset, const char* provider, const sf_config* config, const sf_model* model,
                      double ratio, const char* report_path, char** out_report_json) {
  if (dataset == nullptr || provider == nullptr || config == nullptr || model == nullptr || report_path == nullptr) {
    return SF_ERR_NULL_ARGUMENT;
  }
  return guarded([&] {
    config->value.validate();
    const auto prov = make_provider(provider, dataset->data.manifest, config->value);
    const auto ids = dataset->data.ids("test");
    if (ids.empty()) throw Error(ErrorCode::kDegenerateInput, "dataset has no test scenes");
    EvalReport report;
    if (std::filesystem::exists(report_path)) report = parse_eval_report(io::read_file(report_path));
    report[ratio] = evaluate(dataset->data, ids, model->value, *prov, config->value);
    const std::string text = eval_report_json(report);
    io::write_file(report_path, text);
    if (out_report_json != nullptr) *out_report_json = dup_string(text);
  });
}

sf_status sf_query(const sf_model* model, const sf_dataset* dataset, const char* provider, const sf_config* config,
                   const char* scene_ply, const char* text, const char* out_ply, double* out_min, double* out_max) {
  if (model == nullptr || provider == nullptr || config == nullptr || scene_ply == nullptr || text == nullptr ||
      out_ply == nullptr) {
    return SF_ERR_NULL_ARGUMENT;
  }
  return guarded([&] {
    if (*text == '\0') throw Error(ErrorCode::kBadParam, "query text is empty");
    config->value.validate();
    const Manifest manifest = dataset != nullptr ? dataset->data.manifest : default_manifest();
    const auto prov = make_provider(provider, manifest, config->value);
    PointCloud cloud = read_ply(scene_ply);
    const SceneRegions regions = prepare_regions(cloud, config->value, fnv1a(std::filesystem::path(scene_ply).filename().string()));
    const auto act = query_activation(model->value.encoder, cloud, regions, text, *prov);
    double lo = 1.0, hi = -1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double g = (act[i] + 1.0) / 2.0;
      cloud.colors[i] = Vec3::Constant(g);
      lo = std::min(lo, act[i]);
      hi = std::max(hi, act[i]);
    }
    write_ply(out_ply, cloud);
    if (out_min != nullptr) *out_min = lo;
    if (out_max != nullptr) *out_max = hi;
  });
}

}  // extern "C"
