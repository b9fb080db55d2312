#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scenefuse.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(sf_status s) {
  switch (s) {
    case SF_OK:
      return kExitOk;
    case SF_ERR_CONFIG:
    case SF_ERR_BAD_PARAM:
    case SF_ERR_NULL_ARGUMENT:
      return kExitConfig;
    case SF_ERR_IO:
    case SF_ERR_FORMAT:
    case SF_ERR_DEGENERATE_INPUT:
    case SF_ERR_DEGENERATE_LABELS:
    case SF_ERR_SHAPE_MISMATCH:
    case SF_ERR_PARTITION_INFEASIBLE:
    case SF_ERR_PLACEMENT_FAILURE:
    case SF_ERR_BRIDGE:
      return kExitData;
    case SF_ERR_DEGENERATE_DEPTH:
    case SF_ERR_DEGENERATE_NORM:
    case SF_ERR_CONVERGENCE_FAILURE:
    case SF_ERR_CAPACITY:
    case SF_ERR_INTERNAL:
      return kExitNumeric;
  }
  return kExitNumeric;
}

struct Failure {
  sf_status status;
};

void check(sf_status s) {
  if (s != SF_OK) throw Failure{s};
}

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  sf_string_free(s);
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read " << path << "\n";
    throw Failure{SF_ERR_IO};
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) {
    std::cerr << "error: cannot write " << path.string() << "\n";
    throw Failure{SF_ERR_IO};
  }
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
};

using Config = Handle<sf_config, sf_config_free>;
using Dataset = Handle<sf_dataset, sf_dataset_free>;
using Model = Handle<sf_model, sf_model_free>;

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::string provider = "toy";
  std::string log_path;
};

void add_common(CLI::App* cmd, Common& c, bool with_provider) {
  cmd->add_option("--config", c.config_path, "flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
  cmd->add_option("--jobs", c.jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "seed for every random stream of the run");
  if (with_provider) cmd->add_option("--provider", c.provider, "toy or bridge:URL");
}

void build_config(const Common& c, Config& config) {
  check(sf_config_new(&config.ptr));
  if (!c.config_path.empty()) check(sf_config_merge_json(config.ptr, read_text(c.config_path).c_str()));
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      throw Failure{SF_ERR_CONFIG};
    }
    check(sf_config_set(config.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (c.jobs) check(sf_config_set(config.ptr, "jobs", std::to_string(*c.jobs).c_str()));
  if (c.seed) check(sf_config_set(config.ptr, "seed", std::to_string(*c.seed).c_str()));
}

json config_json(const Config& config) {
  char* text = nullptr;
  check(sf_config_to_json(config.ptr, &text));
  return json::parse(take(text));
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// run_manifest.json sits next to the primary output and keeps one entry per
// subcommand.
void record_run(const fs::path& output, const std::string& command, json entry, const Config* config) {
  const fs::path dir = output.has_parent_path() ? output.parent_path() : fs::path(".");
  const fs::path path = dir / "run_manifest.json";
  json manifest = json::object();
  if (fs::exists(path)) {
    try {
      manifest = json::parse(read_text(path.string()));
    } catch (const nlohmann::json::exception&) {
      manifest = json::object();
    }
  }
  if (config != nullptr) {
    std::uint64_t h = 0;
    check(sf_config_hash(config->ptr, &h));
    entry["config"] = config_json(*config);
    entry["config_hash"] = hex(h);
  }
  manifest[command] = std::move(entry);
  write_text(path, manifest.dump(2) + "\n");
}

std::string log_or_default(const Common& c, const std::string& out) {
  return c.log_path.empty() ? out + ".log.jsonl" : c.log_path;
}

json dataset_json(const std::string& manifest, const Dataset& ds) {
  char* info = nullptr;
  check(sf_dataset_info(ds.ptr, &info));
  json j = json::parse(take(info));
  j["manifest"] = fs::absolute(manifest).lexically_normal().string();
  return j;
}

int run(CLI::App& app, int argc, char** argv) {
  Common common;

  auto* scenegen = app.add_subcommand("scenegen", "generate a synthetic dataset");
  std::string spec_path, out_dir;
  int n_scenes = 20, n_test = 5;
  scenegen->add_option("--spec", spec_path, "flat JSON scene spec")->check(CLI::ExistingFile);
  scenegen->add_option("--out", out_dir, "output directory")->required();
  scenegen->add_option("--n", n_scenes, "number of scenes")->check(CLI::PositiveNumber);
  scenegen->add_option("--test", n_test, "scenes in the test split (the last ones)")->check(CLI::NonNegativeNumber);
  add_common(scenegen, common, false);

  auto* render = app.add_subcommand("render", "render a ring of views around a scene");
  std::string scene_path, render_out;
  std::optional<int> n_views, resolution;
  render->add_option("--scene", scene_path, "PLY scene")->required()->check(CLI::ExistingFile);
  render->add_option("--views", n_views, "number of views")->check(CLI::PositiveNumber);
  render->add_option("--res", resolution, "image width and height")->check(CLI::PositiveNumber);
  render->add_option("--out", render_out, "output directory")->required();
  add_common(render, common, false);

  auto* propose = app.add_subcommand("propose", "united 2D/3D proposals for a rendered scene");
  std::string views_dir, proposals_out;
  propose->add_option("--scene", scene_path, "PLY scene")->required()->check(CLI::ExistingFile);
  propose->add_option("--views", views_dir, "directory written by render")->required()->check(CLI::ExistingDirectory);
  propose->add_option("--out", proposals_out, "proposals JSON")->required();
  add_common(propose, common, false);

  auto* pretrain = app.add_subcommand("pretrain", "language-aligned pre-training on the train split");
  std::string data_path, weights_out;
  pretrain->add_option("--data", data_path, "dataset manifest.json")->required()->check(CLI::ExistingFile);
  pretrain->add_option("--out", weights_out, "encoder weights (TNSR)")->required();
  pretrain->add_option("--log", common.log_path, "JSON-lines training log (default: OUT.log.jsonl)");
  add_common(pretrain, common, true);

  auto* finetune = app.add_subcommand("finetune", "label-efficient fine-tuning");
  double ratio = 1.0;
  std::string init_path, model_out;
  finetune->add_option("--data", data_path, "dataset manifest.json")->required()->check(CLI::ExistingFile);
  finetune->add_option("--ratio", ratio, "labeled point fraction");
  finetune->add_option("--init", init_path, "pre-trained weights")->required()->check(CLI::ExistingFile);
  finetune->add_option("--out", model_out, "model (TNSR)")->required();
  finetune->add_option("--log", common.log_path, "JSON-lines training log (default: OUT.log.jsonl)");
  add_common(finetune, common, true);

  auto* eval = app.add_subcommand("eval", "evaluate a model on the test split");
  std::string model_path, report_path;
  eval->add_option("--data", data_path, "dataset manifest.json")->required()->check(CLI::ExistingFile);
  eval->add_option("--model", model_path, "model or encoder weights")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report_path, "report JSON, updated in place")->required();
  eval->add_option("--ratio", ratio, "report key for this model");
  add_common(eval, common, true);

  auto* query = app.add_subcommand("query", "per-point activation map for a text query");
  std::string text, activation_out;
  query->add_option("--model", model_path, "model or encoder weights")->required()->check(CLI::ExistingFile);
  query->add_option("--scene", scene_path, "PLY scene")->required()->check(CLI::ExistingFile);
  query->add_option("--text", text, "query text")->required();
  query->add_option("--out", activation_out, "PLY colored by activation")->required();
  query->add_option("--data", data_path, "manifest supplying the vocabulary")->check(CLI::ExistingFile);
  add_common(query, common, true);

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    Config config;
    build_config(common, config);

    if (*scenegen) {
      const std::string spec = spec_path.empty() ? "" : read_text(spec_path);
      const std::uint64_t seed = common.seed.value_or(0);
      check(sf_scenegen(spec_path.empty() ? nullptr : spec.c_str(), n_scenes, n_test, seed, out_dir.c_str()));
      const fs::path manifest = fs::path(out_dir) / "manifest.json";
      record_run(manifest, "scenegen",
                 {{"scenes", n_scenes},
                  {"test", n_test},
                  {"seed", seed},
                  {"spec", spec_path},
                  {"outputs", {{"manifest", manifest.string()}}}},
                 nullptr);
      std::cout << manifest.string() << "\n";
    } else if (*render) {
      if (n_views) check(sf_config_set(config.ptr, "views", std::to_string(*n_views).c_str()));
      if (resolution) check(sf_config_set(config.ptr, "resolution", std::to_string(*resolution).c_str()));
      check(sf_render(scene_path.c_str(), config.ptr, render_out.c_str()));
      const fs::path cams = fs::path(render_out) / "cameras.json";
      record_run(cams, "render", {{"scene", scene_path}, {"outputs", {{"views", render_out}}}}, &config);
      std::cout << render_out << "\n";
    } else if (*propose) {
      char* out = nullptr;
      check(sf_propose(scene_path.c_str(), views_dir.c_str(), &out));
      const std::string result = take(out);
      write_text(proposals_out, result);
      const json j = json::parse(result);
      json summary = {{"counts", j.at("counts")}};
      if (j.contains("pr")) summary["pr"] = j.at("pr");
      std::cout << summary.dump() << "\n";
    } else if (*pretrain) {
      Dataset ds;
      check(sf_dataset_open(data_path.c_str(), &ds.ptr));
      const std::string log = log_or_default(common, weights_out);
      Model model;
      check(sf_pretrain(ds.ptr, common.provider.c_str(), config.ptr, log.c_str(), &model.ptr));
      check(sf_model_write(model.ptr, weights_out.c_str()));
      record_run(weights_out, "pretrain",
                 {{"dataset", dataset_json(data_path, ds)},
                  {"provider", common.provider},
                  {"outputs", {{"weights", weights_out}, {"log", log}}}},
                 &config);
      std::cout << weights_out << "\n";
    } else if (*finetune) {
      Dataset ds;
      check(sf_dataset_open(data_path.c_str(), &ds.ptr));
      Model init, model;
      check(sf_model_read(init_path.c_str(), &init.ptr));
      const std::string log = log_or_default(common, model_out);
      char* partition = nullptr;
      check(sf_finetune(ds.ptr, common.provider.c_str(), config.ptr, ratio, init.ptr, log.c_str(), &model.ptr,
                        &partition));
      check(sf_model_write(model.ptr, model_out.c_str()));
      record_run(model_out, "finetune",
                 {{"dataset", dataset_json(data_path, ds)},
                  {"provider", common.provider},
                  {"init", init_path},
                  {"partition", json::parse(take(partition))},
                  {"outputs", {{"model", model_out}, {"log", log}}}},
                 &config);
      std::cout << model_out << "\n";
    } else if (*eval) {
      Dataset ds;
      check(sf_dataset_open(data_path.c_str(), &ds.ptr));
      Model model;
      check(sf_model_read(model_path.c_str(), &model.ptr));
      char* report = nullptr;
      check(sf_evaluate(ds.ptr, common.provider.c_str(), config.ptr, model.ptr, ratio, report_path.c_str(), &report));
      std::cout << take(report);
      record_run(report_path, "eval",
                 {{"dataset", dataset_json(data_path, ds)},
                  {"provider", common.provider},
                  {"model", model_path},
                  {"ratio", ratio},
                  {"outputs", {{"report", report_path}}}},
                 &config);
    } else if (*query) {
      Model model;
      check(sf_model_read(model_path.c_str(), &model.ptr));
      Dataset ds;
      if (!data_path.empty()) check(sf_dataset_open(data_path.c_str(), &ds.ptr));
      double lo = 0.0, hi = 0.0;
      check(sf_query(model.ptr, ds.ptr, common.provider.c_str(), config.ptr, scene_path.c_str(), text.c_str(),
                     activation_out.c_str(), &lo, &hi));
      std::cout << json{{"text", text}, {"min", lo}, {"max", hi}}.dump() << "\n";
    }
  } catch (const Failure& f) {
    const char* msg = sf_last_error();
    if (msg != nullptr && *msg != '\0') std::cerr << "error: " << msg << "\n";
    return exit_code(f.status);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenefuse: language-aligned pre-training and label-efficient fine-tuning for 3D scenes"};
  return run(app, argc, argv);
}
