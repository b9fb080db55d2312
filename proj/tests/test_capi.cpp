#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "scenefuse.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  sf_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("scenefuse_capi_" + std::to_string(std::rand()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

sf_config* quick_config() {
  sf_config* c = nullptr;
  REQUIRE(sf_config_new(&c) == SF_OK);
  REQUIRE(sf_config_merge_json(c, R"({"epochs": 2, "bpn_epochs": 10, "views": 3, "resolution": 64})") == SF_OK);
  return c;
}

}  // namespace

TEST_CASE("status names and null arguments") {
  CHECK(std::string(sf_status_name(SF_OK)) == "OK");
  CHECK(std::string(sf_status_name(SF_ERR_CONFIG)) == "CONFIG_ERROR");
  CHECK(std::string(sf_status_name(SF_ERR_PARTITION_INFEASIBLE)) == "PARTITION_INFEASIBLE");
  CHECK(sf_config_new(nullptr) == SF_ERR_NULL_ARGUMENT);
  CHECK(sf_dataset_open(nullptr, nullptr) == SF_ERR_NULL_ARGUMENT);
  CHECK(sf_model_has_head(nullptr) == 0);
  sf_config_free(nullptr);
  sf_model_free(nullptr);
  sf_dataset_free(nullptr);
}

TEST_CASE("config through the C API") {
  sf_config* c = nullptr;
  REQUIRE(sf_config_new(&c) == SF_OK);
  CHECK(sf_config_set(c, "lr", "0.25") == SF_OK);
  CHECK(std::string(sf_last_error()).empty());
  CHECK(sf_config_set(c, "no_such_key", "1") == SF_ERR_CONFIG);
  CHECK(std::string(sf_last_error()).find("no_such_key") != std::string::npos);
  CHECK(sf_config_merge_json(c, "{\"epochs\": 4}") == SF_OK);
  char* json = nullptr;
  REQUIRE(sf_config_to_json(c, &json) == SF_OK);
  const auto j = nlohmann::json::parse(take(json));
  CHECK(j.at("lr").get<double>() == 0.25);
  CHECK(j.at("epochs").get<int>() == 4);
  std::uint64_t h1 = 0, h2 = 0;
  CHECK(sf_config_hash(c, &h1) == SF_OK);
  CHECK(sf_config_set(c, "epochs", "5") == SF_OK);
  CHECK(sf_config_hash(c, &h2) == SF_OK);
  CHECK(h1 != h2);
  sf_config_free(c);
}

TEST_CASE("end to end through the C API") {
  TempDir tmp;
  const fs::path data = tmp.path / "data";
  REQUIRE(sf_scenegen(nullptr, 3, 1, 4, data.c_str()) == SF_OK);
  CHECK(sf_scenegen("{\"bogus\": 1}", 3, 1, 4, (tmp.path / "x").c_str()) == SF_ERR_CONFIG);

  sf_dataset* ds = nullptr;
  REQUIRE(sf_dataset_open((data / "manifest.json").c_str(), &ds) == SF_OK);
  char* info = nullptr;
  REQUIRE(sf_dataset_info(ds, &info) == SF_OK);
  const auto ij = nlohmann::json::parse(take(info));
  CHECK(ij.at("train").get<int>() == 2);
  CHECK(ij.at("test").get<int>() == 1);

  sf_config* c = quick_config();
  sf_model* pre = nullptr;
  const fs::path log = tmp.path / "pretrain.jsonl";
  REQUIRE(sf_pretrain(ds, "toy", c, log.c_str(), &pre) == SF_OK);
  CHECK_FALSE(sf_model_has_head(pre));
  std::istringstream lines(slurp(log));
  std::string line;
  int steps = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("phase") == "pretrain") {
      CHECK(j.contains("epoch"));
      CHECK(j.contains("lr"));
      ++steps;
    }
  }
  CHECK(steps > 0);

  const fs::path weights = tmp.path / "weights.tnsr";
  REQUIRE(sf_model_write(pre, weights.c_str()) == SF_OK);
  sf_model* init = nullptr;
  REQUIRE(sf_model_read(weights.c_str(), &init) == SF_OK);

  sf_model* tuned = nullptr;
  char* part = nullptr;
  CHECK(sf_finetune(ds, "toy", c, 0.33, init, nullptr, &tuned, nullptr) == SF_ERR_BAD_PARAM);
  REQUIRE(sf_finetune(ds, "toy", c, 1.0, init, nullptr, &tuned, &part) == SF_OK);
  CHECK(nlohmann::json::parse(take(part)).at("labeled").size() == 2);
  CHECK(sf_model_has_head(tuned));

  const fs::path report = tmp.path / "report.json";
  char* text = nullptr;
  REQUIRE(sf_evaluate(ds, "toy", c, tuned, 1.0, report.c_str(), &text) == SF_OK);
  const std::string first = take(text);
  CHECK(first == slurp(report));
  REQUIRE(sf_evaluate(ds, "toy", c, pre, 0.1, report.c_str(), &text) == SF_OK);
  const auto rj = nlohmann::json::parse(take(text));
  CHECK(rj.size() == 2);
  CHECK(rj.at("1").contains("miou"));

  const fs::path scene = data / "scene_0000.ply";
  const fs::path act = tmp.path / "act.ply";
  double lo = 0, hi = 0;
  REQUIRE(sf_query(tuned, ds, "toy", c, scene.c_str(), "chair", act.c_str(), &lo, &hi) == SF_OK);
  CHECK(lo >= -1.0);
  CHECK(hi <= 1.0);
  CHECK(lo <= hi);
  CHECK(fs::exists(act));
  CHECK(sf_query(tuned, nullptr, "toy", c, scene.c_str(), "", act.c_str(), &lo, &hi) == SF_ERR_BAD_PARAM);

  const fs::path views = tmp.path / "views";
  REQUIRE(sf_render(scene.c_str(), c, views.c_str()) == SF_OK);
  CHECK(fs::exists(views / "view_00.ppm"));
  CHECK(fs::exists(views / "view_02.c3dm"));
  CHECK(fs::exists(views / "view_01.dpth"));
  char* props = nullptr;
  REQUIRE(sf_propose(scene.c_str(), views.c_str(), &props) == SF_OK);
  const auto pj = nlohmann::json::parse(take(props));
  CHECK(pj.at("proposals").is_array());
  CHECK(pj.at("pr").at("united").at("recall").get<double>() >= 0.0);
  CHECK(sf_propose(scene.c_str(), (tmp.path / "missing").c_str(), &props) == SF_ERR_IO);

  CHECK(sf_model_read((tmp.path / "missing.tnsr").c_str(), &init) == SF_ERR_IO);
  CHECK(sf_dataset_open((tmp.path / "missing.json").c_str(), &ds) == SF_ERR_IO);

  sf_model_free(tuned);
  sf_model_free(init);
  sf_model_free(pre);
  sf_config_free(c);
  sf_dataset_free(ds);
}
