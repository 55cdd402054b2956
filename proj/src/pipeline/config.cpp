#include "cmr/pipeline/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

namespace cmr::pipeline {
namespace {

using nlohmann::json;

enum class Kind { String, Bool, Int, UInt, Number, IntList, Object };

bool matches(const json& v, Kind k) {
  switch (k) {
    case Kind::String: return v.is_string();
    case Kind::Bool: return v.is_boolean();
    case Kind::Int: return v.is_number_integer();
    case Kind::UInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::Number: return v.is_number();
    case Kind::IntList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
    case Kind::Object: return v.is_object();
  }
  return false;
}

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::String: return "string";
    case Kind::Bool: return "boolean";
    case Kind::Int: return "integer";
    case Kind::UInt: return "non-negative integer";
    case Kind::Number: return "number";
    case Kind::IntList: return "list of integers";
    case Kind::Object: return "object";
  }
  return "?";
}

const std::map<std::string, Kind>& top_schema() {
  static const std::map<std::string, Kind> s{
      {"dataset_root", Kind::String}, {"output_root", Kind::String}, {"arch", Kind::String},
      {"loss", Kind::String},         {"mc_enabled", Kind::Bool},     {"T", Kind::Int},
      {"umap", Kind::String},         {"tolerance", Kind::Object},    {"patch_size", Kind::Int},
      {"k", Kind::Int},               {"folds", Kind::IntList},       {"seeds", Kind::Object},
      {"segmentation", Kind::Object}, {"detector", Kind::Object},     {"threshold", Kind::Number}};
  return s;
}

const std::map<std::string, std::map<std::string, Kind>>& nested_schema() {
  static const std::map<std::string, std::map<std::string, Kind>> s{
      {"tolerance",
       {{"outside", Kind::Int}, {"inside", Kind::Int}, {"min_cluster", Kind::Int}, {"connectivity", Kind::Int}}},
      {"seeds",
       {{"split", Kind::UInt}, {"segmentation", Kind::UInt}, {"detector", Kind::UInt}, {"inference", Kind::UInt}}},
      {"segmentation",
       {{"dropout_p", Kind::Number},
        {"train_patch", Kind::Int},
        {"iterations", Kind::Int},
        {"batch_size", Kind::Int},
        {"lr", Kind::Number},
        {"decay_step", Kind::Int},
        {"decay", Kind::Number},
        {"snapshot_lr", Kind::Number},
        {"snapshot_cycle", Kind::Int},
        {"weight_decay", Kind::Number},
        {"width", Kind::Number}}},
      {"detector",
       {{"w_pos", Kind::Number},
        {"iterations", Kind::Int},
        {"batch_size", Kind::Int},
        {"lr", Kind::Number},
        {"decay_step", Kind::Int},
        {"decay", Kind::Number},
        {"dropout_p", Kind::Number},
        {"crop", Kind::Int},
        {"forced_positive_fraction", Kind::Number},
        {"weight_decay", Kind::Number}}}};
  return s;
}

void check_schema(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = top_schema().find(key);
    if (it == top_schema().end()) throw Error(ErrorCode::ConfigError, fmt::format("unknown key '{}'", key));
    if (!matches(value, it->second))
      throw Error(ErrorCode::ConfigError, fmt::format("'{}' must be a {}", key, kind_name(it->second)));
    if (it->second != Kind::Object) continue;
    const auto& sub = nested_schema().at(key);
    for (const auto& [k2, v2] : value.items()) {
      const auto it2 = sub.find(k2);
      if (it2 == sub.end()) throw Error(ErrorCode::ConfigError, fmt::format("unknown key '{}.{}'", key, k2));
      if (!matches(v2, it2->second))
        throw Error(ErrorCode::ConfigError, fmt::format("'{}.{}' must be a {}", key, k2, kind_name(it2->second)));
    }
  }
}

template <typename F>
auto enum_field(const json& j, const char* key, F parse) {
  try {
    return parse(j.at(key).get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, fmt::format("'{}': {}", key, e.what()));
  }
}

}  // namespace

std::vector<int> ExperimentConfig::active_folds() const {
  if (!folds.empty()) return folds;
  std::vector<int> all(k);
  for (int i = 0; i < k; ++i) all[i] = i;
  return all;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (output_root.empty()) fail("output_root is required");
  if (!dataset_root.empty() && !std::filesystem::is_directory(dataset_root))
    fail("dataset_root does not exist: " + dataset_root.string());
  if (T < 1) fail("T must be >= 1");
  if (mc_enabled && T < 2) fail("MC inference needs T >= 2");
  if (umap_kind == unc::MapKind::Bayesian && !mc_enabled) fail("b-maps require mc_enabled");
  if (patch_size != 4 && patch_size != 8 && patch_size != 16) fail("patch_size must be 4, 8 or 16");
  if (k < 2) fail("k must be >= 2");
  std::set<int> seen;
  for (int f : folds) {
    if (f < 0 || f >= k) fail(fmt::format("fold {} outside [0, {})", f, k));
    if (!seen.insert(f).second) fail(fmt::format("fold {} listed twice", f));
  }
  if (!(threshold >= 0.0)) fail("threshold must be >= 0");
  if (segmentation.arch != arch || segmentation.loss != loss) fail("segmentation settings disagree with arch/loss");
  if (detector.patch_size != patch_size || detector.umap_kind != umap_kind)
    fail("detector settings disagree with patch_size/umap");
  try {
    tolerance.validate();
    segmentation.validate();
    detector.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
}

ExperimentConfig config_from_json(const json& j) {
  check_schema(j);
  ExperimentConfig c;
  if (j.contains("dataset_root")) c.dataset_root = j.at("dataset_root").get<std::string>();
  if (c.dataset_root.empty())
    if (const char* env = std::getenv(kDatasetEnv)) c.dataset_root = env;
  if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
  if (j.contains("arch")) c.arch = enum_field(j, "arch", seg::parse_arch);
  if (j.contains("loss")) c.loss = enum_field(j, "loss", seg::parse_loss);
  c.mc_enabled = j.value("mc_enabled", c.mc_enabled);
  c.T = j.value("T", c.T);
  if (j.contains("umap")) c.umap_kind = enum_field(j, "umap", unc::parse_map_kind);
  if (j.contains("tolerance")) {
    const auto& t = j.at("tolerance");
    c.tolerance.outside_voxels = t.value("outside", c.tolerance.outside_voxels);
    c.tolerance.inside_voxels = t.value("inside", c.tolerance.inside_voxels);
    c.tolerance.min_cluster = t.value("min_cluster", c.tolerance.min_cluster);
    c.tolerance.connectivity = t.value("connectivity", c.tolerance.connectivity);
  }
  c.patch_size = j.value("patch_size", c.patch_size);
  c.k = j.value("k", c.k);
  if (j.contains("folds")) c.folds = j.at("folds").get<std::vector<int>>();
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.split = s.value("split", c.seeds.split);
    c.seeds.segmentation = s.value("segmentation", c.seeds.segmentation);
    c.seeds.detector = s.value("detector", c.seeds.detector);
    c.seeds.inference = s.value("inference", c.seeds.inference);
  }
  json seg = j.value("segmentation", json::object());
  seg["arch"] = seg::to_string(c.arch);
  seg["loss"] = seg::to_string(c.loss);
  seg["seed"] = c.seeds.segmentation;
  c.segmentation = nn::seg_config_from_json(seg);
  json det = j.value("detector", json::object());
  det["patch_size"] = c.patch_size;
  det["umap_kind"] = unc::to_string(c.umap_kind);
  det["seed"] = c.seeds.detector;
  c.detector = nn::detector_config_from_json(det);
  c.threshold = j.value("threshold", c.threshold);
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json seg = nn::to_json(c.segmentation);
  for (const char* k : {"arch", "loss", "seed", "num_classes"}) seg.erase(k);
  json det = nn::to_json(c.detector);
  for (const char* k : {"patch_size", "umap_kind", "seed"}) det.erase(k);
  return {{"dataset_root", c.dataset_root.string()},
          {"output_root", c.output_root.string()},
          {"arch", seg::to_string(c.arch)},
          {"loss", seg::to_string(c.loss)},
          {"mc_enabled", c.mc_enabled},
          {"T", c.T},
          {"umap", unc::to_string(c.umap_kind)},
          {"tolerance",
           {{"outside", c.tolerance.outside_voxels},
            {"inside", c.tolerance.inside_voxels},
            {"min_cluster", c.tolerance.min_cluster},
            {"connectivity", c.tolerance.connectivity}}},
          {"patch_size", c.patch_size},
          {"k", c.k},
          {"folds", c.folds},
          {"seeds",
           {{"split", c.seeds.split},
            {"segmentation", c.seeds.segmentation},
            {"detector", c.seeds.detector},
            {"inference", c.seeds.inference}}},
          {"segmentation", seg},
          {"detector", det},
          {"threshold", c.threshold}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, fmt::format("{}: {}", path.string(), e.what()));
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::ConfigError, "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorCode::ConfigError, "bad override key: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw Error(ErrorCode::ConfigError, "override descends into a non-object: " + key);
    start = dot + 1;
  }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_root");
  return fmt::format("{:016x}", fnv1a(j.dump()));
}

}  // namespace cmr::pipeline
