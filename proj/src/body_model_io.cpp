#include <fstream>
#include <json.hpp>

#include "h4w/body_model.hpp"
#include "h4w/error.hpp"

namespace h4w {
namespace {

constexpr const char* kFormat = "h4w-body-model";
constexpr int kVersion = 1;

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", t.data}}; }

Tensor tensor_from(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw Error(ErrorKind::IOFailure, std::string("body model file lacks '") + name + "'");
  const auto& e = j.at(name);
  Tensor t(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
  return t;
}

}  // namespace

void save_body_model(const BodyModel& model, const std::filesystem::path& path) {
  model.validate();
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["template_vertices"] = tensor_json(model.template_vertices);
  j["parents"] = model.parents;
  j["rest_joints"] = tensor_json(model.rest_joints);
  j["skin_weights"] = tensor_json(model.skin_weights);
  j["shape_dirs"] = tensor_json(model.shape_dirs);
  j["expr_dirs"] = tensor_json(model.expr_dirs);
  j["joint_regressor"] = tensor_json(model.joint_regressor);
  j["left_right_pairs"] = model.left_right_pairs;
  j["mcp_indices"] = model.mcp_indices;
  std::vector<int> parts;
  for (Part p : model.vertex_part) parts.push_back(static_cast<int>(p));
  j["vertex_part"] = parts;
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  os << j.dump();
  if (!os) throw Error(ErrorKind::IOFailure, "write failed: " + path.string());
}

BodyModel load_body_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IOFailure, "cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
    if (j.value("format", "") != kFormat) throw Error(ErrorKind::IOFailure, path.string() + " is not a body model file");
    if (j.value("version", 0) != kVersion)
      throw Error(ErrorKind::IOFailure, "unsupported body model version " + std::to_string(j.value("version", 0)));
    BodyModel m;
    m.template_vertices = tensor_from(j, "template_vertices");
    m.parents = j.at("parents").get<std::vector<int>>();
    m.rest_joints = tensor_from(j, "rest_joints");
    m.skin_weights = tensor_from(j, "skin_weights");
    m.shape_dirs = tensor_from(j, "shape_dirs");
    m.expr_dirs = tensor_from(j, "expr_dirs");
    m.joint_regressor = tensor_from(j, "joint_regressor");
    m.left_right_pairs = j.at("left_right_pairs").get<std::vector<int>>();
    m.mcp_indices = j.at("mcp_indices").get<std::array<std::array<int, 4>, 2>>();
    for (int p : j.at("vertex_part").get<std::vector<int>>()) {
      if (p < 0 || p > 3) throw Error(ErrorKind::IOFailure, "invalid vertex part tag");
      m.vertex_part.push_back(static_cast<Part>(p));
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IOFailure, "malformed body model file " + path.string() + ": " + e.what());
  }
}

}  // namespace h4w
