#include <cstring>
#include <fstream>
#include <json.hpp>
#include <set>

#include "h4w/error.hpp"
#include "h4w/pipeline.hpp"

namespace h4w {
namespace {

using nlohmann::json;

json to_json(const PipelineConfig& c) {
  json layers = json::array();
  for (const ConvLayer& l : c.backbone) layers.push_back({{"channels", l.channels}, {"stride", l.stride}});
  return {{"profile", c.profile},
          {"image_h", c.image_h},
          {"image_w", c.image_w},
          {"hand_size", c.hand_size},
          {"face_size", c.face_size},
          {"backbone", layers},
          {"depth_bins", c.depth_bins},
          {"c_joint", c.c_joint},
          {"mcp_local", c.mcp_local},
          {"wrist_mode", std::string(to_string(c.wrist_mode))},
          {"finger_body_feature", c.finger_body_feature},
          {"regressor_input", std::string(to_string(c.regressor_input))},
          {"detach_vm", c.detach_vm},
          {"box_hidden", c.box_hidden},
          {"size_hidden", c.size_hidden},
          {"focal", c.focal},
          {"body_depth_range", c.body_depth_range},
          {"hand_depth_range", c.hand_depth_range},
          {"nominal_depth", c.nominal_depth},
          {"nominal_box_size", c.nominal_box_size},
          {"gt_box_prob", c.gt_box_prob},
          {"head_gain", c.head_gain},
          {"input_mean", c.input_mean},
          {"input_std", c.input_std}};
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

PipelineConfig from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, "config must be a JSON object");
  // Unset keys take the defaults of the named profile.
  PipelineConfig c = PipelineConfig::toy();
  if (j.contains("profile")) {
    const std::string prof = j.at("profile").get<std::string>();
    if (prof == "reference")
      c = PipelineConfig::reference();
    else if (prof != "toy")
      throw Error(ErrorKind::ConfigError, "unknown profile '" + prof + "'");
  }
  const json known = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");
  read(j, "image_h", c.image_h);
  read(j, "image_w", c.image_w);
  read(j, "hand_size", c.hand_size);
  read(j, "face_size", c.face_size);
  if (j.contains("backbone")) {
    c.backbone.clear();
    for (const json& l : j.at("backbone")) c.backbone.push_back({l.at("channels").get<int>(), l.at("stride").get<int>()});
  }
  read(j, "depth_bins", c.depth_bins);
  read(j, "c_joint", c.c_joint);
  read(j, "mcp_local", c.mcp_local);
  if (j.contains("wrist_mode")) c.wrist_mode = wrist_mode_from_string(j.at("wrist_mode").get<std::string>());
  read(j, "finger_body_feature", c.finger_body_feature);
  if (j.contains("regressor_input"))
    c.regressor_input = regressor_input_from_string(j.at("regressor_input").get<std::string>());
  read(j, "detach_vm", c.detach_vm);
  read(j, "box_hidden", c.box_hidden);
  read(j, "size_hidden", c.size_hidden);
  read(j, "focal", c.focal);
  read(j, "body_depth_range", c.body_depth_range);
  read(j, "hand_depth_range", c.hand_depth_range);
  read(j, "nominal_depth", c.nominal_depth);
  read(j, "nominal_box_size", c.nominal_box_size);
  read(j, "gt_box_prob", c.gt_box_prob);
  read(j, "head_gain", c.head_gain);
  read(j, "input_mean", c.input_mean);
  read(j, "input_std", c.input_std);
  c.validate();
  return c;
}

constexpr char kCkptMagic[8] = {'H', '4', 'W', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(ErrorKind::IOFailure, "truncated checkpoint " + what);
  return v;
}

}  // namespace

std::string config_to_json(const PipelineConfig& cfg) { return to_json(cfg).dump(2); }

PipelineConfig config_from_json(const std::string& text) {
  try {
    return from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::UnknownMode) throw Error(ErrorKind::ConfigError, e.what());
    throw;
  }
}

void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  os << config_to_json(cfg) << "\n";
  if (!os) throw Error(ErrorKind::IOFailure, "write failed: " + path.string());
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IOFailure, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

void save_checkpoint(const nn::Params& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::IOFailure, "cannot write " + path.string());
  os.write(kCkptMagic, sizeof kCkptMagic);
  put<std::uint32_t>(os, kCkptVersion);
  put<std::uint64_t>(os, params.size());
  for (const std::string& name : params.names()) {
    const Tensor& t = params.get(name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) put<std::int32_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw Error(ErrorKind::IOFailure, "write failed: " + path.string());
}

nn::Params load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::IOFailure, "cannot open " + path.string());
  char magic[sizeof kCkptMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
    throw Error(ErrorKind::IOFailure, path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, "header");
  if (version != kCkptVersion) throw Error(ErrorKind::IOFailure, "unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint64_t>(is, "header");
  nn::Params params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is, "entry");
    if (len > 4096) throw Error(ErrorKind::IOFailure, "corrupt checkpoint entry name");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error(ErrorKind::IOFailure, "truncated checkpoint entry");
    const auto rank = get<std::uint32_t>(is, name);
    if (rank > 8) throw Error(ErrorKind::IOFailure, "corrupt checkpoint rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto n = get<std::int32_t>(is, name);
      if (n < 0) throw Error(ErrorKind::IOFailure, "negative dimension in " + name);
      shape.push_back(n);
    }
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw Error(ErrorKind::IOFailure, "truncated checkpoint data for " + name);
    try {
      params.add(name, std::move(t));
    } catch (const Error& e) {
      throw Error(ErrorKind::IOFailure, std::string("corrupt checkpoint: ") + e.what());
    }
  }
  return params;
}

}  // namespace h4w
