#include "geomem/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "geomem/rng.hpp"

namespace geomem {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

enum class Kind { Int, Double, U64, Bool, Str };

struct Field {
  const char* section;
  const char* key;
  Kind kind;
  void* ptr;
};

std::vector<Field> fields(ExperimentConfig& c) {
  return {
      {"dims", "h", Kind::Int, &c.dims.h},
      {"dims", "w", Kind::Int, &c.dims.w},
      {"dims", "patch", Kind::Int, &c.dims.patch},
      {"dims", "c", Kind::Int, &c.dims.c},
      {"dims", "c_g", Kind::Int, &c.dims.c_g},
      {"dims", "c_v", Kind::Int, &c.dims.c_v},
      {"dims", "frames", Kind::Int, &c.dims.frames},
      {"dims", "bands", Kind::Int, &c.dims.bands},
      {"dims", "pos_norm", Kind::Double, &c.dims.pos_norm},
      {"memory", "working_capacity", Kind::Int, &c.memory.working_capacity},
      {"memory", "episodic_capacity", Kind::Int, &c.memory.episodic_capacity},
      {"memory", "episodic_similarity", Kind::Str, &c.memory.episodic_similarity},
      {"train", "steps", Kind::Int, &c.train.steps},
      {"train", "lr", Kind::Double, &c.train.lr},
      {"train", "weight_decay", Kind::Double, &c.train.weight_decay},
      {"train", "beta1", Kind::Double, &c.train.beta1},
      {"train", "beta2", Kind::Double, &c.train.beta2},
      {"train", "clip_norm", Kind::Double, &c.train.clip_norm},
      {"train", "lr_schedule", Kind::Str, &c.train.lr_schedule},
      {"train", "eval_interval", Kind::Int, &c.train.eval_interval},
      {"train", "precision", Kind::Int, &c.train.precision},
      {"train", "seed", Kind::U64, &c.train.seed},
      {"data", "episodes", Kind::Int, &c.data.episodes},
      {"data", "noise", Kind::Double, &c.data.noise},
      {"data", "objects_min", Kind::Int, &c.data.objects_min},
      {"data", "objects_max", Kind::Int, &c.data.objects_max},
      {"data", "room_min", Kind::Double, &c.data.room_min},
      {"data", "room_max", Kind::Double, &c.data.room_max},
      {"data", "vocab", Kind::Int, &c.data.vocab},
      {"data", "qa_per_episode", Kind::Int, &c.data.qa_per_episode},
      {"data", "seed", Kind::U64, &c.data.seed},
      {"data", "vocab_seed", Kind::U64, &c.data.vocab_seed},
      {"ablation", "rep3d", Kind::Bool, &c.ablation.rep3d},
      {"ablation", "injection", Kind::Str, &c.ablation.injection},
      {"ablation", "working_memory", Kind::Bool, &c.ablation.working_memory},
      {"ablation", "episodic_memory", Kind::Bool, &c.ablation.episodic_memory},
      {"ablation", "fusion", Kind::Str, &c.ablation.fusion},
  };
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void set_field(const Field& f, const std::string& raw, int line_no) {
  const std::string where =
      "[" + std::string(f.section) + "] " + f.key + " (line " + std::to_string(line_no) + ")";
  try {
    switch (f.kind) {
      case Kind::Int:
        *static_cast<int*>(f.ptr) = std::stoi(raw);
        break;
      case Kind::Double:
        *static_cast<double*>(f.ptr) = std::stod(raw);
        break;
      case Kind::U64:
        *static_cast<std::uint64_t*>(f.ptr) = std::stoull(raw);
        break;
      case Kind::Bool: {
        bool* b = static_cast<bool*>(f.ptr);
        if (raw == "on" || raw == "true" || raw == "1")
          *b = true;
        else if (raw == "off" || raw == "false" || raw == "0")
          *b = false;
        else
          throw ConfigError("expected on/off for " + where + ", got '" + raw + "'");
        break;
      }
      case Kind::Str:
        *static_cast<std::string*>(f.ptr) = raw;
        break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse value '" + raw + "' for " + where);
  }
}

std::string get_field(const Field& f) {
  switch (f.kind) {
    case Kind::Int:
      return std::to_string(*static_cast<int*>(f.ptr));
    case Kind::Double:
      return format_double(*static_cast<double*>(f.ptr));
    case Kind::U64:
      return std::to_string(*static_cast<std::uint64_t*>(f.ptr));
    case Kind::Bool:
      return *static_cast<bool*>(f.ptr) ? "on" : "off";
    case Kind::Str:
      return *static_cast<std::string*>(f.ptr);
  }
  return "";
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  auto fs = fields(cfg);
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(line_no));
      section = line.substr(1, line.size() - 2);
      bool known = false;
      for (auto& f : fs)
        if (section == f.section) known = true;
      if (!known) throw ConfigError("unknown section [" + section + "] at line " + std::to_string(line_no));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const Field* match = nullptr;
    for (auto& f : fs)
      if (section == f.section && key == f.key) match = &f;
    if (!match)
      throw ConfigError("unknown key '" + key + "' in section [" + section + "] at line " +
                        std::to_string(line_no));
    set_field(*match, val, line_no);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::serialize() const {
  auto& self = const_cast<ExperimentConfig&>(*this);
  auto fs = fields(self);
  std::ostringstream out;
  std::string section;
  for (auto& f : fs) {
    if (section != f.section) {
      if (!section.empty()) out << "\n";
      section = f.section;
      out << "[" << section << "]\n";
    }
    out << f.key << " = " << get_field(f) << "\n";
  }
  return out.str();
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string s = serialize();
  return fnv1a(s.data(), s.size());
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(dims.h >= 1 && dims.w >= 1 && dims.patch >= 1, "[dims] extents must be >= 1");
  require(dims.c >= 1 && dims.c_g >= 1 && dims.c_v >= 1, "[dims] channel counts must be >= 1");
  require(dims.frames >= 1, "[dims] frames must be >= 1");
  require(dims.bands >= 1, "[dims] bands must be >= 1");
  require(dims.pos_norm > 0, "[dims] pos_norm must be positive");
  require(memory.working_capacity >= 1 || !ablation.working_memory,
          "[memory] working_capacity must be >= 1 when working memory is enabled");
  require(memory.episodic_capacity >= 1 || !ablation.episodic_memory,
          "[memory] episodic_capacity must be >= 1 when episodic memory is enabled");
  require(memory.episodic_similarity == "pooled" || memory.episodic_similarity == "flat",
          "[memory] episodic_similarity must be pooled or flat");
  require(train.precision == 64 || train.precision == 32, "[train] precision must be 64 or 32");
  require(train.steps >= 0, "[train] steps must be >= 0");
  require(data.objects_min >= 1 && data.objects_max >= data.objects_min,
          "[data] object count range invalid");
  require(data.room_min > 0 && data.room_max >= data.room_min, "[data] room size range invalid");
  require(data.vocab >= 2, "[data] vocab must be >= 2");
  require(ablation.injection == "adaptive" || ablation.injection == "uniform" ||
              ablation.injection == "off",
          "[ablation] injection must be adaptive, uniform, or off");
  require(ablation.fusion == "cross_attn" || ablation.fusion == "concat_mlp" ||
              ablation.fusion == "add",
          "[ablation] fusion must be cross_attn, concat_mlp, or add");
}

}  // namespace geomem
