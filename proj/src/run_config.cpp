#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

#include "physattn/cli.hpp"
#include "physattn/error.hpp"

namespace physattn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field count_field(const std::string& key, Member member) {
  return {[key, member](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_count(key, v); },
          [member](const RunConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field real_field(const std::string& key, Member member) {
  return {[key, member](RunConfig& c, const std::string& v) { std::invoke(member, c) = parse_real(key, v); },
          [member](const RunConfig& c) { return real_text(std::invoke(member, c)); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const std::string& key, Field f) { t.emplace_back(key, std::move(f)); };
    add("layers", count_field("layers", [](auto& c) -> auto& { return c.model.layers; }));
    add("channels", count_field("channels", [](auto& c) -> auto& { return c.model.channels; }));
    add("heads", count_field("heads", [](auto& c) -> auto& { return c.model.heads; }));
    add("slices", count_field("slices", [](auto& c) -> auto& { return c.model.slices; }));
    add("geometry_dim", count_field("geometry_dim", [](auto& c) -> auto& { return c.model.geometry_dim; }));
    add("observed_dim", count_field("observed_dim", [](auto& c) -> auto& { return c.model.observed_dim; }));
    add("output_dim", count_field("output_dim", [](auto& c) -> auto& { return c.model.output_dim; }));
    add("projector", {[](RunConfig& c, const std::string& v) {
                        if (v == "pointwise") c.model.projector = ProjectorKind::pointwise;
                        else if (v == "stencil3x3") c.model.projector = ProjectorKind::stencil3x3;
                        else throw ConfigError("config key 'projector': expected pointwise or stencil3x3, got '" + v + "'");
                      },
                      [](const RunConfig& c) {
                        return std::string(c.model.projector == ProjectorKind::pointwise ? "pointwise" : "stencil3x3");
                      }});
    add("ffn_multiplier", count_field("ffn_multiplier", [](auto& c) -> auto& { return c.model.ffn_multiplier; }));
    add("slice_mode", {[](RunConfig& c, const std::string& v) {
                         if (v == "learned") c.model.slice_mode = SliceMode::learned;
                         else if (v == "regular_squares") c.model.slice_mode = SliceMode::regular_squares;
                         else throw ConfigError("config key 'slice_mode': expected learned or regular_squares, got '" + v + "'");
                       },
                       [](const RunConfig& c) {
                         return std::string(c.model.slice_mode == SliceMode::learned ? "learned" : "regular_squares");
                       }});
    add("square_side", count_field("square_side", [](auto& c) -> auto& { return c.model.square_side; }));
    add("epochs", count_field("epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    add("lr", real_field("lr", [](auto& c) -> auto& { return c.train.lr; }));
    add("weight_decay", real_field("weight_decay", [](auto& c) -> auto& { return c.train.weight_decay; }));
    add("batch_size", count_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    add("lr_schedule", {[](RunConfig& c, const std::string& v) {
                          if (v == "cosine") c.train.schedule = LrSchedule::cosine;
                          else if (v == "constant") c.train.schedule = LrSchedule::constant;
                          else throw ConfigError("config key 'lr_schedule': expected cosine or constant, got '" + v + "'");
                        },
                        [](const RunConfig& c) {
                          return std::string(c.train.schedule == LrSchedule::cosine ? "cosine" : "constant");
                        }});
    add("grad_reg_weight", real_field("grad_reg_weight", [](auto& c) -> auto& { return c.train.grad_reg_weight; }));
    add("seed", {[](RunConfig& c, const std::string& v) { c.train.seed = parse_count("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    add("eval_every", count_field("eval_every", [](auto& c) -> auto& { return c.train.eval_every; }));
    add("grad_clip", {[](RunConfig& c, const std::string& v) { c.train.grad_clip = parse_bool("grad_clip", v); },
                      [](const RunConfig& c) { return std::string(c.train.grad_clip ? "true" : "false"); }});
    add("clip_threshold", real_field("clip_threshold", [](auto& c) -> auto& { return c.train.clip_threshold; }));
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_stream(RunConfig& config, std::istream& is, const std::string& source) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  apply_config_stream(config, is, path);
}

void write_run_config(std::ostream& os, const RunConfig& config) {
  for (const auto& [name, f] : fields()) os << name << " = " << f.get(config) << '\n';
}

}  // namespace physattn
