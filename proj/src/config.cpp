#include "clothfit/config.hpp"

#include <charconv>
#include <fstream>
#include <variant>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "clothfit/error.hpp"

namespace clothfit {

namespace {

using Slot = std::variant<int*, double*, bool*, std::uint64_t*, std::filesystem::path*>;

struct Entry {
  const char* section;
  const char* key;
  Slot slot;
};

std::vector<Entry> entries(RunConfig& c) {
  return {
      {"run", "seed", &c.seed},
      {"run", "width", &c.width},
      {"run", "height", &c.height},
      {"paths", "assets", &c.paths.assets},
      {"paths", "scene", &c.paths.scene},
      {"paths", "output", &c.paths.output},
      {"coarse", "lambda_coarse", &c.coarse.lambda_coarse},
      {"coarse", "lambda_sil", &c.coarse.lambda_sil},
      {"coarse", "lambda_temp", &c.coarse.lambda_temp},
      {"coarse", "lambda_reg", &c.coarse.lambda_reg},
      {"coarse", "first_iterations", &c.coarse.first_iterations},
      {"coarse", "warm_iterations", &c.coarse.warm_iterations},
      {"coarse", "step", &c.coarse.step},
      {"coarse", "max_step", &c.coarse.max_step},
      {"coarse", "damping", &c.coarse.damping},
      {"coarse", "sharpness", &c.coarse.sharpness},
      {"fine", "enabled", &c.fine.enabled},
      {"fine", "lambda_fine", &c.fine.lambda_fine},
      {"fine", "lambda_edge", &c.fine.lambda_edge},
      {"fine", "lambda_temp", &c.fine.lambda_temp},
      {"fine", "lambda_reg", &c.fine.lambda_reg},
      {"fine", "eta_min", &c.fine.eta_min},
      {"fine", "eta_max", &c.fine.eta_max},
      {"fine", "first_iterations", &c.fine.first_iterations},
      {"fine", "warm_iterations", &c.fine.warm_iterations},
      {"fine", "step", &c.fine.step},
      {"fine", "mask_sharpness", &c.fine.mask_sharpness},
      {"train", "epochs", &c.train.epochs},
      {"train", "batch_size", &c.train.batch_size},
      {"train", "lr_start", &c.train.lr_start},
      {"train", "lr_end", &c.train.lr_end},
      {"train", "weight_offset", &c.train.weights.offset},
      {"train", "weight_normal", &c.train.weights.normal},
      {"train", "slope", &c.train.slope},
      {"train", "dropout", &c.train.dropout},
      {"train", "pose_modes", &c.pose_modes},
      {"animate", "collide", &c.collide},
      {"animate", "collision_offset", &c.collision_offset},
      {"synth", "frames", &c.synth.frames},
      {"synth", "modes", &c.synth.modes},
      {"synth", "pose_amplitude", &c.synth.pose_amplitude},
      {"synth", "latent_gain", &c.synth.latent_gain},
      {"synth", "normal_noise", &c.synth.normal_noise},
      {"synth", "wrinkle_amplitude", &c.synth.wrinkle_amplitude},
      {"synth", "wrinkle_wavelength", &c.synth.wrinkle_wavelength},
      {"synth", "wrinkle_phase_per_frame", &c.synth.wrinkle_phase_per_frame},
  };
}

template <class T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

// Returns an error message, empty on success.
std::string assign(const Slot& slot, const std::string& raw) {
  const auto b = raw.find_first_not_of(" \t");
  const auto e = raw.find_last_not_of(" \t");
  const std::string text = b == std::string::npos ? std::string() : raw.substr(b, e - b + 1);
  return std::visit(
      [&text](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::filesystem::path>) {
          *p = text;
          return {};
        } else if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1" || text == "yes") {
            *p = true;
          } else if (text == "false" || text == "0" || text == "no") {
            *p = false;
          } else {
            return "expected true or false, got '" + text + "'";
          }
          return {};
        } else {
          T v{};
          if (!parse_number(text, v)) return "expected a number, got '" + text + "'";
          *p = v;
          return {};
        }
      },
      slot);
}

std::string format(const Slot& slot) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, std::filesystem::path>) {
          return p->string();
        } else if constexpr (std::is_same_v<T, bool>) {
          return *p ? "true" : "false";
        } else {
          char buf[64];
          const auto r = std::to_chars(buf, buf + sizeof buf, *p);
          return std::string(buf, r.ptr);
        }
      },
      slot);
}

}  // namespace

void RunConfig::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("run.width and run.height must be positive");
  coarse.validate();
  fine.validate();
  train.validate();
  if (pose_modes < 1) throw InvalidArgument("train.pose_modes must be positive");
  if (!(collision_offset >= 0)) throw InvalidArgument("animate.collision_offset must be >= 0");
  if (synth.frames < 1) throw InvalidArgument("synth.frames must be positive");
  if (synth.modes < 1) throw InvalidArgument("synth.modes must be positive");
  if (!(synth.pose_amplitude >= 0) || !(synth.normal_noise >= 0) || !(synth.wrinkle_amplitude >= 0)) {
    throw InvalidArgument("synth amplitudes and noise must be >= 0");
  }
  if (!(synth.wrinkle_wavelength > 0)) throw InvalidArgument("synth.wrinkle_wavelength must be positive");
}

std::vector<std::string> config_keys() {
  RunConfig c;
  std::vector<std::string> keys;
  for (const Entry& e : entries(c)) keys.push_back(std::string(e.section) + "." + e.key);
  return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const Entry& e : entries(config)) {
    if (key == std::string(e.section) + "." + e.key) {
      const std::string err = assign(e.slot, value);
      if (!err.empty()) throw InvalidArgument(key + ": " + err);
      return;
    }
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  if (!std::filesystem::exists(path)) throw ParseError(path.string(), 0, "config file not found");
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(path.string(), e.line(), e.message());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ParseError(path.string(), 0, "key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) {
      try {
        apply_setting(config, section + "." + key, value.data());
      } catch (const InvalidArgument& e) {
        throw ParseError(path.string(), 0, e.what());
      }
    }
  }
  return config;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  RunConfig copy = config;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  std::string section;
  for (const Entry& e : entries(copy)) {
    if (section != e.section) {
      out << (section.empty() ? "" : "\n") << "[" << e.section << "]\n";
      section = e.section;
    }
    out << e.key << " = " << format(e.slot) << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace clothfit
