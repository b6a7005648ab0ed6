#include "stackgen/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include "stackgen/error.hpp"

namespace stackgen {

namespace {

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' has invalid numeric value '" + v + "'");
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' has invalid integer value '" + v + "'");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "stage") cfg.stage = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "decay_factor") cfg.decay_factor = parse_double(key, value);
    else if (key == "decay_every") cfg.decay_every = static_cast<int>(parse_int(key, value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "image_size") cfg.image_size = static_cast<int>(parse_int(key, value));
    else if (key == "cond_dim") cfg.cond_dim = static_cast<int>(parse_int(key, value));
    else if (key == "latent_dim") cfg.latent_dim = static_cast<int>(parse_int(key, value));
    else if (key == "embed_dim") cfg.embed_dim = static_cast<int>(parse_int(key, value));
    else if (key == "lambda") cfg.lambda = parse_double(key, value);
    else if (key == "base_channels") cfg.base_channels = static_cast<int>(parse_int(key, value));
    else if (key == "gen_base") cfg.gen_base = static_cast<int>(parse_int(key, value));
    else if (key == "n_down") cfg.n_down = static_cast<int>(parse_int(key, value));
    else if (key == "checkpoint_every")
      cfg.checkpoint_every = static_cast<int>(parse_int(key, value));
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "stage1_ckpt") cfg.stage1_ckpt = value;
    else
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file '" + path + "': cannot open");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "stage=" << cfg.stage << "\n";
  os << "epochs=" << cfg.epochs << "\n";
  os << "batch_size=" << cfg.batch_size << "\n";
  os << "lr=" << format_double(cfg.lr) << "\n";
  os << "decay_factor=" << format_double(cfg.decay_factor) << "\n";
  os << "decay_every=" << cfg.decay_every << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "image_size=" << cfg.image_size << "\n";
  os << "cond_dim=" << cfg.cond_dim << "\n";
  os << "latent_dim=" << cfg.latent_dim << "\n";
  os << "embed_dim=" << cfg.embed_dim << "\n";
  os << "lambda=" << format_double(cfg.lambda) << "\n";
  os << "base_channels=" << cfg.base_channels << "\n";
  os << "gen_base=" << cfg.gen_base << "\n";
  os << "n_down=" << cfg.n_down << "\n";
  os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  os << "data_dir=" << cfg.data_dir << "\n";
  os << "out_dir=" << cfg.out_dir << "\n";
  os << "stage1_ckpt=" << cfg.stage1_ckpt << "\n";
  return os.str();
}

TrainConfig resolve_config(TrainConfig cfg) {
  if (cfg.stage != 1 && cfg.stage != 2)
    throw ConfigError("config: stage must be 1 or 2, got " + std::to_string(cfg.stage));
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || cfg.image_size <= 0 || cfg.cond_dim <= 0 ||
      cfg.latent_dim <= 0 || cfg.decay_every <= 0 || cfg.checkpoint_every <= 0)
    throw ConfigError("config: all counts and dimensions must be positive");
  if (cfg.lr == 0.0) cfg.lr = cfg.stage == 1 ? 2e-4 : 2e-3;
  if (cfg.lr < 0.0) throw ConfigError("config: lr must be positive");
  if (cfg.decay_factor <= 0.0 || cfg.decay_factor > 1.0)
    throw ConfigError("config: decay_factor must be in (0, 1]");
  const bool large = cfg.image_size >= 64;
  if (cfg.base_channels == 0) cfg.base_channels = large ? 64 : 16;
  if (cfg.gen_base == 0) cfg.gen_base = large ? 64 : 16;
  if (cfg.n_down == 0) cfg.n_down = large ? 3 : 1;
  return cfg;
}

}  // namespace stackgen
