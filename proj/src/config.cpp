#include "ucrn/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ucrn {

namespace {

// every known key with its default; toy-scale settings sized so the whole
// pipeline reproduces on a single core in minutes
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"output_root", "out"},
      {"dataset.documents", "2048"},
      {"dataset.train_examples", "4096"},
      {"dataset.test_examples", "512"},
      {"dataset.golden_examples", "128"},
      {"dataset.seed", "1234"},
      {"lm.layers", "2"},
      {"lm.d_model", "64"},
      {"lm.heads", "4"},
      {"lm.max_sequence", "96"},
      {"lm.ff_hidden", "128"},
      {"lm.tiles", "4"},
      {"lm.adapter_hidden", "128"},
      {"lm.seed", "7"},
      {"pretrain.epochs", "30"},
      {"pretrain.lr", "3e-4"},
      {"pretrain.batch", "32"},
      {"pretrain.doc_mix", "0.5"},
      {"pretrain.tile_fidelity", "0.6"},
      {"pretrain.seed", "11"},
      {"encoder.dim", "32"},
      {"encoder.img_hidden", "64"},
      {"encoder.seed", "13"},
      {"encoders_pretrain.epochs", "12"},
      {"encoders_pretrain.lr", "1e-3"},
      {"encoders_pretrain.batch", "64"},
      {"encoders_pretrain.seed", "17"},
      {"retriever.adapter_hidden", "128"},
      {"retriever.seed", "19"},
      {"stage1.epochs", "10"},
      {"stage1.lr", "1e-3"},
      {"stage1.batch", "64"},
      {"stage1.seed", "23"},
      {"stage2.epochs", "20"},
      {"stage2.lr", "3e-4"},
      {"stage2.batch", "64"},
      {"stage2.seed", "29"},
      {"adapter.epochs", "10"},
      {"adapter.lr", "1e-3"},
      {"adapter.batch", "32"},
      {"adapter.seed", "31"},
      {"adapter.condition", "gold"},
      {"generate.max_new_tokens", "28"},
      {"eval.k_values", "1,5,10"},
  };
  return d;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config::Config() : values_(defaults()) {}

void Config::check_known(const std::string& key, const std::string& origin) const {
  if (defaults().find(key) == defaults().end())
    throw ConfigError(origin + ": unknown configuration key '" + key + "'");
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    check_known(key, path + ":" + std::to_string(lineno));
    if (value.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty value for '" + key + "'");
    values_[key] = value;
  }
}

void Config::set(const std::string& key, const std::string& value) {
  check_known(key, "--set");
  if (value.empty()) throw ConfigError("--set: empty value for '" + key + "'");
  values_[key] = value;
}

void Config::apply_environment() {
  if (const char* root = std::getenv("UCRN_OUTPUT_ROOT"); root != nullptr && *root != '\0')
    values_["output_root"] = root;
}

const std::string& Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown configuration key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  const std::string& v = get_string(key);
  try {
    std::size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

double Config::get_double(const std::string& key) const {
  const std::string& v = get_string(key);
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + v + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& v = get_string(key);
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string& v = get_string(key);
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stoi(part, &pos));
      if (pos != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' has non-integer list element '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' has an empty list value");
  return out;
}

}  // namespace ucrn
