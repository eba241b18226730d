#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ucrn {

// raised for malformed keys/values; the CLI maps it to the usage exit code
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat dotted-key configuration. Every key has a default; unknown keys are
// rejected by name so typos fail loudly.
class Config {
 public:
  Config();  // defaults only

  void load_file(const std::string& path);           // `key = value` lines, # comments
  void set(const std::string& key, const std::string& value);  // --set override
  void apply_environment();                          // UCRN_OUTPUT_ROOT

  const std::string& get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;  // comma-separated

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  void check_known(const std::string& key, const std::string& origin) const;
};

}  // namespace ucrn
