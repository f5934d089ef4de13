#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace scpc::pipeline {

// Flat key=value run configuration. Keys come from a fixed registry;
// unknown keys are rejected on sight and every value is validated before a
// stage runs. The canonical form (sorted keys) feeds a 64-bit hash that is
// stamped into checkpoints and metric files; out_dir is excluded from the
// hash so relocating a run does not change its identity.
class RunConfig {
 public:
  RunConfig();  // registry defaults

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  bool get_bool(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;

  // key=value lines, '#' comments, later lines win.
  void load_text(const std::string& text, const std::string& origin);
  void load_file(const std::filesystem::path& path);

  std::string canonical_text(bool include_out_dir = true) const;
  std::string hash() const;

  // Full cross-field validation; throws std::invalid_argument.
  void validate() const;

  static std::string describe_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace scpc::pipeline
