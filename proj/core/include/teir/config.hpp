#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "teir/synth_bench.hpp"

namespace teir {

// Flat "key = value" configuration with dotted section names
// (loss.tau, optim.lr, ...). '#' starts a comment.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<string>");
  static Config from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void erase(const std::string& key) { values_.erase(key); }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Sorted "key = value" lines; parse(to_text()) reproduces the config.
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Reads data.* keys (or bare keys with an empty prefix) over the defaults.
BenchConfig bench_config_from(const Config& cfg, const std::string& prefix = "data.");
void store_bench_config(const BenchConfig& bench, Config& cfg,
                        const std::string& prefix = "data.");

}  // namespace teir
