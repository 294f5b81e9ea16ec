#include "teir/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "teir/error.hpp"

namespace teir {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError(source, lineno, "empty key");
    cfg.values_[key] = trim(std::string_view(t).substr(eq + 1));
    if (end == text.size()) break;
  }
  return cfg;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError(key, "expected a number, got '" + it->second + "'");
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key, "expected on/off, got '" + s + "'");
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void Config::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text();
}

BenchConfig bench_config_from(const Config& cfg, const std::string& p) {
  BenchConfig b;
  b.n_concepts = cfg.get_size(p + "n_concepts", b.n_concepts);
  b.n_languages = cfg.get_size(p + "n_languages", b.n_languages);
  b.n_train = cfg.get_size(p + "n_train", b.n_train);
  b.n_val = cfg.get_size(p + "n_val", b.n_val);
  b.n_test = cfg.get_size(p + "n_test", b.n_test);
  b.concepts_per_image = cfg.get_size(p + "concepts_per_image", b.concepts_per_image);
  b.out_dim = cfg.get_size(p + "out_dim", b.out_dim);
  b.overlap = cfg.get_double(p + "overlap", b.overlap);
  b.alphabet_size = cfg.get_size(p + "alphabet_size", b.alphabet_size);
  b.shared_alphabet = cfg.get_bool(p + "shared_alphabet", b.shared_alphabet);
  b.function_words = cfg.get_size(p + "function_words", b.function_words);
  b.word_len_min = cfg.get_size(p + "word_len_min", b.word_len_min);
  b.word_len_max = cfg.get_size(p + "word_len_max", b.word_len_max);
  b.image_noise = cfg.get_double(p + "image_noise", b.image_noise);
  b.seed = cfg.get_u64(p + "seed", b.seed);
  try {
    b.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(p + e.key(), e.detail());
  }
  return b;
}

void store_bench_config(const BenchConfig& b, Config& cfg, const std::string& p) {
  auto num = [](double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
  };
  cfg.set(p + "n_concepts", std::to_string(b.n_concepts));
  cfg.set(p + "n_languages", std::to_string(b.n_languages));
  cfg.set(p + "n_train", std::to_string(b.n_train));
  cfg.set(p + "n_val", std::to_string(b.n_val));
  cfg.set(p + "n_test", std::to_string(b.n_test));
  cfg.set(p + "concepts_per_image", std::to_string(b.concepts_per_image));
  cfg.set(p + "out_dim", std::to_string(b.out_dim));
  cfg.set(p + "overlap", num(b.overlap));
  cfg.set(p + "alphabet_size", std::to_string(b.alphabet_size));
  cfg.set(p + "shared_alphabet", b.shared_alphabet ? "on" : "off");
  cfg.set(p + "function_words", std::to_string(b.function_words));
  cfg.set(p + "word_len_min", std::to_string(b.word_len_min));
  cfg.set(p + "word_len_max", std::to_string(b.word_len_max));
  cfg.set(p + "image_noise", num(b.image_noise));
  cfg.set(p + "seed", std::to_string(b.seed));
}

}  // namespace teir
