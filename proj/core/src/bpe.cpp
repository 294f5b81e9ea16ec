#include "teir/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "teir/error.hpp"

namespace teir {
namespace {

std::uint64_t pair_key(TokenId left, TokenId right) {
  return (static_cast<std::uint64_t>(left) << 32) | right;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space_byte(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space_byte(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

struct Word {
  std::vector<TokenId> symbols;
  std::int64_t freq;
};

void apply_merge(std::vector<TokenId>& symbols, TokenId left, TokenId right,
                 TokenId result) {
  std::size_t out = 0;
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      symbols[out++] = result;
      i += 2;
    } else {
      symbols[out++] = symbols[i++];
    }
  }
  symbols.resize(out);
}

}  // namespace

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

TaskVocab byte_vocab(std::uint32_t task_index) {
  TaskVocab vocab;
  vocab.task_index = task_index;
  vocab.tokens.reserve(kByteTokens);
  for (std::size_t b = 0; b < kByteTokens; ++b) {
    vocab.tokens.emplace_back(1, static_cast<char>(b));
  }
  return vocab;
}

TaskVocab train_bpe(std::span<const std::string> corpus, std::size_t target_size,
                    std::uint32_t task_index) {
  if (corpus.empty()) throw InvalidInput("train_bpe: empty corpus");
  if (target_size < kByteTokens + 1) {
    throw InvalidInput("train_bpe: target_size must be >= 257, got " +
                       std::to_string(target_size));
  }

  TaskVocab vocab = byte_vocab(task_index);
  std::unordered_map<std::string, TokenId> id_of;
  for (TokenId b = 0; b < kByteTokens; ++b) id_of.emplace(vocab.tokens[b], b);

  std::map<std::string, std::int64_t> word_freq;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++word_freq[std::move(w)];
  }
  std::vector<Word> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    for (unsigned char c : w) word.symbols.push_back(c);
    words.push_back(std::move(word));
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  // One slot of the target stays reserved (an end-of-text marker in CLIP-style
  // vocabularies), so a target of 257 admits no merges.
  while (vocab.tokens.size() + 1 < target_size) {
    counts.clear();
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        counts[pair_key(w.symbols[i], w.symbols[i + 1])] += w.freq;
      }
    }
    std::uint64_t best = 0;
    std::int64_t best_count = 0;
    for (const auto& [key, count] : counts) {
      if (count < best_count) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      const auto& bl = vocab.tokens[best >> 32];
      const auto& br = vocab.tokens[best & 0xFFFFFFFFu];
      const auto& kl = vocab.tokens[key >> 32];
      const auto& kr = vocab.tokens[key & 0xFFFFFFFFu];
      if (std::tie(kl, kr) < std::tie(bl, br)) best = key;
    }
    if (best_count < 2) break;

    const auto left = static_cast<TokenId>(best >> 32);
    const auto right = static_cast<TokenId>(best & 0xFFFFFFFFu);
    std::string merged = vocab.tokens[left] + vocab.tokens[right];
    TokenId result;
    if (auto it = id_of.find(merged); it != id_of.end()) {
      // Same bytes already reachable through another pair.
      result = it->second;
    } else {
      result = static_cast<TokenId>(vocab.tokens.size());
      id_of.emplace(merged, result);
      vocab.tokens.push_back(std::move(merged));
    }
    vocab.rules.push_back({left, right, result, task_index,
                           static_cast<std::uint32_t>(vocab.rules.size())});
    for (auto& w : words) apply_merge(w.symbols, left, right, result);
  }
  return vocab;
}

EncodingScope::EncodingScope(std::vector<std::string> tokens,
                             std::vector<MergeRule> rules)
    : tokens_(std::move(tokens)), rules_(std::move(rules)) {
  std::stable_sort(rules_.begin(), rules_.end(),
                   [](const MergeRule& a, const MergeRule& b) {
                     return std::tie(a.task_index, a.rank) <
                            std::tie(b.task_index, b.rank);
                   });
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& r = rules_[i];
    if (r.left >= tokens_.size() || r.right >= tokens_.size() ||
        r.result >= tokens_.size()) {
      throw InvalidId(std::max({r.left, r.right, r.result}),
                      "merge rule references a token outside the scope");
    }
    // First (highest-priority) rule for a pair wins.
    pairs_.try_emplace(pair_key(r.left, r.right), Entry{i, r.result});
    for (TokenId side : {r.left, r.right}) {
      for (unsigned char c : tokens_[side]) {
        if (is_space_byte(c)) rules_span_whitespace_ = true;
      }
    }
  }
}

EncodingScope EncodingScope::from_task_vocab(const TaskVocab& vocab) {
  return EncodingScope(vocab.tokens, vocab.rules);
}

void EncodingScope::encode_chunk(std::string_view chunk,
                                 std::vector<TokenId>& out) const {
  std::vector<TokenId> symbols(chunk.size());
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    symbols[i] = static_cast<unsigned char>(chunk[i]);
  }
  while (symbols.size() > 1) {
    const Entry* best = nullptr;
    TokenId left = 0, right = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = pairs_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != pairs_.end() && (!best || it->second.priority < best->priority)) {
        best = &it->second;
        left = symbols[i];
        right = symbols[i + 1];
      }
    }
    if (!best) break;
    apply_merge(symbols, left, right, best->result);
  }
  out.insert(out.end(), symbols.begin(), symbols.end());
}

std::vector<TokenId> EncodingScope::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  if (rules_span_whitespace_) {
    encode_chunk(text, out);
    return out;
  }
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space_byte(static_cast<unsigned char>(text[i]))) {
      out.push_back(static_cast<unsigned char>(text[i++]));
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space_byte(static_cast<unsigned char>(text[j]))) ++j;
    encode_chunk(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string EncodingScope::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id >= tokens_.size()) throw InvalidId(id, "decode");
    out += tokens_[id];
  }
  return out;
}

std::string quote_token(std::string_view token) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out = "\"";
  for (unsigned char c : token) {
    if (c >= 0x20 && c < 0x7F && c != '"' && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  out.push_back('"');
  return out;
}

std::string unquote_token(std::string_view quoted) {
  if (quoted.size() < 2 || quoted.front() != '"' || quoted.back() != '"') {
    throw FormatError("token is not a quoted string: " + std::string(quoted));
  }
  auto hex = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw FormatError("bad hex digit in token " + std::string(quoted));
  };
  std::string out;
  for (std::size_t i = 1; i + 1 < quoted.size(); ++i) {
    if (quoted[i] != '\\') {
      out.push_back(quoted[i]);
      continue;
    }
    if (i + 1 < quoted.size() - 1 && (quoted[i + 1] == '"' || quoted[i + 1] == '\\')) {
      out.push_back(quoted[++i]);
    } else if (i + 3 < quoted.size() && quoted[i + 1] == 'x') {
      out.push_back(static_cast<char>(hex(quoted[i + 2]) * 16 + hex(quoted[i + 3])));
      i += 3;
    } else {
      throw FormatError("bad escape in token " + std::string(quoted));
    }
  }
  return out;
}

void write_vocab_file(const std::filesystem::path& path,
                      std::span<const std::string> tokens) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens) out << quote_token(t) << '\n';
}

std::vector<std::string> read_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      tokens.push_back(unquote_token(line));
    } catch (const FormatError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return tokens;
}

void write_merge_file(const std::filesystem::path& path,
                      std::span<const MergeRule> rules) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rules) {
    out << r.task_index << ' ' << r.rank << ' ' << r.left << ' ' << r.right << ' '
        << r.result << '\n';
  }
}

std::vector<MergeRule> read_merge_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<MergeRule> rules;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    MergeRule r;
    std::string extra;
    if (!(fields >> r.task_index >> r.rank >> r.left >> r.right >> r.result) ||
        (fields >> extra)) {
      throw ParseError(path.string(), lineno, "expected 5 integer fields");
    }
    rules.push_back(r);
  }
  return rules;
}

}  // namespace teir
