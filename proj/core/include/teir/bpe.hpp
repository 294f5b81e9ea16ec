#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace teir {

using TokenId = std::uint32_t;

inline constexpr std::size_t kByteTokens = 256;

struct MergeRule {
  TokenId left = 0;
  TokenId right = 0;
  TokenId result = 0;
  std::uint32_t task_index = 0;
  std::uint32_t rank = 0;  // lower merges earlier within a task

  bool operator==(const MergeRule&) const = default;
};

// Per-task byte-level vocabulary. tokens[0..256) are the single bytes; ids
// are local to this vocab until it is merged into a VocabState.
struct TaskVocab {
  std::uint32_t task_index = 0;
  std::vector<std::string> tokens;
  std::vector<MergeRule> rules;
};

// Greedy byte-level BPE with at most target_size - 257 merges (one slot is
// reserved). Words are whitespace-delimited, so no merge ever spans a
// whitespace byte. Ties on pair frequency go to the lexicographically smaller
// (left bytes, right bytes) pair; training stops when the most frequent pair
// occurs fewer than two times.
TaskVocab train_bpe(std::span<const std::string> corpus,
                    std::size_t target_size, std::uint32_t task_index);

// The 256 single-byte tokens and nothing else.
TaskVocab byte_vocab(std::uint32_t task_index = 0);

// A set of merge rules over a token table, applied in (task_index, rank)
// order. Built from a single TaskVocab or from a merged multi-task view.
class EncodingScope {
 public:
  EncodingScope(std::vector<std::string> tokens, std::vector<MergeRule> rules);

  static EncodingScope from_task_vocab(const TaskVocab& vocab);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<MergeRule>& rules() const { return rules_; }

 private:
  struct Entry {
    std::uint64_t priority;
    TokenId result;
  };

  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::vector<MergeRule> rules_;
  std::unordered_map<std::uint64_t, Entry> pairs_;
  bool rules_span_whitespace_ = false;
};

inline std::vector<TokenId> encode(std::string_view text,
                                   const EncodingScope& scope) {
  return scope.encode(text);
}
inline std::string decode(std::span<const TokenId> ids,
                          const EncodingScope& scope) {
  return scope.decode(ids);
}

bool is_space_byte(unsigned char c);

// Vocab file: one quoted token per line, non-printable bytes as \xHH.
std::string quote_token(std::string_view token);
std::string unquote_token(std::string_view quoted);
void write_vocab_file(const std::filesystem::path& path,
                      std::span<const std::string> tokens);
std::vector<std::string> read_vocab_file(const std::filesystem::path& path);

// Merge file: "task_index rank left_id right_id result_id" per line.
void write_merge_file(const std::filesystem::path& path,
                      std::span<const MergeRule> rules);
std::vector<MergeRule> read_merge_file(const std::filesystem::path& path);

}  // namespace teir
