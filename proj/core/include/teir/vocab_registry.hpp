#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "teir/bpe.hpp"

namespace teir {

// Union vocabulary across tasks. Token ids are stable: the token list only
// ever grows at the end.
struct VocabState {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, TokenId> id_of;
  // Merge rules of each task in global ids.
  std::vector<std::vector<MergeRule>> per_task_rules;
  // The ids of each task's own vocab (V-hat) in global ids, in task order.
  std::vector<std::vector<TokenId>> per_task_tokens;
  int current_task = -1;
  // Oracle mode: one vocab built up front, per_task_rules[0] is used for
  // every task and per_task_tokens records which ids each task activates.
  bool oracle = false;

  std::size_t size() const { return tokens.size(); }

  // Scope with the rules of a single task; texts are always encoded with the
  // rules of the task they belong to.
  EncodingScope scope_for_task(std::size_t task) const;
  // Scope with the rules of tasks 0..last_task, in (task, rank) priority.
  EncodingScope merged_scope(std::size_t last_task) const;
};

// Ids of V_t split against the previous vocab and the current task vocab.
struct Partition {
  std::vector<TokenId> old_ids;      // V_{t-1} \ V-hat_t
  std::vector<TokenId> overlap_ids;  // V_{t-1} ∩ V-hat_t
  std::vector<TokenId> new_ids;      // V-hat_t \ V_{t-1}

  std::size_t total() const {
    return old_ids.size() + overlap_ids.size() + new_ids.size();
  }
};

// c_t: the number of task vocabs that contained each token so far.
struct TokenCounts {
  std::vector<std::uint32_t> counts;
};

struct LambdaVector {
  std::vector<double> lambda;
};

// V_t = V_{t-1} ∪ V-hat_t with new tokens appended in task-vocab order.
std::pair<VocabState, Partition> merge_vocab(const VocabState& state,
                                             const TaskVocab& task_vocab);

// Oracle mode: install one vocab for the whole sequence as task 0, which
// activates `task0_active` (see active_ids).
std::pair<VocabState, Partition> install_oracle_vocab(
    const TaskVocab& oracle, std::span<const TokenId> task0_active);

// Oracle mode, tasks >= 1: `active` lists the oracle ids the task's corpus
// uses. Ids seen in no earlier task count as new; ids never seen and not
// active land in old (their rows have never been trained).
std::pair<VocabState, Partition> activate_oracle_task(
    const VocabState& state, std::span<const TokenId> active);

// Ids the oracle vocab produces when encoding a corpus, plus all bytes.
std::vector<TokenId> active_ids(const EncodingScope& scope,
                                std::span<const std::string> corpus);

// Increments counts for every id of the finished task's vocab; ids seen for
// the first time enter with count 1.
TokenCounts update_counts(const TokenCounts& counts,
                          std::span<const TokenId> task_ids);

// 0 for old ids, 1/(c+1) for overlap ids, 1 for new ids.
LambdaVector lambda_for(const Partition& partition, const TokenCounts& counts);

LambdaVector all_ones(std::size_t n);

struct RegistryManifestEntry {
  std::uint32_t task_index = 0;
  std::size_t vocab_before = 0;
  std::size_t vocab_after = 0;
  std::size_t old_count = 0;
  std::size_t overlap_count = 0;
  std::size_t new_count = 0;
  std::vector<std::uint32_t> counts;  // c after the task finished
};

void write_registry_manifest(const std::filesystem::path& path,
                             std::span<const RegistryManifestEntry> entries);
std::vector<RegistryManifestEntry> read_registry_manifest(
    const std::filesystem::path& path);

// Vocab + merge files for a whole registry, and the reverse.
void save_vocab_state(const VocabState& state, const std::filesystem::path& dir);
VocabState load_vocab_state(const std::filesystem::path& dir);

std::uint64_t vocab_hash(std::span<const std::string> tokens);

}  // namespace teir
