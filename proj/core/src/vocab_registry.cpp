#include "teir/vocab_registry.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "teir/error.hpp"

namespace teir {

EncodingScope VocabState::scope_for_task(std::size_t task) const {
  if (oracle) return EncodingScope(tokens, per_task_rules.at(0));
  if (task >= per_task_rules.size()) {
    throw StateError("no merge rules for task " + std::to_string(task));
  }
  return EncodingScope(tokens, per_task_rules[task]);
}

EncodingScope VocabState::merged_scope(std::size_t last_task) const {
  if (oracle) return EncodingScope(tokens, per_task_rules.at(0));
  std::vector<MergeRule> rules;
  for (std::size_t t = 0; t <= last_task && t < per_task_rules.size(); ++t) {
    rules.insert(rules.end(), per_task_rules[t].begin(), per_task_rules[t].end());
  }
  return EncodingScope(tokens, std::move(rules));
}

std::pair<VocabState, Partition> merge_vocab(const VocabState& state,
                                             const TaskVocab& task_vocab) {
  if (state.oracle) throw StateError("merge_vocab on an oracle-vocab registry");
  if (static_cast<int>(task_vocab.task_index) != state.current_task + 1) {
    throw StateError("merge_vocab: expected task " +
                     std::to_string(state.current_task + 1) + ", got " +
                     std::to_string(task_vocab.task_index));
  }
  VocabState next = state;
  const std::size_t before = state.tokens.size();
  std::vector<TokenId> local_to_global(task_vocab.tokens.size());
  std::vector<bool> in_task(before, false);
  Partition partition;
  for (std::size_t local = 0; local < task_vocab.tokens.size(); ++local) {
    const auto& tok = task_vocab.tokens[local];
    auto it = next.id_of.find(tok);
    TokenId global;
    if (it == next.id_of.end()) {
      global = static_cast<TokenId>(next.tokens.size());
      next.tokens.push_back(tok);
      next.id_of.emplace(tok, global);
      partition.new_ids.push_back(global);
    } else {
      global = it->second;
      if (global < before) in_task[global] = true;
    }
    local_to_global[local] = global;
  }
  for (TokenId id = 0; id < before; ++id) {
    (in_task[id] ? partition.overlap_ids : partition.old_ids).push_back(id);
  }

  std::vector<MergeRule> rules;
  rules.reserve(task_vocab.rules.size());
  for (const auto& r : task_vocab.rules) {
    if (r.left >= local_to_global.size() || r.right >= local_to_global.size() ||
        r.result >= local_to_global.size()) {
      throw InvalidId(std::max({r.left, r.right, r.result}), "task vocab rule");
    }
    rules.push_back({local_to_global[r.left], local_to_global[r.right],
                     local_to_global[r.result], task_vocab.task_index, r.rank});
  }
  next.per_task_rules.push_back(std::move(rules));
  next.per_task_tokens.push_back(std::move(local_to_global));
  next.current_task = static_cast<int>(task_vocab.task_index);
  return {std::move(next), std::move(partition)};
}

std::pair<VocabState, Partition> install_oracle_vocab(
    const TaskVocab& oracle, std::span<const TokenId> task0_active) {
  VocabState empty;
  TaskVocab as_first = oracle;
  as_first.task_index = 0;
  for (auto& r : as_first.rules) r.task_index = 0;
  auto [state, partition] = merge_vocab(empty, as_first);
  state.oracle = true;
  for (TokenId id : task0_active) {
    if (id >= state.tokens.size()) throw InvalidId(id, "install_oracle_vocab");
  }
  state.per_task_tokens[0].assign(task0_active.begin(), task0_active.end());
  return {std::move(state), std::move(partition)};
}

std::pair<VocabState, Partition> activate_oracle_task(
    const VocabState& state, std::span<const TokenId> active) {
  if (!state.oracle) throw StateError("activate_oracle_task needs an oracle registry");
  const std::size_t n = state.tokens.size();
  std::vector<bool> seen(n, false), now(n, false);
  for (const auto& ids : state.per_task_tokens) {
    for (TokenId id : ids) seen[id] = true;
  }
  for (TokenId id : active) {
    if (id >= n) throw InvalidId(id, "activate_oracle_task");
    now[id] = true;
  }
  Partition partition;
  for (TokenId id = 0; id < n; ++id) {
    if (now[id]) {
      (seen[id] ? partition.overlap_ids : partition.new_ids).push_back(id);
    } else {
      partition.old_ids.push_back(id);
    }
  }
  VocabState next = state;
  next.per_task_tokens.emplace_back(active.begin(), active.end());
  next.current_task = state.current_task + 1;
  return {std::move(next), std::move(partition)};
}

std::vector<TokenId> active_ids(const EncodingScope& scope,
                                std::span<const std::string> corpus) {
  std::set<TokenId> ids;
  for (TokenId b = 0; b < kByteTokens; ++b) ids.insert(b);
  for (const auto& text : corpus) {
    for (TokenId id : scope.encode(text)) ids.insert(id);
  }
  return {ids.begin(), ids.end()};
}

TokenCounts update_counts(const TokenCounts& counts,
                          std::span<const TokenId> task_ids) {
  TokenCounts next = counts;
  for (TokenId id : task_ids) {
    if (id >= next.counts.size()) next.counts.resize(id + 1, 0);
    ++next.counts[id];
  }
  return next;
}

LambdaVector lambda_for(const Partition& partition, const TokenCounts& counts) {
  LambdaVector out;
  out.lambda.assign(partition.total(), 0.0);
  auto place = [&](TokenId id, double value) {
    if (id >= out.lambda.size()) {
      throw ConsistencyError("partition id " + std::to_string(id) +
                             " outside the partition's id range");
    }
    out.lambda[id] = value;
  };
  for (TokenId id : partition.old_ids) {
    if (id >= counts.counts.size()) {
      throw ConsistencyError("no count for old id " + std::to_string(id));
    }
    place(id, 0.0);
  }
  for (TokenId id : partition.overlap_ids) {
    if (id >= counts.counts.size() || counts.counts[id] == 0) {
      throw ConsistencyError("no count for overlap id " + std::to_string(id));
    }
    place(id, 1.0 / (static_cast<double>(counts.counts[id]) + 1.0));
  }
  for (TokenId id : partition.new_ids) place(id, 1.0);
  return out;
}

LambdaVector all_ones(std::size_t n) { return {std::vector<double>(n, 1.0)}; }

void write_registry_manifest(const std::filesystem::path& path,
                             std::span<const RegistryManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# teir registry manifest v1\n";
  for (const auto& e : entries) {
    out << "[task " << e.task_index << "]\n"
        << "vocab_before = " << e.vocab_before << '\n'
        << "vocab_after = " << e.vocab_after << '\n'
        << "old = " << e.old_count << '\n'
        << "overlap = " << e.overlap_count << '\n'
        << "new = " << e.new_count << '\n'
        << "counts =";
    for (auto c : e.counts) out << ' ' << c;
    out << '\n';
  }
}

std::vector<RegistryManifestEntry> read_registry_manifest(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<RegistryManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("[task ", 0) == 0) {
      RegistryManifestEntry e;
      e.task_index = static_cast<std::uint32_t>(std::stoul(line.substr(6)));
      entries.push_back(e);
      continue;
    }
    auto eq = line.find(" =");
    if (eq == std::string::npos || entries.empty()) {
      throw ParseError(path.string(), lineno, "expected 'key = value'");
    }
    const std::string key = line.substr(0, eq);
    std::istringstream value(line.substr(eq + 2));
    auto& e = entries.back();
    if (key == "vocab_before") value >> e.vocab_before;
    else if (key == "vocab_after") value >> e.vocab_after;
    else if (key == "old") value >> e.old_count;
    else if (key == "overlap") value >> e.overlap_count;
    else if (key == "new") value >> e.new_count;
    else if (key == "counts") {
      std::uint32_t c;
      while (value >> c) e.counts.push_back(c);
    } else {
      throw ParseError(path.string(), lineno, "unknown key '" + key + "'");
    }
  }
  return entries;
}

void save_vocab_state(const VocabState& state, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_vocab_file(dir / "vocab.txt", state.tokens);
  std::vector<MergeRule> all;
  for (const auto& rules : state.per_task_rules) all.insert(all.end(), rules.begin(), rules.end());
  write_merge_file(dir / "merges.txt", all);
  std::ofstream out(dir / "task_tokens.txt", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "task_tokens.txt").string());
  out << "oracle " << (state.oracle ? 1 : 0) << '\n';
  for (const auto& ids : state.per_task_tokens) {
    out << ids.size();
    for (TokenId id : ids) out << ' ' << id;
    out << '\n';
  }
}

VocabState load_vocab_state(const std::filesystem::path& dir) {
  VocabState state;
  state.tokens = read_vocab_file(dir / "vocab.txt");
  for (std::size_t i = 0; i < state.tokens.size(); ++i) {
    state.id_of.emplace(state.tokens[i], static_cast<TokenId>(i));
  }
  const auto path = dir / "task_tokens.txt";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string tag;
  int oracle = 0;
  if (!(in >> tag >> oracle) || tag != "oracle") {
    throw ParseError(path.string(), 1, "expected 'oracle <0|1>'");
  }
  state.oracle = oracle != 0;
  std::size_t n;
  while (in >> n) {
    std::vector<TokenId> ids(n);
    for (auto& id : ids) {
      if (!(in >> id)) throw TruncatedFile(path.string());
      if (id >= state.tokens.size()) throw InvalidId(id, path.string());
    }
    state.per_task_tokens.push_back(std::move(ids));
  }
  const std::size_t n_rule_sets = state.oracle ? 1 : state.per_task_tokens.size();
  state.per_task_rules.resize(n_rule_sets);
  for (const auto& r : read_merge_file(dir / "merges.txt")) {
    if (r.task_index >= n_rule_sets) throw InvalidId(r.task_index, "merge task index");
    state.per_task_rules[r.task_index].push_back(r);
  }
  state.current_task = static_cast<int>(state.per_task_tokens.size()) - 1;
  return state;
}

std::uint64_t vocab_hash(std::span<const std::string> tokens) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : tokens) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    h ^= 0xFF;  // token separator
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace teir
