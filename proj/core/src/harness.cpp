#include "teir/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "teir/error.hpp"
#include "teir/rng.hpp"

namespace teir {
namespace {

constexpr std::size_t kSelectionKs[] = {1, 5, 10};
constexpr std::size_t kEvalKs[] = {1};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool log_to_stderr() {
  const char* v = std::getenv("TEIR_LOG");
  return v && std::string(v) != "0" && std::string(v) != "quiet";
}

// Attaches the task to an error message while keeping its category.
[[noreturn]] void rethrow_with_task(const Error& e, std::size_t task) {
  throw Error(e.category(), "task " + std::to_string(task) + ": " + e.what());
}

OptimKind parse_kind(const std::string& s, const std::string& key) {
  if (s == "adamw") return OptimKind::kAdamW;
  if (s == "sgd") return OptimKind::kSgd;
  throw ConfigError(key, "expected sgd or adamw, got '" + s + "'");
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& run_config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"data.dir", ""},
      {"run.mode", "continual"},
      {"run.seed", "0"},
      {"run.tasks", ""},
      {"run.epochs", "3"},
      {"run.batch_size", "32"},
      {"run.ted_bins", "50"},
      {"vocab.size_per_task", "512"},
      {"vocab.oracle", "off"},
      {"vocab.oracle_size", "0"},
      {"model.dim", "64"},
      {"model.max_len", "32"},
      {"model.encoder_seed", "7"},
      {"loss.tau", "0.07"},
      {"loss.gamma_cm", "0.01"},
      {"loss.gamma_cl", "1"},
      {"optim.kind", "sgd"},
      {"optim.lr", "10"},
      {"optim.weight_decay", "0.0005"},
      {"optim.beta1", "0.9"},
      {"optim.beta2", "0.999"},
      {"optim.eps", "1e-08"},
      {"optim.warmup_fraction", "0.1"},
      {"pretrain.epochs", "5"},
      {"pretrain.lr", "0.05"},
      {"pretrain.optim_kind", "adamw"},
      {"pretrain.gamma_cm", "1"},
      {"init.mu", "0"},
      {"init.sigma", "0.02"},
      {"teir.init", "on"},
      {"teir.reg", "on"},
      {"teir.reg_scope", "both"},
  };
  return keys;
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("run.epochs", "must be >= 1");
  if (batch_size < 2) throw ConfigError("run.batch_size", "contrastive training needs >= 2");
  if (vocab_size_per_task < kByteTokens + 1) {
    throw ConfigError("vocab.size_per_task", "must be >= 257");
  }
  if (dim == 0) throw ConfigError("model.dim", "must be > 0");
  if (max_len == 0) throw ConfigError("model.max_len", "must be > 0");
  if (!(loss.tau > 0.0)) throw ConfigError("loss.tau", "must be > 0");
  if (!(optim.lr_peak > 0.0)) throw ConfigError("optim.lr", "must be > 0");
  if (!(optim.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay", "must be >= 0");
  if (!(optim.warmup_fraction >= 0.0 && optim.warmup_fraction < 1.0)) {
    throw ConfigError("optim.warmup_fraction", "must be in [0, 1)");
  }
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("optim.beta1", "must be in [0, 1)");
  if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("optim.beta2", "must be in [0, 1)");
  if (pretrain_epochs < 1) throw ConfigError("pretrain.epochs", "must be >= 1");
  if (!(pretrain_lr >= 0.0)) throw ConfigError("pretrain.lr", "must be >= 0");
  if (!(init_sigma >= 0.0)) throw ConfigError("init.sigma", "must be >= 0");
  if (ted_bins < 2) throw ConfigError("run.ted_bins", "must be >= 2");
}

RunConfig RunConfig::from_config(const Config& cfg) {
  for (const auto& [key, value] : cfg.entries()) {
    const auto& known = run_config_keys();
    const bool ok = std::any_of(known.begin(), known.end(),
                                [&](const auto& kv) { return kv.first == key; });
    if (!ok && key.rfind("data.", 0) != 0) throw ConfigError(key, "unknown key");
  }
  RunConfig r;
  r.data_dir = cfg.get_string("data.dir", "");
  const std::string mode = cfg.get_string("run.mode", "continual");
  if (mode == "continual") r.mode = RunMode::kContinual;
  else if (mode == "joint") r.mode = RunMode::kJoint;
  else throw ConfigError("run.mode", "expected continual or joint, got '" + mode + "'");
  r.seed = cfg.get_u64("run.seed", r.seed);
  {
    std::stringstream ss(cfg.get_string("run.tasks", ""));
    std::string lang;
    while (std::getline(ss, lang, ',')) {
      if (!lang.empty()) r.task_languages.push_back(lang);
    }
  }
  r.epochs = cfg.get_size("run.epochs", r.epochs);
  r.batch_size = cfg.get_size("run.batch_size", r.batch_size);
  r.ted_bins = cfg.get_size("run.ted_bins", r.ted_bins);
  r.vocab_size_per_task = cfg.get_size("vocab.size_per_task", r.vocab_size_per_task);
  r.oracle_vocab = cfg.get_bool("vocab.oracle", r.oracle_vocab);
  r.oracle_vocab_size = cfg.get_size("vocab.oracle_size", r.oracle_vocab_size);
  r.dim = cfg.get_size("model.dim", r.dim);
  r.max_len = cfg.get_size("model.max_len", r.max_len);
  r.encoder_seed = cfg.get_u64("model.encoder_seed", r.encoder_seed);
  r.loss.tau = cfg.get_double("loss.tau", r.loss.tau);
  r.loss.gamma_cm = cfg.get_double("loss.gamma_cm", r.loss.gamma_cm);
  r.loss.gamma_cl = cfg.get_double("loss.gamma_cl", r.loss.gamma_cl);
  r.optim.kind = parse_kind(cfg.get_string("optim.kind", "sgd"), "optim.kind");
  r.optim.lr_peak = cfg.get_double("optim.lr", r.optim.lr_peak);
  r.optim.weight_decay = cfg.get_double("optim.weight_decay", r.optim.weight_decay);
  r.optim.beta1 = cfg.get_double("optim.beta1", r.optim.beta1);
  r.optim.beta2 = cfg.get_double("optim.beta2", r.optim.beta2);
  r.optim.eps = cfg.get_double("optim.eps", r.optim.eps);
  r.optim.warmup_fraction = cfg.get_double("optim.warmup_fraction", r.optim.warmup_fraction);
  r.pretrain_epochs = cfg.get_size("pretrain.epochs", r.pretrain_epochs);
  r.pretrain_lr = cfg.get_double("pretrain.lr", r.pretrain_lr);
  r.pretrain_kind = parse_kind(cfg.get_string("pretrain.optim_kind", "adamw"),
                               "pretrain.optim_kind");
  r.pretrain_gamma_cm = cfg.get_double("pretrain.gamma_cm", r.pretrain_gamma_cm);
  r.init_mu = cfg.get_double("init.mu", r.init_mu);
  r.init_sigma = cfg.get_double("init.sigma", r.init_sigma);
  r.teir_init = cfg.get_bool("teir.init", r.teir_init);
  r.teir_reg = cfg.get_bool("teir.reg", r.teir_reg);
  const std::string scope = cfg.get_string("teir.reg_scope", "both");
  if (scope == "both") r.reg_scope = {true, true};
  else if (scope == "grad") r.reg_scope = {true, false};
  else if (scope == "decay") r.reg_scope = {false, true};
  else throw ConfigError("teir.reg_scope", "expected both, grad or decay, got '" + scope + "'");
  r.validate();
  return r;
}

Config RunConfig::to_config() const {
  Config c;
  c.set("data.dir", data_dir.string());
  c.set("run.mode", mode == RunMode::kJoint ? "joint" : "continual");
  c.set("run.seed", std::to_string(seed));
  std::string tasks;
  for (const auto& l : task_languages) tasks += (tasks.empty() ? "" : ",") + l;
  c.set("run.tasks", tasks);
  c.set("run.epochs", std::to_string(epochs));
  c.set("run.batch_size", std::to_string(batch_size));
  c.set("run.ted_bins", std::to_string(ted_bins));
  c.set("vocab.size_per_task", std::to_string(vocab_size_per_task));
  c.set("vocab.oracle", oracle_vocab ? "on" : "off");
  c.set("vocab.oracle_size", std::to_string(oracle_vocab_size));
  c.set("model.dim", std::to_string(dim));
  c.set("model.max_len", std::to_string(max_len));
  c.set("model.encoder_seed", std::to_string(encoder_seed));
  c.set("loss.tau", fmt(loss.tau));
  c.set("loss.gamma_cm", fmt(loss.gamma_cm));
  c.set("loss.gamma_cl", fmt(loss.gamma_cl));
  c.set("optim.kind", optim.kind == OptimKind::kSgd ? "sgd" : "adamw");
  c.set("optim.lr", fmt(optim.lr_peak));
  c.set("optim.weight_decay", fmt(optim.weight_decay));
  c.set("optim.beta1", fmt(optim.beta1));
  c.set("optim.beta2", fmt(optim.beta2));
  c.set("optim.eps", fmt(optim.eps));
  c.set("optim.warmup_fraction", fmt(optim.warmup_fraction));
  c.set("pretrain.epochs", std::to_string(pretrain_epochs));
  c.set("pretrain.lr", fmt(pretrain_lr));
  c.set("pretrain.optim_kind", pretrain_kind == OptimKind::kSgd ? "sgd" : "adamw");
  c.set("pretrain.gamma_cm", fmt(pretrain_gamma_cm));
  c.set("init.mu", fmt(init_mu));
  c.set("init.sigma", fmt(init_sigma));
  c.set("teir.init", teir_init ? "on" : "off");
  c.set("teir.reg", teir_reg ? "on" : "off");
  c.set("teir.reg_scope", reg_scope.gradient && reg_scope.decay ? "both"
                          : reg_scope.gradient                  ? "grad"
                                                                : "decay");
  return c;
}

ContinualRun::ContinualRun(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  manifest_ = read_bench_manifest(cfg_.data_dir);
  languages_ = cfg_.task_languages.empty() ? manifest_.languages : cfg_.task_languages;
  if (languages_.front() != manifest_.languages.front()) {
    throw ConfigError("run.tasks", "task 0 must be the anchor language " +
                                       manifest_.languages.front());
  }
  std::set<std::string> seen;
  for (const auto& l : languages_) {
    if (std::find(manifest_.languages.begin(), manifest_.languages.end(), l) ==
        manifest_.languages.end()) {
      throw ConfigError("run.tasks", "unknown language " + l);
    }
    if (!seen.insert(l).second) throw ConfigError("run.tasks", "duplicate language " + l);
  }
  images_ = ImageFeatureProvider::from_file(cfg_.data_dir / "images.feat");
  if (images_.size() != manifest_.n_images) {
    throw DimensionMismatch("images.feat rows disagree with the dataset manifest");
  }
  params_ = make_text_params(cfg_.dim, images_.out_dim(), cfg_.max_len, cfg_.encoder_seed);
  for (const auto& lang : languages_) {
    TaskData td;
    td.language = lang;
    td.corpus = read_corpus(cfg_.data_dir, lang);
    td.train = load_triplets(cfg_.data_dir, lang, Split::kTrain, images_.size());
    td.val = load_triplets(cfg_.data_dir, lang, Split::kVal, images_.size());
    td.test = load_triplets(cfg_.data_dir, lang, Split::kTest, images_.size());
    tasks_.push_back(std::move(td));
  }
  artifacts_.languages = languages_;
}

void ContinualRun::log(const std::string& line) {
  artifacts_.log.push_back(line);
  if (log_to_stderr()) std::cerr << line << '\n';
}

ModelView ContinualRun::model_view(const LossConfig& loss) const {
  ModelView v;
  v.table = &table_.values;
  v.anchor = anchor_.has_value() ? &anchor_.get().values() : nullptr;
  v.params = &params_;
  v.images = &images_;
  v.loss = loss;
  return v;
}

std::vector<EncodedSample> ContinualRun::encode_split(
    const std::vector<TrainingTriplet>& triplets, const EncodingScope& english,
    const EncodingScope& foreign) const {
  std::vector<EncodedSample> out;
  out.reserve(triplets.size());
  for (const auto& t : triplets) {
    EncodedSample s;
    s.image_index = t.image_index;
    s.english = english.encode(t.english_text);
    s.foreign = foreign.encode(t.foreign_text);
    if (s.english.empty() || s.foreign.empty()) {
      throw InvalidInput("caption encodes to no tokens for image " +
                         std::to_string(t.image_index));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void ContinualRun::encode_task(std::size_t t) {
  const EncodingScope english = vocab_.scope_for_task(0);
  const EncodingScope foreign = vocab_.scope_for_task(t);
  auto& td = tasks_[t];
  td.train_enc = encode_split(td.train, english, foreign);
  td.val_enc = encode_split(td.val, english, foreign);
  td.test_enc = encode_split(td.test, english, foreign);
}

RetrievalScores ContinualRun::retrieval(const std::vector<EncodedSample>& samples,
                                        std::span<const std::size_t> ks) const {
  const std::size_t d_out = params_.out_dim();
  MatrixD img(samples.size(), d_out), txt(samples.size(), d_out);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    auto f = images_.image_feature(samples[s].image_index);
    std::copy(f.begin(), f.end(), img.row(s).begin());
    auto r = encode_text(samples[s].foreign, table_, params_);
    std::copy(r.begin(), r.end(), txt.row(s).begin());
  }
  return paired_retrieval(img, txt, ks);
}

void ContinualRun::train_epochs(std::uint32_t task, const std::vector<EncodedSample>& train,
                                const std::vector<EncodedSample>& val,
                                const LossConfig& loss, std::size_t epochs,
                                OptimKind kind, double lr, TaskDiagnostics& diag) {
  const std::size_t k = cfg_.batch_size;
  const std::size_t n_batches = (train.size() + k - 1) / k;
  OptimConfig oc = cfg_.optim;
  oc.kind = kind;
  oc.lr_peak = lr;
  oc.total_steps = epochs * n_batches;
  reset_state(optim_state_);
  const ModelView view = model_view(loss);
  const RegScope scope = cfg_.teir_reg ? cfg_.reg_scope : RegScope{};

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EncodedSample> batch;
  double best_score = -1.0;
  EmbeddingTable best = table_;
  for (std::size_t e = 0; e < epochs; ++e) {
    Rng rng(derive_seed(cfg_.seed, "order", task * 1000 + e));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      batch.clear();
      for (std::size_t i = b * k; i < std::min(train.size(), (b + 1) * k); ++i) {
        batch.push_back(train[order[i]]);
      }
      BatchGrad g = batch_loss_and_grad(view, batch);
      if (!std::isfinite(g.loss)) throw NumericError("non-finite training loss");
      step(table_, g.grads, lambda_, oc, optim_state_, scope);
      loss_sum += g.loss;
    }
    const double score = retrieval(val, kSelectionKs).sum();
    EpochLog entry{e, loss_sum / static_cast<double>(n_batches), score};
    diag.epochs.push_back(entry);
    log("task " + std::to_string(task) + " epoch " + std::to_string(e) + " loss " +
        fmt_short(entry.mean_loss) + " val_recall_sum " + fmt_short(score));
    if (score > best_score) {
      best_score = score;
      best = table_;
      diag.selected_epoch = e;
    }
  }
  table_ = std::move(best);
}

void ContinualRun::evaluate_row(std::size_t j) {
  for (std::size_t i = 0; i <= j; ++i) {
    if (tasks_[i].test_enc.empty()) continue;
    const RetrievalScores s = retrieval(tasks_[i].test_enc, kEvalKs);
    artifacts_.eval.set(j, i, Direction::kImageToText, s.image_to_text[0]);
    artifacts_.eval.set(j, i, Direction::kTextToImage, s.text_to_image[0]);
  }
}

void ContinualRun::record_task(std::uint32_t t, const Partition& partition,
                               std::size_t vocab_before, TaskDiagnostics diag,
                               const std::vector<EncodedSample>& fisher_set) {
  diag.task_index = t;
  diag.trained_stats = dist_stats(table_);
  diag.ks_stat = diag.trained_stats.sigma > 0.0
                     ? ks_statistic(table_.values.values(), diag.trained_stats.mu,
                                    diag.trained_stats.sigma)
                     : 1.0;
  diag.fisher = fisher_trace(fisher_set, model_view(cfg_.loss));
  diag.ted = ted_histogram(table_, cfg_.ted_bins);

  RegistryManifestEntry entry;
  entry.task_index = t;
  entry.vocab_before = vocab_before;
  entry.vocab_after = vocab_.size();
  entry.old_count = partition.old_ids.size();
  entry.overlap_count = partition.overlap_ids.size();
  entry.new_count = partition.new_ids.size();
  entry.counts = counts_.counts;
  artifacts_.registry.push_back(std::move(entry));
  artifacts_.checkpoints.emplace_back(t, table_);
  log("task " + std::to_string(t) + " (" + diag.language + ") vocab " +
      std::to_string(vocab_before) + " -> " + std::to_string(vocab_.size()) + " old " +
      std::to_string(partition.old_ids.size()) + " overlap " +
      std::to_string(partition.overlap_ids.size()) + " new " +
      std::to_string(partition.new_ids.size()) + " fisher " + fmt_short(diag.fisher));
  artifacts_.diagnostics.push_back(std::move(diag));
}

void ContinualRun::run_pretrain() {
  if (pretrained_) throw StateError("pretraining already ran");
  try {
    const auto& td0 = tasks_[0];
    Partition partition;
    if (cfg_.oracle_vocab || cfg_.mode == RunMode::kJoint) {
      std::vector<std::string> all;
      for (const auto& td : tasks_) all.insert(all.end(), td.corpus.begin(), td.corpus.end());
      const std::size_t size =
          cfg_.oracle_vocab_size > 0
              ? cfg_.oracle_vocab_size
              : kByteTokens + 1 +
                    (cfg_.vocab_size_per_task - kByteTokens - 1) * tasks_.size();
      TaskVocab oracle = train_bpe(all, size, 0);
      oracle_scope_.emplace(EncodingScope::from_task_vocab(oracle));
      const auto active = active_ids(*oracle_scope_, td0.corpus);
      std::tie(vocab_, partition) = install_oracle_vocab(oracle, active);
    } else {
      TaskVocab v0 = train_bpe(td0.corpus, cfg_.vocab_size_per_task, 0);
      std::tie(vocab_, partition) = merge_vocab(VocabState{}, v0);
    }
    table_ = expand(EmbeddingTable(0, cfg_.dim), static_cast<std::int64_t>(vocab_.size()),
                    InitPolicy::fixed(cfg_.init_mu, cfg_.init_sigma),
                    derive_seed(cfg_.seed, "init", 0));
    lambda_ = all_ones(vocab_.size());
    partition_ = partition;
    encode_task(0);

    LossConfig pre = cfg_.loss;
    pre.gamma_cm = cfg_.pretrain_gamma_cm;
    pre.gamma_cl = 0.0;  // no anchor exists yet
    TaskDiagnostics diag;
    diag.language = td0.language;
    const double lr = cfg_.pretrain_lr > 0.0 ? cfg_.pretrain_lr : cfg_.optim.lr_peak;
    train_epochs(0, td0.train_enc, td0.val_enc, pre, cfg_.pretrain_epochs, cfg_.pretrain_kind,
                 lr, diag);

    anchor_.snapshot(table_);
    artifacts_.anchor = anchor_.get().values();
    counts_ = update_counts(TokenCounts{}, vocab_.per_task_tokens[0]);
    if (vocab_.oracle) counts_.counts.resize(vocab_.size(), 0);
    record_task(0, partition, 0, std::move(diag), tasks_[0].train_enc);
    evaluate_row(0);
  } catch (const Error& e) {
    rethrow_with_task(e, 0);
  }
  pretrained_ = true;
  next_task_ = 1;
}

void ContinualRun::run_task(std::size_t t) {
  if (!pretrained_) throw StateError("run_task before run_pretrain");
  if (t != next_task_ || t >= tasks_.size()) {
    throw StateError("tasks must run in order; expected task " + std::to_string(next_task_));
  }
  try {
    auto& td = tasks_[t];
    const std::size_t before = vocab_.size();
    TaskDiagnostics diag;
    diag.language = td.language;
    diag.source_stats = dist_stats(table_);
    Partition partition;
    if (vocab_.oracle) {
      std::vector<TokenId> seen;
      {
        std::set<TokenId> s;
        for (const auto& ids : vocab_.per_task_tokens) s.insert(ids.begin(), ids.end());
        seen.assign(s.begin(), s.end());
      }
      const auto active = active_ids(*oracle_scope_, td.corpus);
      std::tie(vocab_, partition) = activate_oracle_task(vocab_, active);
      if (cfg_.teir_init && !partition.new_ids.empty()) {
        diag.source_stats = dist_stats_rows(table_, seen);
        reinit_rows(table_, partition.new_ids, diag.source_stats,
                    derive_seed(cfg_.seed, "init", t));
      }
    } else {
      TaskVocab vt = train_bpe(td.corpus, cfg_.vocab_size_per_task,
                               static_cast<std::uint32_t>(t));
      std::tie(vocab_, partition) = merge_vocab(vocab_, vt);
      const InitPolicy policy = cfg_.teir_init
                                    ? InitPolicy::matched()
                                    : InitPolicy::fixed(cfg_.init_mu, cfg_.init_sigma);
      table_ = expand(table_, static_cast<std::int64_t>(partition.new_ids.size()), policy,
                      derive_seed(cfg_.seed, "init", t));
    }
    if (table_.row_count() != vocab_.size()) {
      throw ConsistencyError("embedding rows disagree with vocab size");
    }
    lambda_ = cfg_.teir_reg ? lambda_for(partition, counts_) : all_ones(vocab_.size());
    partition_ = partition;
    encode_task(t);

    train_epochs(static_cast<std::uint32_t>(t), td.train_enc, td.val_enc, cfg_.loss,
                 cfg_.epochs, cfg_.optim.kind, cfg_.optim.lr_peak, diag);
    counts_ = update_counts(counts_, vocab_.per_task_tokens[t]);
    if (vocab_.oracle) counts_.counts.resize(vocab_.size(), 0);
    record_task(static_cast<std::uint32_t>(t), partition, before, std::move(diag),
                td.train_enc);
    evaluate_row(t);
  } catch (const Error& e) {
    rethrow_with_task(e, t);
  }
  ++next_task_;
}

void ContinualRun::run_joint() {
  if (!pretrained_) throw StateError("run_joint before run_pretrain");
  if (!vocab_.oracle) throw StateError("joint mode needs the oracle vocab");
  const std::size_t last = tasks_.size() - 1;
  try {
    if (last == 0) return;
    const std::size_t before = vocab_.size();
    TaskDiagnostics diag;
    diag.language = "joint";
    std::set<TokenId> seen, active;
    for (const auto& ids : vocab_.per_task_tokens) seen.insert(ids.begin(), ids.end());
    for (const auto& td : tasks_) {
      for (TokenId id : active_ids(*oracle_scope_, td.corpus)) active.insert(id);
    }
    const std::vector<TokenId> active_vec(active.begin(), active.end());
    Partition partition;
    std::tie(vocab_, partition) = activate_oracle_task(vocab_, active_vec);
    if (cfg_.teir_init && !partition.new_ids.empty()) {
      const std::vector<TokenId> seen_vec(seen.begin(), seen.end());
      diag.source_stats = dist_stats_rows(table_, seen_vec);
      reinit_rows(table_, partition.new_ids, diag.source_stats,
                  derive_seed(cfg_.seed, "init", last));
    }
    lambda_ = cfg_.teir_reg ? lambda_for(partition, counts_) : all_ones(vocab_.size());
    partition_ = partition;

    std::vector<EncodedSample> train, val;
    for (std::size_t t = 0; t <= last; ++t) {
      encode_task(t);
      train.insert(train.end(), tasks_[t].train_enc.begin(), tasks_[t].train_enc.end());
      val.insert(val.end(), tasks_[t].val_enc.begin(), tasks_[t].val_enc.end());
    }
    // Keep the per-task task sequence identity for the registry bookkeeping.
    vocab_.current_task = static_cast<int>(last);
    train_epochs(static_cast<std::uint32_t>(last), train, val, cfg_.loss, cfg_.epochs,
                 cfg_.optim.kind, cfg_.optim.lr_peak, diag);
    counts_ = update_counts(counts_, active_vec);
    counts_.counts.resize(vocab_.size(), 0);
    record_task(static_cast<std::uint32_t>(last), partition, before, std::move(diag), train);
    evaluate_row(last);
  } catch (const Error& e) {
    rethrow_with_task(e, last);
  }
  next_task_ = tasks_.size();
}

RunArtifacts ContinualRun::finish() {
  // End-of-run convergence diagnostics over every task's training data.
  std::vector<EncodedSample> all;
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    if (tasks_[t].train_enc.empty()) encode_task(t);
    all.insert(all.end(), tasks_[t].train_enc.begin(), tasks_[t].train_enc.end());
  }
  const ModelView view = model_view(cfg_.loss);
  artifacts_.final_mean_loss = mean_loss(all, view, cfg_.batch_size);
  artifacts_.final_fisher = fisher_trace(all, view);
  artifacts_.vocab = vocab_;
  log("final mean loss " + fmt_short(artifacts_.final_mean_loss) + " fisher " +
      fmt_short(artifacts_.final_fisher));
  return std::move(artifacts_);
}

RunArtifacts run_sequence(const RunConfig& cfg) {
  ContinualRun run(cfg);
  run.run_pretrain();
  if (cfg.mode == RunMode::kJoint) {
    run.run_joint();
  } else {
    for (std::size_t t = 1; t < run.task_count(); ++t) run.run_task(t);
  }
  return run.finish();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_run_directory(const RunArtifacts& a, const RunConfig& cfg,
                         const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "diagnostics");
  cfg.to_config().write(out / "effective_config.txt");
  save_vocab_state(a.vocab, out / "vocab");
  write_registry_manifest(out / "registry.txt", a.registry);

  const std::uint64_t vhash = vocab_hash(a.vocab.tokens);
  const std::string policy = cfg.teir_init ? "matched" : "fixed";
  save_checkpoint(EmbeddingTable(a.anchor),
                  {vhash, a.anchor.rows(), 0, "fixed", derive_seed(cfg.seed, "init", 0)},
                  out / "checkpoints" / "anchor.emb");
  for (const auto& [t, table] : a.checkpoints) {
    CheckpointManifest m{vhash, table.row_count(), t, t == 0 ? "fixed" : policy,
                         derive_seed(cfg.seed, "init", t)};
    save_checkpoint(table, m, out / "checkpoints" / ("task_" + std::to_string(t) + ".emb"));
  }
  a.eval.write_csv(out / "eval_matrix.csv");

  std::string dist = "task,mu,sigma,ks_stat\n";
  std::string fisher = "task,fisher_trace\n";
  std::string loss = "task,epoch,mean_loss,val_recall_sum,selected\n";
  std::string source = "task,source_mu,source_sigma\n";
  for (const auto& d : a.diagnostics) {
    const std::string t = std::to_string(d.task_index);
    dist += t + "," + fmt(d.trained_stats.mu) + "," + fmt(d.trained_stats.sigma) + "," +
            fmt(d.ks_stat) + "\n";
    fisher += t + "," + fmt(d.fisher) + "\n";
    source += t + "," + fmt(d.source_stats.mu) + "," + fmt(d.source_stats.sigma) + "\n";
    for (const auto& e : d.epochs) {
      loss += t + "," + std::to_string(e.epoch) + "," + fmt(e.mean_loss) + "," +
              fmt(e.val_score) + "," + (e.epoch == d.selected_epoch ? "1" : "0") + "\n";
    }
    d.ted.write_csv(out / "diagnostics" / ("ted_task" + t + ".csv"));
  }
  write_text(out / "diagnostics" / "dist_stats.csv", dist);
  write_text(out / "diagnostics" / "fisher.csv", fisher);
  write_text(out / "diagnostics" / "loss.csv", loss);
  write_text(out / "diagnostics" / "init_source.csv", source);
  write_text(out / "diagnostics" / "convergence.csv",
             "metric,value\nfinal_mean_loss," + fmt(a.final_mean_loss) +
                 "\nfinal_fisher_trace," + fmt(a.final_fisher) + "\n");
  std::string languages;
  for (std::size_t t = 0; t < a.languages.size(); ++t) {
    languages += std::to_string(t) + "," + a.languages[t] + "\n";
  }
  write_text(out / "tasks.csv", "task,language\n" + languages);
  std::string log;
  for (const auto& line : a.log) log += line + "\n";
  write_text(out / "train.log", log);
}

EvalMatrix evaluate_run_directory(const std::filesystem::path& run_dir,
                                  const std::filesystem::path& data_dir, Split split) {
  namespace fs = std::filesystem;
  const auto cfg_path = run_dir / "effective_config.txt";
  if (!fs::exists(cfg_path)) throw IoError("missing " + cfg_path.string());
  const RunConfig cfg = RunConfig::from_config(Config::from_file(cfg_path));
  const VocabState vocab = load_vocab_state(run_dir / "vocab");

  std::vector<std::string> languages;
  {
    std::ifstream in(run_dir / "tasks.csv");
    if (!in) throw IoError("missing " + (run_dir / "tasks.csv").string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos) languages.push_back(line.substr(comma + 1));
    }
  }
  const ImageFeatureProvider images = ImageFeatureProvider::from_file(data_dir / "images.feat");
  const FrozenTextParams params =
      make_text_params(cfg.dim, images.out_dim(), cfg.max_len, cfg.encoder_seed);

  std::vector<std::pair<std::size_t, fs::path>> ckpts;
  for (std::size_t t = 0; t < languages.size(); ++t) {
    const auto p = run_dir / "checkpoints" / ("task_" + std::to_string(t) + ".emb");
    if (fs::exists(p)) ckpts.emplace_back(t, p);
  }
  if (ckpts.empty()) throw IoError("no checkpoints in " + (run_dir / "checkpoints").string());

  EvalMatrix m;
  for (const auto& [j, path] : ckpts) {
    // Checkpoint j predates later vocab growth; ids are stable, so it covers
    // every token of tasks 0..j.
    const EmbeddingTable table = load_checkpoint(path);
    if (table.row_count() > vocab.size()) {
      throw DimensionMismatch(path.string() + ": more rows than the stored vocab");
    }
    for (std::size_t i = 0; i <= j; ++i) {
      const auto triplets = load_triplets(data_dir, languages[i], split, images.size());
      const EncodingScope foreign = vocab.scope_for_task(i);
      MatrixD img(triplets.size(), params.out_dim()), txt(triplets.size(), params.out_dim());
      for (std::size_t s = 0; s < triplets.size(); ++s) {
        auto f = images.image_feature(triplets[s].image_index);
        std::copy(f.begin(), f.end(), img.row(s).begin());
        const auto ids = foreign.encode(triplets[s].foreign_text);
        auto r = encode_text(ids, table, params);
        std::copy(r.begin(), r.end(), txt.row(s).begin());
      }
      const RetrievalScores sc = paired_retrieval(img, txt, kEvalKs);
      m.set(j, i, Direction::kImageToText, sc.image_to_text[0]);
      m.set(j, i, Direction::kTextToImage, sc.text_to_image[0]);
    }
  }
  return m;
}

}  // namespace teir
