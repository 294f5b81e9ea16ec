#include "teir/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "teir/error.hpp"

namespace teir {

std::string to_string(Direction dir) {
  return dir == Direction::kImageToText ? "img2txt" : "txt2img";
}

Direction direction_from_string(const std::string& s) {
  if (s == "img2txt") return Direction::kImageToText;
  if (s == "txt2img") return Direction::kTextToImage;
  throw FormatError("unknown retrieval direction '" + s + "'");
}

void EvalMatrix::set(std::size_t j, std::size_t i, Direction dir, double recall) {
  if (i > j) throw InvalidInput("eval matrix entry above the diagonal");
  if (!(recall >= 0.0 && recall <= 100.0)) {
    throw InvalidInput("recall outside [0, 100]");
  }
  entries_[{j, i, static_cast<int>(dir)}] = recall;
}

std::optional<double> EvalMatrix::get(std::size_t j, std::size_t i, Direction dir) const {
  auto it = entries_.find({j, i, static_cast<int>(dir)});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

double EvalMatrix::at(std::size_t j, std::size_t i, Direction dir) const {
  auto v = get(j, i, dir);
  if (!v) {
    throw UndefinedMetric("no recall for j=" + std::to_string(j) + ", i=" +
                          std::to_string(i) + ", " + to_string(dir));
  }
  return *v;
}

bool EvalMatrix::has_row(std::size_t j, Direction dir) const {
  for (std::size_t i = 0; i <= j; ++i) {
    if (!get(j, i, dir)) return false;
  }
  return true;
}

std::size_t EvalMatrix::task_rows() const {
  std::size_t n = 0;
  for (const auto& [key, v] : entries_) n = std::max(n, std::get<0>(key) + 1);
  return n;
}

void EvalMatrix::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "j,i,direction,recall1\n";
  char buf[64];
  for (const auto& [key, v] : entries_) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << std::get<0>(key) << ',' << std::get<1>(key) << ','
        << to_string(static_cast<Direction>(std::get<2>(key))) << ',' << buf << '\n';
  }
}

EvalMatrix EvalMatrix::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "j,i,direction,recall1") {
    throw ParseError(path.string(), 1, "expected header j,i,direction,recall1");
  }
  EvalMatrix m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string j, i, dir, value;
    if (!std::getline(ss, j, ',') || !std::getline(ss, i, ',') ||
        !std::getline(ss, dir, ',') || !std::getline(ss, value)) {
      throw ParseError(path.string(), lineno, "expected 4 fields");
    }
    try {
      m.set(std::stoull(j), std::stoull(i), direction_from_string(dir), std::stod(value));
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), lineno, "bad number");
    } catch (const Error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return m;
}

namespace {

MatrixD normalized_rows(const MatrixD& m) {
  MatrixD out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v * v;
    if (s == 0.0) throw DegenerateFeature(r, "zero-norm feature in retrieval");
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c) * inv;
  }
  return out;
}

}  // namespace

double recall_at_k(const MatrixD& queries, const MatrixD& gallery,
                   const std::vector<std::vector<std::size_t>>& relevance,
                   std::size_t k) {
  if (relevance.size() != queries.rows()) {
    throw InvalidInput("recall_at_k: one relevance set per query required");
  }
  if (queries.cols() != gallery.cols()) throw DimensionMismatch("recall_at_k feature dims");
  if (queries.rows() == 0) throw InvalidInput("recall_at_k: no queries");
  for (std::size_t q = 0; q < relevance.size(); ++q) {
    if (relevance[q].empty()) {
      throw InvalidInput("recall_at_k: query " + std::to_string(q) + " has no relevant item");
    }
    for (auto g : relevance[q]) {
      if (g >= gallery.rows()) throw InvalidId(g, "relevance points outside gallery");
    }
  }
  const MatrixD qn = normalized_rows(queries);
  const MatrixD gn = normalized_rows(gallery);
  std::size_t hits = 0;
  std::vector<double> sims(gallery.rows());
  for (std::size_t q = 0; q < qn.rows(); ++q) {
    for (std::size_t g = 0; g < gn.rows(); ++g) {
      double dot = 0.0;
      for (std::size_t c = 0; c < qn.cols(); ++c) dot += qn(q, c) * gn(g, c);
      sims[g] = dot;
    }
    for (auto target : relevance[q]) {
      // Rank of the target under (similarity desc, index asc).
      std::size_t rank = 0;
      for (std::size_t g = 0; g < sims.size() && rank < k; ++g) {
        if (sims[g] > sims[target] || (sims[g] == sims[target] && g < target)) ++rank;
      }
      if (rank < k) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(qn.rows());
}

double RetrievalScores::sum() const {
  double s = 0.0;
  for (double v : image_to_text) s += v;
  for (double v : text_to_image) s += v;
  return s;
}

RetrievalScores paired_retrieval(const MatrixD& image_feats, const MatrixD& text_feats,
                                 std::span<const std::size_t> ks) {
  if (image_feats.rows() != text_feats.rows()) {
    throw DimensionMismatch("paired_retrieval: image and caption counts differ");
  }
  std::vector<std::vector<std::size_t>> identity(image_feats.rows());
  for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = {i};
  RetrievalScores out;
  for (auto k : ks) {
    out.image_to_text.push_back(recall_at_k(image_feats, text_feats, identity, k));
    out.text_to_image.push_back(recall_at_k(text_feats, image_feats, identity, k));
  }
  return out;
}

double average_recall(const EvalMatrix& m, std::size_t j, Direction dir) {
  if (!m.has_row(j, dir)) {
    throw UndefinedMetric("average recall needs a complete row " + std::to_string(j));
  }
  double s = 0.0;
  for (std::size_t i = 0; i <= j; ++i) s += m.at(j, i, dir);
  return s / static_cast<double>(j + 1);
}

double forgetting(const EvalMatrix& m, std::size_t j, Direction dir) {
  if (j < 1) throw UndefinedMetric("forgetting needs at least two tasks");
  double total = 0.0;
  for (std::size_t i = 0; i < j; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = i; k < j; ++k) best = std::max(best, m.at(k, i, dir));
    total += best - m.at(j, i, dir);
  }
  return total / static_cast<double>(j);
}

double fused_similarity(std::span<const double> r_img, std::span<const double> r_eng,
                        std::span<const double> r_foreign, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidInput("fusion eta must be in [0, 1]");
  return eta * cosine(r_img, r_eng) + (1.0 - eta) * cosine(r_img, r_foreign);
}

BatchGrad batch_loss_and_grad(const ModelView& model,
                              std::span<const EncodedSample> samples) {
  const auto& params = *model.params;
  const std::size_t k = samples.size();
  const std::size_t d_out = params.out_dim();
  FeatureBatch batch;
  batch.images = MatrixD(k, d_out);
  batch.foreign = MatrixD(k, d_out);
  const bool need_english = model.loss.gamma_cl != 0.0;
  if (need_english) {
    if (!model.anchor) throw StateError("cross-lingual loss needs an anchor table");
    batch.english = MatrixD(k, d_out);
  }
  for (std::size_t s = 0; s < k; ++s) {
    auto img = model.images->image_feature(samples[s].image_index);
    if (img.size() != d_out) throw DimensionMismatch("image feature width");
    for (std::size_t c = 0; c < d_out; ++c) batch.images(s, c) = img[c];
    auto rf = encode_text(samples[s].foreign, *model.table, params);
    std::copy(rf.begin(), rf.end(), batch.foreign.row(s).begin());
    if (need_english) {
      auto re = encode_text(samples[s].english, *model.anchor, params);
      std::copy(re.begin(), re.end(), batch.english.row(s).begin());
    }
  }
  LossResult loss = total_loss(batch, model.loss);
  BatchGrad out;
  out.loss = loss.loss;
  for (std::size_t s = 0; s < k; ++s) {
    accumulate_text_grad(samples[s].foreign, params, batch.foreign.row(s),
                         loss.grad_foreign.row(s), out.grads);
  }
  return out;
}

double fisher_trace(std::span<const EncodedSample> samples, const ModelView& model) {
  if (samples.empty()) throw InvalidInput("fisher_trace: empty dataset");
  double total = 0.0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    BatchGrad g = batch_loss_and_grad(model, samples.subspan(n, 1));
    for (const auto& [id, row] : g.grads) {
      for (double v : row) total += v * v;
    }
  }
  return total / static_cast<double>(samples.size());
}

double mean_loss(std::span<const EncodedSample> samples, const ModelView& model,
                 std::size_t batch_size) {
  if (samples.empty()) throw InvalidInput("mean_loss: empty dataset");
  if (batch_size == 0) throw InvalidInput("mean_loss: batch size 0");
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    total += batch_loss_and_grad(model, samples.subspan(start, n)).loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

std::size_t TedHistogram::total() const {
  std::size_t n = below + above;
  for (auto c : counts) n += c;
  return n;
}

void TedHistogram::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[128];
  out << "bin_left,bin_right,count\n";
  if (!edges.empty()) {
    std::snprintf(buf, sizeof buf, "-inf,%.9g,%zu\n", edges.front(), below);
    out << buf;
  }
  for (std::size_t b = 0; b < counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%zu\n", edges[b], edges[b + 1], counts[b]);
    out << buf;
  }
  if (!edges.empty()) {
    std::snprintf(buf, sizeof buf, "%.9g,inf,%zu\n", edges.back(), above);
    out << buf;
  }
}

TedHistogram ted_histogram(const EmbeddingTable& table, std::size_t bins) {
  if (bins < 2) throw InvalidInput("ted_histogram: need at least 2 bins");
  TedHistogram h;
  h.stats = dist_stats(table);
  auto values = table.values.values();
  if (h.stats.sigma == 0.0) {
    h.degenerate = true;
    h.edges = {h.stats.mu, h.stats.mu};
    h.counts = {values.size()};
    return h;
  }
  const double lo = h.stats.mu - 5.0 * h.stats.sigma;
  const double hi = h.stats.mu + 5.0 * h.stats.sigma;
  const double width = (hi - lo) / static_cast<double>(bins);
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.counts.assign(bins, 0);
  for (float v : values) {
    if (v < lo) {
      ++h.below;
    } else if (v > hi) {
      ++h.above;
    } else {
      auto b = static_cast<std::size_t>((v - lo) / width);
      ++h.counts[std::min(b, bins - 1)];
    }
  }
  return h;
}

}  // namespace teir
