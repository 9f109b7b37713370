#include "triage/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "triage/evaluation.hpp"
#include "triage/io.hpp"

namespace triage {

TrainingSet TrainingSet::silver(std::vector<LabeledRecord> records) {
  return TrainingSet(std::move(records));
}

std::string TrainingSet::digest() const {
  std::vector<RecordId> ids;
  ids.reserve(records_.size());
  for (const auto& r : records_) ids.push_back(r.id);
  return id_digest(ids);
}

TrainingSet TrainingSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<LabeledRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(records_.at(i));
  return TrainingSet(std::move(out));
}

std::array<std::size_t, kNumLabels> TrainingSet::class_counts() const noexcept {
  std::array<std::size_t, kNumLabels> c{};
  for (const auto& r : records_) ++c[index_of(r.label)];
  return c;
}

TrainingSet balanced_downsample(const TrainingSet& silver) {
  auto counts = silver.class_counts();
  std::size_t keep = std::numeric_limits<std::size_t>::max();
  for (auto l : kAllLabels) {
    if (counts[index_of(l)] == 0)
      throw std::invalid_argument(fmt::format("cannot downsample: class {} has no records", to_string(l)));
    keep = std::min(keep, counts[index_of(l)]);
  }

  std::vector<std::size_t> order(silver.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& recs = silver.records();
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return recs[a].id < recs[b].id; });
  std::array<std::size_t, kNumLabels> taken{};
  std::vector<std::size_t> chosen;
  for (auto i : order) {
    auto k = index_of(recs[i].label);
    if (taken[k] < keep) {
      ++taken[k];
      chosen.push_back(i);
    }
  }
  return silver.subset(chosen);
}

double SparseVector::dot(std::span<const double> dense) const noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < index.size(); ++i) s += value[i] * dense[index[i]];
  return s;
}

double SparseVector::norm() const noexcept {
  double s = 0.0;
  for (double v : value) s += v * v;
  return std::sqrt(s);
}

namespace {

bool token_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

std::size_t scalar_count(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

}  // namespace

std::vector<std::string> tfidf_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!token_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && token_byte(static_cast<unsigned char>(text[j]))) ++j;
    std::string tok(text.substr(i, j - i));
    for (auto& ch : tok)
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    if (scalar_count(tok) >= 2) out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

std::vector<std::string> tfidf_features(std::string_view text) {
  auto toks = tfidf_tokens(text);
  std::vector<std::string> out = toks;
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) out.push_back(toks[i] + " " + toks[i + 1]);
  return out;
}

std::optional<double> TfidfModel::idf_of(const std::string& term) const {
  auto it = column.find(term);
  if (it == column.end()) return std::nullopt;
  return idf[it->second];
}

SparseVector TfidfModel::vectorize(std::string_view text) const {
  std::map<std::uint32_t, double> counts;
  for (const auto& f : tfidf_features(text)) {
    auto it = column.find(f);
    if (it != column.end()) counts[it->second] += 1.0;
  }
  SparseVector v;
  for (auto [col, c] : counts) {
    v.index.push_back(col);
    v.value.push_back(c * idf[col]);
  }
  double n = v.norm();
  if (n > 0)
    for (auto& x : v.value) x /= n;
  return v;
}

nlohmann::json TfidfModel::to_json() const {
  return {{"terms", terms}, {"idf", idf}, {"n_documents", n_documents}, {"fit_corpus_digest", fit_corpus_digest}};
}

TfidfModel TfidfModel::from_json(const nlohmann::json& j) {
  TfidfModel m;
  m.terms = j.at("terms").get<std::vector<std::string>>();
  m.idf = j.at("idf").get<std::vector<double>>();
  if (m.terms.size() != m.idf.size()) throw InputError("tfidf: terms and idf differ in length");
  m.n_documents = j.at("n_documents").get<std::size_t>();
  m.fit_corpus_digest = j.value("fit_corpus_digest", "");
  for (std::uint32_t i = 0; i < m.terms.size(); ++i) m.column.emplace(m.terms[i], i);
  return m;
}

TfidfModel fit_tfidf_texts(const std::vector<std::string>& texts, std::size_t max_features,
                           std::string corpus_digest) {
  if (texts.empty()) throw std::invalid_argument("tfidf needs at least one document");
  if (max_features == 0) throw std::invalid_argument("tfidf max_features must be positive");
  std::map<std::string, std::size_t> df;
  for (const auto& t : texts) {
    auto feats = tfidf_features(t);
    std::set<std::string> uniq(feats.begin(), feats.end());
    for (const auto& f : uniq) ++df[f];
  }
  std::vector<std::pair<std::string, std::size_t>> cand(df.begin(), df.end());
  if (cand.size() > max_features) {
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    cand.resize(max_features);
    std::sort(cand.begin(), cand.end());
  }
  TfidfModel m;
  m.n_documents = texts.size();
  m.fit_corpus_digest = std::move(corpus_digest);
  const double n = static_cast<double>(texts.size());
  for (auto& [term, d] : cand) {
    m.column.emplace(term, static_cast<std::uint32_t>(m.terms.size()));
    m.terms.push_back(term);
    m.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(d))) + 1.0);
  }
  return m;
}

TfidfModel fit_tfidf(const TrainingSet& training, std::size_t max_features) {
  std::vector<std::string> texts;
  texts.reserve(training.size());
  for (const auto& r : training.records()) texts.push_back(r.text);
  return fit_tfidf_texts(texts, max_features, training.digest());
}

std::array<double, kNumLabels> LogRegModel::scores(const SparseVector& x) const {
  std::array<double, kNumLabels> s{};
  std::span<const double> w(weights);
  for (std::size_t k = 0; k < kNumLabels; ++k) s[k] = bias[k] + x.dot(w.subspan(k * n_features, n_features));
  return s;
}

TriageLabel LogRegModel::predict(const SparseVector& x) const {
  auto s = scores(x);
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumLabels; ++k)
    if (s[k] > s[best]) best = k;
  return kAllLabels[best];
}

nlohmann::json LogRegModel::to_json() const {
  return {{"n_features", n_features}, {"weights", weights},     {"bias", bias},
          {"iterations", iterations}, {"final_loss", final_loss}, {"l2_strength", l2_strength},
          {"converged", converged}};
}

LogRegModel LogRegModel::from_json(const nlohmann::json& j) {
  LogRegModel m;
  m.n_features = j.at("n_features").get<std::size_t>();
  m.weights = j.at("weights").get<std::vector<double>>();
  if (m.weights.size() != m.n_features * kNumLabels) throw InputError("logreg: weight matrix has the wrong size");
  m.bias = j.at("bias").get<std::array<double, kNumLabels>>();
  m.iterations = j.value("iterations", 0);
  m.final_loss = j.value("final_loss", 0.0);
  m.l2_strength = j.value("l2_strength", 0.0);
  m.converged = j.value("converged", false);
  return m;
}

double logreg_objective(const std::vector<SparseVector>& x, const std::vector<TriageLabel>& y,
                        std::size_t n_features, std::span<const double> params, double lambda,
                        std::vector<double>* grad) {
  const std::size_t K = kNumLabels, D = n_features;
  if (params.size() != K * D + K) throw std::invalid_argument("logreg_objective: parameter size mismatch");
  if (x.size() != y.size() || x.empty()) throw std::invalid_argument("logreg_objective: need matching non-empty x and y");
  const double inv_n = 1.0 / static_cast<double>(x.size());
  if (grad) grad->assign(params.size(), 0.0);

  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::array<double, kNumLabels> z{};
    for (std::size_t k = 0; k < K; ++k) z[k] = params[K * D + k] + x[i].dot(params.subspan(k * D, D));
    double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (auto v : z) sum += std::exp(v - zmax);
    double lse = zmax + std::log(sum);
    auto yi = index_of(y[i]);
    loss += lse - z[yi];
    if (grad) {
      for (std::size_t k = 0; k < K; ++k) {
        double r = (std::exp(z[k] - lse) - (k == yi ? 1.0 : 0.0)) * inv_n;
        if (r == 0.0) continue;
        for (std::size_t t = 0; t < x[i].index.size(); ++t) (*grad)[k * D + x[i].index[t]] += r * x[i].value[t];
        (*grad)[K * D + k] += r;
      }
    }
  }
  loss *= inv_n;
  double sq = 0.0;
  for (std::size_t p = 0; p < K * D; ++p) {
    sq += params[p] * params[p];
    if (grad) (*grad)[p] += lambda * params[p];
  }
  return loss + 0.5 * lambda * sq;
}

LogRegModel train_logreg(const std::vector<SparseVector>& x, const std::vector<TriageLabel>& y,
                         std::size_t n_features, const LogRegConfig& cfg) {
  if (cfg.inverse_l2 <= 0) throw std::invalid_argument("inverse_l2 must be positive");
  if (cfg.max_iter < 0 || cfg.tol < 0) throw std::invalid_argument("max_iter and tol must be non-negative");
  if (x.size() != y.size()) throw std::invalid_argument("training needs one label per vector");
  if (x.size() < 4) throw std::invalid_argument("training needs at least four examples");
  for (const auto& v : x) {
    for (auto i : v.index)
      if (i >= n_features) throw std::invalid_argument("feature index out of range");
    for (double e : v.value)
      if (!std::isfinite(e)) throw std::invalid_argument("training features must be finite");
  }
  std::set<TriageLabel> present(y.begin(), y.end());
  if (present.size() < 2) throw std::invalid_argument("training needs at least two classes");

  const double lambda = 1.0 / (cfg.inverse_l2 * static_cast<double>(x.size()));
  std::vector<double> w(kNumLabels * n_features + kNumLabels, 0.0), g, trial(w.size()), g_trial;
  double f = logreg_objective(x, y, n_features, w, lambda, &g);

  LogRegModel m;
  m.n_features = n_features;
  m.l2_strength = lambda;
  m.loss_trace.push_back(f);
  double step = 1.0;
  auto norm2 = [](const std::vector<double>& v) {
    double s = 0;
    for (double e : v) s += e * e;
    return s;
  };
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    double gg = norm2(g);
    if (std::sqrt(gg) < cfg.tol) {
      m.converged = true;
      break;
    }
    step = std::min(step * 2.0, 1e6);
    double f_trial = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t p = 0; p < w.size(); ++p) trial[p] = w[p] - step * g[p];
      f_trial = logreg_objective(x, y, n_features, trial, lambda, nullptr);
      if (f_trial <= f - 0.5 * step * gg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      m.converged = true;  // no descent left at machine precision
      break;
    }
    w.swap(trial);
    f = logreg_objective(x, y, n_features, w, lambda, &g);
    m.loss_trace.push_back(f);
  }
  if (!m.converged && std::sqrt(norm2(g)) < cfg.tol) m.converged = true;
  m.iterations = it;
  m.final_loss = f;
  m.weights.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(kNumLabels * n_features));
  for (std::size_t k = 0; k < kNumLabels; ++k) m.bias[k] = w[kNumLabels * n_features + k];
  return m;
}

nlohmann::json BaselineModel::to_json() const {
  return {{"kind", "tfidf-logreg"},
          {"version", 1},
          {"config", {{"C", config.inverse_l2}, {"max_iter", config.max_iter}, {"tol", config.tol}}},
          {"tfidf", tfidf.to_json()},
          {"logreg", logreg.to_json()}};
}

BaselineModel BaselineModel::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "tfidf-logreg") throw InputError("not a tfidf-logreg model document");
  if (j.value("version", 0) != 1) throw InputError("unsupported tfidf-logreg model version");
  BaselineModel m;
  const auto& c = j.at("config");
  m.config.inverse_l2 = c.at("C").get<double>();
  m.config.max_iter = c.at("max_iter").get<int>();
  m.config.tol = c.at("tol").get<double>();
  m.tfidf = TfidfModel::from_json(j.at("tfidf"));
  m.logreg = LogRegModel::from_json(j.at("logreg"));
  if (m.logreg.n_features != m.tfidf.size()) throw InputError("model: vocabulary and weights disagree");
  return m;
}

BaselineModel fit_baseline(const TrainingSet& training, const LogRegConfig& cfg, std::size_t max_features) {
  BaselineModel m;
  m.config = cfg;
  m.tfidf = fit_tfidf(training, max_features);
  std::vector<SparseVector> x;
  std::vector<TriageLabel> y;
  for (const auto& r : training.records()) {
    x.push_back(m.tfidf.vectorize(r.text));
    y.push_back(r.label);
  }
  m.logreg = train_logreg(x, y, m.tfidf.size(), cfg);
  return m;
}

std::vector<std::size_t> stratified_folds(const TrainingSet& data, std::size_t folds) {
  if (folds < 2) throw std::invalid_argument("need at least two folds");
  const auto& recs = data.records();
  std::vector<std::size_t> order(recs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return recs[a].id < recs[b].id; });
  std::vector<std::size_t> fold(recs.size());
  std::array<std::size_t, kNumLabels> seen{};
  for (auto i : order) fold[i] = seen[index_of(recs[i].label)]++ % folds;
  return fold;
}

CvSelection cv_select(const std::vector<LogRegConfig>& grid, const TrainingSet& data, std::size_t folds,
                      std::size_t max_features) {
  if (grid.empty()) throw std::invalid_argument("cv_select: empty grid");
  auto counts = data.class_counts();
  for (auto l : kAllLabels)
    if (counts[index_of(l)] < folds)
      throw std::invalid_argument(fmt::format("cv_select: class {} has {} records, fewer than {} folds", to_string(l),
                                              counts[index_of(l)], folds));
  auto fold = stratified_folds(data, folds);
  CvSelection sel;
  sel.grid = grid;
  for (const auto& cfg : grid) {
    std::vector<double> scores;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? test_idx : train_idx).push_back(i);
      if (test_idx.empty()) throw std::invalid_argument(fmt::format("cv_select: fold {} is empty", f));
      auto model = fit_baseline(data.subset(train_idx), cfg, max_features);
      std::vector<ScoredCase> cases;
      for (auto i : test_idx) {
        const auto& r = data.records()[i];
        cases.push_back({r.label, model.logreg.predict(model.tfidf.vectorize(r.text))});
      }
      scores.push_back(confusion_and_f1(cases).macro_f1);
    }
    double mean = 0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    sel.fold_scores.push_back(std::move(scores));
    sel.mean_scores.push_back(mean);
  }
  for (std::size_t c = 1; c < grid.size(); ++c)
    if (sel.mean_scores[c] > sel.mean_scores[sel.winner]) sel.winner = c;
  sel.refit = fit_baseline(data, grid[sel.winner], max_features);
  return sel;
}

PredictionSet predict_labels(const BaselineModel& model, const std::vector<LabeledRecord>& cases,
                             const std::string& model_name, const std::string& split_digest) {
  PredictionSet set;
  set.model_name = model_name;
  set.setting = "baseline";
  set.split_digest = split_digest;
  set.manifest = {{"fit_corpus_digest", model.tfidf.fit_corpus_digest}, {"C", model.config.inverse_l2}};
  for (const auto& c : cases) {
    auto label = model.logreg.predict(model.tfidf.vectorize(c.text));
    set.entries.emplace(c.id, StructuredPrediction{label, Confidence::Unknown, false, std::string(to_string(label)), false});
  }
  return set;
}

}  // namespace triage
