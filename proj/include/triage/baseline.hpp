#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "triage/dataset.hpp"
#include "triage/predictions.hpp"

namespace triage {

/// Labeled silver records that may feed model fitting. Only the silver
/// factory exists, so evaluation or few-shot records cannot reach a fit path
/// by construction.
class TrainingSet {
 public:
  static TrainingSet silver(std::vector<LabeledRecord> records);

  const std::vector<LabeledRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// id_digest over the records in their current order.
  std::string digest() const;

  TrainingSet subset(const std::vector<std::size_t>& indices) const;

  std::array<std::size_t, kNumLabels> class_counts() const noexcept;

 private:
  explicit TrainingSet(std::vector<LabeledRecord> records) : records_(std::move(records)) {}
  std::vector<LabeledRecord> records_;
};

/// Per class keep the `min class count` lowest-id records. Output is sorted by id.
TrainingSet balanced_downsample(const TrainingSet& silver);

struct SparseVector {
  std::vector<std::uint32_t> index;  // ascending
  std::vector<double> value;

  double dot(std::span<const double> dense) const noexcept;
  double norm() const noexcept;
};

/// Lowercase runs of ASCII letters/digits (bytes >= 0x80 count as letters),
/// keeping runs of two or more characters.
std::vector<std::string> tfidf_tokens(std::string_view text);

/// Unigrams followed by adjacent-pair bigrams joined by a single space.
std::vector<std::string> tfidf_features(std::string_view text);

inline constexpr std::size_t kMaxTfidfFeatures = 5000;

struct TfidfModel {
  std::vector<std::string> terms;  // column order (lexicographic)
  std::vector<double> idf;         // ln((1 + N) / (1 + df)) + 1
  std::unordered_map<std::string, std::uint32_t> column;
  std::size_t n_documents = 0;
  std::string fit_corpus_digest;

  std::size_t size() const noexcept { return terms.size(); }
  std::optional<double> idf_of(const std::string& term) const;

  /// Raw counts times idf, then l2-normalized when nonzero.
  SparseVector vectorize(std::string_view text) const;

  nlohmann::json to_json() const;
  static TfidfModel from_json(const nlohmann::json& j);
};

/// When more than `max_features` candidate features exist, keeps the most
/// frequent by document frequency, ties broken lexicographically.
TfidfModel fit_tfidf(const TrainingSet& training, std::size_t max_features = kMaxTfidfFeatures);

/// Same fit over raw texts; used by the public fit path and by tests.
TfidfModel fit_tfidf_texts(const std::vector<std::string>& texts, std::size_t max_features,
                           std::string corpus_digest);

struct LogRegConfig {
  double inverse_l2 = 1.0;  // C; penalty is ||W||^2 / (2 C n) on the mean loss
  int max_iter = 1000;
  double tol = 1e-4;
};

/// Multinomial logistic regression over the four labels in severity order.
struct LogRegModel {
  std::size_t n_features = 0;
  std::vector<double> weights;  // kNumLabels x n_features, row-major
  std::array<double, kNumLabels> bias{};
  int iterations = 0;
  double final_loss = 0.0;
  double l2_strength = 0.0;  // lambda on the mean loss
  bool converged = false;
  std::vector<double> loss_trace;

  std::array<double, kNumLabels> scores(const SparseVector& x) const;
  /// Argmax of scores; ties go to the lower severity.
  TriageLabel predict(const SparseVector& x) const;

  nlohmann::json to_json() const;
  static LogRegModel from_json(const nlohmann::json& j);
};

/// Mean softmax cross-entropy plus lambda/2 ||W||^2 (bias unpenalized).
/// `params` packs W row-major followed by the bias; `grad` (optional) is
/// resized and filled.
double logreg_objective(const std::vector<SparseVector>& x, const std::vector<TriageLabel>& y,
                        std::size_t n_features, std::span<const double> params, double lambda,
                        std::vector<double>* grad);

/// Full-batch gradient descent from zero with Armijo backtracking, so the
/// loss never increases. Stops when the gradient norm drops below tol or
/// after max_iter iterations.
LogRegModel train_logreg(const std::vector<SparseVector>& x, const std::vector<TriageLabel>& y,
                         std::size_t n_features, const LogRegConfig& cfg = {});

struct BaselineModel {
  TfidfModel tfidf;
  LogRegModel logreg;
  LogRegConfig config;

  nlohmann::json to_json() const;
  static BaselineModel from_json(const nlohmann::json& j);
};

/// Fits TF-IDF then logistic regression on the training set.
BaselineModel fit_baseline(const TrainingSet& training, const LogRegConfig& cfg,
                           std::size_t max_features = kMaxTfidfFeatures);

/// Stratified fold index per record: within each class, records in id order
/// are dealt round-robin to folds.
std::vector<std::size_t> stratified_folds(const TrainingSet& data, std::size_t folds);

struct CvSelection {
  std::vector<LogRegConfig> grid;
  std::vector<std::vector<double>> fold_scores;  // [candidate][fold] macro-F1
  std::vector<double> mean_scores;
  std::size_t winner = 0;
  BaselineModel refit;  // winner refit on the full training set
};

/// Each fold refits the vectorizer on its training part. Winner maximizes mean
/// macro-F1; ties go to the earlier grid entry.
CvSelection cv_select(const std::vector<LogRegConfig>& grid, const TrainingSet& data,
                      std::size_t folds = 5, std::size_t max_features = kMaxTfidfFeatures);

/// Predicts every case; supervised predictions never fail to parse.
PredictionSet predict_labels(const BaselineModel& model, const std::vector<LabeledRecord>& cases,
                             const std::string& model_name, const std::string& split_digest);

}  // namespace triage
