#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hlgen {

struct ScoreTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ScoreTriple make_score(double precision, double recall);

using Words = std::vector<std::string>;

// Plain words for scoring: merged entities expanded, sentence separators
// dropped.
Words scoring_words(std::string_view text);

// Clipped n-gram overlap.
ScoreTriple rouge_n(const Words& candidate, const Words& reference, int n);

// LCS-based, F1 with beta = 1.
ScoreTriple rouge_l(const Words& candidate, const Words& reference);

// Light suffix stripper used by the METEOR stem stage.
std::string stem_word(std::string_view word);

struct MeteorAlignment {
  int matches = 0;
  int chunks = 0;
  std::vector<std::pair<int, int>> pairs;  // (candidate index, reference index)
};

// Exact stage, then stem stage over the words left unmatched. Each stage
// takes a maximum matching and, among those, the fewest chunks.
MeteorAlignment meteor_align(const Words& candidate, const Words& reference);

// Fmean = 10PR / (R + 9P); score = Fmean * (1 - 0.5 (chunks/matches)^3).
double meteor(const Words& candidate, const Words& reference);

// Per-token embedding provider: d x n matrix, one column per token.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Eigen::MatrixXd embed(const Words& tokens) const = 0;
};

// Word vectors from a whitespace-separated text table ("word v1 ... vd" per
// line, GloVe layout). Words missing from the table get a fixed
// pseudo-random vector derived from the word's hash.
class TableEmbedder : public Embedder {
 public:
  static std::unique_ptr<TableEmbedder> from_file(const std::filesystem::path& path);
  explicit TableEmbedder(std::unordered_map<std::string, Eigen::VectorXd> table);
  Eigen::MatrixXd embed(const Words& tokens) const override;
  int dimension() const { return dimension_; }

 private:
  std::unordered_map<std::string, Eigen::VectorXd> table_;
  int dimension_ = 0;
};

// Greedy cosine matching; per-token maxima are floored at zero.
ScoreTriple bertscore(const Words& candidate, const Words& reference, const Embedder& embedder);

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
};

// Percentile bootstrap of the mean; percentiles use linear interpolation
// between order statistics.
ConfidenceInterval bootstrap_ci(const std::vector<double>& scores, int resamples = 1000,
                                double level = 0.95, uint64_t seed = 1);

// One generated highlight set with its reference.
struct DecodeRecord {
  std::string doc_id;
  std::string mode;
  std::string variant;
  std::string generated;
  std::string reference;
};

void write_decode_records(const std::vector<DecodeRecord>& records,
                          const std::filesystem::path& path);
std::vector<DecodeRecord> read_decode_records(const std::filesystem::path& path);

// Display label of a variant tag, e.g. "ner_pgm_cov" -> "NER+PGM+Cov".
std::string variant_label(std::string_view variant);

struct MetricSummary {
  bool available = true;
  double mean = 0.0;        // x 100
  double half_width = 0.0;  // x 100
};

enum MetricIndex { kRouge1, kRouge2, kRougeL, kMeteor, kBertScore, kMetricCount };

struct ReportRow {
  std::string mode;
  std::string variant;
  size_t n_examples = 0;
  MetricSummary metrics[kMetricCount];
};

struct MetricReport {
  std::vector<ReportRow> rows;  // ordered by mode, then variant
};

struct EvalOptions {
  const Embedder* embedder = nullptr;  // BERTScore reported as n/a when null
  int resamples = 1000;
  uint64_t seed = 1;
};

MetricReport evaluate_records(const std::vector<DecodeRecord>& records,
                              const EvalOptions& options);
MetricReport evaluate_corpus(const std::filesystem::path& decode_file,
                             const EvalOptions& options);

std::string report_tsv(const MetricReport& report);
std::string report_json(const MetricReport& report);
std::string report_table(const MetricReport& report);

}  // namespace hlgen
