#include "hlgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "hlgen/corpus.hpp"
#include "hlgen/entity_tokenizer.hpp"
#include "hlgen/error.hpp"
#include "hlgen/hash.hpp"
#include "hlgen/rng.hpp"
#include "hlgen/text.hpp"
#include "json.hpp"

namespace hlgen {
namespace {

using nlohmann::json;

// Search budget for the chunk-minimizing alignment; past it the best
// alignment found so far (or a plain maximum matching) is used.
constexpr long kAlignmentNodeCap = 50000;

std::map<Words, int> ngram_counts(const Words& words, int n) {
  std::map<Words, int> counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i) {
    ++counts[Words(words.begin() + static_cast<std::ptrdiff_t>(i),
                   words.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Kuhn's augmenting paths; returns match_of_candidate.
std::vector<int> maximum_matching(const std::vector<std::vector<int>>& edges, int n_ref) {
  std::vector<int> cand_of_ref(static_cast<size_t>(n_ref), -1);
  std::vector<int> ref_of_cand(edges.size(), -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int i) {
    for (int j : edges[static_cast<size_t>(i)]) {
      if (seen[static_cast<size_t>(j)]) continue;
      seen[static_cast<size_t>(j)] = 1;
      const int other = cand_of_ref[static_cast<size_t>(j)];
      if (other < 0 || augment(other)) {
        cand_of_ref[static_cast<size_t>(j)] = i;
        ref_of_cand[static_cast<size_t>(i)] = j;
        return true;
      }
    }
    return false;
  };
  for (int i = 0; i < static_cast<int>(edges.size()); ++i) {
    seen.assign(static_cast<size_t>(n_ref), 0);
    augment(i);
  }
  return ref_of_cand;
}

int count_chunks(const std::vector<int>& ref_of_cand) {
  int chunks = 0;
  int prev_i = -2;
  int prev_j = -2;
  for (int i = 0; i < static_cast<int>(ref_of_cand.size()); ++i) {
    const int j = ref_of_cand[static_cast<size_t>(i)];
    if (j < 0) continue;
    if (!(prev_i == i - 1 && prev_j == j - 1)) ++chunks;
    prev_i = i;
    prev_j = j;
  }
  return chunks;
}

// Adds a maximum matching over `edges` (candidate -> free reference
// positions) to `assigned`, choosing the one that minimizes total chunks.
class StageAligner {
 public:
  StageAligner(const std::vector<std::vector<int>>& edges, std::vector<int>& assigned,
               int n_ref)
      : edges_(edges), assigned_(assigned), n_ref_(n_ref) {}

  void run() {
    const std::vector<int> greedy = maximum_matching(edges_, n_ref_);
    target_ = static_cast<int>(std::count_if(greedy.begin(), greedy.end(), [](int j) { return j >= 0; }));
    if (target_ == 0) return;
    const size_t n = edges_.size();
    reachable_.assign(n + 1, 0);
    for (size_t i = n; i-- > 0;) reachable_[i] = reachable_[i + 1] + (edges_[i].empty() ? 0 : 1);
    used_.assign(static_cast<size_t>(n_ref_), 0);
    for (int j : assigned_) {
      if (j >= 0) used_[static_cast<size_t>(j)] = 1;
    }
    current_ = assigned_;
    search(0, 0, 0, -2, -2);
    if (best_.empty()) {
      best_ = assigned_;
      for (size_t i = 0; i < n; ++i) {
        if (greedy[i] >= 0) best_[i] = greedy[i];
      }
    }
    assigned_ = best_;
  }

 private:
  void search(size_t i, int count, int chunks, int prev_i, int prev_j) {
    if (++nodes_ > kAlignmentNodeCap && (!best_.empty() || nodes_ > 20 * kAlignmentNodeCap)) return;
    if (chunks >= best_chunks_) return;
    if (count + reachable_[i] < target_) return;
    if (i == edges_.size()) {
      best_chunks_ = chunks;
      best_ = current_;
      return;
    }
    const int ii = static_cast<int>(i);
    const int fixed = assigned_[i];
    if (fixed >= 0) {
      const bool joins = prev_i == ii - 1 && prev_j == fixed - 1;
      search(i + 1, count, chunks + (joins ? 0 : 1), ii, fixed);
      return;
    }
    const auto try_ref = [&](int j) {
      used_[static_cast<size_t>(j)] = 1;
      current_[i] = j;
      const bool joins = prev_i == ii - 1 && prev_j == j - 1;
      search(i + 1, count + 1, chunks + (joins ? 0 : 1), ii, j);
      current_[i] = -1;
      used_[static_cast<size_t>(j)] = 0;
    };
    // Extending the running chunk first finds good bounds early.
    const int next = prev_i == ii - 1 ? prev_j + 1 : -1;
    for (int j : edges_[i]) {
      if (j == next && !used_[static_cast<size_t>(j)]) try_ref(j);
    }
    for (int j : edges_[i]) {
      if (j != next && !used_[static_cast<size_t>(j)]) try_ref(j);
    }
    search(i + 1, count, chunks, prev_i, prev_j);
  }

  const std::vector<std::vector<int>>& edges_;
  std::vector<int>& assigned_;
  int n_ref_;
  int target_ = 0;
  std::vector<int> reachable_;
  std::vector<char> used_;
  std::vector<int> current_;
  std::vector<int> best_;
  int best_chunks_ = std::numeric_limits<int>::max();
  long nodes_ = 0;
};

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

int mode_rank(const std::string& mode) {
  try {
    return static_cast<int>(parse_input_mode(mode));
  } catch (const Error&) {
    return 100;
  }
}

int variant_rank(const std::string& variant) {
  static const char* const kOrder[] = {"pgm", "pgm_cov", "ner_pgm", "ner_pgm_cov"};
  for (int i = 0; i < 4; ++i) {
    if (variant == kOrder[i]) return i;
  }
  return 100;
}

const char* const kMetricKeys[kMetricCount] = {"rouge1", "rouge2", "rougeL", "meteor",
                                               "bertscore"};
const char* const kMetricTitles[kMetricCount] = {"ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR",
                                                 "BERTScore"};

}  // namespace

ScoreTriple make_score(double precision, double recall) {
  ScoreTriple s{precision, recall, 0.0};
  if (precision + recall > 0) s.f1 = 2 * precision * recall / (precision + recall);
  return s;
}

Words scoring_words(std::string_view text) {
  Words words;
  for (std::string& w : split_whitespace(unmerge_for_eval(text))) {
    if (w != kSentenceSeparator) words.push_back(std::move(w));
  }
  return words;
}

ScoreTriple rouge_n(const Words& candidate, const Words& reference, int n) {
  if (n < 1) throw Error(ErrorKind::kUsage, "rouge_n needs n >= 1");
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  if (cand.empty() || ref.empty()) return {};
  long overlap = 0;
  for (const auto& [gram, count] : cand) {
    const auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  const double cand_total = static_cast<double>(candidate.size()) - n + 1;
  const double ref_total = static_cast<double>(reference.size()) - n + 1;
  return make_score(overlap / cand_total, overlap / ref_total);
}

ScoreTriple rouge_l(const Words& candidate, const Words& reference) {
  if (candidate.empty() || reference.empty()) return {};
  std::vector<int> prev(reference.size() + 1, 0);
  std::vector<int> row(reference.size() + 1, 0);
  for (const std::string& c : candidate) {
    for (size_t j = 1; j <= reference.size(); ++j) {
      row[j] = c == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    }
    std::swap(prev, row);
  }
  const double lcs = prev.back();
  return make_score(lcs / static_cast<double>(candidate.size()),
                    lcs / static_cast<double>(reference.size()));
}

std::string stem_word(std::string_view word) {
  std::string w(word);
  const auto strip = [&](std::string_view suffix, std::string_view replacement,
                         size_t min_stem) {
    if (!ends_with(w, suffix) || w.size() - suffix.size() < min_stem) return false;
    w.resize(w.size() - suffix.size());
    w.append(replacement);
    return true;
  };
  if (strip("sses", "ss", 2) || strip("ies", "y", 2)) return w;
  if (strip("ingly", "", 3) || strip("edly", "", 3) || strip("ing", "", 3) ||
      strip("ed", "", 3) || strip("ly", "", 3)) {
    return w;
  }
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (strip("es", "", 3) || strip("s", "", 3)) return w;
  return w;
}

MeteorAlignment meteor_align(const Words& candidate, const Words& reference) {
  const int n_ref = static_cast<int>(reference.size());
  std::vector<int> assigned(candidate.size(), -1);

  std::vector<std::vector<int>> edges(candidate.size());
  for (size_t i = 0; i < candidate.size(); ++i) {
    for (int j = 0; j < n_ref; ++j) {
      if (candidate[i] == reference[static_cast<size_t>(j)]) edges[i].push_back(j);
    }
  }
  StageAligner(edges, assigned, n_ref).run();

  std::vector<char> ref_used(static_cast<size_t>(n_ref), 0);
  for (int j : assigned) {
    if (j >= 0) ref_used[static_cast<size_t>(j)] = 1;
  }
  std::vector<std::string> ref_stems;
  for (const std::string& r : reference) ref_stems.push_back(stem_word(r));
  for (size_t i = 0; i < candidate.size(); ++i) {
    edges[i].clear();
    if (assigned[i] >= 0) continue;
    const std::string stem = stem_word(candidate[i]);
    for (int j = 0; j < n_ref; ++j) {
      if (!ref_used[static_cast<size_t>(j)] && ref_stems[static_cast<size_t>(j)] == stem) {
        edges[i].push_back(j);
      }
    }
  }
  StageAligner(edges, assigned, n_ref).run();

  MeteorAlignment alignment;
  for (int i = 0; i < static_cast<int>(assigned.size()); ++i) {
    if (assigned[static_cast<size_t>(i)] >= 0) {
      alignment.pairs.emplace_back(i, assigned[static_cast<size_t>(i)]);
    }
  }
  alignment.matches = static_cast<int>(alignment.pairs.size());
  alignment.chunks = count_chunks(assigned);
  return alignment;
}

double meteor(const Words& candidate, const Words& reference) {
  const MeteorAlignment a = meteor_align(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = a.matches;
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10 * p * r / (r + 9 * p);
  const double penalty = 0.5 * std::pow(a.chunks / m, 3);
  return fmean * (1 - penalty);
}

std::unique_ptr<TableEmbedder> TableEmbedder::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing embedding table " + path.string());
  std::unordered_map<std::string, Eigen::VectorXd> table;
  std::string line;
  long dim = -1;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> values;
    double v;
    while (fields >> v) values.push_back(v);
    if (dim < 0) dim = static_cast<long>(values.size());
    if (values.empty() || static_cast<long>(values.size()) != dim) {
      throw Error(ErrorKind::kInput, path.string() + ":" + std::to_string(line_no) +
                                         ": inconsistent vector dimension");
    }
    table.emplace(word, Eigen::Map<Eigen::VectorXd>(values.data(), dim));
  }
  if (table.empty()) throw Error(ErrorKind::kInput, "embedding table " + path.string() + " is empty");
  return std::make_unique<TableEmbedder>(std::move(table));
}

TableEmbedder::TableEmbedder(std::unordered_map<std::string, Eigen::VectorXd> table)
    : table_(std::move(table)) {
  if (table_.empty()) throw Error(ErrorKind::kInput, "embedding table is empty");
  dimension_ = static_cast<int>(table_.begin()->second.size());
}

Eigen::MatrixXd TableEmbedder::embed(const Words& tokens) const {
  Eigen::MatrixXd out(dimension_, static_cast<Eigen::Index>(tokens.size()));
  for (size_t k = 0; k < tokens.size(); ++k) {
    const auto it = table_.find(tokens[k]);
    if (it != table_.end()) {
      out.col(static_cast<Eigen::Index>(k)) = it->second;
      continue;
    }
    Rng rng(fnv1a(tokens[k]));
    for (int d = 0; d < dimension_; ++d) out(d, static_cast<Eigen::Index>(k)) = rng.uniform(-1, 1);
  }
  return out;
}

ScoreTriple bertscore(const Words& candidate, const Words& reference, const Embedder& embedder) {
  if (candidate.empty() || reference.empty()) return {};
  const auto normalize = [](Eigen::MatrixXd m) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      const double norm = m.col(k).norm();
      if (norm > 0) m.col(k) /= norm;
    }
    return m;
  };
  const Eigen::MatrixXd c = normalize(embedder.embed(candidate));
  const Eigen::MatrixXd r = normalize(embedder.embed(reference));
  if (c.cols() != static_cast<Eigen::Index>(candidate.size()) ||
      r.cols() != static_cast<Eigen::Index>(reference.size()) || c.rows() != r.rows()) {
    throw Error(ErrorKind::kInternal, "embedder returned a matrix of the wrong shape");
  }
  const Eigen::MatrixXd sim = c.transpose() * r;  // candidate x reference
  const double precision = sim.rowwise().maxCoeff().cwiseMax(0.0).mean();
  const double recall = sim.colwise().maxCoeff().cwiseMax(0.0).mean();
  return make_score(precision, recall);
}

ConfidenceInterval bootstrap_ci(const std::vector<double>& scores, int resamples, double level,
                                uint64_t seed) {
  if (scores.empty()) throw Error(ErrorKind::kData, "bootstrap over an empty score list");
  if (resamples < 1) throw Error(ErrorKind::kUsage, "bootstrap needs at least one resample");
  if (!(level > 0 && level < 1)) throw Error(ErrorKind::kUsage, "confidence level must be in (0, 1)");
  const size_t n = scores.size();
  ConfidenceInterval ci;
  for (double s : scores) ci.mean += s;
  ci.mean /= static_cast<double>(n);

  Rng rng(seed);
  std::vector<double> means(static_cast<size_t>(resamples));
  for (double& m : means) {
    double sum = 0.0;
    for (size_t k = 0; k < n; ++k) sum += scores[static_cast<size_t>(rng.below(n))];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const auto quantile = [&](double p) {
    const double h = (static_cast<double>(means.size()) - 1) * p;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  const double tail = (1 - level) / 2;
  ci.half_width = std::max(0.0, (quantile(1 - tail) - quantile(tail)) / 2);
  return ci;
}

void write_decode_records(const std::vector<DecodeRecord>& records,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kInput, "cannot write " + path.string());
  for (const DecodeRecord& r : records) {
    const json j = {{"doc_id", r.doc_id},
                    {"mode", r.mode},
                    {"variant", r.variant},
                    {"generated", r.generated},
                    {"reference", r.reference}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::kInput, "short write on " + path.string());
}

std::vector<DecodeRecord> read_decode_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing decode file " + path.string());
  std::vector<DecodeRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      records.push_back({j.at("doc_id").get<std::string>(), j.at("mode").get<std::string>(),
                         j.at("variant").get<std::string>(), j.at("generated").get<std::string>(),
                         j.at("reference").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kInput,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::string variant_label(std::string_view variant) {
  if (variant == "pgm") return "PGM";
  if (variant == "pgm_cov") return "PGM+Cov";
  if (variant == "ner_pgm") return "NER+PGM";
  if (variant == "ner_pgm_cov") return "NER+PGM+Cov";
  return std::string(variant);
}

MetricReport evaluate_records(const std::vector<DecodeRecord>& records,
                              const EvalOptions& options) {
  if (records.empty()) throw Error(ErrorKind::kData, "no decode records to evaluate");
  std::map<std::tuple<int, std::string, int, std::string>, std::vector<const DecodeRecord*>> groups;
  for (const DecodeRecord& r : records) {
    groups[{mode_rank(r.mode), r.mode, variant_rank(r.variant), r.variant}].push_back(&r);
  }
  MetricReport report;
  for (const auto& [key, members] : groups) {
    ReportRow row;
    row.mode = std::get<1>(key);
    row.variant = std::get<3>(key);
    row.n_examples = members.size();
    std::vector<double> per_metric[kMetricCount];
    for (const DecodeRecord* r : members) {
      const Words cand = scoring_words(r->generated);
      const Words ref = scoring_words(r->reference);
      per_metric[kRouge1].push_back(rouge_n(cand, ref, 1).f1);
      per_metric[kRouge2].push_back(rouge_n(cand, ref, 2).f1);
      per_metric[kRougeL].push_back(rouge_l(cand, ref).f1);
      per_metric[kMeteor].push_back(meteor(cand, ref));
      if (options.embedder != nullptr) {
        per_metric[kBertScore].push_back(bertscore(cand, ref, *options.embedder).f1);
      }
    }
    for (int m = 0; m < kMetricCount; ++m) {
      if (per_metric[m].empty()) {
        row.metrics[m].available = false;
        continue;
      }
      const ConfidenceInterval ci = bootstrap_ci(per_metric[m], options.resamples, 0.95, options.seed);
      row.metrics[m].mean = 100 * ci.mean;
      row.metrics[m].half_width = 100 * ci.half_width;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

MetricReport evaluate_corpus(const std::filesystem::path& decode_file,
                             const EvalOptions& options) {
  const auto records = read_decode_records(decode_file);
  if (records.empty()) throw Error(ErrorKind::kData, "decode file " + decode_file.string() + " is empty");
  return evaluate_records(records, options);
}

std::string report_tsv(const MetricReport& report) {
  std::ostringstream out;
  out << "mode\tmodel\trouge1\trouge2\trougeL\tmeteor\tbertscore\tci_halfwidth_rougeL\tn_examples\n";
  for (const ReportRow& row : report.rows) {
    out << row.mode << '\t' << variant_label(row.variant);
    for (const MetricSummary& m : row.metrics) {
      out << '\t' << (m.available ? fixed2(m.mean) : "n/a");
    }
    out << '\t' << fixed2(row.metrics[kRougeL].half_width) << '\t' << row.n_examples << '\n';
  }
  return out.str();
}

std::string report_json(const MetricReport& report) {
  json rows = json::array();
  for (const ReportRow& row : report.rows) {
    json r = {{"mode", row.mode},
              {"variant", row.variant},
              {"model", variant_label(row.variant)},
              {"n_examples", row.n_examples}};
    for (int m = 0; m < kMetricCount; ++m) {
      const MetricSummary& s = row.metrics[m];
      r[kMetricKeys[m]] = s.available ? json{{"mean", s.mean}, {"ci_halfwidth", s.half_width}}
                                      : json(nullptr);
    }
    rows.push_back(r);
  }
  json doc = {{"rows", rows},
              {"scale", "F1 x 100, 95% bootstrap confidence interval"},
              {"bertscore", "raw F1, no baseline rescaling"},
              {"meteor", "exact and stem stages only"}};
  return doc.dump(2) + "\n";
}

std::string report_table(const MetricReport& report) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %-12s", "Mode", "Model");
  out << buf;
  for (const char* title : kMetricTitles) {
    std::snprintf(buf, sizeof(buf), " %15s", title);
    out << buf;
  }
  out << "      n\n";
  for (const ReportRow& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %-12s", row.mode.c_str(),
                  variant_label(row.variant).c_str());
    out << buf;
    for (const MetricSummary& m : row.metrics) {
      const std::string cell =
          m.available ? fixed2(m.mean) + " +/-" + fixed2(m.half_width) : std::string("n/a");
      std::snprintf(buf, sizeof(buf), " %15s", cell.c_str());
      out << buf;
    }
    out << "  " << std::string(5 - std::min<size_t>(5, std::to_string(row.n_examples).size()), ' ')
        << row.n_examples << '\n';
  }
  out << "\nScores are F1 x 100 with 95% bootstrap confidence half-widths.\n"
      << "METEOR uses exact and stem matching only (no synonym stage), so it is a lower bound "
         "on full METEOR.\n"
      << "BERTScore is raw F1 without baseline rescaling; n/a when no embedding table is "
         "configured.\n";
  return out.str();
}

}  // namespace hlgen
