#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "hlgen/config.hpp"
#include "hlgen/entity_tokenizer.hpp"

namespace hlgen {

// Artifact locations inside a workdir. Prepared data is per input mode;
// vocabularies, checkpoints and decodes are per (mode, variant).
struct WorkdirLayout {
  explicit WorkdirLayout(const RunConfig& cfg);

  std::filesystem::path prepared_dir;
  std::filesystem::path split_file(const std::string& split) const;  // train, val, test
  std::filesystem::path manifest_file() const;
  std::filesystem::path split_manifest_file() const;
  std::filesystem::path span_cache_file() const;

  std::filesystem::path variant_dir;
  std::filesystem::path vocab_file() const;
  std::filesystem::path checkpoint_file() const;
  std::filesystem::path loss_curve_file() const;
  std::filesystem::path decode_file() const;

  std::filesystem::path report_tsv;
  std::filesystem::path report_txt;
  std::filesystem::path report_json;
};

// Token-index entity spans of one example's cleaned source and target.
struct CachedSpans {
  std::vector<EntitySpan> source;
  std::vector<EntitySpan> target;
};

// Model-ready token sequences of one example under the configured variant.
struct PreparedTokens {
  std::string doc_id;
  TokenSequence source;
  TokenSequence target;
  std::string reference;  // cleaned target text
};

std::vector<PreparedTokens> load_prepared_tokens(const RunConfig& cfg, const std::string& split);

// Commands print the resolved configuration to out before running.
void cmd_prepare(const RunConfig& cfg, std::ostream& out);
void cmd_vocab(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_decode(const RunConfig& cfg, std::ostream& out);
// Scores the given decode files, or every variant's decode file in the
// workdir when none are given.
void cmd_eval(const RunConfig& cfg, const std::vector<std::filesystem::path>& decode_files,
              std::ostream& out);
void cmd_casestudy(const RunConfig& cfg, std::ostream& out);

}  // namespace hlgen
