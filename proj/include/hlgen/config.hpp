#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "hlgen/corpus.hpp"
#include "hlgen/model.hpp"
#include "hlgen/trainer.hpp"

namespace hlgen {

enum class Variant { kPgm, kPgmCov, kNerPgm, kNerPgmCov };

inline constexpr Variant kAllVariants[] = {Variant::kPgm, Variant::kPgmCov, Variant::kNerPgm,
                                           Variant::kNerPgmCov};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
bool variant_uses_ner(Variant v);
bool variant_uses_coverage(Variant v);

struct RunConfig {
  std::filesystem::path corpus;
  std::filesystem::path workdir = "work";
  InputMode mode = InputMode::kAbstract;
  Variant variant = Variant::kPgm;
  uint64_t seed = 1;
  bool force = false;

  int max_vocab_size = 50000;
  int embedding_dim = 128;
  int hidden_dim = 256;
  std::optional<int> max_source_len;  // defaults to the mode's limit
  int max_target_len = kTargetTokenLimit;
  TrainConfig train{.max_steps = 50000};

  int beam_width = 4;
  int max_decode_length = 100;
  std::string decode_split = "test";

  std::string ner_backend;  // empty: environment, then the built-in default
  std::filesystem::path split_manifest;
  std::filesystem::path embeddings;  // BERTScore word vectors; empty: n/a
  int bootstrap_resamples = 1000;
  std::string doc_id;
};

// Applies one key=value setting. Unknown keys and malformed values throw
// ErrorKind::kUsage.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

// Flat "key = value" file; '#' starts a comment.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

int effective_source_len(const RunConfig& cfg);

// Model hyperparameters for a vocabulary of the given size.
Hyperparams model_hyperparams(const RunConfig& cfg, int vocab_size);

// One "key = value" line per setting, in a fixed order.
std::string describe_config(const RunConfig& cfg);

}  // namespace hlgen
