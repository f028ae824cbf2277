#include "hlgen/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hlgen/error.hpp"

namespace hlgen {
namespace {

std::string_view trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorKind::kUsage,
              "invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value);
  return out;
}

// from_chars for floating point is missing from older standard libraries.
double parse_double(std::string_view key, std::string_view value) {
  const std::string text(value);
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    bad_value(key, value);
  }
  if (used != text.size()) bad_value(key, value);
  return out;
}

int parse_positive(std::string_view key, std::string_view value) {
  const int v = parse_number<int>(key, value);
  if (v < 1) bad_value(key, value);
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value);
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kPgm:
      return "pgm";
    case Variant::kPgmCov:
      return "pgm_cov";
    case Variant::kNerPgm:
      return "ner_pgm";
    case Variant::kNerPgmCov:
      return "ner_pgm_cov";
  }
  return "pgm";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw Error(ErrorKind::kUsage, "unknown variant '" + std::string(name) +
                                     "' (expected pgm, pgm_cov, ner_pgm or ner_pgm_cov)");
}

bool variant_uses_ner(Variant v) { return v == Variant::kNerPgm || v == Variant::kNerPgmCov; }

bool variant_uses_coverage(Variant v) {
  return v == Variant::kPgmCov || v == Variant::kNerPgmCov;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "corpus") {
    cfg.corpus = std::string(value);
  } else if (key == "workdir") {
    cfg.workdir = std::string(value);
  } else if (key == "mode") {
    try {
      cfg.mode = parse_input_mode(value);
    } catch (const Error&) {
      bad_value(key, value);
    }
  } else if (key == "variant") {
    cfg.variant = parse_variant(value);
  } else if (key == "seed") {
    cfg.seed = parse_number<uint64_t>(key, value);
    cfg.train.seed = cfg.seed;
  } else if (key == "force") {
    cfg.force = parse_bool(key, value);
  } else if (key == "vocab_size") {
    cfg.max_vocab_size = parse_positive(key, value);
  } else if (key == "embedding_dim") {
    cfg.embedding_dim = parse_positive(key, value);
  } else if (key == "hidden_dim") {
    cfg.hidden_dim = parse_positive(key, value);
  } else if (key == "max_source_len") {
    cfg.max_source_len = parse_positive(key, value);
  } else if (key == "max_target_len") {
    cfg.max_target_len = parse_positive(key, value);
  } else if (key == "batch_size") {
    cfg.train.batch_size = parse_positive(key, value);
  } else if (key == "learning_rate") {
    cfg.train.learning_rate = parse_double(key, value);
  } else if (key == "initial_accumulator") {
    cfg.train.initial_accumulator = parse_double(key, value);
  } else if (key == "max_grad_norm") {
    cfg.train.max_grad_norm = parse_double(key, value);
  } else if (key == "max_steps") {
    cfg.train.max_steps = parse_number<int64_t>(key, value);
  } else if (key == "coverage_finetune_steps") {
    cfg.train.coverage_finetune_steps = parse_number<int64_t>(key, value);
  } else if (key == "validate_every") {
    cfg.train.validate_every = parse_number<int64_t>(key, value);
  } else if (key == "coverage_weight") {
    cfg.train.coverage_weight = parse_double(key, value);
  } else if (key == "beam_width") {
    cfg.beam_width = parse_positive(key, value);
  } else if (key == "max_decode_length") {
    cfg.max_decode_length = parse_positive(key, value);
  } else if (key == "decode_split") {
    if (value != "train" && value != "val" && value != "test") bad_value(key, value);
    cfg.decode_split = std::string(value);
  } else if (key == "ner_backend") {
    cfg.ner_backend = std::string(value);
  } else if (key == "split_manifest") {
    cfg.split_manifest = std::string(value);
  } else if (key == "embeddings") {
    cfg.embeddings = std::string(value);
  } else if (key == "bootstrap_resamples") {
    cfg.bootstrap_resamples = parse_positive(key, value);
  } else if (key == "doc_id") {
    cfg.doc_id = std::string(value);
  } else {
    throw Error(ErrorKind::kUsage, "unknown setting '" + std::string(key) + "'");
  }
  cfg.train.validate();
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing config file " + path.string());
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kUsage,
                  path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_setting(cfg, trim(view.substr(0, eq)), view.substr(eq + 1));
  }
}

int effective_source_len(const RunConfig& cfg) {
  return cfg.max_source_len.value_or(source_token_limit(cfg.mode));
}

Hyperparams model_hyperparams(const RunConfig& cfg, int vocab_size) {
  Hyperparams hp;
  hp.vocab_size = vocab_size;
  hp.embedding_dim = cfg.embedding_dim;
  hp.hidden_dim = cfg.hidden_dim;
  hp.coverage_enabled = variant_uses_coverage(cfg.variant);
  hp.coverage_weight = cfg.train.coverage_weight;
  hp.max_source_len = effective_source_len(cfg);
  hp.max_target_len = cfg.max_target_len;
  return hp;
}

std::string describe_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "corpus = " << cfg.corpus.string() << '\n'
      << "workdir = " << cfg.workdir.string() << '\n'
      << "mode = " << input_mode_name(cfg.mode) << '\n'
      << "variant = " << variant_name(cfg.variant) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "vocab_size = " << cfg.max_vocab_size << '\n'
      << "embedding_dim = " << cfg.embedding_dim << '\n'
      << "hidden_dim = " << cfg.hidden_dim << '\n'
      << "max_source_len = " << effective_source_len(cfg) << '\n'
      << "max_target_len = " << cfg.max_target_len << '\n'
      << "batch_size = " << cfg.train.batch_size << '\n'
      << "learning_rate = " << cfg.train.learning_rate << '\n'
      << "initial_accumulator = " << cfg.train.initial_accumulator << '\n'
      << "max_grad_norm = " << cfg.train.max_grad_norm << '\n'
      << "max_steps = " << cfg.train.max_steps << '\n'
      << "coverage_finetune_steps = " << cfg.train.coverage_finetune_steps << '\n'
      << "validate_every = " << cfg.train.validate_every << '\n'
      << "coverage_weight = " << cfg.train.coverage_weight << '\n'
      << "beam_width = " << cfg.beam_width << '\n'
      << "max_decode_length = " << cfg.max_decode_length << '\n'
      << "decode_split = " << cfg.decode_split << '\n'
      << "ner_backend = " << (cfg.ner_backend.empty() ? "(environment/default)" : cfg.ner_backend)
      << '\n'
      << "split_manifest = " << cfg.split_manifest.string() << '\n'
      << "embeddings = " << cfg.embeddings.string() << '\n'
      << "bootstrap_resamples = " << cfg.bootstrap_resamples << '\n';
  return out.str();
}

}  // namespace hlgen
