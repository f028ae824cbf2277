// Command-line driver: prepare -> vocab -> train -> decode -> eval, plus a
// side-by-side case-study view.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hlgen/config.hpp"
#include "hlgen/error.hpp"
#include "hlgen/pipeline.hpp"

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> corpus;
  std::optional<std::string> workdir;
  std::optional<std::string> mode;
  std::optional<std::string> variant;
  std::optional<uint64_t> seed;
  std::optional<std::string> doc_id;
  bool force = false;
  std::vector<std::string> settings;
  std::vector<std::string> decode_files;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value settings file");
  cmd->add_option("--corpus", f.corpus, "JSON-lines corpus file");
  cmd->add_option("--workdir", f.workdir, "directory holding all stage artifacts");
  cmd->add_option("--mode", f.mode, "abstract | abstract_conclusion | introduction_conclusion");
  cmd->add_option("--variant", f.variant, "pgm | pgm_cov | ner_pgm | ner_pgm_cov");
  cmd->add_option("--seed", f.seed, "seed for splitting, initialization and batching");
  cmd->add_flag("--force", f.force, "overwrite existing prepared data");
  cmd->add_option("--set", f.settings, "override a setting, key=value (repeatable)")
      ->allow_extra_args(false);
}

hlgen::RunConfig resolve(const Flags& f) {
  hlgen::RunConfig cfg;
  if (f.config) hlgen::apply_config_file(cfg, *f.config);
  if (f.corpus) hlgen::apply_setting(cfg, "corpus", *f.corpus);
  if (f.workdir) hlgen::apply_setting(cfg, "workdir", *f.workdir);
  if (f.mode) hlgen::apply_setting(cfg, "mode", *f.mode);
  if (f.variant) hlgen::apply_setting(cfg, "variant", *f.variant);
  if (f.seed) hlgen::apply_setting(cfg, "seed", std::to_string(*f.seed));
  if (f.doc_id) hlgen::apply_setting(cfg, "doc_id", *f.doc_id);
  if (f.force) cfg.force = true;
  for (const std::string& s : f.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw hlgen::Error(hlgen::ErrorKind::kUsage, "--set expects key=value, got '" + s + "'");
    }
    hlgen::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

int exit_code(hlgen::ErrorKind kind) {
  switch (kind) {
    case hlgen::ErrorKind::kUsage:
      return 2;
    case hlgen::ErrorKind::kInput:
      return 3;
    case hlgen::ErrorKind::kData:
      return 4;
    case hlgen::ErrorKind::kMissingArtifact:
      return 5;
    case hlgen::ErrorKind::kCheckpoint:
      return 6;
    case hlgen::ErrorKind::kDivergence:
      return 7;
    case hlgen::ErrorKind::kInternal:
      return 70;
  }
  return 70;
}

int fail(std::string_view category, const std::string& message, int code) {
  std::string line = message;
  for (char& c : line) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error[" << category << "]: " << line << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"highlightgen: research-highlight generation with pointer-generator models"};
  app.require_subcommand(1);
  Flags flags;

  auto* prepare = app.add_subcommand("prepare", "clean, split and cache entity spans for a corpus");
  auto* vocab = app.add_subcommand("vocab", "build the vocabulary for a variant");
  auto* train = app.add_subcommand("train", "train a variant and keep its best checkpoint");
  auto* decode = app.add_subcommand("decode", "beam-decode a split with a trained checkpoint");
  auto* eval = app.add_subcommand("eval", "score decode files and write the report");
  auto* casestudy = app.add_subcommand("casestudy", "show all four variants on one document");
  for (CLI::App* cmd : {prepare, vocab, train, decode, eval, casestudy}) add_common(cmd, flags);
  eval->add_option("decode_files", flags.decode_files,
                   "decode files to score (default: every decode file in the workdir)");
  casestudy->add_option("--doc-id", flags.doc_id, "document to show")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const hlgen::RunConfig cfg = resolve(flags);
    if (prepare->parsed()) hlgen::cmd_prepare(cfg, std::cout);
    if (vocab->parsed()) hlgen::cmd_vocab(cfg, std::cout);
    if (train->parsed()) hlgen::cmd_train(cfg, std::cout);
    if (decode->parsed()) hlgen::cmd_decode(cfg, std::cout);
    if (eval->parsed()) {
      std::vector<std::filesystem::path> files(flags.decode_files.begin(), flags.decode_files.end());
      hlgen::cmd_eval(cfg, files, std::cout);
    }
    if (casestudy->parsed()) hlgen::cmd_casestudy(cfg, std::cout);
  } catch (const hlgen::Error& e) {
    return fail(hlgen::error_kind_name(e.kind()), e.what(), exit_code(e.kind()));
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("input", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 70);
  }
  return 0;
}
