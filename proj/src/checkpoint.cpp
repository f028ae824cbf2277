#include "hlgen/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hlgen/error.hpp"
#include "hlgen/hash.hpp"
#include "json.hpp"

namespace hlgen {
namespace {

using nlohmann::json;
using Matrix = Parameters<float>::Matrix;

constexpr char kMagic[8] = {'H', 'L', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, uint64_t value) {
  char bytes[8];
  std::memcpy(bytes, &value, sizeof(value));
  out.append(bytes, sizeof(bytes));
}

uint64_t get_u64(const std::string& in, size_t offset) {
  uint64_t value = 0;
  std::memcpy(&value, in.data() + offset, sizeof(value));
  return value;
}

json hyperparams_to_json(const Hyperparams& hp) {
  return {{"vocab_size", hp.vocab_size},         {"embedding_dim", hp.embedding_dim},
          {"hidden_dim", hp.hidden_dim},         {"coverage_enabled", hp.coverage_enabled},
          {"coverage_weight", hp.coverage_weight}, {"max_source_len", hp.max_source_len},
          {"max_target_len", hp.max_target_len}};
}

Hyperparams hyperparams_from_json(const json& j) {
  Hyperparams hp;
  hp.vocab_size = j.at("vocab_size").get<int>();
  hp.embedding_dim = j.at("embedding_dim").get<int>();
  hp.hidden_dim = j.at("hidden_dim").get<int>();
  hp.coverage_enabled = j.at("coverage_enabled").get<bool>();
  hp.coverage_weight = j.at("coverage_weight").get<double>();
  hp.max_source_len = j.at("max_source_len").get<int>();
  hp.max_target_len = j.at("max_target_len").get<int>();
  return hp;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorKind::kCheckpoint, "checkpoint " + path.string() + ": " + why);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json header;
  header["format"] = kFormatVersion;
  header["hyperparams"] = hyperparams_to_json(ckpt.hp);
  header["vocab_fingerprint"] = hex64(ckpt.vocab_fingerprint);
  header["step"] = ckpt.step;
  header["best_validation_loss"] =
      std::isfinite(ckpt.best_validation_loss) ? json(ckpt.best_validation_loss) : json(nullptr);

  std::string data;
  json groups = json::array();
  const auto add_groups = [&](const Parameters<float>& params, const char* prefix) {
    params.for_each([&](const char* name, const Matrix& m) {
      if (m.size() == 0) return;
      groups.push_back({{"name", std::string(prefix) + name},
                        {"rows", m.rows()},
                        {"cols", m.cols()},
                        {"offset", data.size()}});
      data.append(reinterpret_cast<const char*>(m.data()),
                  static_cast<size_t>(m.size()) * sizeof(float));
    });
  };
  add_groups(ckpt.params, "");
  add_groups(ckpt.accumulators, "accumulator/");
  header["groups"] = groups;
  header["data_bytes"] = data.size();

  const std::string header_text = header.dump();
  std::string blob(kMagic, sizeof(kMagic));
  put_u64(blob, header_text.size());
  blob.append(header_text);
  blob.append(data);
  Fnv1a checksum;
  checksum.update(blob);
  put_u64(blob, checksum.digest());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kInput, "cannot write checkpoint " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::kInput, "short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<uint64_t> expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing checkpoint " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const size_t min_size = sizeof(kMagic) + 16;
  if (blob.size() < min_size) corrupt(path, "file is truncated");
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) corrupt(path, "bad magic");
  const uint64_t stored_sum = get_u64(blob, blob.size() - 8);
  Fnv1a checksum;
  checksum.update(std::string_view(blob.data(), blob.size() - 8));
  if (checksum.digest() != stored_sum) corrupt(path, "checksum mismatch (truncated or corrupt)");

  const uint64_t header_len = get_u64(blob, sizeof(kMagic));
  const size_t header_begin = sizeof(kMagic) + 8;
  if (header_len > blob.size() - header_begin - 8) corrupt(path, "header length out of range");
  json header;
  try {
    header = json::parse(blob.substr(header_begin, header_len));
  } catch (const json::exception& e) {
    corrupt(path, std::string("unreadable header: ") + e.what());
  }
  const size_t data_begin = header_begin + header_len;
  const size_t data_size = blob.size() - 8 - data_begin;

  Checkpoint ckpt;
  try {
    if (header.at("format").get<int>() != kFormatVersion) corrupt(path, "unsupported format");
    ckpt.hp = hyperparams_from_json(header.at("hyperparams"));
    ckpt.hp.validate();
    ckpt.vocab_fingerprint =
        std::stoull(header.at("vocab_fingerprint").get<std::string>(), nullptr, 16);
    ckpt.step = header.at("step").get<int64_t>();
    const json& best = header.at("best_validation_loss");
    ckpt.best_validation_loss = best.is_null() ? std::nan("") : best.get<double>();
    if (header.at("data_bytes").get<size_t>() != data_size) corrupt(path, "data size mismatch");

    if (expected_fingerprint && *expected_fingerprint != ckpt.vocab_fingerprint) {
      throw Error(ErrorKind::kCheckpoint,
                  "checkpoint " + path.string() + " was trained with vocabulary " +
                      hex64(ckpt.vocab_fingerprint) + " but the supplied vocabulary is " +
                      hex64(*expected_fingerprint));
    }

    ckpt.params = init_parameters<float>(ckpt.hp, 0);
    ckpt.accumulators = ckpt.params.zeros_like();
    const auto restore = [&](Parameters<float>& params, const char* prefix) {
      params.for_each([&](const char* name, Matrix& m) {
        if (m.size() == 0) return;
        const std::string full = std::string(prefix) + name;
        const json* group = nullptr;
        for (const json& g : header.at("groups")) {
          if (g.at("name").get<std::string>() == full) group = &g;
        }
        if (group == nullptr) corrupt(path, "missing parameter group " + full);
        const auto rows = group->at("rows").get<Eigen::Index>();
        const auto cols = group->at("cols").get<Eigen::Index>();
        const auto offset = group->at("offset").get<size_t>();
        if (rows != m.rows() || cols != m.cols()) corrupt(path, "shape mismatch for " + full);
        const size_t bytes = static_cast<size_t>(m.size()) * sizeof(float);
        if (offset > data_size || bytes > data_size - offset) {
          corrupt(path, "group " + full + " extends past the data section");
        }
        std::memcpy(m.data(), blob.data() + data_begin + offset, bytes);
      });
    };
    restore(ckpt.params, "");
    restore(ckpt.accumulators, "accumulator/");
  } catch (const json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  } catch (const std::invalid_argument&) {
    corrupt(path, "malformed vocabulary fingerprint");
  }
  return ckpt;
}

}  // namespace hlgen
