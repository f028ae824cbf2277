#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "hlgen/error.hpp"
#include "hlgen/trainer.hpp"
#include "test_support.hpp"

using namespace hlgen;

namespace {

double global_norm(const Parameters<float>& p) {
  double sq = 0;
  p.for_each([&](const char*, const auto& m) { sq += m.template cast<double>().squaredNorm(); });
  return std::sqrt(sq);
}

Parameters<float> filled(const Hyperparams& hp, float value) {
  auto p = init_parameters<float>(hp, 1);
  p.for_each([&](const char*, auto& m) { m.setConstant(value); });
  return p;
}

int64_t parameter_count(const Parameters<float>& p) {
  int64_t n = 0;
  p.for_each([&](const char*, const auto& m) { n += m.size(); });
  return n;
}

bool same(const Parameters<float>& a, const Parameters<float>& b) {
  std::vector<Parameters<float>::Matrix> xs;
  a.for_each([&](const char*, const auto& m) { xs.push_back(m); });
  size_t k = 0;
  bool equal = true;
  b.for_each([&](const char*, const auto& m) { equal = equal && xs[k++] == m; });
  return equal;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hlgen_trainer_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("clipping rescales only above the threshold") {
    const Hyperparams hp = support::tiny_hyperparams(true);
    auto g = filled(hp, 1.0f);
    const double n = std::sqrt(static_cast<double>(parameter_count(g)));
    g.for_each([&](const char*, auto& m) { m *= static_cast<float>(2.4 / n); });
    CHECK(clip_gradients(g, 1.2) == doctest::Approx(2.4).epsilon(1e-5));
    CHECK(global_norm(g) == doctest::Approx(1.2).epsilon(1e-5));
    CHECK(g.embedding(0, 0) == doctest::Approx(1.2 / n).epsilon(1e-5));

    g.for_each([&](const char*, auto& m) { m.setConstant(static_cast<float>(1.0 / n)); });
    const float before = g.output2_b(0, 0);
    CHECK(clip_gradients(g, 1.2) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(g.output2_b(0, 0) == before);

    auto z = filled(hp, 0.0f);
    CHECK(clip_gradients(z, 1.2) == 0.0);
    CHECK(global_norm(z) == 0.0);
  }

  TEST_CASE("non-finite gradients name their group") {
    const Hyperparams hp = support::tiny_hyperparams(false);
    auto g = filled(hp, 0.0f);
    g.pgen_ws(1, 0) = std::numeric_limits<float>::quiet_NaN();
    try {
      clip_gradients(g, 1.2);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kDivergence);
      CHECK(std::string(e.what()).find("pgen_ws") != std::string::npos);
    }
  }

  TEST_CASE("adagrad update and frozen groups") {
    const Hyperparams hp = support::tiny_hyperparams(true);
    auto params = filled(hp, 0.0f);
    auto grads = filled(hp, 0.5f);
    AdagradOptimizer opt(params, 0.15, 0.1);
    opt.apply(params, grads, {"attention_wc"});
    const double expected = -0.15 * 0.5 / std::sqrt(0.1 + 0.25);
    CHECK(params.embedding(0, 0) == doctest::Approx(expected).epsilon(1e-5));
    CHECK(opt.accumulators().embedding(0, 0) == doctest::Approx(0.35).epsilon(1e-6));
    CHECK(params.attention_wc.isZero());
    CHECK(opt.accumulators().attention_wc(0, 0) == doctest::Approx(0.1));
  }

  TEST_CASE("batcher covers every example once per epoch") {
    std::vector<int> lengths;
    for (int i = 0; i < 37; ++i) lengths.push_back((i * 7) % 23);
    Batcher a(lengths, 4, 11);
    Batcher b(lengths, 4, 11);
    std::vector<int> seen(37, 0);
    size_t drawn = 0;
    while (drawn < 37) {
      const auto batch = a.next_batch();
      CHECK(batch == b.next_batch());
      CHECK(batch.size() <= 4);
      for (size_t i : batch) ++seen[i];
      drawn += batch.size();
    }
    CHECK(drawn == 37);
    for (int s : seen) CHECK(s == 1);
  }

  TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }

  TEST_CASE("zero steps returns the initial parameters") {
    Rng rng(5);
    const Hyperparams hp = support::tiny_hyperparams(false);
    const std::vector<EncodedExample> data = {support::random_example(rng, hp, 5, 3)};
    TrainConfig cfg;
    cfg.max_steps = 0;
    const TrainResult r = train(data, data, hp, cfg, 0);
    CHECK(r.curve.empty());
    CHECK(!r.diverged);
    CHECK(same(r.best.params, init_parameters<float>(hp, cfg.seed)));
  }

  TEST_CASE("single example loss decreases") {
    Rng rng(8);
    const Hyperparams hp = support::tiny_hyperparams(false, 12, 8, 6);
    const std::vector<EncodedExample> data = {support::random_example(rng, hp, 8, 5, 0)};
    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.max_steps = 200;
    cfg.validate_every = 50;
    const TrainResult r = train(data, data, hp, cfg, 0);
    REQUIRE(r.curve.size() == 4);
    for (size_t i = 1; i < r.curve.size(); ++i) {
      CHECK(r.curve[i].train_loss < r.curve[i - 1].train_loss);
    }
    CHECK(r.curve.back().validation_loss < std::log(12.0));
  }

  TEST_CASE("coverage weight switches on at the phase boundary") {
    Rng rng(2);
    const Hyperparams hp = support::tiny_hyperparams(true);
    std::vector<EncodedExample> data;
    for (int i = 0; i < 3; ++i) data.push_back(support::random_example(rng, hp, 6, 4));
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.max_steps = 20;
    cfg.coverage_finetune_steps = 10;
    cfg.validate_every = 5;
    const TrainResult r = train(data, data, hp, cfg, 7);
    REQUIRE(r.curve.size() == 6);
    for (size_t i = 0; i < r.curve.size(); ++i) {
      const bool second = i >= 4;
      CHECK(r.curve[i].phase == (second ? 2 : 1));
      CHECK(r.curve[i].coverage_weight == (second ? 1.0 : 0.0));
    }
    // The best checkpoint comes from the fine-tuning phase.
    CHECK(r.best.step > 20);
    // The coverage weight only moves once coverage is active.
    const auto init = init_parameters<float>(hp, cfg.seed);
    CHECK(r.best.params.attention_wc != init.attention_wc);

    TrainConfig plain = cfg;
    plain.coverage_finetune_steps = 0;
    const TrainResult p = train(data, data, hp, plain, 7);
    CHECK(p.last.params.attention_wc == init.attention_wc);
  }

  TEST_CASE("validation is deterministic and rejects empty input") {
    Rng rng(4);
    const Hyperparams hp = support::tiny_hyperparams(true);
    std::vector<EncodedExample> data;
    for (int i = 0; i < 4; ++i) data.push_back(support::random_example(rng, hp, 6, 4));
    const auto params = init_parameters<float>(hp, 3);
    const LossOptions opt{true, 1.0};
    CHECK(validate(params, hp, data, opt) == validate(params, hp, data, opt));
    double sum = 0;
    for (const auto& ex : data) sum += sequence_loss(ex, params, hp, opt).total;
    CHECK(validate(params, hp, data, opt) == doctest::Approx(sum / 4).epsilon(1e-9));
    CHECK_THROWS_AS(validate(params, hp, {}, opt), Error);
  }

  TEST_CASE("training is deterministic for a seed") {
    Rng rng(6);
    const Hyperparams hp = support::tiny_hyperparams(false);
    std::vector<EncodedExample> data;
    for (int i = 0; i < 5; ++i) data.push_back(support::random_example(rng, hp, 5, 3));
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.max_steps = 15;
    cfg.validate_every = 5;
    const TrainResult a = train(data, data, hp, cfg, 1);
    const TrainResult b = train(data, data, hp, cfg, 1);
    CHECK(same(a.last.params, b.last.params));
    REQUIRE(a.curve.size() == b.curve.size());
    for (size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].train_loss == b.curve[i].train_loss);
    cfg.seed = 2;
    CHECK(!same(train(data, data, hp, cfg, 1).last.params, a.last.params));
  }

  TEST_CASE("outputs are written during training") {
    Rng rng(1);
    const Hyperparams hp = support::tiny_hyperparams(false);
    const std::vector<EncodedExample> data = {support::random_example(rng, hp, 5, 3)};
    TrainConfig cfg;
    cfg.max_steps = 10;
    cfg.validate_every = 5;
    const auto ckpt = temp_path("out.bin");
    const auto curve = temp_path("curve.tsv");
    std::filesystem::remove(curve);
    int calls = 0;
    TrainOutputs out{ckpt, curve, [&](const LossCurvePoint&) { ++calls; }};
    const TrainResult r = train(data, data, hp, cfg, 99, out);
    CHECK(calls == 2);
    const auto points = read_loss_curve(curve);
    REQUIRE(points.size() == 2);
    CHECK(points[1].step == 10);
    CHECK(points[1].validation_loss == doctest::Approx(r.curve[1].validation_loss).epsilon(1e-6));
    CHECK(load_checkpoint(ckpt, 99).step == r.best.step);
    std::filesystem::remove(ckpt);
    std::filesystem::remove(curve);
  }

  TEST_CASE("checkpoint round trip and rejection") {
    const Hyperparams hp = support::tiny_hyperparams(true);
    Checkpoint c;
    c.hp = hp;
    c.params = init_parameters<float>(hp, 12);
    c.accumulators = c.params.zeros_like();
    c.accumulators.embedding.setConstant(0.3f);
    c.step = 42;
    c.best_validation_loss = 1.25;
    c.vocab_fingerprint = 0xabcdef0123456789ULL;
    const auto path = temp_path("ckpt.bin");
    save_checkpoint(c, path);

    const Checkpoint back = load_checkpoint(path, c.vocab_fingerprint);
    CHECK(back.hp == hp);
    CHECK(back.step == 42);
    CHECK(back.best_validation_loss == 1.25);
    CHECK(same(back.params, c.params));
    CHECK(same(back.accumulators, c.accumulators));
    const auto again = temp_path("ckpt2.bin");
    save_checkpoint(back, again);
    CHECK(slurp(again) == slurp(path));

    try {
      load_checkpoint(path, 1);
      FAIL("expected fingerprint rejection");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kCheckpoint);
    }

    const std::string bytes = slurp(path);
    {
      std::ofstream out(again, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    try {
      load_checkpoint(again);
      FAIL("expected corrupt checkpoint");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kCheckpoint);
    }
    try {
      load_checkpoint(temp_path("absent.bin"));
      FAIL("expected missing artifact");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingArtifact);
    }
    std::filesystem::remove(path);
    std::filesystem::remove(again);
  }

  TEST_CASE("clipped norm never exceeds the threshold") {
    Rng rng(17);
    const Hyperparams hp = support::tiny_hyperparams(true);
    for (int trial = 0; trial < 50; ++trial) {
      auto g = filled(hp, 0.0f);
      const double scale = std::exp(rng.uniform(-5, 5));
      g.for_each([&](const char*, auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(scale * rng.uniform(-1, 1));
      });
      const double before = clip_gradients(g, 1.2);
      const double after = global_norm(g);
      CHECK(after <= 1.2 * (1 + 1e-5));
      if (before <= 1.2) CHECK(after == doctest::Approx(before).epsilon(1e-6));
    }
  }
}
