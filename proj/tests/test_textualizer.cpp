#include <doctest.h>

#include "support.hpp"

#include "tvdb/bridge.hpp"
#include "tvdb/editor.hpp"
#include "tvdb/errors.hpp"
#include "tvdb/textualizer.hpp"
#include "tvdb/toydata.hpp"

#include <cmath>

using namespace tvdb;
using test::untrained_weights;

namespace {

BridgeConfig tiny_bridge() {
  BridgeConfig c;
  c.steps = 4;
  c.epochs = 2;
  c.learning_rate = 0.01;
  return c;
}

const PromptSet& prompts() {
  static const PromptSet set = make_prompt_set(2, 2, TransformSpec::color_shift({0.2, 0.2, 0.2}), 11);
  return set;
}

}  // namespace

TEST_CASE("beta weights") {
  CHECK(beta(1, 50, 1.0) == 1.0);
  CHECK(beta(50, 50, 1.0) == doctest::Approx(std::exp(-49.0)).epsilon(1e-12));
  CHECK(beta(25, 50, 0.5) == doctest::Approx(std::exp(-12.0)).epsilon(1e-12));
  for (int t = 1; t <= 50; ++t) CHECK(beta(t, 50, 0.0) == 1.0);
  CHECK(beta(50, 50, 1.0, true) == 1.0);
  CHECK(beta(1, 50, 1.0, true) == doctest::Approx(std::exp(-49.0)).epsilon(1e-12));
  // Monotone toward the final step.
  for (int t = 2; t <= 50; ++t) CHECK(beta(t, 50, 1.0) < beta(t - 1, 50, 1.0));
  CHECK_THROWS_AS(beta(0, 50, 1.0), DomainError);
  CHECK_THROWS_AS(beta(51, 50, 1.0), DomainError);
}

TEST_CASE("step loss values") {
  const ImageTensor a(Mat::Zero(3, 4), 2, 2);
  CHECK(step_loss(a, a, 1, 10, 1.0) == 0.0);
  Mat u = Mat::Zero(3, 4);
  u(1, 2) = 1.0;
  CHECK(step_loss(ImageTensor(u, 2, 2), a, 1, 10, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(step_loss(ImageTensor(u, 2, 2), a, 10, 10, 1.0) == doctest::Approx(std::exp(-9.0)).epsilon(1e-12));
  Mat v = Mat::Constant(3, 4, 0.5);
  CHECK(step_loss(ImageTensor(v, 2, 2), a, 1, 10, 0.0) == doctest::Approx(std::sqrt(12 * 0.25)).epsilon(1e-15));
  CHECK_THROWS_AS(step_loss(a, ImageTensor(Mat::Zero(3, 16), 4, 4), 1, 10, 1.0), DomainError);
}

TEST_CASE("step loss gradient matches finite differences") {
  std::mt19937_64 rng(5);
  const Mat target = test::random_mat(rng, 3, 16);
  const Mat x0 = test::random_mat(rng, 3, 16);
  const double weight = 0.37;
  ad::Tape tape;
  ad::Var x = tape.leaf(x0, true);
  ad::Var loss = step_loss(tape, x, target, weight);
  CHECK(tape.value(loss)(0, 0) == doctest::Approx(weight * (x0 - target).norm()).epsilon(1e-13));
  tape.backward(loss);
  const Mat g = tape.grad(x);
  auto f = [&](const Mat& m) { return weight * (m - target).norm(); };
  for (Eigen::Index i = 0; i < x0.size(); i += 3) {
    CHECK(test::rel_err(g.data()[i], test::central_difference(f, x0, i, 1e-6)) < 1e-6);
  }
  ad::Tape other;
  CHECK_THROWS_AS(step_loss(other, other.leaf(Mat::Zero(2, 2)), target, 1.0), DomainError);
}

TEST_CASE("gaussian embedding initialisation") {
  const auto& w = untrained_weights();
  const PromptEmbedding a = init_embedding(w, 4, nullptr, 9);
  const PromptEmbedding b = init_embedding(w, 4, nullptr, 9);
  const PromptEmbedding c = init_embedding(w, 4, nullptr, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.learnable() == 4);
  CHECK(a.k() == w.config().token_capacity);
  const Mat& table = w.token_table();
  CHECK(a.tokens().row(0) == table.row(0));
  CHECK(a.tokens().row(5) == table.row(1));
  for (int r = 6; r < a.k(); ++r) CHECK(a.tokens().row(r) == table.row(2));
  // Sample spread of 4 x 64 draws from N(0, 0.02^2).
  const Mat rows = a.learnable_rows();
  const double sd = std::sqrt(rows.array().square().mean());
  CHECK(sd > 0.015);
  CHECK(sd < 0.025);
  CHECK(init_embedding(w, 0, nullptr, 1) == make_null_embedding(w));
  CHECK_THROWS_AS(init_embedding(w, -1, nullptr, 1), DomainError);
  CHECK_THROWS_AS(init_embedding(w, w.config().token_capacity - 1, nullptr, 1), DomainError);
}

TEST_CASE("descriptor initialisation uses the nearest corpus label") {
  DenoiserWeights w = untrained_weights();
  const ImageTensor probe = render(random_scene(3));
  CHECK_THROWS_AS(init_embedding(w, 4, &probe, 0), ConfigError);
  const CorpusSpec spec{5, 24};
  w.info()["corpus"] = spec.to_json();
  const auto corpus = make_corpus(spec);
  const CorpusItem& member = corpus[7];
  const int y = static_cast<int>(member.words.size());
  const PromptEmbedding e = init_embedding(w, y, &member.image, 0);
  CHECK(e == label_embedding(w, member.words));
  CHECK_THROWS_AS(init_embedding(w, y + 1, &member.image, 0), ConfigError);
}

TEST_CASE("float32 rounding") {
  const auto& w = untrained_weights();
  const PromptEmbedding e = init_embedding(w, 3, nullptr, 2);
  const PromptEmbedding r = round_to_float32(e);
  CHECK(r.learnable() == 3);
  for (Eigen::Index i = 0; i < r.tokens().size(); ++i) {
    const double v = r.tokens().data()[i];
    CHECK(static_cast<double>(static_cast<float>(v)) == v);
    CHECK(std::abs(v - e.tokens().data()[i]) <= 1e-7 * std::max(1.0, std::abs(v)));
  }
  CHECK(round_to_float32(r) == r);
}

TEST_CASE("textualize runs the full schedule") {
  const auto& w = untrained_weights();
  const BridgeConfig cfg = tiny_bridge();
  const auto& set = prompts();
  const TextualizationResult r = textualize(std::span(set.train), w, cfg);

  REQUIRE(r.loss_history.size() == static_cast<std::size_t>(cfg.epochs * cfg.steps));
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
    const LossEntry& e = r.loss_history[i];
    CHECK(e.epoch == static_cast<int>(i) / cfg.steps);
    CHECK(e.step == cfg.steps - static_cast<int>(i) % cfg.steps);
    CHECK(e.beta == doctest::Approx(beta(e.step, cfg.steps, cfg.beta_temperature)).epsilon(1e-15));
    CHECK(std::isfinite(e.loss));
    CHECK(e.loss >= 0.0);
  }
  CHECK(r.final_step_losses().size() == static_cast<std::size_t>(cfg.epochs));
  CHECK(r.prompt_ids == std::vector<std::string>{set.train[0].id, set.train[1].id});
  CHECK(r.config.learnable == cfg.learnable);

  SUBCASE("only learnable rows move") {
    const PromptEmbedding init = round_to_float32(init_embedding(w, cfg.learnable, nullptr, cfg.seed));
    CHECK(r.embedding.learnable() == cfg.learnable);
    CHECK(r.embedding.tokens().row(0) == init.tokens().row(0));
    for (int row = cfg.learnable + 1; row < init.k(); ++row) {
      CHECK(r.embedding.tokens().row(row) == init.tokens().row(row));
    }
    CHECK((r.embedding.learnable_rows() - init.learnable_rows()).norm() > 0.0);
  }
  SUBCASE("embedding is float32") { CHECK(round_to_float32(r.embedding) == r.embedding); }
  SUBCASE("final reconstruction is the edit of the first prompt") {
    CHECK(r.final_reconstruction.values() == edit(set.train[0].before, r.embedding, w, cfg).values());
  }
  SUBCASE("deterministic") {
    const TextualizationResult again = textualize(std::span(set.train), w, cfg);
    CHECK(again.embedding == r.embedding);
    CHECK(again.prompt_ids == r.prompt_ids);
  }
}

TEST_CASE("textualize options") {
  const auto& w = untrained_weights();
  BridgeConfig cfg = tiny_bridge();
  cfg.epochs = 1;
  const auto first = std::span(prompts().train).first(1);

  SUBCASE("initial embedding and epoch callback") {
    TextualizeOptions opt;
    opt.initial = init_embedding(w, cfg.learnable, nullptr, 77);
    std::vector<std::pair<int, double>> seen;
    opt.on_epoch = [&](int epoch, double loss) { seen.emplace_back(epoch, loss); };
    const auto r = textualize(first, w, cfg, opt);
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].first == 0);
    CHECK(seen[0].second == r.final_step_losses()[0]);
    const auto d = textualize(first, w, cfg);
    CHECK_FALSE(d.embedding == r.embedding);
  }
  SUBCASE("no learnable tokens leaves the embedding alone") {
    cfg.learnable = 0;
    const auto r = textualize(first, w, cfg);
    CHECK(r.embedding == round_to_float32(make_null_embedding(w)));
    CHECK(r.loss_history.size() == static_cast<std::size_t>(cfg.steps));
  }
  SUBCASE("initial learnable count overrides the config") {
    TextualizeOptions opt;
    opt.initial = init_embedding(w, 2, nullptr, 1);
    const auto r = textualize(first, w, cfg, opt);
    CHECK(r.embedding.learnable() == 2);
    CHECK(r.config.learnable == 2);
  }
  SUBCASE("ablation switches change the result") {
    const auto base = textualize(first, w, cfg);
    BridgeConfig off = cfg;
    off.attention_control = false;
    CHECK_FALSE(textualize(first, w, off).embedding == base.embedding);
    BridgeConfig stale = cfg;
    stale.post_update_advance = false;
    CHECK_FALSE(textualize(first, w, stale).embedding == base.embedding);
  }
}

TEST_CASE("textualize errors") {
  const auto& w = untrained_weights();
  const BridgeConfig cfg = tiny_bridge();
  CHECK_THROWS_AS(textualize({}, w, cfg), ConfigError);

  std::vector<VisualPrompt> bad{prompts().train[0]};
  bad[0].after = ImageTensor(Mat::Zero(3, 64), 8, 8);
  CHECK_THROWS_AS(textualize(bad, w, cfg), ConfigError);

  TextualizeOptions opt;
  opt.initial = PromptEmbedding(Mat::Zero(w.config().token_capacity - 1, w.config().embed_dim), 2);
  CHECK_THROWS_AS(textualize(std::span(prompts().train), w, cfg, opt), ConfigError);

  std::vector<VisualPrompt> far{prompts().train[0]};
  far[0].after = ImageTensor(Mat::Constant(3, 32 * 32, 1e7), 32, 32);
  try {
    textualize(far, w, cfg);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(e.step() == cfg.steps);
  }
}
