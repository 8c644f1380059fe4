#include <doctest.h>

#include "support.hpp"

#include "tvdb/attention_control.hpp"
#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"
#include "tvdb/schedule.hpp"
#include "tvdb/toydata.hpp"

using namespace tvdb;
using test::random_mat;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.image_size = 16;
  c.embed_dim = 16;
  c.base_channels = 8;
  c.mid_channels = 8;
  c.head_dim = 8;
  c.time_features = 8;
  c.time_hidden = 16;
  c.train_steps = 40;
  c.vocab_size = 4;
  return c;
}

std::vector<TrainingExample> small_dataset(int n, int size = 16) {
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    ImageTensor img(3, size, size);
    for (int p = 0; p < size * size; ++p) {
      const bool inside = (p / size) >= size / 4 && (p / size) < 3 * size / 4 && (p % size) >= size / 4 &&
                          (p % size) < 3 * size / 4;
      img.values()(i % 3, p) = inside ? 0.8 : -0.6;
    }
    out.push_back({img, {i % 4}});
  }
  return out;
}

LatentState random_state(std::mt19937_64& rng, const DenoiserWeights& w, int t) {
  const int s = w.config().image_size;
  return {ImageTensor(random_mat(rng, 3, s * s), s, s), t};
}

}  // namespace

TEST_CASE("noise schedule invariants and subsampling keep both endpoints") {
  const NoiseSchedule train = NoiseSchedule::linear(200, 0.02);
  CHECK(train.alpha_bar(0) == 1.0);
  CHECK(train.alpha_bar(200) == doctest::Approx(0.02).epsilon(1e-15));
  for (int t = 1; t <= 200; ++t) CHECK(train.alpha_bar(t) < train.alpha_bar(t - 1));
  const NoiseSchedule bridge = train.subsample(50);
  CHECK(bridge.steps() == 50);
  CHECK(bridge.alpha_bar(0) == 1.0);
  CHECK(bridge.alpha_bar(50) == train.alpha_bar(200));
  for (int t = 0; t <= 50; ++t) {
    CHECK(bridge.alpha_bar(t) == train.alpha_bar(4 * t));
    CHECK(bridge.model_time(t) == train.model_time(4 * t));
  }
  CHECK_THROWS_AS(train.subsample(0), ConfigError);
  CHECK_THROWS_AS(train.subsample(201), ConfigError);
  CHECK_THROWS_AS(bridge.alpha_bar(51), DomainError);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.5}, {0, 0.5, 1}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}, {0, 1}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule({1.0, 0.0}, {0, 1}), ConfigError);
}

TEST_CASE("image tensor indexing, clamping and shape checks") {
  ImageTensor img(3, 2, 4);
  img.at(2, 1, 3) = 5.0;
  CHECK(img.values()(2, 7) == 5.0);
  CHECK(img.clamped().at(2, 1, 3) == 1.0);
  CHECK_THROWS_AS(ImageTensor(Mat::Zero(3, 7), 2, 4), ConfigError);
  CHECK_THROWS_AS(require_same_shape(img, ImageTensor(3, 4, 2), "test"), DomainError);
  img.at(0, 0, 0) = std::nan("");
  CHECK_FALSE(img.all_finite());
}

TEST_CASE("prompt embedding roles follow the fixed layout") {
  const auto& w = test::untrained_weights();
  const PromptEmbedding null = make_null_embedding(w);
  CHECK(null.learnable() == 0);
  CHECK(null.k() == 8);
  CHECK(null.d() == 64);
  CHECK(null.role(0) == TokenRole::Start);
  CHECK(null.role(1) == TokenRole::End);
  for (int i = 2; i < 8; ++i) CHECK(null.role(i) == TokenRole::Pad);
  CHECK(make_null_embedding(w) == null);

  const PromptEmbedding label = label_embedding(w, {3, 5, 7});
  const std::vector<TokenRole> expect = {TokenRole::Start, TokenRole::Learnable, TokenRole::Learnable,
                                         TokenRole::Learnable, TokenRole::End, TokenRole::Pad, TokenRole::Pad,
                                         TokenRole::Pad};
  CHECK(label.roles() == expect);
  CHECK(label.tokens().row(4) == null.tokens().row(1));
  CHECK_THROWS_AS(label_embedding(w, {0, 1, 2, 3, 4, 5, 6}), DomainError);
  CHECK_THROWS_AS(PromptEmbedding(Mat::Zero(8, 4), 7), DomainError);
}

TEST_CASE("predict_noise shape, attention records and error paths") {
  const auto& w = test::untrained_weights();
  std::mt19937_64 rng(5);
  const NoiseSchedule schedule = w.training_schedule().subsample(50);
  const LatentState x = random_state(rng, w, 10);
  const auto out = predict_noise(w, x, schedule, 10, make_null_embedding(w));
  CHECK(out.noise_prediction.same_shape(x.data));
  CHECK(out.noise_prediction.all_finite());
  CHECK(w.sites().size() == 4);
  CHECK(out.attention.size() == 4);
  CHECK(out.attention.covers(10, 10, w.sites()));
  CHECK(out.attention.max_stochastic_violation() < 1e-5);
  int cross = 0;
  for (const auto& s : w.sites()) {
    const Mat& m = out.attention.at(10, s.id);
    CHECK(m.rows() == s.positions);
    if (s.kind == AttentionKind::Cross) {
      ++cross;
      CHECK(m.cols() == 8);
    } else {
      CHECK(m.cols() == s.positions);
    }
  }
  CHECK(cross == 2);

  CHECK_THROWS_AS(predict_noise(w, x, schedule, 0, make_null_embedding(w)), DomainError);
  CHECK_THROWS_AS(predict_noise(w, x, schedule, 51, make_null_embedding(w)), DomainError);
  CHECK_THROWS_AS(predict_noise(w, x, schedule, 1, PromptEmbedding(Mat::Zero(6, 64), 0)), ConfigError);
  CHECK_THROWS_AS(predict_noise(w, {ImageTensor(3, 16, 16), 1}, schedule, 1, make_null_embedding(w)), ConfigError);
}

TEST_CASE("replacing every map by its own recording leaves the output unchanged") {
  const auto& w = test::untrained_weights();
  std::mt19937_64 rng(6);
  const NoiseSchedule schedule = w.training_schedule().subsample(50);
  const LatentState x = random_state(rng, w, 20);
  const PromptEmbedding c = label_embedding(w, {1, 2});
  const auto plain = predict_noise(w, x, schedule, 20, c);

  struct Replay final : AttentionOverride {
    const AttentionRecord& rec;
    int step;
    Replay(const AttentionRecord& r, int s) : rec(r), step(s) {}
    bool applies(const AttentionSite&) const override { return true; }
    ad::Var apply(ad::Tape& tape, const AttentionSite& site, ad::Var) const override {
      return tape.constant(rec.at(step, site.id));
    }
  } replay(plain.attention, 20);
  const auto again = predict_noise(w, x, schedule, 20, c, &replay);
  CHECK((again.noise_prediction.values() - plain.noise_prediction.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("null prediction ignores learnable values stored elsewhere") {
  const auto& w = test::untrained_weights();
  std::mt19937_64 rng(7);
  const NoiseSchedule schedule = w.training_schedule().subsample(50);
  const LatentState x = random_state(rng, w, 30);
  const auto a = predict_noise(w, x, schedule, 30, make_null_embedding(w));
  PromptEmbedding other = label_embedding(w, {0, 1, 2, 3});
  other.learnable_rows() = random_mat(rng, 4, 64);
  (void)predict_noise(w, x, schedule, 30, other);
  const auto b = predict_noise(w, x, schedule, 30, make_null_embedding(w));
  CHECK(a.noise_prediction == b.noise_prediction);
}

TEST_CASE("classifier-free guidance arithmetic") {
  Mat u(1, 2), c(1, 2);
  u << 1, 0;
  c << 3, 2;
  const Mat r = cfg_combine(u, c, 0.5);
  CHECK(r(0, 0) == 2.0);
  CHECK(r(0, 1) == 1.0);

  const auto& w = test::untrained_weights();
  std::mt19937_64 rng(8);
  const NoiseSchedule schedule = w.training_schedule().subsample(50);
  const LatentState x = random_state(rng, w, 12);
  const PromptEmbedding label = label_embedding(w, {4, 9});
  const Mat s_null = predict_noise(w, x, schedule, 12, make_null_embedding(w)).noise_prediction.values();
  const Mat s_c = predict_noise(w, x, schedule, 12, label).noise_prediction.values();
  CHECK(cfg_predict(w, x, schedule, 12, label, 0.0).noise_prediction.values() == s_null);
  CHECK((cfg_predict(w, x, schedule, 12, label, 1.0).noise_prediction.values() - s_c).cwiseAbs().maxCoeff() < 1e-15);
  const Mat guided = cfg_predict(w, x, schedule, 12, label, 7.5).noise_prediction.values();
  CHECK((guided - (s_null + 7.5 * (s_c - s_null))).cwiseAbs().maxCoeff() < 1e-12);
  const auto null_out = cfg_predict(w, x, schedule, 12, make_null_embedding(w), 7.5);
  CHECK(null_out.noise_prediction.values() == s_null);
  CHECK_THROWS_AS(cfg_predict(w, x, schedule, 12, label, -0.1), DomainError);
}

TEST_CASE("token gradients of the squared prediction match finite differences") {
  const auto& w = test::untrained_weights();
  std::mt19937_64 rng(9);
  const NoiseSchedule schedule = w.training_schedule().subsample(50);
  const LatentState x = random_state(rng, w, 25);
  PromptEmbedding c = label_embedding(w, {0, 1, 2});
  c.learnable_rows() = random_mat(rng, 3, 64, 0.5);
  auto value = [&](const Mat& tokens, Mat* grad) {
    ad::Tape tape;
    DenoiserGraph graph(tape, w, false);
    ad::Var tk = tape.leaf(tokens, grad != nullptr);
    auto r = graph.forward(tape.constant(x.data.values()), schedule.model_time(25), tk, nullptr);
    ad::Var loss = ad::sum_squares(tape, r.noise);
    if (grad != nullptr) {
      tape.backward(loss);
      *grad = tape.grad(tk);
    }
    return tape.value(loss)(0, 0);
  };
  Mat grad;
  value(c.tokens(), &grad);
  std::uniform_int_distribution<Eigen::Index> pick(0, c.tokens().size() - 1);
  for (int n = 0; n < 20; ++n) {
    const Eigen::Index i = pick(rng);
    const double fd = test::central_difference([&](const Mat& t) { return value(t, nullptr); }, c.tokens(), i, 1e-5);
    CAPTURE(i);
    CHECK(test::rel_err(grad.data()[i], fd) < 1e-4);
  }
}

TEST_CASE("training is seeded, validated, and lowers the denoising loss") {
  const DenoiserConfig config = small_config();
  const auto data = small_dataset(6);
  TrainDenoiserOptions options;
  options.epochs = 6;
  options.batch_size = 3;
  options.seed = 11;
  const auto a = train_denoiser(data, config, options);
  const auto b = train_denoiser(data, config, options);
  CHECK(a.weights == b.weights);
  CHECK(a.epoch_loss.size() == 6);

  const double trained = denoising_loss(a.weights, data, 60, 99);
  const double untrained = denoising_loss(init_weights(config, 0), data, 60, 99);
  CHECK(trained < untrained);

  // parameters are float32-exact after training
  for (const auto& p : a.weights.params()) CHECK(p.value == p.value.cast<float>().cast<double>());
  // The token table is not trained.
  const Mat initial_table = init_weights(config, std::mt19937_64(11)()).token_table();
  CHECK(a.weights.token_table() == initial_table.cast<float>().cast<double>());

  options.ema_decay = 0.9;
  const auto averaged = train_denoiser(data, config, options);
  CHECK_FALSE(averaged.weights == a.weights);
  CHECK(averaged.weights.info()["ema_decay"] == 0.9);

  CHECK_THROWS_AS(train_denoiser({}, config, options), ConfigError);
  auto bad = data;
  bad[0].words = {0, 1, 2, 3, 0, 1, 2};
  CHECK_THROWS_AS(train_denoiser(bad, config, options), ConfigError);
  bad = data;
  bad[0].words = {9};
  CHECK_THROWS_AS(train_denoiser(bad, config, options), ConfigError);
  CHECK_THROWS_AS(train_denoiser(small_dataset(2, 8), config, options), ConfigError);
  options.ema_decay = 1.0;
  CHECK_THROWS_AS(train_denoiser(data, config, options), ConfigError);
}

TEST_CASE("a single training point pulls the prediction toward the injected noise") {
  const DenoiserConfig config = small_config();
  const auto data = small_dataset(1);
  TrainDenoiserOptions options;
  options.batch_size = 1;
  options.label_dropout = 0.0;
  options.learning_rate = 5e-3;
  options.seed = 2;
  std::vector<double> losses;
  for (int epochs : {1, 60}) {
    options.epochs = epochs;
    const auto trained = train_denoiser(data, config, options);
    losses.push_back(denoising_loss(trained.weights, data, 40, 5));
  }
  CHECK(losses[1] < losses[0]);
}

TEST_CASE("weights survive the checkpoint container bit for bit") {
  const auto& w = test::untrained_weights();
  DenoiserWeights copy = decode_weights(encode_weights(w));
  // payload is float32, so compare after the same rounding
  for (std::size_t i = 0; i < w.params().size(); ++i) {
    CHECK(copy.params()[i].value == w.params()[i].value.cast<float>().cast<double>());
  }
  CHECK(copy.config().to_json() == w.config().to_json());
  CHECK(copy.sites().size() == w.sites().size());
  CHECK(encode_weights(copy) == encode_weights(w));
}
