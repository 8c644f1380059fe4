#include <doctest.h>

#include "support.hpp"

#include "tvdb/bridge.hpp"
#include "tvdb/errors.hpp"
#include "tvdb/toydata.hpp"

#include <cmath>

using namespace tvdb;
using test::random_mat;

namespace {

BridgeConfig short_bridge(int steps = 5) {
  BridgeConfig c;
  c.steps = steps;
  return c;
}

ImageTensor scene(std::uint64_t seed) { return render(random_scene(seed)); }

// Exact Gaussian noise prediction for one coordinate.
double gaussian_eps(double x, double mean, double var, double ab) {
  return std::sqrt(1.0 - ab) * (x - std::sqrt(ab) * mean) / (ab * var + 1.0 - ab);
}

// Fourth-order Runge-Kutta on dy/ds = eps(sqrt(ab) * y, ab) with y = x / sqrt(ab) and
// s = sqrt((1 - ab) / ab), stepping finely in ab from `from` to `to`.
double integrate_flow(double x, double mean, double var, double from, double to, int substeps = 4000) {
  auto s_of = [](double ab) { return std::sqrt((1.0 - ab) / ab); };
  auto ab_of = [](double s) { return 1.0 / (1.0 + s * s); };
  double y = x / std::sqrt(from);
  double s = s_of(from);
  const double h = (s_of(to) - s) / substeps;
  auto f = [&](double yy, double ss) {
    const double ab = ab_of(ss);
    return gaussian_eps(std::sqrt(ab) * yy, mean, var, ab);
  };
  for (int i = 0; i < substeps; ++i) {
    const double k1 = f(y, s), k2 = f(y + 0.5 * h * k1, s + 0.5 * h), k3 = f(y + 0.5 * h * k2, s + 0.5 * h),
                 k4 = f(y + h * k3, s + h);
    y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    s += h;
  }
  return std::sqrt(to) * y;
}

}  // namespace

TEST_CASE("ddim step worked examples") {
  const NoiseSchedule schedule({1.0, 0.25}, {0.0, 1.0});
  const LatentState x{ImageTensor(Mat::Constant(1, 1, 0.5), 1, 1), 1};
  const DdimStep step = ddim_step(x, ImageTensor(Mat::Zero(1, 1), 1, 1), schedule, 1, 0);
  CHECK(step.predicted_x0.values()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(step.previous.data.values()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(step.previous.timestep_index == 0);

  std::mt19937_64 rng(1);
  const Mat v = random_mat(rng, 2, 3), eps = random_mat(rng, 2, 3);
  CHECK((ddim_transfer(v, eps, 0.4, 0.4) - v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ddim step matches a scalar re-implementation on a 4-dim toy") {
  std::mt19937_64 rng(2);
  const NoiseSchedule schedule = NoiseSchedule::linear(10, 0.05);
  for (int t = 1; t <= 10; ++t) {
    const Mat xv = random_mat(rng, 1, 4), ev = random_mat(rng, 1, 4);
    const int prev = t - 1 - static_cast<int>(rng() % static_cast<unsigned>(t));
    const DdimStep out = ddim_step({ImageTensor(xv, 2, 2), t}, ImageTensor(ev, 2, 2), schedule, t, prev);
    const double at = 1.0 - 0.95 * t / 10.0, ap = prev == 0 ? 1.0 : 1.0 - 0.95 * prev / 10.0;
    for (int i = 0; i < 4; ++i) {
      const double f = (xv(0, i) - std::sqrt(1.0 - at) * ev(0, i)) / std::sqrt(at);
      const double xp = std::sqrt(ap) * f + std::sqrt(1.0 - ap) * ev(0, i);
      CHECK(std::abs(out.predicted_x0.values()(0, i) - f) <= 1e-12);
      CHECK(std::abs(out.previous.data.values()(0, i) - xp) <= 1e-12);
    }
  }
}

TEST_CASE("ddim step rejects bad indices and shapes") {
  const NoiseSchedule schedule = NoiseSchedule::linear(4, 0.1);
  const LatentState x{ImageTensor(1, 2, 2), 2};
  const ImageTensor eps(1, 2, 2);
  CHECK_THROWS_AS(ddim_step(x, eps, schedule, 2, 2), DomainError);
  CHECK_THROWS_AS(ddim_step(x, eps, schedule, 2, 3), DomainError);
  CHECK_THROWS_AS(ddim_step(x, eps, schedule, 5, 1), DomainError);
  CHECK_THROWS_AS(ddim_step(x, eps, schedule, 1, -1), DomainError);
  CHECK_THROWS_AS(ddim_step(x, ImageTensor(1, 2, 3), schedule, 2, 1), DomainError);
  CHECK_THROWS_AS(predicted_x0(Mat::Zero(1, 1), Mat::Zero(1, 1), 0.0), DomainError);
}

TEST_CASE("tape ddim updates agree with the matrix versions and differentiate correctly") {
  std::mt19937_64 rng(3);
  const Mat x = random_mat(rng, 3, 4), eps = random_mat(rng, 3, 4), probe = random_mat(rng, 3, 4);
  ad::Tape tape;
  ad::Var xv = tape.leaf(x, true), ev = tape.leaf(eps, true);
  ad::Var out = ddim_transfer(tape, xv, ev, 0.3, 0.8);
  CHECK((tape.value(out) - ddim_transfer(x, eps, 0.3, 0.8)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((tape.value(predicted_x0(tape, xv, ev, 0.3)) - predicted_x0(x, eps, 0.3)).cwiseAbs().maxCoeff() < 1e-14);
  tape.backward(out, probe);
  const double gx = std::sqrt(0.8 / 0.3);
  const double ge = std::sqrt(1 - 0.8) - std::sqrt(0.8) * std::sqrt(1 - 0.3) / std::sqrt(0.3);
  CHECK((tape.grad(xv) - gx * probe).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.grad(ev) - ge * probe).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("closed-form Gaussian flow agrees with fine numerical integration") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0), var(0.05, 2.0);
  for (int trial = 0; trial < 8; ++trial) {
    GaussianToyModel model{Vec::Constant(1, u(rng)), Vec::Constant(1, var(rng))};
    const double x = 1.5 * u(rng);
    for (auto [from, to] : {std::pair{1.0, 0.02}, std::pair{0.7, 0.1}, std::pair{0.05, 0.9}}) {
      const double exact = analytic_gaussian_flow(model, Mat::Constant(1, 1, x), from, to)(0, 0);
      CHECK(std::abs(exact - integrate_flow(x, model.mean[0], model.variance[0], from, to)) < 1e-9);
    }
  }
}

TEST_CASE("Gaussian closed form: unit model is the identity, the mean follows its scaled path") {
  const NoiseSchedule schedule = NoiseSchedule::linear(50, 0.02);
  GaussianToyModel unit{Vec::Zero(3), Vec::Ones(3)};
  std::mt19937_64 rng(5);
  const Mat x0 = random_mat(rng, 4, 3);
  CHECK((analytic_gaussian_solve(unit, x0, schedule) - x0).cwiseAbs().maxCoeff() < 1e-15);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(integrate_flow(x0(0, j), 0.0, 1.0, 1.0, 0.02) - x0(0, j)) < 1e-9);
  // DDIM only approaches the identity as the grid refines
  const double coarse = (ddim_solve(x0, unit.as_noise_model(), schedule, 0, 50) - x0).cwiseAbs().maxCoeff();
  const NoiseSchedule fine = NoiseSchedule::linear(200, 0.02);
  CHECK(coarse < 0.1);
  CHECK((ddim_solve(x0, unit.as_noise_model(), fine, 0, 200) - x0).cwiseAbs().maxCoeff() < coarse / 2.0);

  Vec mean(3);
  mean << 0.4, -0.2, 0.9;
  GaussianToyModel shifted{mean, Vec::Constant(3, 0.3)};
  const Mat at_mean = mean.transpose();
  const Mat end = analytic_gaussian_solve(shifted, at_mean, schedule);
  CHECK((end - std::sqrt(0.02) * at_mean).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(analytic_gaussian_solve(GaussianToyModel{Vec::Zero(2), Vec::Zero(2)}, Mat::Zero(1, 2), schedule),
                  DomainError);
  CHECK_THROWS_AS(GaussianToyModel({Vec::Zero(2), Vec::Ones(3)}).validate(), DomainError);
}

namespace {

GaussianToyModel conditioned_gaussian(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.6, 0.6), var(0.3, 1.5);
  GaussianToyModel model{Vec(8), Vec(8)};
  for (int i = 0; i < 8; ++i) {
    model.mean[i] = u(rng);
    model.variance[i] = var(rng);
  }
  return model;
}

Mat samples_of(const GaussianToyModel& model, std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat x(n, model.mean.size());
  for (int r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = model.mean[c] + std::sqrt(model.variance[c]) * normal(rng);
  }
  return x;
}

}  // namespace

// With alpha_bar linear from 1 the first steps shrink only as 1/sqrt(T) in the
// flow's natural time, so the inversion error behaves like log(T) / T and the
// doubling ratio climbs toward 2 from below.
TEST_CASE("DDIM inversion converges to the closed-form endpoint") {
  std::mt19937_64 rng(6);
  const GaussianToyModel model = conditioned_gaussian(rng);
  const Mat x0 = samples_of(model, rng, 16);
  std::vector<double> errors;
  for (int steps : {10, 20, 40, 80, 160, 320}) {
    const NoiseSchedule s = NoiseSchedule::linear(steps, 0.02);
    errors.push_back((ddim_solve(x0, model.as_noise_model(), s, 0, steps) - analytic_gaussian_solve(model, x0, s))
                         .cwiseAbs()
                         .maxCoeff());
  }
  for (std::size_t i = 1; i < errors.size(); ++i) {
    CAPTURE(i);
    const double ratio = errors[i - 1] / errors[i];
    CHECK(ratio > 1.65);
    CHECK(ratio < 2.0);
    if (i > 1) CHECK(ratio > errors[i - 2] / errors[i - 1]);
  }
}

TEST_CASE("DDIM generation from the exact latent converges at first order") {
  std::mt19937_64 rng(16);
  const GaussianToyModel model = conditioned_gaussian(rng);
  const Mat x0 = samples_of(model, rng, 16);
  double previous = 0.0;
  for (int steps : {10, 20, 40, 80}) {
    const NoiseSchedule s = NoiseSchedule::linear(steps, 0.02);
    const double err =
        (ddim_solve(analytic_gaussian_solve(model, x0, s), model.as_noise_model(), s, steps, 0) - x0).cwiseAbs().maxCoeff();
    if (previous > 0.0) CHECK(previous / err >= 1.8);
    previous = err;
  }
}

TEST_CASE("ddim_solve is reversible in the limit and rejects bad indices") {
  GaussianToyModel model{Vec::Constant(2, 0.3), Vec::Constant(2, 0.5)};
  Mat x0(1, 2);
  x0 << 0.1, -0.4;
  double previous = 1.0;
  for (int steps : {100, 200, 400}) {
    const NoiseSchedule s = NoiseSchedule::linear(steps, 0.02);
    const Mat xT = ddim_solve(x0, model.as_noise_model(), s, 0, steps);
    const double err = (ddim_solve(xT, model.as_noise_model(), s, steps, 0) - x0).cwiseAbs().maxCoeff();
    CHECK(err < previous / 1.6);
    previous = err;
  }
  CHECK(previous < 5e-3);
  const NoiseSchedule s = NoiseSchedule::linear(400, 0.02);
  CHECK_THROWS_AS(ddim_solve(x0, model.as_noise_model(), s, 0, 401), DomainError);
}

TEST_CASE("translation between fitted shifted Gaussians lands near the target mean") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dims = 4, n = 2000;
  const double shift = 1.0, sd = std::sqrt(0.1);
  Mat source(n, dims), target(n, dims);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < dims; ++c) {
      source(r, c) = -0.5 + sd * normal(rng);
      target(r, c) = -0.5 + shift + sd * normal(rng);
    }
  }
  auto fit = [](const Mat& data) {
    GaussianToyModel m{data.colwise().mean().transpose(), Vec(data.cols())};
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      m.variance[c] = (data.col(c).array() - m.mean[c]).square().mean();
    }
    return m;
  };
  const GaussianToyModel a = fit(source), b = fit(target);
  const NoiseSchedule schedule = NoiseSchedule::linear(50, 0.02);
  const Mat moved = ddib_translate(source, a.as_noise_model(), b.as_noise_model(), schedule);
  const Vec moved_mean = moved.colwise().mean().transpose();
  for (int c = 0; c < dims; ++c) CHECK(std::abs(moved_mean[c] - b.mean[c]) < 0.1 * shift);
  CHECK(moved == ddib_translate(source, a.as_noise_model(), b.as_noise_model(), schedule));
}

TEST_CASE("bridge passes have the right length, indices, and are deterministic") {
  const auto& w = test::untrained_weights();
  const BridgeConfig config = short_bridge(6);
  const PromptEmbedding null = make_null_embedding(w);
  const ImageTensor x0 = scene(1);
  const Trajectory inv = invert(x0, w, null, config, {.record_attention = true, .keep_predictions = true});
  REQUIRE(inv.states.size() == 7);
  CHECK(inv.predicted_x0.size() == 6);
  for (int i = 0; i <= 6; ++i) CHECK(inv.states[i].timestep_index == i);
  CHECK(inv.attention.covers(1, 6, w.sites()));
  CHECK(inv.front().data == x0);
  CHECK(invert(x0, w, null, config).back().data == inv.back().data);

  const Trajectory gen = generate(inv.back(), w, null, config, nullptr, {.record_attention = true});
  REQUIRE(gen.states.size() == 7);
  for (int i = 0; i <= 6; ++i) CHECK(gen.states[i].timestep_index == 6 - i);
  CHECK(gen.attention.covers(1, 6, w.sites()));
  CHECK(gen.attention.max_stochastic_violation() < 1e-5);
  CHECK(generate(inv.back(), w, null, config).back().data == gen.back().data);
}

TEST_CASE("zero guidance makes generation independent of the prompt") {
  const auto& w = test::untrained_weights();
  BridgeConfig config = short_bridge(4);
  config.guidance = 0.0;
  std::mt19937_64 rng(8);
  const LatentState xT{ImageTensor(random_mat(rng, 3, 1024), 32, 32), 4};
  PromptEmbedding c = label_embedding(w, {1, 2, 3});
  c.learnable_rows() = random_mat(rng, 3, 64, 0.02);
  CHECK(generate(xT, w, c, config).back().data == generate(xT, w, make_null_embedding(w), config).back().data);
}

TEST_CASE("bridge error paths") {
  const auto& w = test::untrained_weights();
  const BridgeConfig config = short_bridge(4);
  const PromptEmbedding null = make_null_embedding(w);
  ImageTensor outside = scene(2);
  outside.values()(0, 0) = 1.5;
  CHECK_THROWS_AS(invert(outside, w, null, config), DomainError);
  ImageTensor broken = scene(2);
  broken.values()(1, 5) = std::nan("");
  CHECK_THROWS_AS(invert(broken, w, null, config), NumericalError);

  const LatentState wrong{ImageTensor(3, 32, 32), 3};
  CHECK_THROWS_AS(generate(wrong, w, null, config), DomainError);

  BridgeConfig too_long = config;
  too_long.steps = 500;
  CHECK_THROWS_AS(invert(scene(2), w, null, too_long), ConfigError);

  // a source record covering only some injected steps
  const LatentState xT{ImageTensor(3, 32, 32), 4};
  auto partial = std::make_shared<AttentionRecord>(
      generate(xT, w, null, config, nullptr, {.record_attention = true}).attention);
  auto trimmed = std::make_shared<AttentionRecord>();
  for (const auto& [key, m] : partial->entries()) {
    if (key.step != 2) trimmed->put(key, m);
  }
  InjectionPlan plan = injection_plan(w, config, trimmed);
  CHECK_THROWS_AS(generate(xT, w, label_embedding(w, {1}), config, &plan), ConfigError);
  plan.source = partial;
  CHECK_NOTHROW(generate(xT, w, label_embedding(w, {1}), config, &plan));
}

TEST_CASE("a diverging network reports the failing step") {
  DenoiserWeights w = test::untrained_weights();
  for (auto& p : w.mutable_params()) {
    if (p.name == "conv_out.b") p.value.setConstant(std::nan(""));
  }
  try {
    invert(scene(3), w, make_null_embedding(w), short_bridge(4));
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(e.step() == 1);
  }
}

TEST_CASE("distinct images reach distinct latents") {
  const auto& w = test::untrained_weights();
  const BridgeConfig config = short_bridge(3);
  const PromptEmbedding null = make_null_embedding(w);
  std::vector<Mat> latents;
  std::vector<Mat> images;
  for (std::uint64_t i = 0; i < 100; ++i) {
    images.push_back(scene(100 + i).values());
    latents.push_back(invert(scene(100 + i), w, null, config).back().data.values());
  }
  int collisions = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    for (std::size_t j = i + 1; j < latents.size(); ++j) {
      if ((images[i] - images[j]).norm() > 1e-3 && (latents[i] - latents[j]).norm() < 1e-9) ++collisions;
    }
  }
  CHECK(collisions == 0);
}

TEST_CASE("identical models translate back to a round trip") {
  const auto& w = test::untrained_weights();
  const BridgeConfig config = short_bridge(4);
  const ImageTensor x = scene(4);
  const PromptEmbedding null = make_null_embedding(w);
  const ImageTensor expect = generate(invert(x, w, null, config).back(), w, null, config).back().data;
  CHECK(ddib_translate(x, w, w, config) == expect);
  DenoiserConfig small = w.config();
  small.image_size = 16;
  CHECK_THROWS_AS(ddib_translate(x, w, init_weights(small, 1), config), ConfigError);
}

TEST_CASE("injection plan honours the per-kind switches") {
  const auto& w = test::untrained_weights();
  auto source = std::make_shared<AttentionRecord>();
  BridgeConfig config;
  CHECK(injection_plan(w, config, source).sites.size() == 4);
  config.inject_self = false;
  const InjectionPlan cross_only = injection_plan(w, config, source, 0.5);
  CHECK(cross_only.sites.size() == 2);
  for (int id : cross_only.sites) CHECK(w.sites()[id].kind == AttentionKind::Cross);
  CHECK(cross_only.intensity == 0.5);
  CHECK(cross_only.tau == 0.7);
}

TEST_CASE("bridge config validates and round-trips through JSON") {
  BridgeConfig c;
  c.tau = 0.35;
  c.learnable = 3;
  c.clock = InjectionClock::RawIndex;
  c.raw_beta = true;
  const BridgeConfig back = BridgeConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(c.to_json()["T"] == 50);
  CHECK(c.to_json()["w"] == 7.5);
  CHECK(c.to_json()["gamma"] == 0.001);
  BridgeConfig bad;
  bad.tau = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.guidance = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("trajectory dump round-trips at float32 precision") {
  const auto& w = test::untrained_weights();
  const Trajectory inv = invert(scene(5), w, make_null_embedding(w), short_bridge(3), {.keep_predictions = true});
  const auto path = test::scratch_dir("traj") / "t.bin";
  save_trajectory(path, inv, {{"note", "x"}});
  const Trajectory back = load_trajectory(path);
  REQUIRE(back.states.size() == inv.states.size());
  REQUIRE(back.predicted_x0.size() == inv.predicted_x0.size());
  for (std::size_t i = 0; i < inv.states.size(); ++i) {
    CHECK(back.states[i].timestep_index == inv.states[i].timestep_index);
    CHECK(back.states[i].data.values() == inv.states[i].data.values().cast<float>().cast<double>());
  }
  CHECK_THROWS_AS(save_trajectory(path, Trajectory{}), ConfigError);
}
