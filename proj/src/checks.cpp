#include "tvdb/checks.hpp"

#include "tvdb/attention_control.hpp"
#include "tvdb/bridge.hpp"
#include "tvdb/evalkit.hpp"
#include "tvdb/textualizer.hpp"
#include "tvdb/toydata.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

namespace tvdb {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace {

Mat random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

Mat random_stochastic(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m.rowwise().sum().cwiseInverse().asDiagonal() * m;
}

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// Largest relative error over `coords` random entries of `input`, comparing
// `analytic` with central differences of `scalar`.
double fd_check(Mat input, const Mat& analytic, const std::function<double(const Mat&)>& scalar, int coords,
                std::mt19937_64& rng, double h, const std::vector<Eigen::Index>& allowed = {}) {
  std::uniform_int_distribution<Eigen::Index> pick(0, allowed.empty() ? input.size() - 1
                                                                      : static_cast<Eigen::Index>(allowed.size()) - 1);
  double worst = 0.0;
  for (int n = 0; n < coords; ++n) {
    const Eigen::Index i = allowed.empty() ? pick(rng) : allowed[pick(rng)];
    const double saved = input.data()[i];
    input.data()[i] = saved + h;
    const double up = scalar(input);
    input.data()[i] = saved - h;
    const double down = scalar(input);
    input.data()[i] = saved;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * h), 1e-6));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> check_gradients(const DenoiserWeights& weights, int coordinates, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  constexpr double kTol = 1e-4;

  {  // step loss w.r.t. the predicted image
    const Mat f0 = random_mat(rng, 3, 64);
    const Mat target = random_mat(rng, 3, 64);
    const double weight = 0.7;
    auto value = [&](const Mat& f) {
      ad::Tape tape;
      return tape.value(step_loss(tape, tape.constant(f), target, weight))(0, 0);
    };
    ad::Tape tape;
    ad::Var f = tape.leaf(f0, true);
    tape.backward(step_loss(tape, f, target, weight));
    const double err = fd_check(f0, tape.grad(f), value, coordinates, rng, 1e-6);
    out.push_back({"gradients/step_loss", err < kTol, err, kTol, fmt("max rel err %.3e", err)});
  }

  {  // merge_cross w.r.t. the live map
    const int k = 6, y = 2;
    const Mat before = random_stochastic(rng, 5, k);
    const Mat after0 = random_stochastic(rng, 5, k);
    const Mat probe = random_mat(rng, 5, k);
    const ColumnTransform perm = build_column_transform(k, y);
    const InjectionMask mask = build_mask(k, y);
    auto value = [&](const Mat& a) { return merge_cross(before, a, perm, mask).cwiseProduct(probe).sum(); };
    ad::Tape tape;
    ad::Var a = tape.leaf(after0, true);
    ad::Var merged = merge_cross(tape, before, a, perm, mask);
    tape.backward(merged, probe);
    const double err = fd_check(after0, tape.grad(a), value, coordinates, rng, 1e-6);
    out.push_back({"gradients/merge_cross", err < kTol, err, kTol, fmt("max rel err %.3e", err)});
  }

  {  // denoiser noise prediction w.r.t. LEARNABLE token rows, with injection active
    BridgeConfig config;
    const NoiseSchedule schedule = bridge_schedule(weights, config);
    const int t = 20;
    const auto& cfg = weights.config();
    const Mat x = random_mat(rng, cfg.image_channels, static_cast<Eigen::Index>(cfg.image_size) * cfg.image_size);
    const LatentState state{ImageTensor(x, cfg.image_size, cfg.image_size), t};
    auto source = std::make_shared<AttentionRecord>(
        predict_noise(weights, state, schedule, t, make_null_embedding(weights)).attention);
    const InjectionPlan plan = injection_plan(weights, config, source);
    PromptEmbedding c = init_embedding(weights, 3, nullptr, seed);
    c.learnable_rows() = random_mat(rng, 3, c.d());
    const StepOverride hook(plan, t, schedule.steps(), c.k(), c.learnable());
    const Mat probe = random_mat(rng, x.rows(), x.cols());
    auto run = [&](const Mat& tokens, Mat* grad) {
      ad::Tape tape;
      DenoiserGraph graph(tape, weights, false);
      ad::Var tk = tape.leaf(tokens, grad != nullptr);
      auto r = graph.forward(tape.constant(x), schedule.model_time(t), tk, &hook);
      const double v = tape.value(r.noise).cwiseProduct(probe).sum();
      if (grad != nullptr) {
        tape.backward(r.noise, probe);
        *grad = tape.grad(tk);
      }
      return v;
    };
    Mat grad;
    run(c.tokens(), &grad);
    std::vector<Eigen::Index> learnable;
    for (Eigen::Index i = c.d(); i < static_cast<Eigen::Index>(1 + c.learnable()) * c.d(); ++i) learnable.push_back(i);
    const double err =
        fd_check(c.tokens(), grad, [&](const Mat& tk) { return run(tk, nullptr); }, coordinates, rng, 1e-5, learnable);
    out.push_back({"gradients/predict_noise", err < kTol, err, kTol, fmt("max rel err %.3e", err)});
  }
  return out;
}

std::vector<CheckResult> check_roundtrip(const DenoiserWeights& weights, int images, double min_psnr,
                                         std::uint64_t seed) {
  BridgeConfig config;
  const PromptEmbedding null = make_null_embedding(weights);
  double worst = kPsnrCap;
  double mean = 0.0;
  bool repeatable = true;
  for (int i = 0; i < images; ++i) {
    const ImageTensor img = render(random_scene(seed + static_cast<std::uint64_t>(i)));
    const Trajectory inv = invert(img, weights, null, config);
    const ImageTensor rec = generate(inv.back(), weights, null, config).back().data;
    if (i == 0) {
      const Trajectory again = invert(img, weights, null, config);
      repeatable = again.back().data == inv.back().data &&
                   generate(again.back(), weights, null, config).back().data == rec;
    }
    const double p = psnr(img, rec);
    worst = std::min(worst, p);
    mean += p / images;
  }
  return {{"roundtrip/min_psnr", worst >= min_psnr, worst, min_psnr,
           fmt("mean %.2f dB", mean) + fmt(", min %.2f dB", worst)},
          {"roundtrip/bitwise_repeat", repeatable, repeatable ? 1.0 : 0.0, 1.0, repeatable ? "identical" : "differs"}};
}

std::vector<CheckResult> check_gaussian_order(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> var(0.3, 1.5);
  GaussianToyModel model{Vec(16), Vec(16)};
  for (int i = 0; i < 16; ++i) {
    model.mean[i] = 0.6 * u(rng);
    model.variance[i] = var(rng);
  }
  Mat x0(32, 16);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int r = 0; r < x0.rows(); ++r) {
    for (int c = 0; c < 16; ++c) x0(r, c) = model.mean[c] + std::sqrt(model.variance[c]) * normal(rng);
  }
  std::vector<double> errors;
  for (int steps : {10, 20, 40, 80}) {
    const NoiseSchedule schedule = NoiseSchedule::linear(steps, 0.02);
    const Mat approx = ddim_solve(x0, model.as_noise_model(), schedule, 0, steps);
    errors.push_back((approx - analytic_gaussian_solve(model, x0, schedule)).cwiseAbs().maxCoeff());
  }
  std::vector<CheckResult> out;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double ratio = errors[i - 1] / errors[i];
    out.push_back({"gaussian-order/ratio_" + std::to_string(10 << (i - 1)) + "_" + std::to_string(10 << i),
                   ratio >= 1.8, ratio, 1.8, fmt("error %.3e", errors[i - 1]) + fmt(" -> %.3e", errors[i])});
  }
  return out;
}

std::vector<CheckResult> check_attention_merge(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  const int k = 6, y = 2;
  const Mat before = random_stochastic(rng, 3, k);
  const Mat after = random_stochastic(rng, 3, k);
  const ColumnTransform perm = build_column_transform(k, y);
  const InjectionMask mask = build_mask(k, y);
  const Mat merged = merge_cross(before, after, perm, mask, false);

  double loop_err = 0.0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < k; ++c) {
      int src = c;
      if (c == 1) src = y + 1;
      if (c == y + 1) src = 1;
      const bool keep = c >= 1 && c <= y;
      const double expect = keep ? after(r, c) : before(r, src);
      loop_err = std::max(loop_err, std::abs(expect - merged(r, c)));
    }
  }
  out.push_back({"attention-merge/loop_oracle", loop_err <= 1e-12, loop_err, 1e-12, fmt("max abs diff %.3e", loop_err)});

  const double inv = (perm.matrix * perm.matrix - Mat::Identity(k, k)).cwiseAbs().maxCoeff();
  out.push_back({"attention-merge/involution", inv == 0.0, inv, 0.0, "perm * perm - I"});

  const double slot = (merged.col(y + 1) - before.col(1)).cwiseAbs().maxCoeff();
  out.push_back({"attention-merge/end_slot", slot == 0.0, slot, 0.0, "merged column y+1 vs before column 1"});

  bool zeros_ok = true;
  for (int i = 0; i < k; ++i) zeros_ok = zeros_ok && ((mask.f[i] == 0.0) == (i >= 1 && i <= y));
  out.push_back({"attention-merge/mask_zeros", zeros_ok, zeros_ok ? 1.0 : 0.0, 1.0, "zeros exactly at 1..y"});
  return out;
}

}  // namespace tvdb
