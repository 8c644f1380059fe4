#include "tvdb/bridge.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"

#include <cmath>
#include <string>

namespace tvdb {

void BridgeConfig::validate() const {
  if (steps < 1) throw ConfigError("bridge: steps must be >= 1");
  if (epochs < 1) throw ConfigError("bridge: epochs must be >= 1");
  if (!(guidance >= 0.0) || !std::isfinite(guidance)) throw ConfigError("bridge: guidance must be >= 0");
  if (clock == InjectionClock::Normalized && !(tau >= 0.0 && tau <= 1.0)) {
    throw ConfigError("bridge: tau must lie in [0, 1]");
  }
  if (clock == InjectionClock::RawIndex && !(tau >= 0.0)) throw ConfigError("bridge: tau must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("bridge: learning rate must be > 0");
  if (learnable < 0) throw ConfigError("bridge: learnable token count must be >= 0");
  if (!(beta_temperature >= 0.0) || !std::isfinite(beta_temperature)) {
    throw ConfigError("bridge: beta temperature must be >= 0");
  }
}

nlohmann::json BridgeConfig::to_json() const {
  return {{"T", steps},
          {"N", epochs},
          {"w", guidance},
          {"tau", tau},
          {"gamma", learning_rate},
          {"y", learnable},
          {"beta_temperature", beta_temperature},
          {"renormalize_rows", renormalize_rows},
          {"seed", seed},
          {"guidance_in_inversion", guidance_in_inversion},
          {"tau_clock", clock == InjectionClock::Normalized ? "normalized" : "raw"},
          {"inject_cross", inject_cross},
          {"inject_self", inject_self},
          {"post_update_advance", post_update_advance},
          {"raw_beta", raw_beta},
          {"attention_control", attention_control}};
}

BridgeConfig BridgeConfig::from_json(const nlohmann::json& j) {
  BridgeConfig c;
  c.steps = j.value("T", c.steps);
  c.epochs = j.value("N", c.epochs);
  c.guidance = j.value("w", c.guidance);
  c.tau = j.value("tau", c.tau);
  c.learning_rate = j.value("gamma", c.learning_rate);
  c.learnable = j.value("y", c.learnable);
  c.beta_temperature = j.value("beta_temperature", c.beta_temperature);
  c.renormalize_rows = j.value("renormalize_rows", c.renormalize_rows);
  c.seed = j.value("seed", c.seed);
  c.guidance_in_inversion = j.value("guidance_in_inversion", c.guidance_in_inversion);
  const std::string clock = j.value("tau_clock", std::string("normalized"));
  if (clock != "normalized" && clock != "raw") throw ConfigError("bridge: unknown tau_clock " + clock);
  c.clock = clock == "raw" ? InjectionClock::RawIndex : InjectionClock::Normalized;
  c.inject_cross = j.value("inject_cross", c.inject_cross);
  c.inject_self = j.value("inject_self", c.inject_self);
  c.post_update_advance = j.value("post_update_advance", c.post_update_advance);
  c.raw_beta = j.value("raw_beta", c.raw_beta);
  c.attention_control = j.value("attention_control", c.attention_control);
  return c;
}

NoiseSchedule bridge_schedule(const DenoiserWeights& weights, const BridgeConfig& config) {
  const NoiseSchedule base = weights.training_schedule();
  if (config.steps > base.steps()) {
    throw ConfigError("bridge: " + std::to_string(config.steps) + " steps exceed the training schedule (" +
                      std::to_string(base.steps()) + ")");
  }
  return base.subsample(config.steps);
}

// ---------------------------------------------------------------------------
// Updates

Mat predicted_x0(const Mat& x_t, const Mat& noise, double alpha_bar_t) {
  if (!(alpha_bar_t > 0.0)) throw DomainError("predicted_x0: alpha_bar must be positive");
  return (x_t - std::sqrt(1.0 - alpha_bar_t) * noise) / std::sqrt(alpha_bar_t);
}

Mat ddim_transfer(const Mat& x, const Mat& noise, double alpha_from, double alpha_to) {
  return std::sqrt(alpha_to) * predicted_x0(x, noise, alpha_from) + std::sqrt(1.0 - alpha_to) * noise;
}

ad::Var predicted_x0(ad::Tape& tape, ad::Var x_t, ad::Var noise, double alpha_bar_t) {
  if (!(alpha_bar_t > 0.0)) throw DomainError("predicted_x0: alpha_bar must be positive");
  const double inv = 1.0 / std::sqrt(alpha_bar_t);
  return ad::sub(tape, ad::scale(tape, x_t, inv), ad::scale(tape, noise, std::sqrt(1.0 - alpha_bar_t) * inv));
}

ad::Var ddim_transfer(ad::Tape& tape, ad::Var x, ad::Var noise, double alpha_from, double alpha_to) {
  ad::Var f = predicted_x0(tape, x, noise, alpha_from);
  return ad::add(tape, ad::scale(tape, f, std::sqrt(alpha_to)), ad::scale(tape, noise, std::sqrt(1.0 - alpha_to)));
}

DdimStep ddim_step(const LatentState& x_t, const ImageTensor& noise, const NoiseSchedule& schedule, int t,
                   int t_prev) {
  if (!(0 <= t_prev && t_prev < t && t <= schedule.steps())) {
    throw DomainError("ddim_step: need 0 <= t_prev < t <= T (got t=" + std::to_string(t) +
                      ", t_prev=" + std::to_string(t_prev) + ")");
  }
  require_same_shape(x_t.data, noise, "ddim_step");
  const double a_t = schedule.alpha_bar(t);
  const double a_prev = schedule.alpha_bar(t_prev);
  const int h = x_t.data.height();
  const int w = x_t.data.width();
  Mat f = predicted_x0(x_t.data.values(), noise.values(), a_t);
  Mat prev = std::sqrt(a_prev) * f + std::sqrt(1.0 - a_prev) * noise.values();
  return {LatentState{ImageTensor(std::move(prev), h, w), t_prev}, ImageTensor(std::move(f), h, w)};
}

// ---------------------------------------------------------------------------
// Bridge passes

namespace {

void check_finite(const ImageTensor& x, int step, const char* what) {
  if (!x.all_finite()) {
    throw NumericalError(std::string(what) + ": non-finite values at step " + std::to_string(step), step);
  }
}

void check_plan_coverage(const InjectionPlan& plan, const DenoiserWeights& weights, int steps) {
  plan.validate();
  for (int id : plan.sites) {
    if (id < 0 || id >= static_cast<int>(weights.sites().size())) {
      throw ConfigError("injection plan: unknown site " + std::to_string(id));
    }
  }
  for (int t : plan.injected_steps(steps)) {
    for (int id : plan.sites) {
      if (!plan.source->contains(t, id)) {
        throw ConfigError("injection plan: source attention missing step " + std::to_string(t) + ", site " +
                          std::to_string(id));
      }
    }
  }
}

void merge_attention(AttentionRecord& into, const AttentionRecord& from) {
  for (const auto& [key, m] : from.entries()) into.put(key, m);
}

}  // namespace

Trajectory invert(const ImageTensor& x0, const DenoiserWeights& weights, const PromptEmbedding& c,
                  const BridgeConfig& config, BridgeTrace trace) {
  config.validate();
  check_finite(x0, 0, "invert");
  if (x0.values().cwiseAbs().maxCoeff() > 1.0 + 1e-9) throw DomainError("invert: x0 outside [-1, 1]");
  const NoiseSchedule schedule = bridge_schedule(weights, config);
  const double w = config.guidance_in_inversion ? config.guidance : 1.0;
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(config.steps) + 1);
  traj.states.push_back({x0, 0});
  for (int t = 1; t <= schedule.steps(); ++t) {
    const LatentState& cur = traj.states.back();
    CfgOutput out = cfg_predict(weights, cur, schedule, t, c, w);
    const double a_from = schedule.alpha_bar(t - 1);
    Mat next = ddim_transfer(cur.data.values(), out.noise_prediction.values(), a_from, schedule.alpha_bar(t));
    if (trace.keep_predictions) {
      traj.predicted_x0.emplace_back(predicted_x0(cur.data.values(), out.noise_prediction.values(), a_from),
                                     x0.height(), x0.width());
    }
    if (trace.record_attention) merge_attention(traj.attention, out.cond_attention);
    traj.states.push_back({ImageTensor(std::move(next), x0.height(), x0.width()), t});
    check_finite(traj.states.back().data, t, "invert");
  }
  return traj;
}

Trajectory generate(const LatentState& x_T, const DenoiserWeights& weights, const PromptEmbedding& c,
                    const BridgeConfig& config, const InjectionPlan* injection, BridgeTrace trace) {
  config.validate();
  const NoiseSchedule schedule = bridge_schedule(weights, config);
  const int steps = schedule.steps();
  if (x_T.timestep_index != steps) {
    throw DomainError("generate: start state has timestep " + std::to_string(x_T.timestep_index) + ", expected " +
                      std::to_string(steps));
  }
  check_finite(x_T.data, steps, "generate");
  if (injection != nullptr) check_plan_coverage(*injection, weights, steps);
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.push_back(x_T);
  for (int t = steps; t >= 1; --t) {
    std::optional<StepOverride> hook;
    if (injection != nullptr) hook.emplace(*injection, t, steps, c.k(), c.learnable());
    CfgOutput out = cfg_predict(weights, traj.states.back(), schedule, t, c, config.guidance,
                                hook ? &*hook : nullptr);
    DdimStep step = ddim_step(traj.states.back(), out.noise_prediction, schedule, t, t - 1);
    if (trace.keep_predictions) traj.predicted_x0.push_back(std::move(step.predicted_x0));
    if (trace.record_attention) merge_attention(traj.attention, out.cond_attention);
    traj.states.push_back(std::move(step.previous));
    check_finite(traj.states.back().data, t, "generate");
  }
  return traj;
}

NullReconstruction reconstruct_null(const ImageTensor& x0, const DenoiserWeights& weights,
                                    const BridgeConfig& config) {
  const PromptEmbedding null = make_null_embedding(weights);
  Trajectory inv = invert(x0, weights, null, config);
  Trajectory rec = generate(inv.back(), weights, null, config, nullptr, {.record_attention = true});
  NullReconstruction out;
  out.x_T = inv.back();
  out.reconstruction = rec.back().data;
  out.attention = std::make_shared<const AttentionRecord>(std::move(rec.attention));
  return out;
}

InjectionPlan injection_plan(const DenoiserWeights& weights, const BridgeConfig& config,
                             std::shared_ptr<const AttentionRecord> source, double intensity) {
  InjectionPlan plan;
  plan.source = std::move(source);
  plan.tau = config.tau;
  plan.clock = config.clock;
  plan.renormalize = config.renormalize_rows;
  plan.intensity = intensity;
  for (const auto& s : weights.sites()) {
    if ((s.kind == AttentionKind::Cross && config.inject_cross) || (s.kind == AttentionKind::Self && config.inject_self)) {
      plan.sites.insert(s.id);
    }
  }
  return plan;
}

ImageTensor ddib_translate(const ImageTensor& x_src, const DenoiserWeights& weights_src,
                           const DenoiserWeights& weights_tgt, const BridgeConfig& config) {
  const auto& a = weights_src.config();
  const auto& b = weights_tgt.config();
  if (a.image_channels != b.image_channels || a.image_size != b.image_size) {
    throw ConfigError("ddib_translate: source and target models differ in latent shape");
  }
  if (weights_src.training_schedule().alpha_bars() != weights_tgt.training_schedule().alpha_bars()) {
    throw ConfigError("ddib_translate: source and target models use different schedules");
  }
  Trajectory inv = invert(x_src, weights_src, make_null_embedding(weights_src), config);
  return generate(inv.back(), weights_tgt, make_null_embedding(weights_tgt), config).back().data;
}

// ---------------------------------------------------------------------------
// Generic solver and Gaussian reference

Mat ddim_solve(const Mat& x, const NoiseModel& model, const NoiseSchedule& schedule, int from, int to) {
  if (from < 0 || to < 0 || from > schedule.steps() || to > schedule.steps()) {
    throw DomainError("ddim_solve: index outside the schedule");
  }
  Mat cur = x;
  const int dir = to > from ? 1 : -1;
  for (int t = from; t != to; t += dir) {
    const int next = t + dir;
    // Denoising evaluates at the current level; inversion at the destination level.
    const double a_eval = schedule.alpha_bar(dir < 0 ? t : next);
    cur = ddim_transfer(cur, model(cur, a_eval), schedule.alpha_bar(t), schedule.alpha_bar(next));
    if (!cur.allFinite()) throw NumericalError("ddim_solve: non-finite state at step " + std::to_string(next), next);
  }
  return cur;
}

Mat ddib_translate(const Mat& x_src, const NoiseModel& source, const NoiseModel& target,
                   const NoiseSchedule& schedule) {
  const Mat latent = ddim_solve(x_src, source, schedule, 0, schedule.steps());
  return ddim_solve(latent, target, schedule, schedule.steps(), 0);
}

void GaussianToyModel::validate() const {
  if (mean.size() != variance.size()) throw DomainError("GaussianToyModel: mean/variance size mismatch");
  for (Eigen::Index i = 0; i < variance.size(); ++i) {
    if (!(variance[i] > 0.0)) throw DomainError("GaussianToyModel: variance must be positive");
  }
}

Mat GaussianToyModel::noise(const Mat& x, double alpha_bar) const {
  validate();
  if (x.cols() != mean.size()) throw DomainError("GaussianToyModel: dimension mismatch");
  const double s = std::sqrt(alpha_bar);
  Mat out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double total = alpha_bar * variance[j] + 1.0 - alpha_bar;
    out.col(j) = std::sqrt(1.0 - alpha_bar) * (x.col(j).array() - s * mean[j]) / total;
  }
  return out;
}

NoiseModel GaussianToyModel::as_noise_model() const {
  return [model = *this](const Mat& x, double alpha_bar) { return model.noise(x, alpha_bar); };
}

Mat analytic_gaussian_flow(const GaussianToyModel& model, const Mat& x, double alpha_from, double alpha_to) {
  model.validate();
  if (x.cols() != model.mean.size()) throw DomainError("analytic_gaussian_flow: dimension mismatch");
  Mat out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd_from = std::sqrt(alpha_from * model.variance[j] + 1.0 - alpha_from);
    const double sd_to = std::sqrt(alpha_to * model.variance[j] + 1.0 - alpha_to);
    out.col(j) = std::sqrt(alpha_to) * model.mean[j] +
                 (sd_to / sd_from) * (x.col(j).array() - std::sqrt(alpha_from) * model.mean[j]);
  }
  return out;
}

Mat analytic_gaussian_solve(const GaussianToyModel& model, const Mat& x0, const NoiseSchedule& schedule) {
  return analytic_gaussian_flow(model, x0, schedule.alpha_bar(0), schedule.alpha_bar(schedule.steps()));
}

// ---------------------------------------------------------------------------
// Trajectory dump

void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory, const nlohmann::json& extra) {
  if (trajectory.states.empty()) throw ConfigError("save_trajectory: empty trajectory");
  const ImageTensor& first = trajectory.states.front().data;
  Container c;
  c.magic = kTrajectoryMagic;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trajectory.states) steps.push_back(s.timestep_index);
  c.metadata = {{"format", kTrajectoryMagic},
                {"channels", first.channels()},
                {"height", first.height()},
                {"width", first.width()},
                {"timesteps", steps},
                {"predictions", trajectory.predicted_x0.size()},
                {"extra", extra}};
  auto append = [&c](const ImageTensor& img) {
    for (Eigen::Index i = 0; i < img.values().size(); ++i) c.payload.push_back(static_cast<float>(img.values().data()[i]));
  };
  for (const auto& s : trajectory.states) append(s.data);
  for (const auto& p : trajectory.predicted_x0) append(p);
  write_file(path, encode_container(c));
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  const Bytes raw = read_file(path);
  Container c = decode_container(raw, kTrajectoryMagic);
  const int ch = c.metadata.at("channels").get<int>();
  const int h = c.metadata.at("height").get<int>();
  const int w = c.metadata.at("width").get<int>();
  const auto steps = c.metadata.at("timesteps").get<std::vector<int>>();
  const auto n_pred = c.metadata.at("predictions").get<std::size_t>();
  const std::size_t per = static_cast<std::size_t>(ch) * h * w;
  if (c.payload.size() != per * (steps.size() + n_pred)) throw ConfigError("load_trajectory: payload size mismatch");
  std::size_t off = 0;
  auto take = [&]() {
    ImageTensor img(ch, h, w);
    for (std::size_t i = 0; i < per; ++i) img.values().data()[i] = c.payload[off + i];
    off += per;
    return img;
  };
  Trajectory traj;
  for (int t : steps) traj.states.push_back({take(), t});
  for (std::size_t i = 0; i < n_pred; ++i) traj.predicted_x0.push_back(take());
  return traj;
}

}  // namespace tvdb
