#pragma once

// Deterministic DDIM bridge: inversion x_0 -> x_T, guided generation
// x_T -> x_0, two-model translation, and a closed-form Gaussian reference.

#include "tvdb/attention.hpp"
#include "tvdb/attention_control.hpp"
#include "tvdb/denoiser.hpp"
#include "tvdb/image.hpp"
#include "tvdb/schedule.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace tvdb {

struct BridgeConfig {
  int steps = 50;
  int epochs = 50;
  double guidance = 7.5;
  double tau = 0.7;
  double learning_rate = 1e-3;
  int learnable = 4;
  double beta_temperature = 1.0;
  bool renormalize_rows = true;
  std::uint64_t seed = 0;

  bool guidance_in_inversion = true;
  InjectionClock clock = InjectionClock::Normalized;
  bool inject_cross = true;
  bool inject_self = true;
  bool post_update_advance = true;  // advance x_{t-1} with the refreshed prediction
  bool raw_beta = false;            // beta = exp(temperature * (t - T)) over diffusion time
  bool attention_control = true;    // false disables injection while textualizing

  // Throws ConfigError on out-of-range values.
  void validate() const;
  nlohmann::json to_json() const;
  static BridgeConfig from_json(const nlohmann::json& j);
};

// Bridge schedule: the model's training schedule subsampled to config.steps.
NoiseSchedule bridge_schedule(const DenoiserWeights& weights, const BridgeConfig& config);

struct Trajectory {
  std::vector<LatentState> states;           // start to end
  std::vector<ImageTensor> predicted_x0;     // one per transition, when kept
  AttentionRecord attention;                 // conditional-branch maps, when recorded

  const LatentState& front() const { return states.front(); }
  const LatentState& back() const { return states.back(); }
};

struct DdimStep {
  LatentState previous;
  ImageTensor predicted_x0;
};

// Predicted clean image from x_t and its noise estimate.
Mat predicted_x0(const Mat& x_t, const Mat& noise, double alpha_bar_t);
// Moves x from level `alpha_from` to `alpha_to` along the deterministic update.
Mat ddim_transfer(const Mat& x, const Mat& noise, double alpha_from, double alpha_to);

// One denoising update t -> t_prev. Throws DomainError unless 0 <= t_prev < t <= T.
DdimStep ddim_step(const LatentState& x_t, const ImageTensor& noise, const NoiseSchedule& schedule, int t,
                   int t_prev);

// Tape versions, differentiable in both x_t and noise.
ad::Var predicted_x0(ad::Tape& tape, ad::Var x_t, ad::Var noise, double alpha_bar_t);
ad::Var ddim_transfer(ad::Tape& tape, ad::Var x, ad::Var noise, double alpha_from, double alpha_to);

struct BridgeTrace {
  bool record_attention = false;
  bool keep_predictions = false;
};

// x_0 -> x_T under guidance with `c`. Throws NumericalError naming the failing step.
Trajectory invert(const ImageTensor& x0, const DenoiserWeights& weights, const PromptEmbedding& c,
                  const BridgeConfig& config, BridgeTrace trace = {});

// x_T -> x_0. When `injection` is given, conditional-branch attention is
// overridden at its scheduled steps. Throws ConfigError if the plan's source
// record does not cover every injected (step, site).
Trajectory generate(const LatentState& x_T, const DenoiserWeights& weights, const PromptEmbedding& c,
                    const BridgeConfig& config, const InjectionPlan* injection = nullptr, BridgeTrace trace = {});

// Inversion under the null prompt followed by a null-prompt reconstruction
// pass; the reconstruction's attention is the before-image source for injection.
struct NullReconstruction {
  LatentState x_T;
  ImageTensor reconstruction;
  std::shared_ptr<const AttentionRecord> attention;
};

NullReconstruction reconstruct_null(const ImageTensor& x0, const DenoiserWeights& weights,
                                    const BridgeConfig& config);

// Plan over the model's sites selected by config.inject_cross / inject_self.
InjectionPlan injection_plan(const DenoiserWeights& weights, const BridgeConfig& config,
                             std::shared_ptr<const AttentionRecord> source, double intensity = 1.0);

// Translation between two models sharing the latent shape and schedule.
ImageTensor ddib_translate(const ImageTensor& x_src, const DenoiserWeights& weights_src,
                           const DenoiserWeights& weights_tgt, const BridgeConfig& config);

// ---------------------------------------------------------------------------
// Generic solver over an arbitrary noise model, used for the Gaussian reference.

// noise(x, alpha_bar) for a state x at signal level alpha_bar.
using NoiseModel = std::function<Mat(const Mat& x, double alpha_bar)>;

// Integrates from schedule index `from` to `to` (either direction) with DDIM updates.
// Inversion evaluates the model at the current state with the destination level.
Mat ddim_solve(const Mat& x, const NoiseModel& model, const NoiseSchedule& schedule, int from, int to);

Mat ddib_translate(const Mat& x_src, const NoiseModel& source, const NoiseModel& target,
                   const NoiseSchedule& schedule);

// Independent-coordinate Gaussian data distribution.
struct GaussianToyModel {
  Vec mean;
  Vec variance;

  void validate() const;  // DomainError on non-positive variance or size mismatch
  // Exact noise prediction for rows of x (each row one sample, columns are coordinates).
  Mat noise(const Mat& x, double alpha_bar) const;
  NoiseModel as_noise_model() const;
};

// Exact probability-flow map from level alpha_from to alpha_to, per coordinate.
Mat analytic_gaussian_flow(const GaussianToyModel& model, const Mat& x, double alpha_from, double alpha_to);
// x_0 -> x_T endpoint.
Mat analytic_gaussian_solve(const GaussianToyModel& model, const Mat& x0, const NoiseSchedule& schedule);

// ---------------------------------------------------------------------------
// Debug dump: "TVDB-T1" container with per-state float32 payloads.

void save_trajectory(const std::filesystem::path& path, const Trajectory& trajectory,
                     const nlohmann::json& extra = nlohmann::json::object());
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace tvdb
