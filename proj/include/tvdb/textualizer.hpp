#pragma once

// Learns a prompt embedding from before/after image pairs: the embedding is
// optimised step by step along the bridge so its final prediction lands on
// the after image, with before-image attention merged into the live maps.

#include "tvdb/bridge.hpp"
#include "tvdb/denoiser.hpp"
#include "tvdb/toydata.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tvdb {

// exp(temperature * (i - T)), i = completed denoising iterations at step t,
// so the final step (t = 1) has weight 1. With `raw` the exponent is (t - T).
double beta(int t, int steps, double temperature, bool raw = false);

// beta * ||f - target||_2 (root-sum-square over all pixels and channels).
double step_loss(const ImageTensor& f, const ImageTensor& target, int t, int steps, double temperature);
ad::Var step_loss(ad::Tape& tape, ad::Var f, const Mat& target, double weight);

// LEARNABLE rows from N(0, 0.02^2) when `init_source` is empty; otherwise the
// label embedding of the corpus image nearest to it under pixel MSE (requires
// y to equal the label length). Other rows come from the null embedding.
PromptEmbedding init_embedding(const DenoiserWeights& weights, int y, const ImageTensor* init_source,
                               std::uint64_t seed);

struct LossEntry {
  int epoch = 0;
  int step = 0;  // diffusion step t, T down to 1
  double beta = 0.0;
  double loss = 0.0;
};

struct TextualizationResult {
  PromptEmbedding embedding;             // float32-rounded
  std::vector<LossEntry> loss_history;   // epochs x steps
  ImageTensor final_reconstruction;      // first prompt's before image, edited with `embedding`
  BridgeConfig config;
  std::vector<std::string> prompt_ids;

  // Loss at t = 1 for each epoch.
  std::vector<double> final_step_losses() const;
};

struct TextualizeOptions {
  std::optional<PromptEmbedding> initial;  // default: init_embedding with config.seed, Gaussian mode
  std::function<void(int epoch, double final_step_loss)> on_epoch;
};

// Throws NumericalError on non-finite or diverging loss (> 1e6), ConfigError on
// empty or mismatched prompts.
TextualizationResult textualize(std::span<const VisualPrompt> prompts, const DenoiserWeights& weights,
                                const BridgeConfig& config, const TextualizeOptions& options = {});

// Rounds every token value to float32, the precision of the embedding file.
PromptEmbedding round_to_float32(const PromptEmbedding& e);

}  // namespace tvdb
