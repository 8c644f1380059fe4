#include "tvdb/editor.hpp"

#include "tvdb/errors.hpp"

#include <random>

namespace tvdb {

PreparedSource prepare_source(const ImageTensor& image, const DenoiserWeights& weights, const BridgeConfig& config) {
  return reconstruct_null(image, weights, config);
}

ImageTensor edit_prepared(const PreparedSource& source, const PromptEmbedding& embedding,
                          const DenoiserWeights& weights, const BridgeConfig& config, double intensity) {
  check_compatible(weights, embedding);
  InjectionPlan plan = injection_plan(weights, config, source.attention, intensity);
  if (!config.attention_control) plan.tau = 0.0;
  return generate(source.x_T, weights, embedding, config, &plan).back().data.clamped();
}

ImageTensor edit(const ImageTensor& image, const PromptEmbedding& embedding, const DenoiserWeights& weights,
                 const BridgeConfig& config, double intensity) {
  check_compatible(weights, embedding);
  return edit_prepared(prepare_source(image, weights, config), embedding, weights, config, intensity);
}

std::vector<EditOutcome> edit_batch(std::span<const ImageTensor> images, const PromptEmbedding& embedding,
                                    const DenoiserWeights& weights, const BridgeConfig& config, double intensity) {
  std::vector<EditOutcome> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      out[i].image = edit(images[i], embedding, weights, config, intensity);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

ImageTensor generate_from_embedding(const PromptEmbedding& embedding, const DenoiserWeights& weights,
                                    const BridgeConfig& config, std::uint64_t seed) {
  check_compatible(weights, embedding);
  const auto& cfg = weights.config();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageTensor x(cfg.image_channels, cfg.image_size, cfg.image_size);
  for (Eigen::Index i = 0; i < x.values().size(); ++i) x.values().data()[i] = normal(rng);
  return generate({x, config.steps}, weights, embedding, config).back().data.clamped();
}

}  // namespace tvdb
