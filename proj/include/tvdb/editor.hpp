#pragma once

// Applies a learned embedding to new images through the bridge.

#include "tvdb/bridge.hpp"
#include "tvdb/denoiser.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tvdb {

// Inversion and null-prompt reconstruction of one image, reusable across
// tau and intensity sweeps.
using PreparedSource = NullReconstruction;

PreparedSource prepare_source(const ImageTensor& image, const DenoiserWeights& weights, const BridgeConfig& config);

// Generates from the prepared latent under `embedding`, injecting the source
// attention for steps with t/T < config.tau. Output is clamped to [-1, 1].
ImageTensor edit_prepared(const PreparedSource& source, const PromptEmbedding& embedding,
                          const DenoiserWeights& weights, const BridgeConfig& config, double intensity = 1.0);

ImageTensor edit(const ImageTensor& image, const PromptEmbedding& embedding, const DenoiserWeights& weights,
                 const BridgeConfig& config, double intensity = 1.0);

struct EditOutcome {
  std::optional<ImageTensor> image;
  std::string error;  // set when image is empty
};

// Element-wise edit; a failing element is reported without aborting the rest.
std::vector<EditOutcome> edit_batch(std::span<const ImageTensor> images, const PromptEmbedding& embedding,
                                    const DenoiserWeights& weights, const BridgeConfig& config,
                                    double intensity = 1.0);

// Seeded standard-normal x_T, generated without injection.
ImageTensor generate_from_embedding(const PromptEmbedding& embedding, const DenoiserWeights& weights,
                                    const BridgeConfig& config, std::uint64_t seed);

}  // namespace tvdb
