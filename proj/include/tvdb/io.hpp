#pragma once

// File formats: 8-bit RGB PNG, hashing/base64 helpers, and the tagged binary
// containers used for weights (TVDB-W1), embeddings (TVDB-E1), and
// trajectory dumps (TVDB-T1).
//
// Container layout: 7 magic bytes, uint64 little-endian metadata length,
// metadata as UTF-8 JSON, then float32 little-endian payload.

#include "tvdb/denoiser.hpp"
#include "tvdb/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tvdb {

using Bytes = std::vector<std::uint8_t>;

// pixel / 127.5 - 1 on load; clamp, then (v + 1) * 127.5 rounded half-to-even on save.
Bytes encode_png(const ImageTensor& image);
ImageTensor decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_png(const std::filesystem::path& path);
// The image as it would be after a PNG save/load round trip.
ImageTensor quantize_8bit(const ImageTensor& image);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws ConfigError on malformed input.
Bytes base64_decode(const std::string& text);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

struct Container {
  std::string magic;
  nlohmann::json metadata;
  std::vector<float> payload;
};

Bytes encode_container(const Container& c);
// Throws ConfigError on wrong magic or truncated data.
Container decode_container(std::span<const std::uint8_t> bytes, const std::string& expected_magic);

inline constexpr const char* kWeightsMagic = "TVDB-W1";
inline constexpr const char* kEmbeddingMagic = "TVDB-E1";
inline constexpr const char* kTrajectoryMagic = "TVDB-T1";

Bytes encode_weights(const DenoiserWeights& weights);
DenoiserWeights decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::filesystem::path& path, const DenoiserWeights& weights);
DenoiserWeights load_weights(const std::filesystem::path& path);
// SHA-256 of the encoded checkpoint.
std::string weights_hash(const DenoiserWeights& weights);

struct EmbeddingFile {
  PromptEmbedding embedding;
  nlohmann::json metadata;  // k, y, d, T, tau, w, temperature, model_hash, created, prompt_ids
};

Bytes encode_embedding(const EmbeddingFile& file);
EmbeddingFile decode_embedding(std::span<const std::uint8_t> bytes);
void save_embedding(const std::filesystem::path& path, const EmbeddingFile& file);
// Rejects a file whose model_hash differs from `weights` unless allow_mismatch is set.
EmbeddingFile load_embedding(const std::filesystem::path& path, const DenoiserWeights& weights,
                             bool allow_mismatch = false);
void check_model_hash(const EmbeddingFile& file, const DenoiserWeights& weights, bool allow_mismatch);

}  // namespace tvdb
