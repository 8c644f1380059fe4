#pragma once

// Procedural 32x32 scenes, ground-truth image transformations, and the
// labelled corpus the toy denoiser is trained on.

#include "tvdb/denoiser.hpp"
#include "tvdb/image.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tvdb {

using Rgb = std::array<double, 3>;

enum class ShapeKind { Circle, Square, Triangle, Composite, None };

std::string to_string(ShapeKind kind);
ShapeKind shape_from_string(const std::string& name);

struct SceneSpec {
  ShapeKind kind = ShapeKind::Circle;
  Rgb fill{0.0, 0.0, 0.0};
  Rgb background{0.0, 0.0, 0.0};
  double cx = 16.0;  // pixel units, canvas origin top-left
  double cy = 16.0;
  double size = 8.0;  // radius / half-extent
  std::uint64_t seed = 0;
  int canvas = 32;

  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
  bool operator==(const SceneSpec&) const = default;
};

enum class TransformKind { ToneCurve, ColorShift, Desaturate, Blur, InvertLuma };

std::string to_string(TransformKind kind);

struct TransformSpec {
  TransformKind kind = TransformKind::ColorShift;
  double gamma = 1.0;                  // ToneCurve
  Rgb shift{0.0, 0.0, 0.0};            // ColorShift
  double factor = 0.0;                 // Desaturate: 0 keeps colour, 1 fully grey
  std::array<double, 9> kernel{0, 0, 0, 0, 1, 0, 0, 0, 0};  // Blur, row-major, normalised on use
  int iterations = 1;                  // Blur

  static TransformSpec tone_curve(double gamma);
  static TransformSpec color_shift(Rgb delta);
  static TransformSpec desaturate(double factor);
  static TransformSpec blur(std::array<double, 9> kernel, int iterations);
  static TransformSpec box_blur(int iterations);
  static TransformSpec invert_luma();

  nlohmann::json to_json() const;
  static TransformSpec from_json(const nlohmann::json& j);
};

double luma(double r, double g, double b);

// Exact pixel-membership raster. Throws DomainError for out-of-canvas geometry.
ImageTensor render(const SceneSpec& spec);

// Pure, range-clamped. Throws DomainError for invalid parameters.
ImageTensor apply_transform(const ImageTensor& image, const TransformSpec& transform);

struct ShapeClassification {
  std::optional<ShapeKind> kind;  // empty = unknown
  double score = 0.0;             // best template IoU
};

// Template-correlation classifier over luminance.
ShapeClassification classify_shape(const ImageTensor& image);

// Random scene drawn from the corpus distribution (plain style).
SceneSpec random_scene(std::uint64_t seed, std::optional<ShapeKind> kind = std::nullopt);

struct VisualPrompt {
  ImageTensor before;
  ImageTensor after;
  std::string id;
};

struct TestItem {
  ImageTensor image;
  ImageTensor ground_truth;
  std::string id;
};

struct PromptSet {
  std::vector<VisualPrompt> train;
  std::vector<TestItem> test;
  std::vector<SceneSpec> train_specs;
  std::vector<SceneSpec> test_specs;
  TransformSpec transform;
  std::uint64_t seed = 0;

  nlohmann::json manifest() const;
};

PromptSet make_prompt_set(int n_train_pairs, int n_test_images, const TransformSpec& transform,
                          std::uint64_t seed);

// Writes manifest.json plus before_/after_/test_/gt_####.png.
void write_prompt_set(const PromptSet& set, const std::filesystem::path& dir);
// Loads a directory written by write_prompt_set (images are 8-bit quantised).
PromptSet read_prompt_set(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Labelled training corpus

// Vocabulary: shapes, fill colours, background colours, styles.
struct Vocabulary {
  static int size();
  static int shape_word(ShapeKind kind);
  static int fill_word(int index);
  static int background_word(int index);
  static int style_word(int index);
  static std::string name(int word);
  static int fill_count();
  static int background_count();
  static int style_count();
};

struct CorpusItem {
  SceneSpec spec;
  int style = 0;
  ImageTensor image;
  std::vector<int> words;
};

struct CorpusSpec {
  std::uint64_t seed = 7;
  int size = 480;

  nlohmann::json to_json() const { return {{"seed", seed}, {"size", size}}; }
};

std::vector<CorpusItem> make_corpus(const CorpusSpec& spec);
std::vector<TrainingExample> to_training_set(const std::vector<CorpusItem>& corpus);

// Corpus recorded in a trained model's info block, if any.
std::optional<CorpusSpec> corpus_of(const DenoiserWeights& weights);

}  // namespace tvdb
