#pragma once

// Toy conditional noise-prediction network: a 3-level convolutional
// encoder/decoder with self- and cross-attention at the 16x16 and 8x8
// resolutions, conditioned on a token-embedding sequence.

#include "tvdb/attention.hpp"
#include "tvdb/autodiff.hpp"
#include "tvdb/image.hpp"
#include "tvdb/schedule.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace tvdb {

enum class TokenRole { Start, Learnable, End, Pad };

// Conditioning sequence of k tokens x d dims with roles
// [START, LEARNABLE x y, END, PAD x (k - y - 2)].
class PromptEmbedding {
 public:
  PromptEmbedding() = default;
  PromptEmbedding(Mat tokens, int learnable);

  int k() const { return static_cast<int>(tokens_.rows()); }
  int d() const { return static_cast<int>(tokens_.cols()); }
  int learnable() const { return learnable_; }
  TokenRole role(int row) const;
  std::vector<TokenRole> roles() const;

  const Mat& tokens() const { return tokens_; }
  // Mutable access to the LEARNABLE rows only (rows 1..y).
  auto learnable_rows() { return tokens_.middleRows(1, learnable_); }
  auto learnable_rows() const { return tokens_.middleRows(1, learnable_); }

  bool operator==(const PromptEmbedding& other) const {
    return learnable_ == other.learnable_ && tokens_ == other.tokens_;
  }

 private:
  Mat tokens_;
  int learnable_ = 0;
};

struct DenoiserConfig {
  int image_channels = 3;
  int image_size = 32;
  int embed_dim = 64;       // d
  int token_capacity = 8;   // k
  int vocab_size = 0;       // extra word vectors after START/END/PAD
  int base_channels = 16;   // 32x32 level
  int mid_channels = 32;    // 16x16 and 8x8 levels
  int groups = 4;
  int head_dim = 32;
  int time_features = 32;
  int time_hidden = 64;
  int train_steps = 200;
  double alpha_bar_end = 0.02;
  double token_scale = 0.02;  // standard deviation of the token table

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

struct NamedParam {
  std::string name;
  Mat value;
};

// Network parameters, token table, and descriptors. Immutable once trained.
class DenoiserWeights {
 public:
  DenoiserWeights() = default;
  DenoiserWeights(DenoiserConfig config, std::vector<NamedParam> params);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& mutable_params() { return params_; }
  int index_of(const std::string& name) const;
  const Mat& param(const std::string& name) const { return params_[index_of(name)].value; }

  const std::vector<AttentionSite>& sites() const { return sites_; }
  NoiseSchedule training_schedule() const;

  // Rows: 0 START, 1 END, 2 PAD, 3.. vocabulary words.
  const Mat& token_table() const { return param("tokens.table"); }
  Eigen::RowVectorXd word(int index) const;

  std::size_t parameter_count() const;

  // Free-form provenance (training seed, corpus description).
  nlohmann::json& info() { return info_; }
  const nlohmann::json& info() const { return info_; }

  bool operator==(const DenoiserWeights& other) const;

 private:
  void build_sites();

  DenoiserConfig config_;
  std::vector<NamedParam> params_;
  std::unordered_map<std::string, int> index_;
  std::vector<AttentionSite> sites_;
  nlohmann::json info_ = nlohmann::json::object();
};

// Deterministic random initialisation.
DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed);

PromptEmbedding make_null_embedding(const DenoiserWeights& weights);
// [START, words..., END, PAD...]; word ids index the vocabulary.
PromptEmbedding label_embedding(const DenoiserWeights& weights, const std::vector<int>& word_ids);

// Binds the parameters of a network onto a tape and evaluates the forward graph.
class DenoiserGraph {
 public:
  DenoiserGraph(ad::Tape& tape, const DenoiserWeights& weights, bool param_grads);

  struct Result {
    ad::Var noise;
    // Effective (post-override) maps, in site order.
    std::vector<std::pair<int, ad::Var>> maps;
  };

  Result forward(ad::Var x, double model_time, ad::Var tokens, const AttentionOverride* override_hook);

  ad::Var param_var(int index) const { return vars_[index]; }

 private:
  ad::Var p(const std::string& name) const { return vars_[weights_.index_of(name)]; }
  ad::Var conv(const std::string& prefix, ad::Var x, int h, int w, int stride);
  ad::Var norm(const std::string& prefix, ad::Var x);
  ad::Var resblock(const std::string& prefix, ad::Var x, ad::Var temb, int h, int w);
  ad::Var attention(const AttentionSite& site, const std::string& prefix, ad::Var x, ad::Var tokens,
                    const AttentionOverride* override_hook, Result& result);
  ad::Var time_embedding(double model_time);

  ad::Tape& tape_;
  const DenoiserWeights& weights_;
  std::vector<ad::Var> vars_;
};

struct DenoiserOutput {
  ImageTensor noise_prediction;
  AttentionRecord attention;  // keyed by the bridge step t
};

// epsilon-prediction at bridge step t in [1, schedule.steps()].
DenoiserOutput predict_noise(const DenoiserWeights& weights, const LatentState& x,
                             const NoiseSchedule& schedule, int t, const PromptEmbedding& c,
                             const AttentionOverride* override_hook = nullptr);

struct CfgOutput {
  ImageTensor noise_prediction;
  AttentionRecord uncond_attention;
  AttentionRecord cond_attention;
};

// s_null + w * (s_c - s_null). When c is the null embedding a single pass is run.
// The override applies to the conditional branch only.
CfgOutput cfg_predict(const DenoiserWeights& weights, const LatentState& x, const NoiseSchedule& schedule,
                      int t, const PromptEmbedding& c, double guidance,
                      const AttentionOverride* override_hook = nullptr);

// Plain CFG arithmetic.
Mat cfg_combine(const Mat& uncond, const Mat& cond, double guidance);

bool is_null_embedding(const DenoiserWeights& weights, const PromptEmbedding& c);

// Validates token capacity and embedding width against the model.
void check_compatible(const DenoiserWeights& weights, const PromptEmbedding& c);

// Image with its condition label given as vocabulary word ids.
struct TrainingExample {
  ImageTensor image;
  std::vector<int> words;
};

struct TrainDenoiserOptions {
  int epochs = 40;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double label_dropout = 0.15;
  double ema_decay = 0.0;  // 0 returns the raw weights; otherwise an exponential moving average
  std::uint64_t seed = 0;
  bool quantize_float32 = true;  // round final weights to float32 so checkpoints round-trip exactly
};

struct TrainDenoiserResult {
  DenoiserWeights weights;
  std::vector<double> epoch_loss;
};

// Standard epsilon objective at a uniformly sampled training index. Deterministic in the seed.
TrainDenoiserResult train_denoiser(const std::vector<TrainingExample>& dataset, const DenoiserConfig& config,
                                   const TrainDenoiserOptions& options);

// Mean epsilon MSE over `samples` seeded draws of (example, index, noise).
double denoising_loss(const DenoiserWeights& weights, const std::vector<TrainingExample>& dataset,
                      int samples, std::uint64_t seed);

}  // namespace tvdb
