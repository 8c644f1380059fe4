#include "tvdb/denoiser.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tvdb {

// ---------------------------------------------------------------------------
// PromptEmbedding

PromptEmbedding::PromptEmbedding(Mat tokens, int learnable) : tokens_(std::move(tokens)), learnable_(learnable) {
  if (learnable_ < 0 || learnable_ > k() - 2) {
    throw DomainError("PromptEmbedding: learnable count " + std::to_string(learnable_) +
                      " outside [0, k-2] for k = " + std::to_string(k()));
  }
}

TokenRole PromptEmbedding::role(int row) const {
  if (row == 0) return TokenRole::Start;
  if (row <= learnable_) return TokenRole::Learnable;
  if (row == learnable_ + 1) return TokenRole::End;
  return TokenRole::Pad;
}

std::vector<TokenRole> PromptEmbedding::roles() const {
  std::vector<TokenRole> out(k());
  for (int i = 0; i < k(); ++i) out[i] = role(i);
  return out;
}

// ---------------------------------------------------------------------------
// Config / weights

nlohmann::json DenoiserConfig::to_json() const {
  return {{"image_channels", image_channels}, {"image_size", image_size},
          {"d", embed_dim},                   {"k", token_capacity},
          {"vocab_size", vocab_size},         {"base_channels", base_channels},
          {"mid_channels", mid_channels},     {"groups", groups},
          {"head_dim", head_dim},             {"time_features", time_features},
          {"time_hidden", time_hidden},       {"train_steps", train_steps},
          {"alpha_bar_end", alpha_bar_end}, {"token_scale", token_scale}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.image_channels = j.at("image_channels").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.embed_dim = j.at("d").get<int>();
  c.token_capacity = j.at("k").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.mid_channels = j.at("mid_channels").get<int>();
  c.groups = j.at("groups").get<int>();
  c.head_dim = j.at("head_dim").get<int>();
  c.time_features = j.at("time_features").get<int>();
  c.time_hidden = j.at("time_hidden").get<int>();
  c.train_steps = j.at("train_steps").get<int>();
  c.alpha_bar_end = j.at("alpha_bar_end").get<double>();
  c.token_scale = j.at("token_scale").get<double>();
  return c;
}

namespace {

enum class Init { Zero, One, Normal };

struct ParamSpec {
  std::string name;
  int rows;
  int cols;
  Init init;
  double stddev;
};

void add_conv(std::vector<ParamSpec>& s, const std::string& prefix, int in, int out, double gain = 1.0) {
  s.push_back({prefix + ".w", out, in * 9, Init::Normal, gain / std::sqrt(in * 9.0)});
  s.push_back({prefix + ".b", out, 1, Init::Zero, 0.0});
}

void add_norm(std::vector<ParamSpec>& s, const std::string& prefix, int channels) {
  s.push_back({prefix + ".gamma", channels, 1, Init::One, 0.0});
  s.push_back({prefix + ".beta", channels, 1, Init::Zero, 0.0});
}

void add_resblock(std::vector<ParamSpec>& s, const std::string& prefix, int channels, int hidden) {
  add_norm(s, prefix + ".norm1", channels);
  add_conv(s, prefix + ".conv1", channels, channels);
  s.push_back({prefix + ".temb.w", channels, hidden, Init::Normal, 1.0 / std::sqrt(hidden)});
  s.push_back({prefix + ".temb.b", channels, 1, Init::Zero, 0.0});
  add_norm(s, prefix + ".norm2", channels);
  add_conv(s, prefix + ".conv2", channels, channels, 0.5);
}

void add_attention(std::vector<ParamSpec>& s, const std::string& prefix, int channels, int context, int head) {
  add_norm(s, prefix + ".norm", channels);
  s.push_back({prefix + ".wq", channels, head, Init::Normal, 1.0 / std::sqrt(channels)});
  s.push_back({prefix + ".wk", context, head, Init::Normal, 1.0 / std::sqrt(context)});
  s.push_back({prefix + ".wv", context, head, Init::Normal, 1.0 / std::sqrt(context)});
  s.push_back({prefix + ".wo", head, channels, Init::Normal, 0.5 / std::sqrt(head)});
}

std::vector<ParamSpec> layout(const DenoiserConfig& c) {
  const int c1 = c.base_channels;
  const int c2 = c.mid_channels;
  std::vector<ParamSpec> s;
  s.push_back({"time.w1", c.time_hidden, c.time_features, Init::Normal, 1.0 / std::sqrt(c.time_features)});
  s.push_back({"time.b1", c.time_hidden, 1, Init::Zero, 0.0});
  add_conv(s, "conv_in", c.image_channels, c1);
  add_resblock(s, "res0", c1, c.time_hidden);
  add_conv(s, "down1", c1, c2);
  add_resblock(s, "res1", c2, c.time_hidden);
  add_attention(s, "attn16.self", c2, c2, c.head_dim);
  add_attention(s, "attn16.cross", c2, c.embed_dim, c.head_dim);
  add_conv(s, "down2", c2, c2);
  add_resblock(s, "res2", c2, c.time_hidden);
  add_attention(s, "attn8.self", c2, c2, c.head_dim);
  add_attention(s, "attn8.cross", c2, c.embed_dim, c.head_dim);
  add_resblock(s, "res3", c2, c.time_hidden);
  add_conv(s, "up1", 2 * c2, c2);
  add_resblock(s, "res4", c2, c.time_hidden);
  add_conv(s, "up2", c2 + c1, c1);
  add_norm(s, "out.norm", c1);
  add_conv(s, "conv_out", c1, c.image_channels, 0.1);
  s.push_back({"tokens.table", 3 + c.vocab_size, c.embed_dim, Init::Normal, c.token_scale});
  return s;
}

}  // namespace

DenoiserWeights::DenoiserWeights(DenoiserConfig config, std::vector<NamedParam> params)
    : config_(config), params_(std::move(params)) {
  const auto expected = layout(config_);
  if (expected.size() != params_.size()) throw ConfigError("DenoiserWeights: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = expected[i];
    const auto& p = params_[i];
    if (p.name != e.name || p.value.rows() != e.rows || p.value.cols() != e.cols) {
      throw ConfigError("DenoiserWeights: parameter " + std::to_string(i) + " (" + p.name +
                        ") does not match layout entry " + e.name);
    }
    index_[p.name] = static_cast<int>(i);
  }
  build_sites();
}

void DenoiserWeights::build_sites() {
  const int s16 = (config_.image_size / 2) * (config_.image_size / 2);
  const int s8 = (config_.image_size / 4) * (config_.image_size / 4);
  const int c = config_.mid_channels;
  sites_ = {{0, AttentionKind::Self, s16, c, "attn16.self"},
            {1, AttentionKind::Cross, s16, c, "attn16.cross"},
            {2, AttentionKind::Self, s8, c, "attn8.self"},
            {3, AttentionKind::Cross, s8, c, "attn8.cross"}};
}

int DenoiserWeights::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("DenoiserWeights: unknown parameter " + name);
  return it->second;
}

NoiseSchedule DenoiserWeights::training_schedule() const {
  return NoiseSchedule::linear(config_.train_steps, config_.alpha_bar_end);
}

Eigen::RowVectorXd DenoiserWeights::word(int index) const {
  if (index < 0 || index >= config_.vocab_size) {
    throw DomainError("DenoiserWeights: word id " + std::to_string(index) + " outside vocabulary");
  }
  return token_table().row(3 + index);
}

std::size_t DenoiserWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool DenoiserWeights::operator==(const DenoiserWeights& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name || params_[i].value != other.params_[i].value) return false;
  }
  return true;
}

DenoiserWeights init_weights(const DenoiserConfig& config, std::uint64_t seed) {
  if (config.base_channels % config.groups != 0 || config.mid_channels % config.groups != 0) {
    throw ConfigError("init_weights: channel counts must be divisible by groups");
  }
  if (config.token_capacity < 2) throw ConfigError("init_weights: token capacity must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<NamedParam> params;
  for (const auto& spec : layout(config)) {
    Mat m(spec.rows, spec.cols);
    switch (spec.init) {
      case Init::Zero: m.setZero(); break;
      case Init::One: m.setOnes(); break;
      case Init::Normal:
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * spec.stddev;
        break;
    }
    params.push_back({spec.name, std::move(m)});
  }
  DenoiserWeights w(config, std::move(params));
  w.info()["init_seed"] = seed;
  return w;
}

PromptEmbedding make_null_embedding(const DenoiserWeights& weights) {
  return label_embedding(weights, {});
}

PromptEmbedding label_embedding(const DenoiserWeights& weights, const std::vector<int>& word_ids) {
  const auto& cfg = weights.config();
  const int k = cfg.token_capacity;
  const int y = static_cast<int>(word_ids.size());
  if (y > k - 2) throw DomainError("label_embedding: too many words for token capacity");
  const Mat& table = weights.token_table();
  Mat tokens(k, cfg.embed_dim);
  tokens.row(0) = table.row(0);
  for (int i = 0; i < y; ++i) tokens.row(1 + i) = weights.word(word_ids[i]);
  tokens.row(y + 1) = table.row(1);
  for (int i = y + 2; i < k; ++i) tokens.row(i) = table.row(2);
  return PromptEmbedding(std::move(tokens), y);
}

bool is_null_embedding(const DenoiserWeights& weights, const PromptEmbedding& c) {
  if (c.learnable() != 0) return false;
  return c.tokens() == make_null_embedding(weights).tokens();
}

void check_compatible(const DenoiserWeights& weights, const PromptEmbedding& c) {
  const auto& cfg = weights.config();
  if (c.k() != cfg.token_capacity || c.d() != cfg.embed_dim) {
    throw ConfigError("embedding shape " + std::to_string(c.k()) + "x" + std::to_string(c.d()) +
                      " does not match model capacity " + std::to_string(cfg.token_capacity) + "x" +
                      std::to_string(cfg.embed_dim));
  }
}

// ---------------------------------------------------------------------------
// Forward graph

DenoiserGraph::DenoiserGraph(ad::Tape& tape, const DenoiserWeights& weights, bool param_grads)
    : tape_(tape), weights_(weights) {
  vars_.reserve(weights.params().size());
  for (const auto& p : weights.params()) vars_.push_back(tape.leaf(p.value, param_grads));
}

ad::Var DenoiserGraph::conv(const std::string& prefix, ad::Var x, int h, int w, int stride) {
  return ad::conv3x3(tape_, x, p(prefix + ".w"), p(prefix + ".b"), h, w, stride);
}

ad::Var DenoiserGraph::norm(const std::string& prefix, ad::Var x) {
  return ad::group_norm(tape_, x, p(prefix + ".gamma"), p(prefix + ".beta"), weights_.config().groups);
}

ad::Var DenoiserGraph::resblock(const std::string& prefix, ad::Var x, ad::Var temb, int h, int w) {
  auto& t = tape_;
  ad::Var y = conv(prefix + ".conv1", ad::silu(t, norm(prefix + ".norm1", x)), h, w, 1);
  ad::Var proj = ad::add(t, ad::matmul(t, p(prefix + ".temb.w"), temb), p(prefix + ".temb.b"));
  y = ad::add_row_bias(t, y, proj);
  y = conv(prefix + ".conv2", ad::silu(t, norm(prefix + ".norm2", y)), h, w, 1);
  return ad::add(t, x, y);
}

ad::Var DenoiserGraph::attention(const AttentionSite& site, const std::string& prefix, ad::Var x,
                                 ad::Var tokens, const AttentionOverride* override_hook, Result& result) {
  auto& t = tape_;
  ad::Var xt = ad::transpose(t, norm(prefix + ".norm", x));  // [P x C]
  ad::Var context = site.kind == AttentionKind::Cross ? tokens : xt;
  ad::Var q = ad::matmul(t, xt, p(prefix + ".wq"));
  ad::Var k = ad::matmul(t, context, p(prefix + ".wk"));
  ad::Var v = ad::matmul(t, context, p(prefix + ".wv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(weights_.config().head_dim));
  ad::Var a = ad::softmax_rows(t, ad::scale(t, ad::matmul(t, q, ad::transpose(t, k)), inv_sqrt));
  if (override_hook != nullptr && override_hook->applies(site)) a = override_hook->apply(t, site, a);
  result.maps.emplace_back(site.id, a);
  ad::Var o = ad::matmul(t, ad::matmul(t, a, v), p(prefix + ".wo"));
  return ad::add(t, x, ad::transpose(t, o));
}

ad::Var DenoiserGraph::time_embedding(double model_time) {
  const auto& cfg = weights_.config();
  const int half = cfg.time_features / 2;
  const double tau = model_time * cfg.train_steps;
  Mat feats(cfg.time_features, 1);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * i / half);
    feats(i, 0) = std::sin(tau * freq);
    feats(half + i, 0) = std::cos(tau * freq);
  }
  auto& t = tape_;
  ad::Var f = t.constant(std::move(feats));
  return ad::silu(t, ad::add(t, ad::matmul(t, p("time.w1"), f), p("time.b1")));
}

DenoiserGraph::Result DenoiserGraph::forward(ad::Var x, double model_time, ad::Var tokens,
                                             const AttentionOverride* override_hook) {
  const auto& cfg = weights_.config();
  const int s = cfg.image_size;
  const auto& sites = weights_.sites();
  auto& t = tape_;
  Result result;
  ad::Var temb = time_embedding(model_time);
  // Per-token normalisation, as a text encoder's final layer would apply.
  const int k = static_cast<int>(t.value(tokens).rows());
  ad::Var context = ad::group_norm(t, tokens, t.constant(Mat::Ones(k, 1)), t.constant(Mat::Zero(k, 1)), k, 1e-8);

  ad::Var h = conv("conv_in", x, s, s, 1);
  h = resblock("res0", h, temb, s, s);
  ad::Var skip0 = h;
  h = conv("down1", h, s, s, 2);
  h = resblock("res1", h, temb, s / 2, s / 2);
  h = attention(sites[0], "attn16.self", h, context, override_hook, result);
  h = attention(sites[1], "attn16.cross", h, context, override_hook, result);
  ad::Var skip1 = h;
  h = conv("down2", h, s / 2, s / 2, 2);
  h = resblock("res2", h, temb, s / 4, s / 4);
  h = attention(sites[2], "attn8.self", h, context, override_hook, result);
  h = attention(sites[3], "attn8.cross", h, context, override_hook, result);
  h = resblock("res3", h, temb, s / 4, s / 4);
  h = ad::upsample2x(t, h, s / 4, s / 4);
  h = conv("up1", ad::concat_rows(t, h, skip1), s / 2, s / 2, 1);
  h = resblock("res4", h, temb, s / 2, s / 2);
  h = ad::upsample2x(t, h, s / 2, s / 2);
  h = conv("up2", ad::concat_rows(t, h, skip0), s, s, 1);
  h = ad::silu(t, norm("out.norm", h));
  result.noise = conv("conv_out", h, s, s, 1);
  return result;
}

// ---------------------------------------------------------------------------
// Inference entry points

namespace {

void check_input(const DenoiserWeights& weights, const ImageTensor& x) {
  const auto& cfg = weights.config();
  if (x.channels() != cfg.image_channels || x.height() != cfg.image_size || x.width() != cfg.image_size) {
    throw ConfigError("denoiser input " + shape_string(x) + " does not match model resolution");
  }
}

}  // namespace

DenoiserOutput predict_noise(const DenoiserWeights& weights, const LatentState& x, const NoiseSchedule& schedule,
                             int t, const PromptEmbedding& c, const AttentionOverride* override_hook) {
  if (t < 1 || t > schedule.steps()) {
    throw DomainError("predict_noise: timestep " + std::to_string(t) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  check_compatible(weights, c);
  check_input(weights, x.data);
  ad::Tape tape;
  DenoiserGraph graph(tape, weights, false);
  auto r = graph.forward(tape.constant(x.data.values()), schedule.model_time(t), tape.constant(c.tokens()),
                         override_hook);
  DenoiserOutput out;
  out.noise_prediction = ImageTensor(tape.value(r.noise), x.data.height(), x.data.width());
  for (const auto& [site, var] : r.maps) out.attention.put(t, weights.sites()[site], tape.value(var));
  return out;
}

Mat cfg_combine(const Mat& uncond, const Mat& cond, double guidance) {
  return uncond + guidance * (cond - uncond);
}

CfgOutput cfg_predict(const DenoiserWeights& weights, const LatentState& x, const NoiseSchedule& schedule, int t,
                      const PromptEmbedding& c, double guidance, const AttentionOverride* override_hook) {
  if (guidance < 0.0) throw DomainError("cfg_predict: guidance scale must be >= 0");
  check_compatible(weights, c);
  const PromptEmbedding null = make_null_embedding(weights);
  DenoiserOutput uncond = predict_noise(weights, x, schedule, t, null);
  CfgOutput out;
  if (override_hook == nullptr && c.tokens() == null.tokens()) {
    out.noise_prediction = uncond.noise_prediction;
    out.cond_attention = uncond.attention;
    out.uncond_attention = std::move(uncond.attention);
    return out;
  }
  DenoiserOutput cond = predict_noise(weights, x, schedule, t, c, override_hook);
  out.noise_prediction = ImageTensor(cfg_combine(uncond.noise_prediction.values(), cond.noise_prediction.values(), guidance),
                                     x.data.height(), x.data.width());
  out.uncond_attention = std::move(uncond.attention);
  out.cond_attention = std::move(cond.attention);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Draw {
  std::size_t example;
  int index;
  Mat noise;
  bool drop_label;
};

Draw draw_sample(std::mt19937_64& rng, std::size_t dataset_size, std::size_t example, int train_steps,
                 Eigen::Index rows, Eigen::Index cols, double dropout) {
  std::uniform_int_distribution<int> pick_t(1, train_steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  (void)dataset_size;
  Draw d{example, pick_t(rng), Mat(rows, cols), false};
  for (Eigen::Index i = 0; i < d.noise.size(); ++i) d.noise.data()[i] = normal(rng);
  d.drop_label = unit(rng) < dropout;
  return d;
}

double sample_loss(const DenoiserWeights& weights, const NoiseSchedule& schedule, const TrainingExample& ex,
                   const Draw& d, const PromptEmbedding& null, std::vector<Mat>* grads) {
  const double ab = schedule.alpha_bar(d.index);
  Mat noisy = std::sqrt(ab) * ex.image.values() + std::sqrt(1.0 - ab) * d.noise;
  ad::Tape tape;
  DenoiserGraph graph(tape, weights, grads != nullptr);
  const Mat tokens = d.drop_label ? null.tokens() : label_embedding(weights, ex.words).tokens();
  auto r = graph.forward(tape.constant(std::move(noisy)), schedule.model_time(d.index), tape.constant(tokens),
                         nullptr);
  ad::Var loss = ad::mean_squared_error(tape, r.noise, d.noise);
  const double value = tape.value(loss)(0, 0);
  if (grads != nullptr) {
    tape.backward(loss);
    for (std::size_t i = 0; i < grads->size(); ++i) (*grads)[i] += tape.grad(graph.param_var(static_cast<int>(i)));
  }
  return value;
}

}  // namespace

TrainDenoiserResult train_denoiser(const std::vector<TrainingExample>& dataset, const DenoiserConfig& config,
                                   const TrainDenoiserOptions& options) {
  if (dataset.empty()) throw ConfigError("train_denoiser: dataset is empty");
  if (options.epochs < 1 || options.batch_size < 1) throw ConfigError("train_denoiser: epochs and batch size must be positive");
  for (const auto& ex : dataset) {
    if (ex.image.channels() != config.image_channels || ex.image.height() != config.image_size ||
        ex.image.width() != config.image_size) {
      throw ConfigError("train_denoiser: example shape " + shape_string(ex.image) + " does not match config");
    }
    if (static_cast<int>(ex.words.size()) > config.token_capacity - 2) {
      throw ConfigError("train_denoiser: label has more words than the token capacity allows");
    }
    for (int wid : ex.words) {
      if (wid < 0 || wid >= config.vocab_size) throw ConfigError("train_denoiser: word id outside vocabulary");
    }
  }
  std::mt19937_64 rng(options.seed);
  TrainDenoiserResult result{init_weights(config, rng()), {}};
  DenoiserWeights& w = result.weights;
  const NoiseSchedule schedule = w.training_schedule();
  const PromptEmbedding null = make_null_embedding(w);
  const std::size_t table_index = static_cast<std::size_t>(w.index_of("tokens.table"));

  AdamW opt({options.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batches_per_epoch = (dataset.size() + options.batch_size - 1) / options.batch_size;
  const double total_steps = static_cast<double>(batches_per_epoch * options.epochs);
  long step = 0;
  if (options.ema_decay < 0.0 || options.ema_decay >= 1.0) throw ConfigError("train_denoiser: ema_decay must lie in [0, 1)");
  std::vector<Mat> average;
  for (const auto& p : w.params()) average.push_back(p.value);
  const auto rows = dataset.front().image.values().rows();
  const auto cols = dataset.front().image.values().cols();

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t begin = b * options.batch_size;
      const std::size_t end = std::min(dataset.size(), begin + options.batch_size);
      std::vector<Mat> grads;
      for (const auto& p : w.params()) grads.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      for (std::size_t i = begin; i < end; ++i) {
        Draw d = draw_sample(rng, dataset.size(), order[i], config.train_steps, rows, cols, options.label_dropout);
        epoch_loss += sample_loss(w, schedule, dataset[d.example], d, null, &grads);
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      std::vector<Mat*> ps;
      std::vector<const Mat*> gs;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (i == table_index) continue;  // token vectors are fixed conditioning inputs
        grads[i] *= inv;
        ps.push_back(&w.mutable_params()[i].value);
        gs.push_back(&grads[i]);
      }
      // Cosine decay to 5% of the base rate.
      const double progress = static_cast<double>(step) / total_steps;
      opt.set_learning_rate(options.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * progress))));
      opt.step(ps, gs);
      ++step;
      if (options.ema_decay > 0.0) {
        // Warm-up keeps early averages from clinging to the initialisation.
        const double decay = std::min(options.ema_decay, (1.0 + step) / (10.0 + step));
        for (std::size_t i = 0; i < average.size(); ++i) {
          average[i] = decay * average[i] + (1.0 - decay) * w.params()[i].value;
        }
      }
    }
    const double mean = epoch_loss / static_cast<double>(dataset.size());
    if (!std::isfinite(mean)) throw NumericalError("train_denoiser: non-finite loss at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(mean);
  }
  if (options.ema_decay > 0.0) {
    for (std::size_t i = 0; i < average.size(); ++i) w.mutable_params()[i].value = average[i];
  }
  if (options.quantize_float32) {
    for (auto& p : w.mutable_params()) {
      p.value = p.value.cast<float>().cast<double>();
    }
  }
  w.info()["train_seed"] = options.seed;
  w.info()["epochs"] = options.epochs;
  w.info()["batch_size"] = options.batch_size;
  w.info()["learning_rate"] = options.learning_rate;
  w.info()["label_dropout"] = options.label_dropout;
  w.info()["ema_decay"] = options.ema_decay;
  w.info()["dataset_size"] = dataset.size();
  return result;
}

double denoising_loss(const DenoiserWeights& weights, const std::vector<TrainingExample>& dataset, int samples,
                      std::uint64_t seed) {
  if (dataset.empty()) throw ConfigError("denoising_loss: dataset is empty");
  std::mt19937_64 rng(seed);
  const NoiseSchedule schedule = weights.training_schedule();
  const PromptEmbedding null = make_null_embedding(weights);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  const auto rows = dataset.front().image.values().rows();
  const auto cols = dataset.front().image.values().cols();
  double total = 0.0;
  for (int i = 0; i < samples; ++i) {
    Draw d = draw_sample(rng, dataset.size(), pick(rng), weights.config().train_steps, rows, cols, 0.0);
    total += sample_loss(weights, schedule, dataset[d.example], d, null, nullptr);
  }
  return total / samples;
}

}  // namespace tvdb
