#include "tvdb/textualizer.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/optim.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace tvdb {

double beta(int t, int steps, double temperature, bool raw) {
  if (t < 1 || t > steps) throw DomainError("beta: step outside [1, T]");
  const int i = raw ? t : steps - t + 1;
  return std::exp(temperature * static_cast<double>(i - steps));
}

double step_loss(const ImageTensor& f, const ImageTensor& target, int t, int steps, double temperature) {
  require_same_shape(f, target, "step_loss");
  return beta(t, steps, temperature) * (f.values() - target.values()).norm();
}

ad::Var step_loss(ad::Tape& tape, ad::Var f, const Mat& target, double weight) {
  const Mat& v = tape.value(f);
  if (v.rows() != target.rows() || v.cols() != target.cols()) throw DomainError("step_loss: shape mismatch");
  return ad::scale(tape, ad::l2_norm(tape, ad::add_constant(tape, f, -target)), weight);
}

PromptEmbedding round_to_float32(const PromptEmbedding& e) {
  Mat tokens = e.tokens().unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  return PromptEmbedding(std::move(tokens), e.learnable());
}

PromptEmbedding init_embedding(const DenoiserWeights& weights, int y, const ImageTensor* init_source,
                               std::uint64_t seed) {
  const PromptEmbedding null = make_null_embedding(weights);
  const int k = null.k();
  if (y < 0 || y > k - 2) throw DomainError("init_embedding: y out of range");
  if (init_source != nullptr) {
    const auto spec = corpus_of(weights);
    if (!spec) throw ConfigError("init_embedding: model does not record its training corpus");
    const auto corpus = make_corpus(*spec);
    const CorpusItem* best = nullptr;
    double best_mse = std::numeric_limits<double>::infinity();
    for (const auto& item : corpus) {
      require_same_shape<ConfigError>(item.image, *init_source, "init_embedding");
      const double mse = (item.image.values() - init_source->values()).squaredNorm();
      if (mse < best_mse) {
        best_mse = mse;
        best = &item;
      }
    }
    if (static_cast<int>(best->words.size()) != y) {
      throw ConfigError("init_embedding: descriptor initialisation needs y = " + std::to_string(best->words.size()));
    }
    return label_embedding(weights, best->words);
  }
  // Word 0 is a placeholder; its rows are overwritten below.
  Mat tokens = label_embedding(weights, std::vector<int>(static_cast<std::size_t>(y), 0)).tokens();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (int r = 1; r <= y; ++r) {
    for (int c = 0; c < null.d(); ++c) tokens(r, c) = normal(rng);
  }
  return PromptEmbedding(std::move(tokens), y);
}

std::vector<double> TextualizationResult::final_step_losses() const {
  std::vector<double> out;
  for (const auto& e : loss_history) {
    if (e.step == 1) out.push_back(e.loss);
  }
  return out;
}

namespace {

struct CondPass {
  Mat noise;
  Mat grad;  // d loss / d tokens, only when requested
  double loss = 0.0;
};

// Guided noise prediction with the conditional branch on a tape; when `target`
// is given, also back-propagates the weighted predicted-x0 loss into the tokens.
CondPass conditional_pass(const DenoiserWeights& weights, const Mat& x, double alpha_bar, double model_time,
                          const PromptEmbedding& c, const Mat& uncond, double guidance,
                          const AttentionOverride* hook, const Mat* target, double weight) {
  ad::Tape tape;
  DenoiserGraph graph(tape, weights, false);
  ad::Var tokens = tape.leaf(c.tokens(), target != nullptr);
  auto r = graph.forward(tape.constant(x), model_time, tokens, hook);
  ad::Var noise = ad::add_constant(tape, ad::scale(tape, r.noise, guidance), (1.0 - guidance) * uncond);
  CondPass out;
  out.noise = tape.value(noise);
  if (target != nullptr) {
    ad::Var f = predicted_x0(tape, tape.constant(x), noise, alpha_bar);
    ad::Var loss = step_loss(tape, f, *target, weight);
    tape.backward(loss);
    out.loss = tape.value(loss)(0, 0);
    out.grad = tape.grad(tokens);
  }
  return out;
}

}  // namespace

TextualizationResult textualize(std::span<const VisualPrompt> prompts, const DenoiserWeights& weights,
                                const BridgeConfig& config, const TextualizeOptions& options) {
  config.validate();
  if (prompts.empty()) throw ConfigError("textualize: no visual prompts");
  for (const auto& p : prompts) {
    require_same_shape<ConfigError>(p.before, p.after, "textualize");
    require_same_shape<ConfigError>(p.before, prompts.front().before, "textualize");
    if (!p.before.all_finite() || !p.after.all_finite()) throw ConfigError("textualize: non-finite prompt image");
  }
  const NoiseSchedule schedule = bridge_schedule(weights, config);
  const int steps = schedule.steps();
  const int h = prompts.front().before.height();
  const int w = prompts.front().before.width();
  const PromptEmbedding null = make_null_embedding(weights);

  PromptEmbedding c = options.initial ? *options.initial : init_embedding(weights, config.learnable, nullptr, config.seed);
  check_compatible(weights, c);
  const int y = c.learnable();
  BridgeConfig snapshot = config;
  snapshot.learnable = y;

  AdamW optimizer({.learning_rate = config.learning_rate, .beta1 = 0.9, .beta2 = 0.999, .epsilon = 1e-8,
                   .weight_decay = 0.0});
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, prompts.size() - 1);

  // x_T and the null-reconstruction attention are deterministic per prompt.
  std::map<std::size_t, NullReconstruction> cache;
  auto source_of = [&](std::size_t i) -> const NullReconstruction& {
    auto it = cache.find(i);
    if (it == cache.end()) it = cache.emplace(i, reconstruct_null(prompts[i].before, weights, config)).first;
    return it->second;
  };

  TextualizationResult result;
  result.loss_history.reserve(static_cast<std::size_t>(config.epochs) * steps);
  for (const auto& p : prompts) result.prompt_ids.push_back(p.id);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::size_t idx = prompts.size() > 1 ? pick(rng) : 0;
    const NullReconstruction& src = source_of(idx);
    const Mat& target = prompts[idx].after.values();
    std::optional<InjectionPlan> plan;
    if (config.attention_control) plan = injection_plan(weights, config, src.attention);

    Mat x = src.x_T.data.values();
    for (int t = steps; t >= 1; --t) {
      const double ab = schedule.alpha_bar(t);
      const double mt = schedule.model_time(t);
      const double weight = beta(t, steps, config.beta_temperature, config.raw_beta);
      const Mat uncond =
          predict_noise(weights, {ImageTensor(x, h, w), t}, schedule, t, null).noise_prediction.values();
      std::optional<StepOverride> hook;
      if (plan) hook.emplace(*plan, t, steps, c.k(), y);
      const AttentionOverride* hp = hook ? &*hook : nullptr;

      CondPass pass = conditional_pass(weights, x, ab, mt, c, uncond, config.guidance, hp, &target, weight);
      if (!std::isfinite(pass.loss) || pass.loss > 1e6) {
        throw NumericalError("textualize: loss diverged at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(t) + " (" + std::to_string(pass.loss) + ")",
                             t);
      }
      result.loss_history.push_back({epoch, t, weight, pass.loss});

      if (y > 0) {
        Mat rows = c.learnable_rows();
        const Mat grad = pass.grad.middleRows(1, y);
        optimizer.step({&rows}, {&grad});
        c.learnable_rows() = rows;
      }

      const Mat noise = config.post_update_advance && y > 0
                            ? conditional_pass(weights, x, ab, mt, c, uncond, config.guidance, hp, nullptr, 0.0).noise
                            : pass.noise;
      x = ddim_transfer(x, noise, ab, schedule.alpha_bar(t - 1));
      if (!x.allFinite()) {
        throw NumericalError("textualize: non-finite state at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(t),
                             t);
      }
    }
    if (options.on_epoch) options.on_epoch(epoch, result.loss_history.back().loss);
  }

  result.embedding = round_to_float32(c);
  result.config = snapshot;
  const NullReconstruction& first = source_of(0);
  std::optional<InjectionPlan> plan;
  if (config.attention_control) plan = injection_plan(weights, config, first.attention);
  result.final_reconstruction =
      generate(first.x_T, weights, result.embedding, config, plan ? &*plan : nullptr).back().data.clamped();
  return result;
}

}  // namespace tvdb
