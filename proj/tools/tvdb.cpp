// tvdb: command-line entry point.
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config error.

#include "settings.hpp"

#include "tvdb/bridge.hpp"
#include "tvdb/checks.hpp"
#include "tvdb/editor.hpp"
#include "tvdb/errors.hpp"
#include "tvdb/evalkit.hpp"
#include "tvdb/io.hpp"
#include "tvdb/textualizer.hpp"
#include "tvdb/toydata.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tvdb;
using tvdb::cli::Settings;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

// Flag values are kept as text and validated through the settings schema.
struct Overrides {
  std::map<std::string, std::string> pending;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { pending[key] = v; }, help + " [" + key + "]");
  }
  void add_switch(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                  const std::string& help) {
    app->add_flag_callback(flag, [this, key, value]() { pending[key] = value; }, help);
  }
};

struct Common {
  std::string config;
  Overrides overrides;
};

Settings resolve(const Common& common) {
  Settings s;
  if (!common.config.empty()) s.load(common.config);
  for (const auto& [k, v] : common.overrides.pending) s.set(k, v);
  return s;
}

void write_resolved(const fs::path& dir, const std::string& command, const nlohmann::json& inputs, const Settings& s) {
  fs::create_directories(dir);
  const nlohmann::json j = {{"command", command}, {"inputs", inputs}, {"settings", s.to_json()}};
  write_text(dir / "resolved-config.json", j.dump(2) + "\n");
}

fs::path parent_of(const fs::path& p) {
  const fs::path d = p.parent_path();
  return d.empty() ? fs::path(".") : d;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------

int run_make_dataset(const Common& common, const std::string& out) {
  const Settings s = resolve(common);
  const PromptSet set = make_prompt_set(static_cast<int>(s.integer("n_train")), static_cast<int>(s.integer("n_test")),
                                        s.transform(), s.seed("seed"));
  write_prompt_set(set, out);
  write_resolved(out, "make-dataset", {{"out", out}}, s);
  log("wrote " + std::to_string(set.train.size()) + " pairs and " + std::to_string(set.test.size()) +
      " test images to " + out);
  return 0;
}

int run_train_denoiser(const Common& common, const std::string& out) {
  const Settings s = resolve(common);
  const CorpusSpec corpus = s.corpus();
  const auto items = make_corpus(corpus);
  log("training on " + std::to_string(items.size()) + " corpus images");
  const auto started = std::chrono::steady_clock::now();
  TrainDenoiserResult r = train_denoiser(to_training_set(items), s.denoiser(), s.training());
  r.weights.info()["corpus"] = corpus.to_json();
  save_weights(out, r.weights);
  const fs::path dir = parent_of(out);
  std::string csv = "epoch,loss\n";
  for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) csv += std::to_string(i) + "," + number(r.epoch_loss[i]) + "\n";
  write_text(dir / "train_log.csv", csv);
  write_resolved(dir, "train-denoiser", {{"out", out}}, s);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  log("saved " + out + " (sha256 " + weights_hash(r.weights) + ", " + number(secs) + " s)");
  return 0;
}

int run_textualize(const Common& common, const std::string& pairs, const std::string& weights_path,
                   const std::string& out) {
  const Settings s = resolve(common);
  const BridgeConfig config = s.bridge();
  const DenoiserWeights weights = load_weights(weights_path);
  const PromptSet set = read_prompt_set(pairs);
  TextualizeOptions options;
  const std::string& init = s.text("init");
  if (init == "descriptor") {
    options.initial = init_embedding(weights, config.learnable, &set.train.front().after, config.seed);
  } else if (init != "gaussian") {
    throw ConfigError("init must be 'gaussian' or 'descriptor'");
  }
  options.on_epoch = [&](int epoch, double loss) {
    log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + "  final-step loss " +
        number(loss));
  };
  const TextualizationResult r = textualize(std::span(set.train), weights, config, options);

  EmbeddingFile file{r.embedding, nlohmann::json::object()};
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& id : r.prompt_ids) ids.push_back(id);
  file.metadata = {{"T", config.steps},
                   {"tau", config.tau},
                   {"w", config.guidance},
                   {"temperature", config.beta_temperature},
                   {"model_hash", weights_hash(weights)},
                   {"created", s.flag("stamp_time") ? static_cast<long long>(std::time(nullptr)) : 0LL},
                   {"prompt_ids", ids},
                   {"config", r.config.to_json()}};
  save_embedding(out, file);

  const fs::path dir = parent_of(out);
  std::string csv = "epoch,step,beta,loss\n";
  for (const auto& e : r.loss_history) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g\n", e.epoch, e.step, e.beta, e.loss);
    csv += buf;
  }
  write_text(dir / "loss_history.csv", csv);
  write_png(dir / "final_reconstruction.png", r.final_reconstruction);
  write_resolved(dir, "textualize", {{"pairs", pairs}, {"weights", weights_path}, {"out", out}}, s);
  log("final reconstruction PSNR vs after image: " + number(psnr(r.final_reconstruction, set.train.front().after)) +
      " dB");
  return 0;
}

int run_edit(const Common& common, const std::string& image_path, const std::string& embedding_path,
             const std::string& weights_path, const std::string& out, const std::string& intensities) {
  Settings s = resolve(common);
  const BridgeConfig config = s.bridge();
  const DenoiserWeights weights = load_weights(weights_path);
  const EmbeddingFile emb = load_embedding(embedding_path, weights, s.flag("allow_hash_mismatch"));
  const ImageTensor image = read_png(image_path);

  std::vector<double> levels;
  for (const auto& item : split(intensities.empty() ? s.text("intensity") : intensities, ',')) {
    s.set("intensity", item);
    levels.push_back(s.real("intensity"));
  }
  if (levels.empty()) throw ConfigError("no intensity given");
  const PreparedSource source = prepare_source(image, weights, config);
  const fs::path target(out);
  for (double level : levels) {
    fs::path path = target;
    if (levels.size() > 1) {
      path = target.parent_path() / (target.stem().string() + "_i" + number(level) + target.extension().string());
    }
    write_png(path, edit_prepared(source, emb.embedding, weights, config, level));
    log("wrote " + path.string());
  }
  write_resolved(parent_of(out),
                 "edit", {{"image", image_path}, {"embedding", embedding_path}, {"weights", weights_path},
                          {"out", out}, {"intensities", levels}},
                 s);
  return 0;
}

int run_eval(const Common& common, const std::string& dataset, const std::string& embedding_path,
             const std::string& weights_path, const std::string& out, const std::string& providers_flag,
             std::size_t limit) {
  Settings s = resolve(common);
  if (!providers_flag.empty()) s.set("providers", providers_flag);
  const BridgeConfig config = s.bridge();
  const DenoiserWeights weights = load_weights(weights_path);
  const EmbeddingFile emb = load_embedding(embedding_path, weights, s.flag("allow_hash_mismatch"));
  const PromptSet set = read_prompt_set(dataset);
  const int dim = static_cast<int>(set.train.front().before.size());
  std::vector<std::unique_ptr<FeatureProvider>> owned;
  std::vector<const FeatureProvider*> providers;
  for (const auto& spec : split(s.text("providers"), ',')) {
    owned.push_back(make_provider(spec, dim));
    providers.push_back(owned.back().get());
  }
  const EvalReport report =
      evaluate(set, emb.embedding, weights, config, providers, {.intensity = s.real("intensity"), .limit = limit});
  fs::create_directories(out);
  write_text(fs::path(out) / "report.csv", report.to_csv());
  write_text(fs::path(out) / "report.json", report.to_json().dump(2) + "\n");
  write_resolved(out, "eval",
                 {{"dataset", dataset}, {"embedding", embedding_path}, {"weights", weights_path}, {"limit", limit}},
                 s);
  log(report.aggregates().dump());
  return 0;
}

int run_check(const Common& common, const std::string& suite, const std::string& weights_path, int images,
              double min_psnr) {
  const Settings s = resolve(common);
  const std::uint64_t seed = s.seed("seed");
  const bool all = suite == "all";
  std::optional<DenoiserWeights> weights;
  if (!weights_path.empty()) weights = load_weights(weights_path);
  std::vector<CheckResult> results;
  if (all || suite == "attention-merge") {
    auto r = check_attention_merge(seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (all || suite == "gaussian-order") {
    auto r = check_gaussian_order(seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (all || suite == "gradients") {
    DenoiserConfig cfg;
    cfg.vocab_size = Vocabulary::size();
    const DenoiserWeights w = weights ? *weights : init_weights(cfg, seed);
    auto r = check_gradients(w, 24, seed);
    results.insert(results.end(), r.begin(), r.end());
  }
  if (all || suite == "roundtrip") {
    if (!weights) {
      if (!all) throw ConfigError("the roundtrip suite needs --weights");
      log("skipping roundtrip: no --weights given");
    } else {
      auto r = check_roundtrip(*weights, images, min_psnr, seed);
      results.insert(results.end(), r.begin(), r.end());
    }
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  value=" << number(r.value)
              << " threshold=" << number(r.threshold) << "  " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : kRuntimeFailure;
}

int run_generate(const Common& common, const std::string& embedding_path, const std::string& weights_path,
                 const std::string& out, int count) {
  const Settings s = resolve(common);
  const BridgeConfig config = s.bridge();
  const DenoiserWeights weights = load_weights(weights_path);
  const PromptEmbedding embedding = embedding_path.empty()
                                        ? make_null_embedding(weights)
                                        : load_embedding(embedding_path, weights, s.flag("allow_hash_mismatch")).embedding;
  const fs::path target(out);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = s.seed("seed") + static_cast<std::uint64_t>(i);
    fs::path path = target;
    if (count > 1) {
      path = target.parent_path() / (target.stem().string() + "_s" + std::to_string(seed) + target.extension().string());
    }
    write_png(path, generate_from_embedding(embedding, weights, config, seed));
    log("wrote " + path.string());
  }
  write_resolved(parent_of(out), "generate",
                 {{"embedding", embedding_path}, {"weights", weights_path}, {"out", out}, {"count", count}}, s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Textualize visual prompts into prompt embeddings along a DDIM bridge, then edit images with them."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  auto with_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key = value settings file (or a resolved-config.json)");
    common.overrides.add(sub, "--seed", "seed", "Run seed");
  };
  auto bridge_flags = [&](CLI::App* sub) {
    common.overrides.add(sub, "--steps", "T", "Bridge steps");
    common.overrides.add(sub, "--guidance", "w", "Guidance scale");
    common.overrides.add(sub, "--tau", "tau", "Attention injection threshold in [0, 1]");
  };

  std::string out, pairs, weights, embedding, image, dataset, providers, intensities, suite = "all";
  std::size_t limit = 0;
  int images = 20, count = 1;
  double min_psnr = 30.0;

  auto* make_dataset = app.add_subcommand("make-dataset", "Write a visual-prompt dataset directory");
  with_common(make_dataset);
  make_dataset->add_option("--out", out, "Output directory")->required();
  common.overrides.add(make_dataset, "--n-train", "n_train", "Training pairs");
  common.overrides.add(make_dataset, "--n-test", "n_test", "Test images");
  common.overrides.add(make_dataset, "--transform", "transform", "Transformation, e.g. color-shift:0.3,0,-0.3");

  auto* train = app.add_subcommand("train-denoiser", "Train the toy denoiser on the procedural corpus");
  train->add_option("--config", common.config, "key = value settings file")->required();
  common.overrides.add(train, "--seed", "seed", "Run seed");
  train->add_option("--out", out, "Checkpoint path")->required();
  common.overrides.add(train, "--epochs", "epochs", "Training epochs");

  auto* textualize_cmd = app.add_subcommand("textualize", "Learn an embedding from before/after pairs");
  with_common(textualize_cmd);
  bridge_flags(textualize_cmd);
  textualize_cmd->add_option("--pairs", pairs, "Dataset directory")->required();
  textualize_cmd->add_option("--weights", weights, "Denoiser checkpoint")->required();
  textualize_cmd->add_option("--out", out, "Embedding output path")->required();
  common.overrides.add(textualize_cmd, "--epochs", "N", "Epochs");
  common.overrides.add(textualize_cmd, "--lr", "gamma", "Learning rate");
  common.overrides.add(textualize_cmd, "--tokens", "y", "Learnable token count");
  common.overrides.add(textualize_cmd, "--beta-temperature", "beta_temperature", "Loss scaling temperature");
  common.overrides.add(textualize_cmd, "--init", "init", "gaussian or descriptor");
  common.overrides.add_switch(textualize_cmd, "--ablate-no-attention", "attention_control", "false",
                              "Train without attention injection");

  auto* edit_cmd = app.add_subcommand("edit", "Apply a learned embedding to an image");
  with_common(edit_cmd);
  bridge_flags(edit_cmd);
  edit_cmd->add_option("--image", image, "Input PNG")->required();
  edit_cmd->add_option("--embedding", embedding, "Embedding file")->required();
  edit_cmd->add_option("--weights", weights, "Denoiser checkpoint")->required();
  edit_cmd->add_option("--out", out, "Output PNG")->required();
  edit_cmd->add_option("--intensity", intensities, "Intensity, or a comma list for a sweep");
  common.overrides.add_switch(edit_cmd, "--allow-hash-mismatch", "allow_hash_mismatch", "true",
                              "Accept an embedding learned on other weights");

  auto* eval_cmd = app.add_subcommand("eval", "Edit a dataset's test images and score them");
  with_common(eval_cmd);
  bridge_flags(eval_cmd);
  eval_cmd->add_option("--dataset", dataset, "Dataset directory")->required();
  eval_cmd->add_option("--embedding", embedding, "Embedding file")->required();
  eval_cmd->add_option("--weights", weights, "Denoiser checkpoint")->required();
  eval_cmd->add_option("--out", out, "Report directory")->required();
  eval_cmd->add_option("--providers", providers, "identity, random[:seed], extern:http://..., extern:cmd:...");
  eval_cmd->add_option("--limit", limit, "Evaluate only the first N test images");
  common.overrides.add(eval_cmd, "--intensity", "intensity", "Cross-attention weight of learned tokens");
  common.overrides.add_switch(eval_cmd, "--allow-hash-mismatch", "allow_hash_mismatch", "true",
                              "Accept an embedding learned on other weights");

  auto* check_cmd = app.add_subcommand("check", "Run self-check suites");
  with_common(check_cmd);
  check_cmd->add_option("--suite", suite, "Suite to run")
      ->check(CLI::IsMember({"all", "gradients", "roundtrip", "gaussian-order", "attention-merge"}));
  check_cmd->add_option("--weights", weights, "Denoiser checkpoint (needed for roundtrip)");
  check_cmd->add_option("--images", images, "Round-trip images");
  check_cmd->add_option("--min-psnr", min_psnr, "Round-trip PSNR threshold");

  auto* generate_cmd = app.add_subcommand("generate", "Generate images from an embedding and seeded noise");
  with_common(generate_cmd);
  common.overrides.add(generate_cmd, "--steps", "T", "Bridge steps");
  common.overrides.add(generate_cmd, "--guidance", "w", "Guidance scale");
  generate_cmd->add_option("--embedding", embedding, "Embedding file (default: null prompt)");
  generate_cmd->add_option("--weights", weights, "Denoiser checkpoint")->required();
  generate_cmd->add_option("--out", out, "Output PNG")->required();
  generate_cmd->add_option("--count", count, "Number of seeds")->check(CLI::PositiveNumber);
  common.overrides.add_switch(generate_cmd, "--allow-hash-mismatch", "allow_hash_mismatch", "true",
                              "Accept an embedding learned on other weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  if (!common.config.empty() && !fs::is_regular_file(common.config)) {
    std::cerr << "error: config file not found: " << common.config << "\n\n";
    for (const auto* sub : app.get_subcommands()) std::cerr << sub->help();
    return kUsageError;
  }

  try {
    if (*make_dataset) return run_make_dataset(common, out);
    if (*train) return run_train_denoiser(common, out);
    if (*textualize_cmd) return run_textualize(common, pairs, weights, out);
    if (*edit_cmd) return run_edit(common, image, embedding, weights, out, intensities);
    if (*eval_cmd) return run_eval(common, dataset, embedding, weights, out, providers, limit);
    if (*check_cmd) return run_check(common, suite, weights, images, min_psnr);
    if (*generate_cmd) return run_generate(common, embedding, weights, out, count);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}
