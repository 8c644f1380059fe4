#pragma once

// Fidelity metrics, feature providers, and edit-direction agreement.

#include "tvdb/bridge.hpp"
#include "tvdb/image.hpp"
#include "tvdb/toydata.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace tvdb {

inline constexpr double kPsnrCap = 99.0;

// Peak 2 (width of [-1, 1]); identical images give kPsnrCap.
double psnr(const ImageTensor& a, const ImageTensor& b);
// 8x8 sliding uniform windows, c1 = (0.01 * 2)^2, c2 = (0.03 * 2)^2, mean over windows and channels.
double ssim(const ImageTensor& a, const ImageTensor& b);

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual Vec extract(const ImageTensor& image) const = 0;
};

// Pixel values flattened channel-major.
class IdentityProvider final : public FeatureProvider {
 public:
  explicit IdentityProvider(int dimension) : dim_(dimension) {}
  std::string name() const override { return "identity"; }
  int dimension() const override { return dim_; }
  Vec extract(const ImageTensor& image) const override;

 private:
  int dim_;
};

// Fixed Gaussian projection, entries N(0, 1/out_dim), drawn from `seed`.
class RandomProjectionProvider final : public FeatureProvider {
 public:
  RandomProjectionProvider(int input_dimension, int output_dimension, std::uint64_t seed);
  std::string name() const override;
  int dimension() const override { return static_cast<int>(projection_.rows()); }
  Vec extract(const ImageTensor& image) const override;

 private:
  Mat projection_;
  std::uint64_t seed_;
};

// POSTs {"image": base64 PNG} as JSON and expects {"features": [...]} or a bare array.
class HttpProvider final : public FeatureProvider {
 public:
  explicit HttpProvider(std::string url);
  std::string name() const override { return "extern:" + url_; }
  int dimension() const override;
  Vec extract(const ImageTensor& image) const override;

 private:
  std::string url_;
  std::string host_;
  std::string path_;
  mutable std::mutex mutex_;
  mutable int dim_ = -1;
};

// Long-lived child process: one base64 PNG per stdin line, one JSON array per stdout line.
class SubprocessProvider final : public FeatureProvider {
 public:
  explicit SubprocessProvider(std::string command);
  ~SubprocessProvider() override;
  SubprocessProvider(const SubprocessProvider&) = delete;
  SubprocessProvider& operator=(const SubprocessProvider&) = delete;

  std::string name() const override { return "extern:cmd:" + command_; }
  int dimension() const override;
  Vec extract(const ImageTensor& image) const override;

 private:
  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  mutable std::string buffer_;
  mutable std::mutex mutex_;
  mutable int dim_ = -1;
};

// "identity", "random" / "random:<seed>", "extern:http://...", "extern:cmd:<command>".
std::unique_ptr<FeatureProvider> make_provider(const std::string& spec, int input_dimension);

struct Similarity {
  double value = 0.0;
  bool degenerate = false;  // a vector had norm < 1e-12; value is 0
};

Similarity cosine_similarity(const Vec& a, const Vec& b);
Similarity direction_similarity(const ImageTensor& before_train, const ImageTensor& after_train,
                                const ImageTensor& before_test, const ImageTensor& after_test,
                                const FeatureProvider& provider);
Similarity image_similarity(const ImageTensor& original, const ImageTensor& edited, const FeatureProvider& provider);

struct EvalRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> dir_sim;  // first provider
  std::optional<double> img_sim;
  std::vector<Similarity> provider_dir;  // per provider
  std::vector<Similarity> provider_img;
  std::string error;  // non-empty when the edit failed
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> providers;
  nlohmann::json config = nlohmann::json::object();

  // Means over successful rows.
  nlohmann::json aggregates() const;
  nlohmann::json to_json() const;
  // Header: id,psnr,ssim,dir_sim,img_sim
  std::string to_csv() const;
};

struct EvalOptions {
  double intensity = 1.0;
  std::size_t limit = 0;  // 0 = whole test set
};

// Edits every test image of `set` and scores it against the ground truth; the
// set's first training pair defines the reference edit direction.
EvalReport evaluate(const PromptSet& set, const PromptEmbedding& embedding, const DenoiserWeights& weights,
                    const BridgeConfig& config, const std::vector<const FeatureProvider*>& providers,
                    const EvalOptions& options = {});

}  // namespace tvdb
