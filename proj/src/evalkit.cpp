#include "tvdb/evalkit.hpp"

#include "tvdb/editor.hpp"
#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"

#include <httplib.h>

#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <random>

namespace tvdb {

double psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "psnr");
  const double mse = (a.values() - b.values()).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "ssim");
  constexpr int kWin = 8;
  if (a.height() < kWin || a.width() < kWin) throw DomainError("ssim: image smaller than the 8x8 window");
  const double c1 = std::pow(0.01 * 2.0, 2);
  const double c2 = std::pow(0.03 * 2.0, 2);
  const double n = kWin * kWin;
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y0 = 0; y0 + kWin <= a.height(); ++y0) {
      for (int x0 = 0; x0 + kWin <= a.width(); ++x0) {
        double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int y = y0; y < y0 + kWin; ++y) {
          for (int x = x0; x < x0 + kWin; ++x) {
            const double va = a.at(c, y, x);
            const double vb = b.at(c, y, x);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n;
        const double mb = sb / n;
        const double var_a = saa / n - ma * ma;
        const double var_b = sbb / n - mb * mb;
        const double cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++count;
      }
    }
  }
  return total / count;
}

// ---------------------------------------------------------------------------
// Providers

namespace {

void check_dimension(const ImageTensor& image, int dim, const std::string& who) {
  if (image.size() != dim) {
    throw ConfigError(who + ": expected " + std::to_string(dim) + " input values, got " + std::to_string(image.size()));
  }
}

Vec parse_features(const std::string& body, const std::string& who) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(who + ": malformed response: " + e.what());
  }
  if (j.is_object()) j = j.at("features");
  if (!j.is_array() || j.empty()) throw ConfigError(who + ": response is not a non-empty float array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  if (!v.allFinite()) throw NumericalError(who + ": non-finite features");
  return v;
}

void fix_dimension(int& dim, const Vec& v, const std::string& who) {
  if (dim < 0) dim = static_cast<int>(v.size());
  if (v.size() != dim) throw ConfigError(who + ": feature dimension changed between requests");
}

}  // namespace

Vec IdentityProvider::extract(const ImageTensor& image) const {
  check_dimension(image, dim_, name());
  return Eigen::Map<const Vec>(image.values().data(), image.size());
}

RandomProjectionProvider::RandomProjectionProvider(int input_dimension, int output_dimension, std::uint64_t seed)
    : projection_(output_dimension, input_dimension), seed_(seed) {
  if (input_dimension < 1 || output_dimension < 1) throw ConfigError("random projection: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(output_dimension)));
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

std::string RandomProjectionProvider::name() const { return "random:" + std::to_string(seed_); }

Vec RandomProjectionProvider::extract(const ImageTensor& image) const {
  check_dimension(image, static_cast<int>(projection_.cols()), name());
  return projection_ * Eigen::Map<const Vec>(image.values().data(), image.size());
}

HttpProvider::HttpProvider(std::string url) : url_(std::move(url)) {
  const auto scheme = url_.find("://");
  if (scheme == std::string::npos || url_.substr(0, scheme) != "http") {
    throw ConfigError("extern provider: only http:// URLs are supported (" + url_ + ")");
  }
  const auto slash = url_.find('/', scheme + 3);
  host_ = slash == std::string::npos ? url_ : url_.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url_.substr(slash);
}

int HttpProvider::dimension() const {
  std::lock_guard lock(mutex_);
  return dim_;
}

Vec HttpProvider::extract(const ImageTensor& image) const {
  const nlohmann::json request = {{"image", base64_encode(encode_png(image))}};
  std::lock_guard lock(mutex_);
  httplib::Client client(host_);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  auto res = client.Post(path_, request.dump(), "application/json");
  if (!res) throw ConfigError(name() + ": request failed (" + httplib::to_string(res.error()) + ")");
  if (res->status != 200) throw ConfigError(name() + ": HTTP status " + std::to_string(res->status));
  Vec v = parse_features(res->body, name());
  fix_dimension(dim_, v, name());
  return v;
}

SubprocessProvider::SubprocessProvider(std::string command) : command_(std::move(command)) {
  int fds[2];
  if (socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw ConfigError("extern provider: socketpair failed");
  pid_ = fork();
  if (pid_ < 0) {
    close(fds[0]);
    close(fds[1]);
    throw ConfigError("extern provider: fork failed");
  }
  if (pid_ == 0) {
    close(fds[0]);
    dup2(fds[1], STDIN_FILENO);
    dup2(fds[1], STDOUT_FILENO);
    close(fds[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(fds[1]);
  to_child_ = fds[0];
  from_child_ = fds[0];
}

SubprocessProvider::~SubprocessProvider() {
  if (to_child_ >= 0) {
    shutdown(to_child_, SHUT_WR);
    close(to_child_);
  }
  if (pid_ > 0) waitpid(pid_, nullptr, 0);
}

int SubprocessProvider::dimension() const {
  std::lock_guard lock(mutex_);
  return dim_;
}

Vec SubprocessProvider::extract(const ImageTensor& image) const {
  const std::string line = base64_encode(encode_png(image)) + "\n";
  std::lock_guard lock(mutex_);
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = send(to_child_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) throw ConfigError(name() + ": provider process closed its input");
    sent += static_cast<std::size_t>(n);
  }
  std::size_t eol;
  while ((eol = buffer_.find('\n')) == std::string::npos) {
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof(chunk));
    if (n <= 0) throw ConfigError(name() + ": provider process exited without a response");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const std::string reply = buffer_.substr(0, eol);
  buffer_.erase(0, eol + 1);
  Vec v = parse_features(reply, name());
  fix_dimension(dim_, v, name());
  return v;
}

std::unique_ptr<FeatureProvider> make_provider(const std::string& spec, int input_dimension) {
  if (spec == "identity" || spec == "pixel") return std::make_unique<IdentityProvider>(input_dimension);
  if (spec == "random") return std::make_unique<RandomProjectionProvider>(input_dimension, 128, 0);
  if (spec.rfind("random:", 0) == 0) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(spec.substr(7));
    } catch (const std::exception&) {
      throw ConfigError("provider: bad random seed in '" + spec + "'");
    }
    return std::make_unique<RandomProjectionProvider>(input_dimension, 128, seed);
  }
  if (spec.rfind("extern:cmd:", 0) == 0) return std::make_unique<SubprocessProvider>(spec.substr(11));
  if (spec.rfind("extern:", 0) == 0) return std::make_unique<HttpProvider>(spec.substr(7));
  throw ConfigError("unknown feature provider '" + spec + "'");
}

// ---------------------------------------------------------------------------
// Similarities

Similarity cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DomainError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return {0.0, true};
  return {std::clamp(a.dot(b) / (na * nb), -1.0, 1.0), false};
}

Similarity direction_similarity(const ImageTensor& before_train, const ImageTensor& after_train,
                                const ImageTensor& before_test, const ImageTensor& after_test,
                                const FeatureProvider& provider) {
  const Vec train = provider.extract(after_train) - provider.extract(before_train);
  const Vec test = provider.extract(after_test) - provider.extract(before_test);
  return cosine_similarity(train, test);
}

Similarity image_similarity(const ImageTensor& original, const ImageTensor& edited, const FeatureProvider& provider) {
  return cosine_similarity(provider.extract(original), provider.extract(edited));
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json EvalReport::aggregates() const {
  double p = 0.0, s = 0.0, d = 0.0, im = 0.0;
  int n = 0, nd = 0, ni = 0;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    p += r.psnr;
    s += r.ssim;
    ++n;
    if (r.dir_sim) {
      d += *r.dir_sim;
      ++nd;
    }
    if (r.img_sim) {
      im += *r.img_sim;
      ++ni;
    }
  }
  nlohmann::json j = {{"rows", rows.size()}, {"succeeded", n}, {"failed", rows.size() - n}};
  j["psnr"] = n > 0 ? nlohmann::json(p / n) : nlohmann::json(nullptr);
  j["ssim"] = n > 0 ? nlohmann::json(s / n) : nlohmann::json(nullptr);
  j["dir_sim"] = nd > 0 ? nlohmann::json(d / nd) : nlohmann::json(nullptr);
  j["img_sim"] = ni > 0 ? nlohmann::json(im / ni) : nlohmann::json(nullptr);
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t k = 0; k < providers.size(); ++k) {
    double ds = 0.0, is = 0.0;
    int m = 0, degenerate = 0;
    for (const auto& r : rows) {
      if (!r.error.empty() || k >= r.provider_dir.size()) continue;
      ds += r.provider_dir[k].value;
      is += r.provider_img[k].value;
      degenerate += r.provider_dir[k].degenerate || r.provider_img[k].degenerate;
      ++m;
    }
    per[providers[k]] = {{"dir_sim", m > 0 ? ds / m : 0.0}, {"img_sim", m > 0 ? is / m : 0.0},
                         {"degenerate", degenerate}};
  }
  j["providers"] = per;
  return j;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : rows) {
    if (!r.error.empty()) failures.push_back({{"id", r.id}, {"error", r.error}});
  }
  return {{"aggregates", aggregates()}, {"failures", failures}, {"providers", providers}, {"config", config}};
}

std::string EvalReport::to_csv() const {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out = "id,psnr,ssim,dir_sim,img_sim\n";
  for (const auto& r : rows) {
    out += r.id + ",";
    if (r.error.empty()) {
      out += num(r.psnr) + "," + num(r.ssim) + "," + (r.dir_sim ? num(*r.dir_sim) : "") + "," +
             (r.img_sim ? num(*r.img_sim) : "");
    } else {
      out += ",,,";
    }
    out += "\n";
  }
  return out;
}

EvalReport evaluate(const PromptSet& set, const PromptEmbedding& embedding, const DenoiserWeights& weights,
                    const BridgeConfig& config, const std::vector<const FeatureProvider*>& providers,
                    const EvalOptions& options) {
  if (set.test.empty()) throw ConfigError("evaluate: test set is empty");
  if (set.train.empty()) throw ConfigError("evaluate: no training pair for the reference direction");
  EvalReport report;
  report.config = config.to_json();
  report.config["intensity"] = options.intensity;
  for (const auto* p : providers) report.providers.push_back(p->name());
  const VisualPrompt& ref = set.train.front();
  const std::size_t n = options.limit > 0 ? std::min(options.limit, set.test.size()) : set.test.size();
  for (std::size_t i = 0; i < n; ++i) {
    const TestItem& item = set.test[i];
    EvalRow row;
    row.id = item.id;
    try {
      const ImageTensor edited = edit(item.image, embedding, weights, config, options.intensity);
      row.psnr = psnr(edited, item.ground_truth);
      row.ssim = ssim(edited, item.ground_truth);
      for (const auto* p : providers) {
        row.provider_dir.push_back(direction_similarity(ref.before, ref.after, item.image, edited, *p));
        row.provider_img.push_back(image_similarity(item.image, edited, *p));
      }
      if (!providers.empty()) {
        row.dir_sim = row.provider_dir.front().value;
        row.img_sim = row.provider_img.front().value;
      }
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace tvdb
