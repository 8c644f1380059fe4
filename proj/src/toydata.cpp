#include "tvdb/toydata.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace tvdb {

namespace {

constexpr std::array<ShapeKind, 4> kShapes{ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle,
                                           ShapeKind::Composite};

struct NamedColor {
  const char* name;
  Rgb rgb;
};

// Bright fills over dark backgrounds keep the luminance contrast >= 0.45.
const std::array<NamedColor, 8> kFills{{{"red", {1.0, -0.3, -0.4}},
                                        {"orange", {1.0, 0.2, -0.7}},
                                        {"yellow", {0.9, 0.8, -0.6}},
                                        {"green", {-0.4, 0.8, -0.4}},
                                        {"cyan", {-0.4, 0.8, 0.9}},
                                        {"blue", {-0.3, 0.0, 1.0}},
                                        {"purple", {0.5, -0.4, 0.9}},
                                        {"white", {0.85, 0.85, 0.85}}}};

const std::array<NamedColor, 6> kBackgrounds{{{"black", {-0.9, -0.9, -0.9}},
                                              {"gray", {-0.6, -0.6, -0.6}},
                                              {"navy", {-0.9, -0.9, -0.4}},
                                              {"forest", {-0.9, -0.5, -0.9}},
                                              {"maroon", {-0.5, -0.95, -0.9}},
                                              {"brown", {-0.5, -0.7, -0.9}}}};

const std::array<const char*, 7> kStyles{"plain", "warm", "cool", "bright", "dark", "faded", "soft"};

double sq(double v) { return v * v; }

// Point-in-shape test at pixel centre (px, py).
bool inside(ShapeKind kind, double cx, double cy, double s, double px, double py) {
  switch (kind) {
    case ShapeKind::Circle:
      return sq(px - cx) + sq(py - cy) < sq(s);
    case ShapeKind::Square:
      return std::abs(px - cx) < s && std::abs(py - cy) < s;
    case ShapeKind::Triangle: {
      // Apex (cx, cy - s), base from (cx - s, cy + s) to (cx + s, cy + s).
      if (!(py < cy + s)) return false;
      const double half_width = (py - (cy - s)) * 0.5;  // widens by 1 per 2 rows
      return half_width > 0.0 && std::abs(px - cx) < half_width;
    }
    case ShapeKind::Composite:
      return inside(ShapeKind::Circle, cx - 0.55 * s, cy - 0.45 * s, 0.45 * s, px, py) ||
             inside(ShapeKind::Square, cx + 0.5 * s, cy + 0.45 * s, 0.45 * s, px, py);
    case ShapeKind::None:
      return false;
  }
  return false;
}

Rgb jitter(const Rgb& base, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Rgb out = base;
  for (double& v : out) v = std::clamp(v + u(rng), -1.0, 1.0);
  return out;
}

template <std::size_t N>
int nearest_color(const std::array<NamedColor, N>& palette, const Rgb& c) {
  int best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < N; ++i) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d += sq(palette[i].rgb[k] - c[k]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

nlohmann::json rgb_json(const Rgb& c) { return nlohmann::json::array({c[0], c[1], c[2]}); }
Rgb rgb_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

std::string numbered(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.png", prefix, i);
  return buf;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Composite: return "composite";
    case ShapeKind::None: return "none";
  }
  return "none";
}

ShapeKind shape_from_string(const std::string& name) {
  for (ShapeKind k : {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Composite, ShapeKind::None}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown shape kind: " + name);
}

nlohmann::json SceneSpec::to_json() const {
  return {{"kind", to_string(kind)}, {"fill", rgb_json(fill)}, {"background", rgb_json(background)},
          {"cx", cx}, {"cy", cy}, {"size", size}, {"seed", seed}, {"canvas", canvas}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.kind = shape_from_string(j.at("kind").get<std::string>());
  s.fill = rgb_from(j.at("fill"));
  s.background = rgb_from(j.at("background"));
  s.cx = j.at("cx").get<double>();
  s.cy = j.at("cy").get<double>();
  s.size = j.at("size").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.canvas = j.at("canvas").get<int>();
  return s;
}

ImageTensor render(const SceneSpec& spec) {
  if (spec.canvas < 1) throw DomainError("render: canvas must be positive");
  if (!(spec.size >= 0.0)) throw DomainError("render: size must be non-negative");
  if (spec.kind != ShapeKind::None && spec.size > 0.0) {
    if (spec.cx - spec.size < 0.0 || spec.cx + spec.size > spec.canvas || spec.cy - spec.size < 0.0 ||
        spec.cy + spec.size > spec.canvas) {
      throw DomainError("render: shape extends outside the canvas");
    }
  }
  for (const Rgb* c : {&spec.fill, &spec.background}) {
    for (double v : *c) {
      if (!(v >= -1.0 && v <= 1.0)) throw DomainError("render: colour outside [-1, 1]");
    }
  }
  ImageTensor img(3, spec.canvas, spec.canvas);
  for (int y = 0; y < spec.canvas; ++y) {
    for (int x = 0; x < spec.canvas; ++x) {
      const bool in = spec.size > 0.0 && inside(spec.kind, spec.cx, spec.cy, spec.size, x + 0.5, y + 0.5);
      const Rgb& c = in ? spec.fill : spec.background;
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Transforms

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::ToneCurve: return "tone-curve";
    case TransformKind::ColorShift: return "color-shift";
    case TransformKind::Desaturate: return "desaturate";
    case TransformKind::Blur: return "blur";
    case TransformKind::InvertLuma: return "invert-luma";
  }
  return "color-shift";
}

TransformSpec TransformSpec::tone_curve(double gamma) {
  TransformSpec t;
  t.kind = TransformKind::ToneCurve;
  t.gamma = gamma;
  return t;
}

TransformSpec TransformSpec::color_shift(Rgb delta) {
  TransformSpec t;
  t.kind = TransformKind::ColorShift;
  t.shift = delta;
  return t;
}

TransformSpec TransformSpec::desaturate(double factor) {
  TransformSpec t;
  t.kind = TransformKind::Desaturate;
  t.factor = factor;
  return t;
}

TransformSpec TransformSpec::blur(std::array<double, 9> kernel, int iterations) {
  TransformSpec t;
  t.kind = TransformKind::Blur;
  t.kernel = kernel;
  t.iterations = iterations;
  return t;
}

TransformSpec TransformSpec::box_blur(int iterations) {
  std::array<double, 9> k;
  k.fill(1.0);
  return blur(k, iterations);
}

TransformSpec TransformSpec::invert_luma() {
  TransformSpec t;
  t.kind = TransformKind::InvertLuma;
  return t;
}

nlohmann::json TransformSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}};
  switch (kind) {
    case TransformKind::ToneCurve: j["gamma"] = gamma; break;
    case TransformKind::ColorShift: j["shift"] = rgb_json(shift); break;
    case TransformKind::Desaturate: j["factor"] = factor; break;
    case TransformKind::Blur:
      j["kernel"] = kernel;
      j["iterations"] = iterations;
      break;
    case TransformKind::InvertLuma: break;
  }
  return j;
}

TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
  const std::string k = j.at("kind").get<std::string>();
  if (k == "tone-curve") return tone_curve(j.at("gamma").get<double>());
  if (k == "color-shift") return color_shift(rgb_from(j.at("shift")));
  if (k == "desaturate") return desaturate(j.at("factor").get<double>());
  if (k == "blur") return blur(j.at("kernel").get<std::array<double, 9>>(), j.at("iterations").get<int>());
  if (k == "invert-luma") return invert_luma();
  throw ConfigError("unknown transform kind: " + k);
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

ImageTensor apply_transform(const ImageTensor& image, const TransformSpec& t) {
  if (image.channels() != 3) throw DomainError("apply_transform: expected an RGB image");
  const int h = image.height();
  const int w = image.width();
  ImageTensor out = image;
  switch (t.kind) {
    case TransformKind::ToneCurve: {
      if (!(t.gamma > 0.0) || !std::isfinite(t.gamma)) throw DomainError("tone curve: gamma must be positive");
      for (Eigen::Index i = 0; i < out.values().size(); ++i) {
        double& v = out.values().data()[i];
        const double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
        v = 2.0 * std::pow(u, t.gamma) - 1.0;
      }
      break;
    }
    case TransformKind::ColorShift: {
      for (double d : t.shift) {
        if (!std::isfinite(d) || std::abs(d) > 2.0) throw DomainError("color shift: delta must lie in [-2, 2]");
      }
      for (int c = 0; c < 3; ++c) out.values().row(c).array() += t.shift[c];
      break;
    }
    case TransformKind::Desaturate: {
      if (!(t.factor >= 0.0 && t.factor <= 1.0)) throw DomainError("desaturate: factor must lie in [0, 1]");
      for (int i = 0; i < h * w; ++i) {
        const double l = luma(image.values()(0, i), image.values()(1, i), image.values()(2, i));
        for (int c = 0; c < 3; ++c) out.values()(c, i) = (1.0 - t.factor) * image.values()(c, i) + t.factor * l;
      }
      break;
    }
    case TransformKind::Blur: {
      if (t.iterations < 0) throw DomainError("blur: iterations must be non-negative");
      double total = 0.0;
      for (double k : t.kernel) {
        if (!(k >= 0.0) || !std::isfinite(k)) throw DomainError("blur: kernel weights must be non-negative");
        total += k;
      }
      if (!(total > 0.0)) throw DomainError("blur: kernel must have positive mass");
      for (int it = 0; it < t.iterations; ++it) {
        ImageTensor src = out;
        for (int c = 0; c < 3; ++c) {
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              double acc = 0.0;
              for (int ky = -1; ky <= 1; ++ky) {
                for (int kx = -1; kx <= 1; ++kx) {
                  const double k = t.kernel[(ky + 1) * 3 + (kx + 1)];
                  if (k == 0.0) continue;
                  const int yy = std::clamp(y + ky, 0, h - 1);
                  const int xx = std::clamp(x + kx, 0, w - 1);
                  acc += k * src.at(c, yy, xx);
                }
              }
              out.at(c, y, x) = acc / total;
            }
          }
        }
      }
      break;
    }
    case TransformKind::InvertLuma: {
      for (int i = 0; i < h * w; ++i) {
        const double l = luma(image.values()(0, i), image.values()(1, i), image.values()(2, i));
        for (int c = 0; c < 3; ++c) out.values()(c, i) = image.values()(c, i) - 2.0 * l;
      }
      break;
    }
  }
  return out.clamped();
}

// ---------------------------------------------------------------------------
// Classifier

ShapeClassification classify_shape(const ImageTensor& image) {
  const int h = image.height();
  const int w = image.width();
  const int n = h * w;
  std::vector<double> lum(n);
  for (int i = 0; i < n; ++i) lum[i] = luma(image.values()(0, i), image.values()(1, i), image.values()(2, i));
  const auto [mn, mx] = std::minmax_element(lum.begin(), lum.end());
  const double lo = *mn;
  const double hi = *mx;
  ShapeClassification result;
  if (hi - lo < 0.15) return result;

  // Otsu threshold over a 64-bin histogram.
  constexpr int kBins = 64;
  std::array<double, kBins> hist{};
  for (double v : lum) hist[std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins))] += 1.0;
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0;
  double sum0 = 0.0;
  double best_var = -1.0;
  int best_bin = 0;
  for (int b = 0; b < kBins - 1; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = n - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * sq(m0 - m1);
    if (between > best_var) {
      best_var = between;
      best_bin = b;
    }
  }
  const double threshold = lo + (best_bin + 1) * (hi - lo) / kBins;

  // Background = the side holding most border pixels.
  int border_high = 0;
  int border_total = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y != 0 && y != h - 1 && x != 0 && x != w - 1) continue;
      ++border_total;
      if (lum[y * w + x] >= threshold) ++border_high;
    }
  }
  const bool background_high = border_high * 2 > border_total;
  std::vector<char> mask(n);
  double area = 0.0;
  double mx_sum = 0.0;
  double my_sum = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool fg = (lum[y * w + x] >= threshold) != background_high;
      mask[y * w + x] = fg;
      if (fg) {
        area += 1.0;
        mx_sum += x + 0.5;
        my_sum += y + 0.5;
      }
    }
  }
  if (area < 6.0) return result;
  const double mxc = mx_sum / area;
  const double myc = my_sum / area;

  struct Candidate {
    ShapeKind kind;
    double size;
    double dy;  // centroid offset from the template centre, in units of size
  };
  const std::array<Candidate, 4> candidates{{{ShapeKind::Circle, std::sqrt(area / M_PI), 0.0},
                                             {ShapeKind::Square, std::sqrt(area) / 2.0, 0.0},
                                             {ShapeKind::Triangle, std::sqrt(area / 2.0), 1.0 / 3.0},
                                             {ShapeKind::Composite, std::sqrt(area / 1.446), 0.054}}};
  double best = 0.0;
  std::optional<ShapeKind> best_kind;
  for (const auto& cand : candidates) {
    for (double sf = 0.85; sf <= 1.151; sf += 0.05) {
      const double s = cand.size * sf;
      for (double ox = -1.5; ox <= 1.51; ox += 0.5) {
        for (double oy = -1.5; oy <= 1.51; oy += 0.5) {
          const double cx = mxc + ox;
          const double cy = myc - cand.dy * s + oy;
          int inter = 0;
          int uni = 0;
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              const bool t = inside(cand.kind, cx, cy, s, x + 0.5, y + 0.5);
              const bool m = mask[y * w + x] != 0;
              inter += (t && m);
              uni += (t || m);
            }
          }
          const double iou = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
          if (iou > best) {
            best = iou;
            best_kind = cand.kind;
          }
        }
      }
    }
  }
  result.score = best;
  if (best >= 0.6) result.kind = best_kind;
  return result;
}

// ---------------------------------------------------------------------------
// Scenes and prompt sets

SceneSpec random_scene(std::uint64_t seed, std::optional<ShapeKind> kind) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_shape(0, 3);
  std::uniform_int_distribution<int> pick_fill(0, static_cast<int>(kFills.size()) - 1);
  std::uniform_int_distribution<int> pick_bg(0, static_cast<int>(kBackgrounds.size()) - 1);
  SceneSpec s;
  s.seed = seed;
  s.kind = kind.value_or(kShapes[pick_shape(rng)]);
  s.fill = jitter(kFills[pick_fill(rng)].rgb, rng, 0.08);
  s.background = jitter(kBackgrounds[pick_bg(rng)].rgb, rng, 0.08);
  const double min_size = s.kind == ShapeKind::Composite ? 8.0 : 5.0;
  std::uniform_real_distribution<double> pick_size(min_size, 10.0);
  s.size = std::round(pick_size(rng) * 2.0) / 2.0;
  std::uniform_real_distribution<double> pick_pos(s.size + 1.0, s.canvas - s.size - 1.0);
  s.cx = std::round(pick_pos(rng) * 2.0) / 2.0;
  s.cy = std::round(pick_pos(rng) * 2.0) / 2.0;
  return s;
}

nlohmann::json PromptSet::manifest() const {
  nlohmann::json train_j = nlohmann::json::array();
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_j.push_back({{"id", train[i].id},
                       {"spec", train_specs[i].to_json()},
                       {"before", numbered("before", i)},
                       {"after", numbered("after", i)},
                       {"before_sha256", sha256_hex(encode_png(train[i].before))},
                       {"after_sha256", sha256_hex(encode_png(train[i].after))}});
  }
  nlohmann::json test_j = nlohmann::json::array();
  for (std::size_t i = 0; i < test.size(); ++i) {
    test_j.push_back({{"id", test[i].id},
                      {"spec", test_specs[i].to_json()},
                      {"image", numbered("test", i)},
                      {"gt", numbered("gt", i)},
                      {"image_sha256", sha256_hex(encode_png(test[i].image))},
                      {"gt_sha256", sha256_hex(encode_png(test[i].ground_truth))}});
  }
  return {{"format", "tvdb-prompt-set-1"}, {"seed", seed}, {"transform", transform.to_json()},
          {"train", train_j}, {"test", test_j}};
}

PromptSet make_prompt_set(int n_train_pairs, int n_test_images, const TransformSpec& transform, std::uint64_t seed) {
  if (n_train_pairs < 1) throw DomainError("make_prompt_set: need at least one training pair");
  if (n_test_images < 0) throw DomainError("make_prompt_set: negative test count");
  PromptSet set;
  set.transform = transform;
  set.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<SceneSpec> used;
  auto fresh_scene = [&]() {
    for (;;) {
      SceneSpec s = random_scene(rng());
      bool dup = false;
      for (const auto& u : used) {
        if (u.kind == s.kind && u.fill == s.fill && u.background == s.background && u.cx == s.cx && u.cy == s.cy &&
            u.size == s.size) {
          dup = true;
          break;
        }
      }
      if (!dup) {
        used.push_back(s);
        return s;
      }
    }
  };
  for (int i = 0; i < n_train_pairs; ++i) {
    SceneSpec s = fresh_scene();
    ImageTensor before = render(s);
    set.train.push_back({before, apply_transform(before, transform), "train_" + std::to_string(i)});
    set.train_specs.push_back(s);
  }
  for (int i = 0; i < n_test_images; ++i) {
    SceneSpec s = fresh_scene();
    ImageTensor img = render(s);
    set.test.push_back({img, apply_transform(img, transform), "test_" + std::to_string(i)});
    set.test_specs.push_back(s);
  }
  return set;
}

void write_prompt_set(const PromptSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < set.train.size(); ++i) {
    write_png(dir / numbered("before", i), set.train[i].before);
    write_png(dir / numbered("after", i), set.train[i].after);
  }
  for (std::size_t i = 0; i < set.test.size(); ++i) {
    write_png(dir / numbered("test", i), set.test[i].image);
    write_png(dir / numbered("gt", i), set.test[i].ground_truth);
  }
  write_text(dir / "manifest.json", set.manifest().dump(2) + "\n");
}

PromptSet read_prompt_set(const std::filesystem::path& dir) {
  const Bytes raw = read_file(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest.json: " + std::string(e.what()));
  }
  PromptSet set;
  set.seed = m.at("seed").get<std::uint64_t>();
  set.transform = TransformSpec::from_json(m.at("transform"));
  for (const auto& e : m.at("train")) {
    VisualPrompt p{read_png(dir / e.at("before").get<std::string>()), read_png(dir / e.at("after").get<std::string>()),
                   e.at("id").get<std::string>()};
    require_same_shape<ConfigError>(p.before, p.after, "visual prompt");
    set.train.push_back(std::move(p));
    set.train_specs.push_back(SceneSpec::from_json(e.at("spec")));
  }
  for (const auto& e : m.value("test", nlohmann::json::array())) {
    set.test.push_back({read_png(dir / e.at("image").get<std::string>()), read_png(dir / e.at("gt").get<std::string>()),
                        e.at("id").get<std::string>()});
    set.test_specs.push_back(SceneSpec::from_json(e.at("spec")));
  }
  if (set.train.empty()) throw ConfigError("manifest.json: no training pairs");
  return set;
}

// ---------------------------------------------------------------------------
// Corpus

int Vocabulary::fill_count() { return static_cast<int>(kFills.size()); }
int Vocabulary::background_count() { return static_cast<int>(kBackgrounds.size()); }
int Vocabulary::style_count() { return static_cast<int>(kStyles.size()); }
int Vocabulary::size() { return 4 + fill_count() + background_count() + style_count(); }

int Vocabulary::shape_word(ShapeKind kind) {
  for (int i = 0; i < 4; ++i) {
    if (kShapes[i] == kind) return i;
  }
  throw DomainError("Vocabulary: no word for shape " + to_string(kind));
}

int Vocabulary::fill_word(int index) { return 4 + index; }
int Vocabulary::background_word(int index) { return 4 + fill_count() + index; }
int Vocabulary::style_word(int index) { return 4 + fill_count() + background_count() + index; }

std::string Vocabulary::name(int word) {
  if (word < 0 || word >= size()) throw DomainError("Vocabulary: word id out of range");
  if (word < 4) return to_string(kShapes[word]);
  word -= 4;
  if (word < fill_count()) return kFills[word].name;
  word -= fill_count();
  if (word < background_count()) return std::string("bg-") + kBackgrounds[word].name;
  word -= background_count();
  return kStyles[word];
}

namespace {

TransformSpec style_transform(int style, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = u(rng);
  switch (style) {
    case 1: {
      const double m = 0.1 + 0.25 * a;
      return TransformSpec::color_shift({m, 0.25 * m, -m});
    }
    case 2: {
      const double m = 0.1 + 0.25 * a;
      return TransformSpec::color_shift({-m, 0.0, m});
    }
    case 3: return TransformSpec::tone_curve(0.5 + 0.3 * a);
    case 4: return TransformSpec::tone_curve(1.3 + 0.7 * a);
    case 5: return TransformSpec::desaturate(0.5 + 0.4 * a);
    case 6: return TransformSpec::box_blur(a < 0.5 ? 1 : 2);
    default: return TransformSpec::tone_curve(1.0);
  }
}

}  // namespace

std::vector<CorpusItem> make_corpus(const CorpusSpec& spec) {
  if (spec.size < 1) throw ConfigError("make_corpus: size must be positive");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick_style(1, static_cast<int>(kStyles.size()) - 1);
  std::vector<CorpusItem> out;
  out.reserve(static_cast<std::size_t>(spec.size));
  for (int i = 0; i < spec.size; ++i) {
    CorpusItem item;
    item.spec = random_scene(rng());
    item.style = u(rng) < 0.4 ? 0 : pick_style(rng);
    std::mt19937_64 style_rng(rng());
    item.image = apply_transform(render(item.spec), style_transform(item.style, style_rng));
    item.words = {Vocabulary::shape_word(item.spec.kind), Vocabulary::fill_word(nearest_color(kFills, item.spec.fill)),
                  Vocabulary::background_word(nearest_color(kBackgrounds, item.spec.background)),
                  Vocabulary::style_word(item.style)};
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<TrainingExample> to_training_set(const std::vector<CorpusItem>& corpus) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) out.push_back({c.image, c.words});
  return out;
}

std::optional<CorpusSpec> corpus_of(const DenoiserWeights& weights) {
  const auto& info = weights.info();
  if (!info.contains("corpus")) return std::nullopt;
  CorpusSpec s;
  s.seed = info["corpus"].at("seed").get<std::uint64_t>();
  s.size = info["corpus"].at("size").get<int>();
  return s;
}

}  // namespace tvdb
