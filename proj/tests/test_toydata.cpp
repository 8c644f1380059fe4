#include <doctest.h>

#include "support.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"
#include "tvdb/toydata.hpp"

#include <map>
#include <set>

using namespace tvdb;

namespace {

double max_abs_diff(const ImageTensor& a, const ImageTensor& b) { return (a.values() - b.values()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("render") {
  const SceneSpec spec = random_scene(12);
  CHECK(render(spec).values() == render(spec).values());
  const ImageTensor img = render(spec);
  CHECK(img.channels() == 3);
  CHECK(img.height() == 32);
  CHECK(img.width() == 32);

  SceneSpec empty = spec;
  empty.kind = ShapeKind::None;
  const ImageTensor bg = render(empty);
  for (int c = 0; c < 3; ++c) CHECK((bg.values().row(c).array() == spec.background[c]).all());
  SceneSpec dot = spec;
  dot.size = 0.0;
  CHECK(render(dot).values() == bg.values());

  // Exact membership at pixel centres.
  SceneSpec square;
  square.kind = ShapeKind::Square;
  square.fill = {1.0, 1.0, 1.0};
  square.background = {-1.0, -1.0, -1.0};
  square.cx = 16.0;
  square.cy = 16.0;
  square.size = 4.0;
  const ImageTensor sq = render(square);
  CHECK(sq.at(0, 12, 12) == 1.0);
  CHECK(sq.at(0, 19, 19) == 1.0);
  CHECK(sq.at(0, 11, 16) == -1.0);
  CHECK(sq.at(0, 20, 16) == -1.0);
  CHECK((sq.values().row(0).array() > 0).count() == 64);

  SceneSpec outside = square;
  outside.cx = 2.0;
  CHECK_THROWS_AS(render(outside), DomainError);
  SceneSpec bright = square;
  bright.fill = {1.5, 0.0, 0.0};
  CHECK_THROWS_AS(render(bright), DomainError);
  SceneSpec negative = square;
  negative.size = -1.0;
  CHECK_THROWS_AS(render(negative), DomainError);
}

TEST_CASE("scene spec json round trip") {
  const SceneSpec s = random_scene(99, ShapeKind::Triangle);
  CHECK(s.kind == ShapeKind::Triangle);
  CHECK(SceneSpec::from_json(s.to_json()) == s);
  for (ShapeKind k : {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle, ShapeKind::Composite, ShapeKind::None}) {
    CHECK(shape_from_string(to_string(k)) == k);
  }
}

TEST_CASE("transforms") {
  const ImageTensor img = render(random_scene(3));
  CHECK(apply_transform(img, TransformSpec::tone_curve(1.0)).values().isApprox(img.values(), 1e-14));
  CHECK(apply_transform(img, TransformSpec::blur({0, 0, 0, 0, 1, 0, 0, 0, 0}, 3)).values() == img.values());
  CHECK(apply_transform(img, TransformSpec::desaturate(0.0)).values() == img.values());

  const Rgb delta{0.1, -0.2, 0.15};
  const ImageTensor there = apply_transform(img, TransformSpec::color_shift(delta));
  const ImageTensor back = apply_transform(there, TransformSpec::color_shift({-delta[0], -delta[1], -delta[2]}));
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 32 * 32; ++i) {
      const double v = img.values()(c, i);
      if (std::abs(v + delta[c]) < 1.0) CHECK(back.values()(c, i) == doctest::Approx(v).epsilon(1e-14));
    }
  }

  // Mid-grey scene: invert-luma twice stays unclamped and is the identity.
  SceneSpec soft = random_scene(4);
  soft.fill = {0.2, 0.1, 0.15};
  soft.background = {-0.1, -0.05, 0.0};
  const ImageTensor s = render(soft);
  const ImageTensor twice = apply_transform(apply_transform(s, TransformSpec::invert_luma()), TransformSpec::invert_luma());
  CHECK(max_abs_diff(twice, s) < 1e-12);

  const ImageTensor grey = apply_transform(img, TransformSpec::desaturate(1.0));
  for (int i = 0; i < 32 * 32; ++i) {
    CHECK(grey.values()(0, i) == doctest::Approx(grey.values()(1, i)).epsilon(1e-14));
    CHECK(grey.values()(1, i) == doctest::Approx(grey.values()(2, i)).epsilon(1e-14));
  }

  const ImageTensor blurred = apply_transform(img, TransformSpec::box_blur(2));
  CHECK(max_abs_diff(blurred, img) > 0.0);
  CHECK(blurred.values().row(0).mean() == doctest::Approx(img.values().row(0).mean()).epsilon(0.05));

  const ImageTensor strong = apply_transform(img, TransformSpec::color_shift({2.0, 2.0, 2.0}));
  CHECK((strong.values().array() == 1.0).all());
  CHECK(apply_transform(img, TransformSpec::tone_curve(2.0)).values() ==
        apply_transform(img, TransformSpec::tone_curve(2.0)).values());

  CHECK_THROWS_AS(apply_transform(img, TransformSpec::tone_curve(0.0)), DomainError);
  CHECK_THROWS_AS(apply_transform(img, TransformSpec::desaturate(1.5)), DomainError);
  CHECK_THROWS_AS(apply_transform(img, TransformSpec::color_shift({3.0, 0.0, 0.0})), DomainError);
  CHECK_THROWS_AS(apply_transform(img, TransformSpec::blur({0, 0, 0, 0, 0, 0, 0, 0, 0}, 1)), DomainError);
  CHECK_THROWS_AS(apply_transform(img, TransformSpec::blur({0, 0, 0, 0, -1, 0, 0, 0, 0}, 1)), DomainError);
  CHECK_THROWS_AS(apply_transform(img, TransformSpec::blur({0, 0, 0, 0, 1, 0, 0, 0, 0}, -1)), DomainError);
  CHECK_THROWS_AS(apply_transform(ImageTensor(Mat::Zero(1, 64), 8, 8), TransformSpec::invert_luma()), DomainError);

  for (const auto& t : {TransformSpec::tone_curve(1.7), TransformSpec::color_shift({0.1, 0.2, -0.3}),
                        TransformSpec::desaturate(0.4), TransformSpec::box_blur(2), TransformSpec::invert_luma()}) {
    const TransformSpec r = TransformSpec::from_json(t.to_json());
    CHECK(apply_transform(img, r).values() == apply_transform(img, t).values());
  }
}

TEST_CASE("shape classifier") {
  SceneSpec circle;
  circle.kind = ShapeKind::Circle;
  circle.fill = {0.8, 0.6, 0.2};
  circle.background = {-0.6, -0.5, -0.7};
  circle.size = 8.0;
  CHECK(classify_shape(render(circle)).kind == ShapeKind::Circle);
  CHECK_FALSE(classify_shape(ImageTensor(Mat::Constant(3, 32 * 32, 0.3), 32, 32)).kind);

  // Robust to the tone and colour edits over the scene distribution.
  const std::vector<TransformSpec> edits{TransformSpec::color_shift({0.2, 0.2, 0.2}),
                                         TransformSpec::color_shift({0.3, 0.0, -0.3}), TransformSpec::tone_curve(0.7),
                                         TransformSpec::tone_curve(1.5), TransformSpec::desaturate(0.8)};
  int wrong = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const SceneSpec s = random_scene(1000 + seed);
    const ImageTensor img = render(s);
    if (classify_shape(img).kind != s.kind) ++wrong;
    for (const auto& t : edits) {
      if (classify_shape(apply_transform(img, t)).kind != s.kind) ++wrong;
    }
  }
  CHECK(wrong == 0);
}

TEST_CASE("prompt sets") {
  const TransformSpec t = TransformSpec::color_shift({0.2, 0.2, 0.2});
  const PromptSet set = make_prompt_set(1, 10, t, 5);
  CHECK(set.train.size() == 1);
  CHECK(set.test.size() == 10);
  for (const auto& p : set.train) CHECK(p.after.values() == apply_transform(p.before, t).values());
  for (const auto& item : set.test) CHECK(item.ground_truth.values() == apply_transform(item.image, t).values());
  for (const auto& a : set.train_specs) {
    for (const auto& b : set.test_specs) CHECK_FALSE(a == b);
  }
  std::set<std::string> ids;
  for (const auto& item : set.test) ids.insert(item.id);
  CHECK(ids.size() == 10);

  const PromptSet again = make_prompt_set(1, 10, t, 5);
  CHECK(sha256_hex(again.manifest().dump()) == sha256_hex(set.manifest().dump()));
  CHECK_FALSE(sha256_hex(make_prompt_set(1, 10, t, 6).manifest().dump()) == sha256_hex(set.manifest().dump()));
  CHECK_THROWS_AS(make_prompt_set(0, 3, t, 1), DomainError);

  const PromptSet multi = make_prompt_set(3, 0, t, 2);
  CHECK(multi.train.size() == 3);
  CHECK(multi.test.empty());
}

TEST_CASE("prompt set directories") {
  const auto dir = test::scratch_dir("prompt-set");
  const PromptSet set = make_prompt_set(2, 3, TransformSpec::tone_curve(1.4), 8);
  write_prompt_set(set, dir);
  for (const char* f : {"manifest.json", "before_0000.png", "after_0001.png", "test_0002.png", "gt_0000.png"}) {
    CHECK(std::filesystem::is_regular_file(dir / f));
  }
  const PromptSet loaded = read_prompt_set(dir);
  REQUIRE(loaded.train.size() == 2);
  REQUIRE(loaded.test.size() == 3);
  CHECK(loaded.seed == 8);
  CHECK(loaded.train_specs == set.train_specs);
  CHECK(loaded.test_specs == set.test_specs);
  CHECK(loaded.train[1].id == set.train[1].id);
  CHECK(loaded.train[0].before.values() == quantize_8bit(set.train[0].before).values());
  CHECK(loaded.test[2].ground_truth.values() == quantize_8bit(set.test[2].ground_truth).values());
  // Hashes in the manifest describe the files on disk.
  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(m["train"][0]["after_sha256"] == sha256_hex(read_file(dir / "after_0000.png")));
  CHECK(m["test"][1]["image_sha256"] == sha256_hex(read_file(dir / "test_0001.png")));

  CHECK_THROWS_AS(read_prompt_set(dir / "missing"), ConfigError);
  write_text(dir / "manifest.json", "{ not json");
  CHECK_THROWS_AS(read_prompt_set(dir), ConfigError);
}

TEST_CASE("training corpus") {
  const CorpusSpec spec{7, 480};
  const auto corpus = make_corpus(spec);
  REQUIRE(corpus.size() == 480);
  CHECK(make_corpus({7, 5})[3].image.values() == corpus[3].image.values());

  std::map<ShapeKind, std::set<int>> fills, backgrounds;
  std::set<int> styles;
  for (const auto& item : corpus) {
    REQUIRE(item.words.size() == 4);
    CHECK(item.words[0] == Vocabulary::shape_word(item.spec.kind));
    fills[item.spec.kind].insert(item.words[1]);
    backgrounds[item.spec.kind].insert(item.words[2]);
    styles.insert(item.style);
    for (int word : item.words) {
      CHECK(word >= 0);
      CHECK(word < Vocabulary::size());
    }
  }
  // Every shape kind appears with most fills and backgrounds.
  CHECK(fills.size() == 4);
  for (const auto& [kind, f] : fills) CHECK(static_cast<int>(f.size()) >= Vocabulary::fill_count() - 1);
  for (const auto& [kind, b] : backgrounds) CHECK(static_cast<int>(b.size()) >= Vocabulary::background_count() - 1);
  CHECK(static_cast<int>(styles.size()) == Vocabulary::style_count());

  const auto training = to_training_set(corpus);
  CHECK(training[10].image.values() == corpus[10].image.values());
  CHECK(training[10].words == corpus[10].words);
  CHECK_THROWS_AS(make_corpus({1, 0}), ConfigError);

  std::set<std::string> names;
  for (int w = 0; w < Vocabulary::size(); ++w) names.insert(Vocabulary::name(w));
  CHECK(static_cast<int>(names.size()) == Vocabulary::size());
  CHECK_THROWS_AS(Vocabulary::name(Vocabulary::size()), DomainError);
  CHECK_THROWS_AS(Vocabulary::shape_word(ShapeKind::None), DomainError);

  DenoiserWeights w = test::untrained_weights();
  CHECK_FALSE(corpus_of(w));
  w.info()["corpus"] = spec.to_json();
  REQUIRE(corpus_of(w));
  CHECK(corpus_of(w)->seed == 7);
  CHECK(corpus_of(w)->size == 480);
}
