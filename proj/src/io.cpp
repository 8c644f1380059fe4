#include "tvdb/io.hpp"

#include "tvdb/errors.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <png.h>

#include <csetjmp>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tvdb {

// ---------------------------------------------------------------------------
// PNG

namespace {

void png_warning_fn(png_structp, png_const_charp) {}
[[noreturn]] void png_error_fn(png_structp png, png_const_charp) { png_longjmp(png, 1); }

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}
void png_flush_noop(png_structp) {}

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void png_read_from_span(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + length > cur->bytes.size()) {
    png_error(png, "unexpected end of data");
  }
  std::memcpy(data, cur->bytes.data() + cur->offset, length);
  cur->offset += length;
}

std::uint8_t to_byte(double v) {
  const double clamped = std::min(1.0, std::max(-1.0, v));
  // Default rounding mode is round-half-to-even.
  return static_cast<std::uint8_t>(std::nearbyint((clamped + 1.0) * 127.5));
}

}  // namespace

Bytes encode_png(const ImageTensor& image) {
  if (image.channels() != 3) throw ConfigError("encode_png: expected 3 channels");
  const int h = image.height();
  const int w = image.width();
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(image.at(c, y, x));

  Bytes out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError("encode_png: libpng failure");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) png_write_row(png, raw.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

ImageTensor decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ConfigError("decode_png: not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes, 0};
  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  int w = 0;
  int h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ConfigError("decode_png: malformed PNG data");
  }
  png_set_read_fn(png, &cursor, png_read_from_span);
  png_read_info(png, info);
  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  {
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (bit_depth < 8) png_set_packing(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w) * 3) png_error(png, "unsupported pixel layout");
  raw.resize(static_cast<std::size_t>(h) * w * 3);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  ImageTensor image(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        image.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 127.5 - 1.0;
  return image;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) { write_file(path, encode_png(image)); }

ImageTensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

ImageTensor quantize_8bit(const ImageTensor& image) {
  Mat v(image.values().rows(), image.values().cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = to_byte(image.values().data()[i]) / 127.5 - 1.0;
  return ImageTensor(std::move(v), image.height(), image.width());
}

// ---------------------------------------------------------------------------
// Hashing, base64, files

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(const std::string& text) {
  std::string clean;
  for (char ch : text) {
    if (ch != '\n' && ch != '\r' && ch != ' ') clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) throw ConfigError("base64: length is not a multiple of 4");
  Bytes out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ConfigError("base64: invalid input");
  std::size_t padding = 0;
  for (auto it = clean.rbegin(); it != clean.rend() && *it == '='; ++it) ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Containers

namespace {

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

void put_f32(Bytes& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

void append_floats(std::vector<float>& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<float>(m.data()[i]));
}

}  // namespace

Bytes encode_container(const Container& c) {
  if (c.magic.size() != 7) throw ConfigError("container magic must be 7 bytes");
  Bytes out(c.magic.begin(), c.magic.end());
  const std::string meta = c.metadata.dump();
  put_u64(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  out.reserve(out.size() + c.payload.size() * 4);
  for (float f : c.payload) put_f32(out, f);
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes, const std::string& expected_magic) {
  if (bytes.size() < 15 || std::string(bytes.begin(), bytes.begin() + 7) != expected_magic) {
    throw ConfigError("expected a " + expected_magic + " file");
  }
  const std::uint64_t meta_len = get_u64(bytes, 7);
  if (15 + meta_len > bytes.size()) throw ConfigError(expected_magic + ": truncated metadata");
  Container c;
  c.magic = expected_magic;
  try {
    c.metadata = nlohmann::json::parse(bytes.begin() + 15, bytes.begin() + 15 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(expected_magic + ": bad metadata: " + e.what());
  }
  const std::size_t start = 15 + meta_len;
  if ((bytes.size() - start) % 4 != 0) throw ConfigError(expected_magic + ": payload not a multiple of 4 bytes");
  const std::size_t n = (bytes.size() - start) / 4;
  c.payload.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.payload[i] = get_f32(bytes, start + 4 * i);
  return c;
}

// ---------------------------------------------------------------------------
// Weights

Bytes encode_weights(const DenoiserWeights& weights) {
  Container c;
  c.magic = kWeightsMagic;
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : weights.sites()) {
    sites.push_back({{"id", s.id}, {"name", s.name}, {"kind", to_string(s.kind)}, {"j", s.positions},
                     {"channels", s.channels}});
  }
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : weights.params()) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    append_floats(c.payload, p.value);
  }
  const auto& cfg = weights.config();
  c.metadata = {{"format", kWeightsMagic},
                {"d", cfg.embed_dim},
                {"k", cfg.token_capacity},
                {"sites", sites},
                {"schedule", {{"kind", "linear"}, {"train_steps", cfg.train_steps}, {"alpha_bar_end", cfg.alpha_bar_end}}},
                {"config", cfg.to_json()},
                {"params", params},
                {"info", weights.info()}};
  if (weights.info().contains("train_seed")) c.metadata["seed"] = weights.info()["train_seed"];
  return encode_container(c);
}

DenoiserWeights decode_weights(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes, kWeightsMagic);
  const DenoiserConfig cfg = DenoiserConfig::from_json(c.metadata.at("config"));
  std::vector<NamedParam> params;
  std::size_t offset = 0;
  for (const auto& p : c.metadata.at("params")) {
    const auto rows = p.at("rows").get<Eigen::Index>();
    const auto cols = p.at("cols").get<Eigen::Index>();
    if (offset + static_cast<std::size_t>(rows * cols) > c.payload.size()) {
      throw ConfigError("TVDB-W1: payload shorter than declared parameters");
    }
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = c.payload[offset + static_cast<std::size_t>(i)];
    offset += static_cast<std::size_t>(m.size());
    params.push_back({p.at("name").get<std::string>(), std::move(m)});
  }
  if (offset != c.payload.size()) throw ConfigError("TVDB-W1: trailing payload data");
  DenoiserWeights w(cfg, std::move(params));
  if (c.metadata.contains("info")) w.info() = c.metadata["info"];
  return w;
}

void save_weights(const std::filesystem::path& path, const DenoiserWeights& weights) {
  write_file(path, encode_weights(weights));
}

DenoiserWeights load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

std::string weights_hash(const DenoiserWeights& weights) { return sha256_hex(encode_weights(weights)); }

// ---------------------------------------------------------------------------
// Embeddings

Bytes encode_embedding(const EmbeddingFile& file) {
  Container c;
  c.magic = kEmbeddingMagic;
  c.metadata = file.metadata;
  c.metadata["k"] = file.embedding.k();
  c.metadata["d"] = file.embedding.d();
  c.metadata["y"] = file.embedding.learnable();
  append_floats(c.payload, file.embedding.tokens());
  return encode_container(c);
}

EmbeddingFile decode_embedding(std::span<const std::uint8_t> bytes) {
  Container c = decode_container(bytes, kEmbeddingMagic);
  const int k = c.metadata.at("k").get<int>();
  const int d = c.metadata.at("d").get<int>();
  const int y = c.metadata.at("y").get<int>();
  if (c.payload.size() != static_cast<std::size_t>(k) * d) throw ConfigError("TVDB-E1: payload size mismatch");
  Mat tokens(k, d);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = c.payload[static_cast<std::size_t>(i)];
  return EmbeddingFile{PromptEmbedding(std::move(tokens), y), std::move(c.metadata)};
}

void save_embedding(const std::filesystem::path& path, const EmbeddingFile& file) {
  write_file(path, encode_embedding(file));
}

void check_model_hash(const EmbeddingFile& file, const DenoiserWeights& weights, bool allow_mismatch) {
  if (allow_mismatch) return;
  const std::string expected = file.metadata.value("model_hash", std::string());
  const std::string actual = weights_hash(weights);
  if (expected != actual) {
    throw ConfigError("embedding was learned against model " + expected + " but loaded weights hash to " + actual);
  }
}

EmbeddingFile load_embedding(const std::filesystem::path& path, const DenoiserWeights& weights, bool allow_mismatch) {
  EmbeddingFile f = decode_embedding(read_file(path));
  check_model_hash(f, weights, allow_mismatch);
  check_compatible(weights, f.embedding);
  return f;
}

}  // namespace tvdb
