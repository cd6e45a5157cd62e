#include "patchguard/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace patchguard {

namespace {

class Writer {
 public:
  void magic(const char (&m)[5]) { bytes_.insert(bytes_.end(), m, m + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::size_t v) {
    require(v <= 0xffffffffu, "field does not fit in 32 bits");
    put(v, 4);
  }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }

  void magic(const char (&m)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, m, 4) != 0)
      throw FormatError(std::string("bad magic, expected ") + m, pos_);
    pos_ += 4;
  }
  void version(std::uint8_t expected) {
    const std::size_t at = pos_;
    if (u8() != expected) throw FormatError("unsupported version", at);
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
  double f64() { return std::bit_cast<double>(get(8)); }

  // Positive dimension field.
  std::size_t dim(const char* name) {
    const std::size_t at = pos_;
    const std::uint32_t v = u32();
    if (v == 0) throw FormatError(std::string(name) + " must be positive", at);
    return v;
  }

  // Guards against absurd sizes before allocating.
  void expect_remaining(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("file truncated", bytes_.size());
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes", pos_);
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("file truncated", bytes_.size());
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& data) {
  data.validate();
  require(data.class_count <= 65536, "class count does not fit the label field");
  const ImageTensor* first = data.images.empty() ? nullptr : &data.images.front();
  Writer w;
  w.magic("PGDS");
  w.u8(kDatasetVersion);
  w.u32(data.size());
  w.u32(first ? first->rows() : 0);
  w.u32(first ? first->cols() : 0);
  w.u32(first ? first->channels() : 0);
  w.u32(data.class_count);
  for (const auto& img : data.images)
    for (double p : img.pixels()) w.f32(static_cast<float>(p));
  for (Label l : data.labels) w.u16(static_cast<std::uint16_t>(l));
  return w.take();
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("PGDS");
  r.version(kDatasetVersion);
  const std::size_t count = r.u32();
  std::size_t rows = r.u32();
  std::size_t cols = r.u32();
  std::size_t channels = r.u32();
  const std::size_t classes_at = r.offset();
  const std::size_t classes = r.u32();
  if (classes == 0) throw FormatError("class count must be positive", classes_at);
  if (count > 0 && (rows == 0 || cols == 0 || channels == 0))
    throw FormatError("image dimensions must be positive", 9);
  const std::uint64_t per_image = std::uint64_t{rows} * cols * channels;
  r.expect_remaining(per_image * count * 4 + std::uint64_t{count} * 2);

  LabeledDataset data;
  data.class_count = classes;
  data.images.reserve(count);
  std::vector<double> pixels(per_image);
  for (std::size_t i = 0; i < count; ++i) {
    for (auto& p : pixels) {
      const std::size_t at = r.offset();
      const float v = r.f32();
      if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("pixel outside [0,1]", at);
      p = v;
    }
    data.images.emplace_back(rows, cols, channels, pixels);
  }
  data.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint16_t l = r.u16();
    if (l >= classes) throw FormatError("label out of range", at);
    data.labels.push_back(l);
  }
  r.finish();
  return data;
}

std::vector<std::uint8_t> encode_model(const PatchEnsembleModel& model) {
  const RFGeometry& g = model.geometry();
  Writer w;
  w.magic("PGMD");
  w.u8(kModelVersion);
  for (std::size_t v : {g.image_rows, g.image_cols, g.channels, g.rf_rows, g.rf_cols,
                        g.stride_rows, g.stride_cols})
    w.u32(v);
  w.u32(model.inputs());
  w.u32(model.hidden());
  w.u32(model.classes());
  for (double p : model.params()) w.f64(p);
  return w.take();
}

PatchEnsembleModel decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("PGMD");
  r.version(kModelVersion);
  RFGeometry g;
  g.image_rows = r.dim("image rows");
  g.image_cols = r.dim("image cols");
  g.channels = r.dim("channels");
  g.rf_rows = r.dim("receptive field rows");
  g.rf_cols = r.dim("receptive field cols");
  g.stride_rows = r.dim("stride rows");
  const std::size_t geom_end = r.offset() + 4;
  g.stride_cols = r.dim("stride cols");
  if (g.rf_rows > g.image_rows || g.rf_cols > g.image_cols)
    throw FormatError("receptive field larger than the image", geom_end);
  const std::size_t inputs_at = r.offset();
  const std::size_t inputs = r.dim("inputs");
  if (inputs != g.patch_inputs()) throw FormatError("input count disagrees with geometry", inputs_at);
  const std::size_t hidden = r.dim("hidden units");
  const std::size_t classes = r.dim("classes");
  const std::size_t n = PatchEnsembleModel::param_count(g, classes, hidden);
  r.expect_remaining(std::uint64_t{n} * 8);
  std::vector<double> params(n);
  for (auto& p : params) {
    const std::size_t at = r.offset();
    p = r.f64();
    if (!std::isfinite(p)) throw FormatError("non-finite weight", at);
  }
  r.finish();
  return PatchEnsembleModel(g, classes, hidden, std::move(params));
}

std::vector<std::uint8_t> encode_features(const FeatureTensor& tensor) {
  Writer w;
  w.magic("PGFT");
  w.u8(kFeatureVersion);
  w.u8(static_cast<std::uint8_t>(tensor.kind()));
  w.u32(tensor.rows());
  w.u32(tensor.cols());
  w.u32(tensor.classes());
  for (double v : tensor.values()) w.f64(v);
  return w.take();
}

FeatureTensor decode_features(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic("PGFT");
  r.version(kFeatureVersion);
  const std::size_t kind_at = r.offset();
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw FormatError("unknown feature kind", kind_at);
  const std::size_t rows = r.dim("rows");
  const std::size_t cols = r.dim("cols");
  const std::size_t classes = r.dim("classes");
  const std::uint64_t n = std::uint64_t{rows} * cols * classes;
  r.expect_remaining(n * 8);
  std::vector<double> values(n);
  for (auto& v : values) v = r.f64();
  r.finish();
  try {
    return FeatureTensor(rows, cols, classes, static_cast<FeatureKind>(kind), std::move(values));
  } catch (const ContractViolation& e) {
    throw FormatError(e.what(), 18);
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  write_file(path, encode_dataset(data));
}
LabeledDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }
void save_model(const PatchEnsembleModel& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}
PatchEnsembleModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }
void save_features(const FeatureTensor& tensor, const std::filesystem::path& path) {
  write_file(path, encode_features(tensor));
}
FeatureTensor load_features(const std::filesystem::path& path) {
  return decode_features(read_file(path));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
    out[std::move(key)] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string format_real(double v, int digits) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) s.erase(0, s[0] == '-' ? 1 : 0);
  return s;
}

}  // namespace patchguard
