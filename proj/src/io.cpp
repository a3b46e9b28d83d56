#include "skpn/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace skpn {

namespace binary {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

std::string_view Reader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw std::runtime_error("unexpected end of binary data");
  auto out = bytes_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t Reader::u32() {
  const auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

double Reader::f64() {
  const auto b = take(8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace binary

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

namespace {

// Header token, skipping whitespace and '#' comments.
std::string next_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw std::runtime_error("truncated PGM header");
  return std::string(bytes.substr(start, pos - start));
}

long parse_positive(const std::string& token, const char* what) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || v <= 0) throw std::runtime_error(std::string("bad PGM ") + what + " '" + token + "'");
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Image decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P5") throw std::runtime_error("not a binary PGM (P5) file");
  const long width = parse_positive(next_token(bytes, pos), "width");
  const long height = parse_positive(next_token(bytes, pos), "height");
  const long maxval = parse_positive(next_token(bytes, pos), "maxval");
  if (maxval > 65535) throw std::runtime_error("PGM maxval exceeds 65535");
  ++pos;  // single whitespace byte before the raster
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t needed = static_cast<std::size_t>(width * height) * sample_bytes;
  if (pos > bytes.size() || bytes.size() - pos < needed) throw std::runtime_error("truncated PGM raster");

  Image img(height, width);
  const auto* raster = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const unsigned sample = sample_bytes == 2 ? (raster[2 * i] << 8) | raster[2 * i + 1] : raster[i];
    img.data()[i] = static_cast<double>(sample) / static_cast<double>(maxval);
  }
  return img;
}

std::string encode_pgm(const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PGM bit depth must be 8 or 16");
  const unsigned maxval = bit_depth == 16 ? 65535u : 255u;
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n" +
                    std::to_string(maxval) + "\n";
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * maxval));
    if (bit_depth == 16) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFFu));
  }
  return out;
}

Image read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const Image& img, int bit_depth) {
  write_file(path, encode_pgm(img, bit_depth));
}

ValueRange write_normalized_pgm(const std::filesystem::path& path, const std::filesystem::path& sidecar,
                                const Image& img) {
  ValueRange range{img.minCoeff(), img.maxCoeff()};
  const double span = range.max - range.min;
  const Image scaled = span > 0.0 ? Image((img - range.min) / span) : Image(Image::Zero(img.rows(), img.cols()));
  write_pgm(path, scaled, 16);
  write_file(sidecar, "min " + format_double(range.min) + "\nmax " + format_double(range.max) + "\n");
  return range;
}

ValueRange read_sidecar(const std::filesystem::path& sidecar) {
  std::istringstream in(read_file(sidecar));
  std::string key_min, key_max;
  ValueRange range;
  if (!(in >> key_min >> range.min >> key_max >> range.max) || key_min != "min" || key_max != "max") {
    throw std::runtime_error("malformed sidecar '" + sidecar.string() + "'");
  }
  return range;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::string out = "P5\n" + std::to_string(labels.cols()) + " " + std::to_string(labels.rows()) + "\n255\n";
  for (Eigen::Index i = 0; i < labels.size(); ++i) out.push_back(static_cast<char>(labels.data()[i]));
  write_file(path, out);
}

std::string encode_raw_tensor(const Tensor& t) {
  std::string out = "SKTD";
  binary::put_u32(out, kRawTensorVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) binary::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) binary::put_f64(out, v);
  return out;
}

Tensor decode_raw_tensor(std::string_view bytes) {
  binary::Reader in(bytes);
  if (in.take(4) != "SKTD") throw std::runtime_error("not a raw tensor file (bad magic)");
  const auto version = in.u32();
  if (version != kRawTensorVersion) {
    throw std::runtime_error("unsupported raw tensor version " + std::to_string(version));
  }
  Shape shape(in.u32());
  for (auto& d : shape) d = in.u32();
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = in.f64();
  if (!in.done()) throw std::runtime_error("trailing bytes after raw tensor payload");
  return Tensor::from_data(std::move(shape), std::move(data));
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_file(path, encode_raw_tensor(t));
}

Tensor read_raw_tensor(const std::filesystem::path& path) { return decode_raw_tensor(read_file(path)); }

std::vector<std::filesystem::path> list_pgm_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

}  // namespace skpn
