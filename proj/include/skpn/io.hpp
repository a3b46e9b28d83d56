#pragma once

#include "skpn/image.hpp"
#include "skpn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace skpn {

// Binary PGM (P5). maxval <= 255 is one byte per sample, otherwise two
// bytes big-endian. Samples map linearly onto [0,1].
Image decode_pgm(std::string_view bytes);
std::string encode_pgm(const Image& img, int bit_depth = 16);
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img, int bit_depth = 16);

// Rescales `img` from [min, max] onto [0, 1], writes it as 16-bit PGM and
// records "min <v>\nmax <v>\n" in `sidecar`. A constant map is written as 0.
struct ValueRange {
  double min = 0;
  double max = 0;
};
ValueRange write_normalized_pgm(const std::filesystem::path& path, const std::filesystem::path& sidecar,
                                const Image& img);
ValueRange read_sidecar(const std::filesystem::path& sidecar);

// 8-bit PGM whose grey levels are the label values.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);

// Raw tensor file: "SKTD", u32 version, u32 rank, u32 dims[rank], f64 data,
// all little-endian.
inline constexpr std::uint32_t kRawTensorVersion = 1;
std::string encode_raw_tensor(const Tensor& t);
Tensor decode_raw_tensor(std::string_view bytes);
void write_raw_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_raw_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// *.pgm files of a directory sorted by file name.
std::vector<std::filesystem::path> list_pgm_files(const std::filesystem::path& dir);

namespace binary {

void put_u32(std::string& out, std::uint32_t v);
void put_f64(std::string& out, double v);

// Sequential little-endian reader over a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32();
  double f64();
  std::string_view take(std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace binary
}  // namespace skpn
