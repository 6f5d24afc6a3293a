#include "mmgt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace mmgt {
namespace {

constexpr char kMagic[4] = {'M', 'M', 'G', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU8 = 2;

void write_header(std::ofstream& out, std::uint8_t dtype,
                  const std::vector<std::uint64_t>& dims) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(dims.size()));
  out.put(0);  // reserved
  for (std::uint64_t d : dims) {
    unsigned char buf[8];
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>(d >> (8 * b));
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

struct Header {
  std::uint8_t dtype;
  std::vector<std::uint64_t> dims;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw TensorIoError("bad magic in tensor file: " + path.string());
  char version = 0, dtype = 0, rank = 0, reserved = 0;
  if (!in.get(version) || !in.get(dtype) || !in.get(rank) || !in.get(reserved))
    throw TensorIoError("truncated tensor header: " + path.string());
  if (static_cast<std::uint8_t>(version) != kVersion)
    throw TensorIoError("unsupported tensor container version in " +
                        path.string());
  if (dtype != kDtypeF32 && dtype != kDtypeU8)
    throw TensorIoError("unknown dtype byte in " + path.string());
  Header h;
  h.dtype = static_cast<std::uint8_t>(dtype);
  h.dims.resize(static_cast<std::size_t>(static_cast<std::uint8_t>(rank)));
  for (auto& d : h.dims) {
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8))
      throw TensorIoError("truncated dims in tensor file: " + path.string());
    d = 0;
    for (int b = 7; b >= 0; --b) d = (d << 8) | buf[b];
  }
  return h;
}

template <typename Scalar>
std::vector<Scalar> read_payload(std::ifstream& in,
                                 const std::filesystem::path& path,
                                 std::size_t count) {
  std::vector<Scalar> data(count);
  if (count > 0 &&
      !in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(count * sizeof(Scalar))))
    throw TensorIoError("truncated payload in tensor file: " + path.string());
  // Any trailing bytes mean the header lied about the shape.
  in.peek();
  if (!in.eof())
    throw TensorIoError("trailing bytes after payload in " + path.string());
  return data;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorIoError("cannot open for writing: " + path.string());
  return out;
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const F32Tensor& t) {
  for (float v : t.vec())
    if (!std::isfinite(v))
      throw TensorIoError("refusing to write non-finite value to " +
                          path.string());
  auto out = open_out(path);
  write_header(out, kDtypeF32, t.dims());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw TensorIoError("write failed: " + path.string());
}

void save_tensor(const std::filesystem::path& path, const U8Tensor& t) {
  auto out = open_out(path);
  write_header(out, kDtypeU8, t.dims());
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size()));
  if (!out) throw TensorIoError("write failed: " + path.string());
}

F32Tensor load_f32_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("cannot open tensor file: " + path.string());
  Header h = read_header(in, path);
  if (h.dtype != kDtypeF32)
    throw TensorIoError("dtype mismatch: expected f32 in " + path.string());
  auto data =
      read_payload<float>(in, path, F32Tensor::element_count(h.dims));
  for (float v : data)
    if (!std::isfinite(v))
      throw TensorIoError("non-finite value in tensor file: " + path.string());
  return F32Tensor(std::move(h.dims), std::move(data));
}

U8Tensor load_u8_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError("cannot open tensor file: " + path.string());
  Header h = read_header(in, path);
  if (h.dtype != kDtypeU8)
    throw TensorIoError("dtype mismatch: expected u8 in " + path.string());
  auto data =
      read_payload<std::uint8_t>(in, path, U8Tensor::element_count(h.dims));
  return U8Tensor(std::move(h.dims), std::move(data));
}

F32Tensor to_f32(const std::vector<std::uint64_t>& dims,
                 const std::vector<double>& values) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max())
      throw TensorIoError("value not representable as f32");
    out[i] = static_cast<float>(v);
  }
  return F32Tensor(dims, std::move(out));
}

std::vector<double> to_f64(const F32Tensor& t) {
  return std::vector<double>(t.vec().begin(), t.vec().end());
}

}  // namespace mmgt
