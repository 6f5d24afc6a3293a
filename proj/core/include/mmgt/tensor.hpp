#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmgt {

/// Error for malformed tensor files (bad magic, truncation, dtype mismatch).
class TensorIoError : public std::runtime_error {
 public:
  explicit TensorIoError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major tensor of f32 or u8, the on-disk interchange type.
/// Numeric work happens in double; this type exists for I/O and storage.
template <typename Scalar>
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(std::vector<std::uint64_t> dims)
      : dims_(std::move(dims)), data_(element_count(dims_), Scalar{0}) {}
  DenseTensor(std::vector<std::uint64_t> dims, std::vector<Scalar> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != element_count(dims_))
      throw std::invalid_argument("tensor data size does not match dims");
  }

  static std::size_t element_count(const std::vector<std::uint64_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }

  const std::vector<std::uint64_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::vector<Scalar>& vec() { return data_; }
  const std::vector<Scalar>& vec() const { return data_; }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const DenseTensor& other) const {
    return dims_ == other.dims_ && data_ == other.data_;
  }

 private:
  std::vector<std::uint64_t> dims_;
  std::vector<Scalar> data_;
};

using F32Tensor = DenseTensor<float>;
using U8Tensor = DenseTensor<std::uint8_t>;

/// Binary container: magic "MMGT", version byte (1), dtype byte (1=f32,
/// 2=u8), rank byte, one reserved zero byte, then rank little-endian u64
/// dims, then the row-major payload. Rank 0 means a scalar (one element).
void save_tensor(const std::filesystem::path& path, const F32Tensor& t);
void save_tensor(const std::filesystem::path& path, const U8Tensor& t);

/// Loaders reject wrong magic/version, dtype mismatches against the requested
/// type, truncated payloads, trailing bytes, and non-finite f32 values.
F32Tensor load_f32_tensor(const std::filesystem::path& path);
U8Tensor load_u8_tensor(const std::filesystem::path& path);

/// Convenience: double<->f32 narrowing for the save path. Values outside
/// float range throw rather than silently producing inf.
F32Tensor to_f32(const std::vector<std::uint64_t>& dims,
                 const std::vector<double>& values);
std::vector<double> to_f64(const F32Tensor& t);

}  // namespace mmgt
