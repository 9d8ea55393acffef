#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace topical::tensorfile {

enum class Precision : std::uint8_t { F32 = 4, F64 = 8 };

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

// Layout (little endian): 4-byte magic, u32 version, u8 precision, u32 length
// + UTF-8 config text, u32 tensor count, then per tensor u32 name length,
// name, u32 rows, u32 cols, row-major payload.
struct TensorFile {
  std::string magic;
  std::uint32_t version = 1;
  Precision precision = Precision::F32;
  std::string config;
  std::vector<NamedTensor> tensors;

  [[nodiscard]] const Eigen::MatrixXd& get(const std::string& name) const;
};

std::string encode(const TensorFile& f);
TensorFile decode(const std::string& bytes, const std::string& expected_magic);

void save(const std::filesystem::path& path, const TensorFile& f);
TensorFile load(const std::filesystem::path& path, const std::string& expected_magic);

}  // namespace topical::tensorfile
