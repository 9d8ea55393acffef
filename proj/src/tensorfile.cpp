#include "topical/tensorfile.hpp"

#include <bit>
#include <cstring>

#include "topical/errors.hpp"
#include "topical/io.hpp"

namespace topical::tensorfile {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ValidationError("tensor file truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Eigen::MatrixXd& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ValidationError("tensor '" + name + "' missing from file");
}

std::string encode(const TensorFile& f) {
  if (f.magic.size() != 4) throw std::invalid_argument("magic must be 4 bytes");
  std::string out = f.magic;
  put<std::uint32_t>(out, f.version);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(f.precision));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.config.size()));
  out += f.config;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& t : f.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (f.precision == Precision::F32) {
          put<float>(out, static_cast<float>(t.value(r, c)));
        } else {
          put<double>(out, t.value(r, c));
        }
      }
    }
  }
  return out;
}

TensorFile decode(const std::string& bytes, const std::string& expected_magic) {
  Reader in(bytes);
  TensorFile f;
  f.magic = in.text(4);
  if (f.magic != expected_magic) throw ValidationError("bad magic: expected " + expected_magic);
  f.version = in.get<std::uint32_t>();
  if (f.version != 1) throw ValidationError("unsupported tensor file version " + std::to_string(f.version));
  const auto p = in.get<std::uint8_t>();
  if (p != 4 && p != 8) throw ValidationError("unknown payload precision");
  f.precision = static_cast<Precision>(p);
  f.config = in.text(in.get<std::uint32_t>());
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = in.text(in.get<std::uint32_t>());
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    t.value.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        t.value(r, c) = f.precision == Precision::F32 ? static_cast<double>(in.get<float>()) : in.get<double>();
      }
    }
    f.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw ValidationError("trailing bytes after tensor payload");
  return f;
}

void save(const std::filesystem::path& path, const TensorFile& f) { io::write_file(path, encode(f)); }

TensorFile load(const std::filesystem::path& path, const std::string& expected_magic) {
  try {
    return decode(io::read_file(path), expected_magic);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace topical::tensorfile
