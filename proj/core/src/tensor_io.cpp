#include "hqdm/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace hqdm {

namespace {

constexpr std::array<char, 4> kMagic = {'H', 'Q', 'D', 'M'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) {
    throw IoError(std::string("tensor file truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ValidationError("tensor rank too large for file");
  os.write(kMagic.data(), kMagic.size());
  os.put(static_cast<char>(kTensorFileVersion));
  os.put(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("dimension too large for file");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoError("failed writing tensor payload");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw IoError("tensor file truncated before magic");
  if (magic != kMagic) throw IoError("bad tensor file magic");
  const int version = is.get();
  const int rank = is.get();
  if (!is) throw IoError("tensor file truncated in header");
  if (version != kTensorFileVersion) throw IoError("unsupported tensor file version " + std::to_string(version));
  Shape shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    d = get_u32(is, "dims");
    if (d == 0) throw IoError("tensor file has zero-length dimension");
  }
  std::vector<double> data(numel(shape));
  for (double& v : data) v = static_cast<double>(std::bit_cast<float>(get_u32(is, "payload")));
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  os.flush();
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read_tensor(is);
}

Tensor round_to_f32(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace hqdm
