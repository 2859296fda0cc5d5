#include "tbps/rtf.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace tbps::rtf {

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

}  // namespace

void write(std::ostream& os, const Tensor<float>& t) {
  os << "RTF1 " << t.dim();
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  std::string buf(t.numel() * 4, '\0');
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(t.data()[i]));
    std::memcpy(buf.data() + i * 4, &bits, 4);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing RTF1 tensor");
}

Tensor<float> read(std::istream& is, const std::string& source) {
  std::string header;
  if (!std::getline(is, header)) throw DataError(source + ": missing RTF1 header");
  std::istringstream hs(header);
  std::string magic;
  long long ndim = -1;
  hs >> magic >> ndim;
  if (magic != "RTF1" || ndim <= 0 || ndim > 16) throw DataError(source + ": malformed RTF1 header '" + header + "'");
  Shape shape;
  for (long long i = 0; i < ndim; ++i) {
    long long d = 0;
    if (!(hs >> d) || d <= 0) throw DataError(source + ": malformed RTF1 header '" + header + "'");
    shape.push_back(static_cast<std::size_t>(d));
  }
  std::string extra;
  if (hs >> extra) throw DataError(source + ": trailing tokens in RTF1 header '" + header + "'");
  const std::size_t n = shape_numel(shape);
  std::string buf(n * 4, '\0');
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw DataError(source + ": truncated RTF1 payload, expected " + std::to_string(n) + " floats");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, buf.data() + i * 4, 4);
    values[i] = std::bit_cast<float>(to_le(bits));
  }
  return Tensor<float>(std::move(shape), std::move(values));
}

void save(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write(os, t);
}

Tensor<float> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read(is, path.string());
}

}  // namespace tbps::rtf
