#ifndef TENDUQ_ENCODING_HPP
#define TENDUQ_ENCODING_HPP

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace tenduq::encoding {

namespace it = boost::archive::iterators;

inline std::string base64_encode(const std::string& bytes) {
  using Enc = it::base64_from_binary<it::transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(Enc(bytes.begin()), Enc(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string base64_decode(std::string text) {
  using Dec = it::transform_width<it::binary_from_base64<std::string::const_iterator>, 8, 6>;
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  const auto pad = static_cast<std::size_t>(std::count(text.end() - std::min<std::size_t>(2, text.size()), text.end(), '='));
  std::replace(text.end() - static_cast<long>(pad), text.end(), '=', 'A');
  std::string out;
  try {
    out.assign(Dec(text.begin()), Dec(text.end()));
  } catch (const std::exception&) {
    throw std::invalid_argument("invalid base64 payload");
  }
  out.erase(out.end() - static_cast<long>(pad), out.end());
  return out;
}

/// Raw IEEE-754 bytes in host order, base64 encoded.
inline std::string encode_doubles(const double* data, std::size_t count) {
  std::string bytes(count * sizeof(double), '\0');
  if (count) std::memcpy(bytes.data(), data, bytes.size());
  return base64_encode(bytes);
}

inline std::vector<double> decode_doubles(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % sizeof(double) != 0) throw std::invalid_argument("truncated double array");
  std::vector<double> out(bytes.size() / sizeof(double));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace tenduq::encoding

#endif  // TENDUQ_ENCODING_HPP
