#pragma once

// Binary checkpoint layout, all integers and floats little-endian:
//   "ADRPO1"            6 bytes magic
//   u32 layer count     followed by that many u64 widths
//   u8  activation id
//   u8  precision       bytes per parameter (4 or 8)
//   u64 parameter count followed by the flat parameter array

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "adrpo/error.hpp"
#include "adrpo/netcore.hpp"

namespace adrpo {

namespace detail {

inline constexpr char kCheckpointMagic[] = "ADRPO1";

template <std::unsigned_integral U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <std::unsigned_integral U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw IoError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

template <std::floating_point T>
using UintOf = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;

}  // namespace detail

template <std::floating_point T>
std::vector<std::uint8_t> encode_checkpoint(const Mlp<T>& net) {
  std::vector<std::uint8_t> out(detail::kCheckpointMagic, detail::kCheckpointMagic + 6);
  detail::put_le(out, static_cast<std::uint32_t>(net.widths().size()));
  for (auto w : net.widths()) detail::put_le(out, static_cast<std::uint64_t>(w));
  out.push_back(static_cast<std::uint8_t>(net.activation()));
  out.push_back(static_cast<std::uint8_t>(sizeof(T)));
  detail::put_le(out, static_cast<std::uint64_t>(net.params().size()));
  for (T p : net.params()) detail::put_le(out, std::bit_cast<detail::UintOf<T>>(p));
  return out;
}

template <std::floating_point T>
Mlp<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 6) != 0)
    throw IoError("not an ADRPO1 checkpoint");
  std::size_t pos = 6;
  const auto layers = detail::get_le<std::uint32_t>(bytes, pos);
  if (layers < 2 || layers > 64) throw IoError("checkpoint has an implausible layer count");
  std::vector<std::size_t> widths(layers);
  for (auto& w : widths) w = static_cast<std::size_t>(detail::get_le<std::uint64_t>(bytes, pos));
  if (pos + 2 > bytes.size()) throw IoError("checkpoint truncated");
  const auto act = bytes[pos++];
  const auto precision = bytes[pos++];
  if (act > 1) throw IoError("checkpoint has unknown activation id");
  if (precision != sizeof(T))
    throw IoError("checkpoint precision is " + std::to_string(precision) + " bytes, expected " +
                  std::to_string(sizeof(T)));
  Mlp<T> net(widths, static_cast<Activation>(act));
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  if (count != net.params().size()) throw IoError("checkpoint parameter count does not match topology");
  for (auto& p : net.params()) p = std::bit_cast<T>(detail::get_le<detail::UintOf<T>>(bytes, pos));
  if (pos != bytes.size()) throw IoError("trailing bytes after checkpoint parameters");
  return net;
}

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const Mlp<T>& net) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

template <std::floating_point T>
Mlp<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

/// Loads a checkpoint and rejects it unless it has exactly the expected topology.
template <std::floating_point T>
Mlp<T> load_checkpoint(const std::filesystem::path& path, const std::vector<std::size_t>& expected_widths,
                       Activation expected_activation) {
  auto net = load_checkpoint<T>(path);
  if (net.widths() != expected_widths || net.activation() != expected_activation)
    throw ShapeError("checkpoint " + path.string() + " topology does not match the configured network");
  return net;
}

}  // namespace adrpo
