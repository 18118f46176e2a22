#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tabsynth {

// Internal failure (bad data, I/O, numeric blow-up). Maps to exit code 1 in the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller mistake (bad flags, bad config, missing file). Maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

using TokenId = std::uint32_t;

enum class SerializationFormat : std::uint8_t {
  NameIsValue,  // "age is 32, job is nurse"
  NameValue,    // "age 32, job nurse"
  Compact,      // "age 32" then bare values, no separators; decoded by position
};

enum class PaddingStrategy : std::uint8_t { Left, Right, Middle };

inline const char* to_string(SerializationFormat f) {
  switch (f) {
    case SerializationFormat::NameIsValue: return "name-is-value";
    case SerializationFormat::NameValue: return "name-value";
    case SerializationFormat::Compact: return "compact";
  }
  return "?";
}

inline const char* to_string(PaddingStrategy s) {
  switch (s) {
    case PaddingStrategy::Left: return "left";
    case PaddingStrategy::Right: return "right";
    case PaddingStrategy::Middle: return "middle";
  }
  return "?";
}

inline SerializationFormat format_from_string(const std::string& s) {
  if (s == "name-is-value") return SerializationFormat::NameIsValue;
  if (s == "name-value") return SerializationFormat::NameValue;
  if (s == "compact") return SerializationFormat::Compact;
  throw UsageError("unknown serialization format '" + s +
                   "' (expected name-is-value, name-value or compact)");
}

inline PaddingStrategy padding_from_string(const std::string& s) {
  if (s == "left") return PaddingStrategy::Left;
  if (s == "right") return PaddingStrategy::Right;
  if (s == "middle") return PaddingStrategy::Middle;
  throw UsageError("unknown padding strategy '" + s + "' (expected left, right or middle)");
}

// splitmix64; used to derive independent stream seeds from (master, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace tabsynth
