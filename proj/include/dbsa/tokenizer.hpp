#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dbsa {

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by specials.
inline constexpr std::int32_t kBosToken = 256;
inline constexpr std::int32_t kEosToken = 257;
inline constexpr std::int32_t kPadToken = 258;
inline constexpr std::int32_t kByteVocabSize = 259;

std::vector<std::int32_t> encode_bytes(std::string_view text);
std::string decode_bytes(const std::vector<std::int32_t>& ids);

}  // namespace dbsa
