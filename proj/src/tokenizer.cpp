#include "dbsa/tokenizer.hpp"

#include "dbsa/error.hpp"

namespace dbsa {

std::vector<std::int32_t> encode_bytes(std::string_view text) {
    std::vector<std::int32_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
}

std::string decode_bytes(const std::vector<std::int32_t>& ids) {
    std::string s;
    for (auto id : ids) {
        if (id < 0 || id > 255) continue;  // specials have no text form
        s.push_back(static_cast<char>(id));
    }
    return s;
}

}  // namespace dbsa
