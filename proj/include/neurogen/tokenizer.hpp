// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "neurogen/errors.hpp"

namespace ng {

// Byte-level tokenization: one token per byte, ids 0..255.  Reversible by
// construction; id 256 is reserved as padding for fixed-length batches.
constexpr std::int64_t kPadToken = 256;
constexpr std::size_t kByteVocab = 256;

inline std::vector<std::int64_t> tokenize(std::string_view text) {
    if (text.empty()) throw ConfigError("tokenize: empty text");
    std::vector<std::int64_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<std::int64_t>(c));
    return ids;
}

inline std::string detokenize(const std::vector<std::int64_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (std::int64_t id : ids) {
        if (id < 0 || id >= static_cast<std::int64_t>(kByteVocab))
            throw ConfigError("detokenize: id " + std::to_string(id) + " is not a byte");
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

}  // namespace ng
