// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "neurogen/archspec.hpp"
#include "neurogen/refcorpus.hpp"

namespace ng {

// NGPW: "NGPWv001" | u64 arch hash | u64 |w| | |w| little-endian f32.
void write_ngpw(const std::string& path, const FlatParams<float>& params);
FlatParams<float> read_ngpw(const std::string& path, const ArchSpec& arch);

// NGPC: "NGPCv001" | u64 arch hash | u64 N | u64 |w| | N records of
// (|w| f32 values, u64 length, UTF-8 JSON metadata).
void write_ngpc(const std::string& path, const CheckpointCorpus& corpus);
CheckpointCorpus read_ngpc(const std::string& path, const ArchSpec& arch);

namespace detail {
void put_u64(std::string& out, std::uint64_t v);
void put_f32s(std::string& out, std::span<const float> values);
std::uint64_t get_u64(const std::string& bytes, std::size_t& pos, const std::string& path);
std::vector<float> get_f32s(const std::string& bytes, std::size_t& pos, std::size_t count,
                            const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
}  // namespace detail

}  // namespace ng
