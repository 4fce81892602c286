// SPDX-License-Identifier: Apache-2.0
#include "neurogen/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ng {

namespace detail {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32s(std::string& out, std::span<const float> values) {
    static_assert(std::endian::native == std::endian::little, "little-endian hosts only");
    const auto old = out.size();
    out.resize(old + values.size() * 4);
    std::memcpy(out.data() + old, values.data(), values.size() * 4);
}

std::uint64_t get_u64(const std::string& bytes, std::size_t& pos, const std::string& path) {
    if (pos + 8 > bytes.size()) throw IoError(path + ": truncated at byte " + std::to_string(pos));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
}

std::vector<float> get_f32s(const std::string& bytes, std::size_t& pos, std::size_t count,
                            const std::string& path) {
    if (pos + count * 4 > bytes.size())
        throw IoError(path + ": truncated at byte " + std::to_string(pos));
    std::vector<float> out(count);
    std::memcpy(out.data(), bytes.data() + pos, count * 4);
    pos += count * 4;
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path + ": cannot open");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

using namespace detail;

namespace {

constexpr std::string_view kNgpwMagic = "NGPWv001";
constexpr std::string_view kNgpcMagic = "NGPCv001";

void expect_magic(const std::string& bytes, std::size_t& pos, std::string_view magic,
                  const std::string& path) {
    if (bytes.size() < pos + magic.size() || std::string_view(bytes.data() + pos, magic.size()) != magic)
        throw IoError(path + ": bad magic, expected " + std::string(magic));
    pos += magic.size();
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
    return nlohmann::json{{"seed", meta.seed},
                          {"epochs", meta.epochs},
                          {"final_train_loss", meta.final_train_loss},
                          {"test_accuracy", meta.test_accuracy},
                          {"dataset_id", meta.dataset_id}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta meta;
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.epochs = j.at("epochs").get<std::size_t>();
    meta.final_train_loss = j.at("final_train_loss").get<double>();
    meta.test_accuracy = j.at("test_accuracy").get<double>();
    meta.dataset_id = j.at("dataset_id").get<std::string>();
    return meta;
}

}  // namespace

void write_ngpw(const std::string& path, const FlatParams<float>& params) {
    std::string out;
    out += kNgpwMagic;
    put_u64(out, params.arch_hash);
    put_u64(out, params.values.numel());
    put_f32s(out, params.values.data());
    write_file(path, out);
}

FlatParams<float> read_ngpw(const std::string& path, const ArchSpec& arch) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    expect_magic(bytes, pos, kNgpwMagic, path);
    const std::uint64_t hash = get_u64(bytes, pos, path);
    if (hash != arch.hash)
        throw ArtifactMismatch(path + ": weights for arch hash " + std::to_string(hash) +
                               ", expected '" + arch.name + "' (hash " + std::to_string(arch.hash) + ")");
    const std::uint64_t len = get_u64(bytes, pos, path);
    if (len != arch.layout.total_len)
        throw ArtifactMismatch(path + ": length " + std::to_string(len) + " != layout total " +
                               std::to_string(arch.layout.total_len));
    auto values = get_f32s(bytes, pos, len, path);
    return {Tensor<float>::from_data({static_cast<std::size_t>(len)}, std::move(values)), arch.layout,
            arch.hash};
}

void write_ngpc(const std::string& path, const CheckpointCorpus& corpus) {
    std::string out;
    out += kNgpcMagic;
    put_u64(out, corpus.arch_hash);
    put_u64(out, corpus.count());
    put_u64(out, corpus.layout.total_len);
    for (const auto& entry : corpus.entries) {
        put_f32s(out, entry.params.values.data());
        const std::string meta = meta_to_json(entry.meta).dump();
        put_u64(out, meta.size());
        out += meta;
    }
    write_file(path, out);
}

CheckpointCorpus read_ngpc(const std::string& path, const ArchSpec& arch) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    expect_magic(bytes, pos, kNgpcMagic, path);
    const std::uint64_t hash = get_u64(bytes, pos, path);
    if (hash != arch.hash)
        throw ArtifactMismatch(path + ": corpus for arch hash " + std::to_string(hash) +
                               ", expected '" + arch.name + "' (hash " + std::to_string(arch.hash) + ")");
    const std::uint64_t n = get_u64(bytes, pos, path);
    const std::uint64_t len = get_u64(bytes, pos, path);
    if (len != arch.layout.total_len)
        throw ArtifactMismatch(path + ": |w| " + std::to_string(len) + " != layout total " +
                               std::to_string(arch.layout.total_len));
    CheckpointCorpus corpus;
    corpus.arch_hash = arch.hash;
    corpus.layout = arch.layout;
    for (std::uint64_t i = 0; i < n; ++i) {
        auto values = get_f32s(bytes, pos, len, path);
        const std::uint64_t meta_len = get_u64(bytes, pos, path);
        if (pos + meta_len > bytes.size()) throw IoError(path + ": truncated metadata in record " + std::to_string(i));
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.substr(pos, meta_len));
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ": bad metadata in record " + std::to_string(i) + ": " + e.what());
        }
        pos += meta_len;
        corpus.entries.push_back(
            {{Tensor<float>::from_data({static_cast<std::size_t>(len)}, std::move(values)), arch.layout,
              arch.hash},
             meta_from_json(j)});
    }
    return corpus;
}

}  // namespace ng
