// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurogen/rng.hpp"
#include "neurogen/tensor.hpp"
#include "neurogen/tokenizer.hpp"

namespace ng {

enum class Modality : std::uint8_t { image, text };

// One split of a dataset.  Dense samples live in `dense`, token samples in
// `tokens`/`lengths` (right-padded to seq_len with kPadToken).  Immutable
// after load.
struct DatasetHandle {
    std::string id;
    Modality modality = Modality::image;
    std::string split = "train";
    std::size_t num_classes = 0;
    Shape input_shape;  // per sample: {C,H,W}, {D}, or {L}

    std::vector<float> dense;
    std::vector<std::int64_t> tokens;
    std::vector<std::int64_t> lengths;
    std::vector<std::int64_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_numel() const { return shape_numel(input_shape); }
};

struct Dataset {
    DatasetHandle train;
    DatasetHandle test;
};

// IDX image/label pair (big-endian headers per the standard).  Pixels scale
// to [0,1]; optional area-average downsampling to side x side.
DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<std::size_t> downsample_to, const std::string& split,
                       std::optional<std::size_t> expected_classes = {});

// "label,text" rows with optional quoting; extra quoted fields join into the
// text.  Labels may be 0- or 1-based in the file and normalize to [0,K).
DatasetHandle load_text_csv(const std::string& path, std::size_t max_len, const std::string& split,
                            std::optional<std::size_t> expected_classes = {});

// Seeded Gaussian clusters with pairwise center distance >= separation
// (cluster stddev 1), equal class sizes, deterministic 80/20 split.
Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                    double separation, std::uint64_t seed);

// Uniform sample of m distinct rows, order given by the draw.
DatasetHandle sample_subset(const DatasetHandle& handle, std::size_t m, std::uint64_t seed);
DatasetHandle sample_subset(const DatasetHandle& handle, std::size_t m, Rng& rng);

// Row gather helpers for batching.
DatasetHandle take_rows(const DatasetHandle& handle, std::span<const std::size_t> rows);

template <typename T>
Tensor<T> dense_batch(const DatasetHandle& handle, std::span<const std::size_t> rows);

struct TokenBatch {
    std::vector<std::int64_t> ids;      // [batch * len]
    std::vector<std::int64_t> lengths;  // [batch]
    std::size_t batch = 0;
    std::size_t len = 0;
};

TokenBatch token_batch(const DatasetHandle& handle, std::span<const std::size_t> rows);

std::vector<std::int64_t> label_batch(const DatasetHandle& handle, std::span<const std::size_t> rows);

std::vector<std::size_t> all_rows(const DatasetHandle& handle);

}  // namespace ng
