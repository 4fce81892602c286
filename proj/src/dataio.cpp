// SPDX-License-Identifier: Apache-2.0
#include "neurogen/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "neurogen/errors.hpp"

namespace ng {

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError(path + ": truncated header at byte " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::vector<std::int64_t> normalize_labels(std::vector<std::int64_t> raw,
                                           std::optional<std::size_t> expected_classes,
                                           const std::string& origin) {
    if (raw.empty()) throw IoError(origin + ": no samples");
    const auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
    std::int64_t mn = *mn_it, mx = *mx_it;
    if (mn == 1) {  // 1-based label files shift down
        for (auto& l : raw) --l;
        --mn;
        --mx;
    }
    if (mn < 0) throw IoError(origin + ": negative label " + std::to_string(mn));
    const std::size_t classes = expected_classes ? *expected_classes : static_cast<std::size_t>(mx) + 1;
    if (static_cast<std::size_t>(mx) >= classes)
        throw IoError(origin + ": label " + std::to_string(mx) + " outside [0," + std::to_string(classes) + ")");
    return raw;
}

}  // namespace

DatasetHandle load_idx(const std::string& images_path, const std::string& labels_path,
                       std::optional<std::size_t> downsample_to, const std::string& split,
                       std::optional<std::size_t> expected_classes) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError(images_path + ": cannot open");
    const std::uint32_t img_magic = read_u32_be(imgs, images_path, 0);
    if (img_magic != 0x00000803)
        throw IoError(images_path + ": bad magic 0x" + std::to_string(img_magic) + " at byte 0, want 0x803");
    const std::size_t count = read_u32_be(imgs, images_path, 4);
    const std::size_t h = read_u32_be(imgs, images_path, 8);
    const std::size_t w = read_u32_be(imgs, images_path, 12);
    std::vector<unsigned char> raw(count * h * w);
    if (!imgs.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw IoError(images_path + ": truncated pixel data after byte 16");

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw IoError(labels_path + ": cannot open");
    const std::uint32_t lab_magic = read_u32_be(labs, labels_path, 0);
    if (lab_magic != 0x00000801)
        throw IoError(labels_path + ": bad magic 0x" + std::to_string(lab_magic) + " at byte 0, want 0x801");
    const std::size_t lab_count = read_u32_be(labs, labels_path, 4);
    if (lab_count != count)
        throw IoError(labels_path + ": " + std::to_string(lab_count) + " labels for " +
                      std::to_string(count) + " images");
    std::vector<unsigned char> lab_raw(count);
    if (!labs.read(reinterpret_cast<char*>(lab_raw.data()), static_cast<std::streamsize>(count)))
        throw IoError(labels_path + ": truncated label data after byte 8");

    std::size_t side_h = h, side_w = w;
    if (downsample_to) {
        if (*downsample_to == 0 || h % *downsample_to != 0 || w % *downsample_to != 0)
            throw ConfigError(images_path + ": cannot downsample " + std::to_string(h) + "x" +
                              std::to_string(w) + " to " + std::to_string(*downsample_to));
        side_h = side_w = *downsample_to;
    }

    DatasetHandle out;
    out.id = images_path;
    out.modality = Modality::image;
    out.split = split;
    out.input_shape = {1, side_h, side_w};
    out.dense.resize(count * side_h * side_w);

    const std::size_t fy = h / side_h, fx = w / side_w;
    const float inv255 = 1.0f / 255.0f;
    const float inv_area = 1.0f / static_cast<float>(fy * fx);
    for (std::size_t n = 0; n < count; ++n) {
        const unsigned char* src = raw.data() + n * h * w;
        float* dst = out.dense.data() + n * side_h * side_w;
        for (std::size_t y = 0; y < side_h; ++y) {
            for (std::size_t x = 0; x < side_w; ++x) {
                float acc = 0.0f;
                for (std::size_t dy = 0; dy < fy; ++dy)
                    for (std::size_t dx = 0; dx < fx; ++dx)
                        acc += static_cast<float>(src[(y * fy + dy) * w + x * fx + dx]);
                dst[y * side_w + x] = acc * inv_area * inv255;
            }
        }
    }

    std::vector<std::int64_t> labels(lab_raw.begin(), lab_raw.end());
    out.labels = normalize_labels(std::move(labels), expected_classes, labels_path);
    out.num_classes = expected_classes
                          ? *expected_classes
                          : static_cast<std::size_t>(*std::max_element(out.labels.begin(), out.labels.end())) + 1;
    return out;
}

DatasetHandle load_text_csv(const std::string& path, std::size_t max_len, const std::string& split,
                            std::optional<std::size_t> expected_classes) {
    std::ifstream in(path);
    if (!in) throw IoError(path + ": cannot open");

    DatasetHandle out;
    out.id = path;
    out.modality = Modality::text;
    out.split = split;
    out.input_shape = {max_len};

    std::vector<std::int64_t> raw_labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        // Split into fields honouring double quotes with "" escapes.
        std::vector<std::string> fields;
        std::string cur;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"') {
                    if (i + 1 < line.size() && line[i + 1] == '"') {
                        cur.push_back('"');
                        ++i;
                    } else {
                        quoted = false;
                    }
                } else {
                    cur.push_back(c);
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                fields.push_back(std::move(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        fields.push_back(std::move(cur));
        if (quoted) throw IoError(path + ":" + std::to_string(line_no) + ": unterminated quote");
        if (fields.size() < 2)
            throw IoError(path + ":" + std::to_string(line_no) + ": expected label,text");

        std::int64_t label;
        try {
            std::size_t used = 0;
            label = std::stoll(fields[0], &used);
            if (used != fields[0].size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(line_no) + ": bad label '" + fields[0] + "'");
        }

        std::string text = fields[1];
        for (std::size_t f = 2; f < fields.size(); ++f) {
            text += " ";
            text += fields[f];
        }
        if (text.empty()) throw IoError(path + ":" + std::to_string(line_no) + ": empty text");

        auto ids = tokenize(text);
        const std::size_t len = std::min(ids.size(), max_len);
        for (std::size_t i = 0; i < max_len; ++i)
            out.tokens.push_back(i < len ? ids[i] : kPadToken);
        out.lengths.push_back(static_cast<std::int64_t>(len));
        raw_labels.push_back(label);
    }

    out.labels = normalize_labels(std::move(raw_labels), expected_classes, path);
    out.num_classes = expected_classes
                          ? *expected_classes
                          : static_cast<std::size_t>(*std::max_element(out.labels.begin(), out.labels.end())) + 1;
    return out;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, std::size_t dim,
                    double separation, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("synth_blobs: need k >= 2");
    if (separation <= 0) throw ConfigError("synth_blobs: separation must be > 0");

    Rng rng = Rng(seed).stream("blobs");

    // Rejection-sample centers until all pairwise distances clear the bar.
    std::vector<std::vector<double>> centers;
    double box = std::max(4.0, separation) * 2.0;
    std::size_t attempts = 0;
    while (centers.size() < num_classes) {
        std::vector<double> c(dim);
        for (auto& v : c) v = (rng.uniform() * 2.0 - 1.0) * box;
        bool ok = true;
        for (const auto& other : centers) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < dim; ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
            ok = ok && std::sqrt(d2) >= separation;
        }
        if (ok) {
            centers.push_back(std::move(c));
        } else if (++attempts % 100 == 0) {
            box *= 1.5;
        }
    }

    const std::size_t total = num_classes * n_per_class;
    std::vector<float> points(total * dim);
    std::vector<std::int64_t> labels(total);
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t j = 0; j < n_per_class; ++j) {
            const std::size_t n = k * n_per_class + j;
            labels[n] = static_cast<std::int64_t>(k);
            for (std::size_t i = 0; i < dim; ++i)
                points[n * dim + i] = static_cast<float>(centers[k][i] + rng.normal());
        }
    }

    // Per-class 80/20 split keeps priors exact in both splits, then a global
    // shuffle of each split fixes the sample order.
    const std::size_t train_per_class = (n_per_class * 8 + 9) / 10;
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t k = 0; k < num_classes; ++k) {
        std::vector<std::size_t> idx(n_per_class);
        for (std::size_t j = 0; j < n_per_class; ++j) idx[j] = k * n_per_class + j;
        rng.shuffle(idx);
        for (std::size_t j = 0; j < n_per_class; ++j)
            (j < train_per_class ? train_idx : test_idx).push_back(idx[j]);
    }
    rng.shuffle(train_idx);
    rng.shuffle(test_idx);

    auto build = [&](const std::vector<std::size_t>& idx, const char* split) {
        DatasetHandle h;
        h.id = "blobs-k" + std::to_string(num_classes) + "-d" + std::to_string(dim) + "-s" +
               std::to_string(seed);
        h.modality = Modality::image;
        h.split = split;
        h.num_classes = num_classes;
        h.input_shape = {dim};
        h.dense.reserve(idx.size() * dim);
        for (std::size_t n : idx) {
            h.dense.insert(h.dense.end(), points.begin() + static_cast<std::ptrdiff_t>(n * dim),
                           points.begin() + static_cast<std::ptrdiff_t>((n + 1) * dim));
            h.labels.push_back(labels[n]);
        }
        return h;
    };
    return {build(train_idx, "train"), build(test_idx, "test")};
}

DatasetHandle take_rows(const DatasetHandle& handle, std::span<const std::size_t> rows) {
    DatasetHandle out;
    out.id = handle.id;
    out.modality = handle.modality;
    out.split = handle.split;
    out.num_classes = handle.num_classes;
    out.input_shape = handle.input_shape;
    const std::size_t k = handle.sample_numel();
    for (std::size_t r : rows) {
        if (r >= handle.size()) throw ConfigError("take_rows: index out of range");
        if (handle.modality == Modality::image) {
            out.dense.insert(out.dense.end(), handle.dense.begin() + static_cast<std::ptrdiff_t>(r * k),
                             handle.dense.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
        } else {
            out.tokens.insert(out.tokens.end(), handle.tokens.begin() + static_cast<std::ptrdiff_t>(r * k),
                              handle.tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
            out.lengths.push_back(handle.lengths[r]);
        }
        out.labels.push_back(handle.labels[r]);
    }
    return out;
}

DatasetHandle sample_subset(const DatasetHandle& handle, std::size_t m, Rng& rng) {
    if (m > handle.size())
        throw ConfigError("sample_subset: m=" + std::to_string(m) + " exceeds split size " +
                          std::to_string(handle.size()));
    // Partial Fisher-Yates: the first m slots are a uniform draw without
    // replacement.
    std::vector<std::size_t> idx(handle.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(idx.size())));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return take_rows(handle, idx);
}

DatasetHandle sample_subset(const DatasetHandle& handle, std::size_t m, std::uint64_t seed) {
    Rng rng = Rng(seed).stream("subset");
    return sample_subset(handle, m, rng);
}

template <typename T>
Tensor<T> dense_batch(const DatasetHandle& handle, std::span<const std::size_t> rows) {
    if (handle.modality != Modality::image)
        throw ShapeError("dense_batch: dataset '" + handle.id + "' is not dense");
    const std::size_t k = handle.sample_numel();
    std::vector<T> data;
    data.reserve(rows.size() * k);
    for (std::size_t r : rows)
        for (std::size_t i = 0; i < k; ++i) data.push_back(static_cast<T>(handle.dense[r * k + i]));
    Shape shape{rows.size()};
    shape.insert(shape.end(), handle.input_shape.begin(), handle.input_shape.end());
    return Tensor<T>::from_data(std::move(shape), std::move(data));
}

TokenBatch token_batch(const DatasetHandle& handle, std::span<const std::size_t> rows) {
    if (handle.modality != Modality::text)
        throw ShapeError("token_batch: dataset '" + handle.id + "' is not tokenized");
    TokenBatch b;
    b.batch = rows.size();
    b.len = handle.input_shape[0];
    for (std::size_t r : rows) {
        b.ids.insert(b.ids.end(), handle.tokens.begin() + static_cast<std::ptrdiff_t>(r * b.len),
                     handle.tokens.begin() + static_cast<std::ptrdiff_t>((r + 1) * b.len));
        b.lengths.push_back(handle.lengths[r]);
    }
    return b;
}

std::vector<std::int64_t> label_batch(const DatasetHandle& handle, std::span<const std::size_t> rows) {
    std::vector<std::int64_t> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(handle.labels[r]);
    return out;
}

std::vector<std::size_t> all_rows(const DatasetHandle& handle) {
    std::vector<std::size_t> idx(handle.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

template Tensor<float> dense_batch<float>(const DatasetHandle&, std::span<const std::size_t>);
template Tensor<double> dense_batch<double>(const DatasetHandle&, std::span<const std::size_t>);

}  // namespace ng
