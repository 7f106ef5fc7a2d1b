#pragma once
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "stan/errors.hpp"
#include "stan/tensor.hpp"

namespace stan {

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Tensor snapshot: 5 x u32 little-endian shape header followed by the
// elements as little-endian 32-bit floats.
template <typename T>
std::string tensor_snapshot_bytes(const Tensor5<T>& x) {
    std::string out;
    out.reserve(20 + x.data.size() * 4);
    for (int i = 0; i < 5; ++i)
        detail::put_u32_le(out, static_cast<std::uint32_t>(x.shape[static_cast<size_t>(i)]));
    for (const T& v : x.data)
        detail::put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

template <typename T>
Tensor5<T> tensor_from_snapshot_bytes(const unsigned char* bytes, size_t len) {
    if (len < 20) throw IoError("tensor snapshot: truncated header");
    Shape5 shape;
    for (int i = 0; i < 5; ++i)
        shape[static_cast<size_t>(i)] =
            static_cast<std::int64_t>(detail::get_u32_le(bytes + 4 * i));
    Tensor5<T> out(shape, T(0));
    if (len != 20 + out.data.size() * 4)
        throw IoError("tensor snapshot: payload size does not match shape header");
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<T>(
            std::bit_cast<float>(detail::get_u32_le(bytes + 20 + 4 * i)));
    return out;
}

template <typename T>
void save_tensor(const std::string& path, const Tensor5<T>& x) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    const std::string bytes = tensor_snapshot_bytes(x);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                      std::istreambuf_iterator<char>());
}

template <typename T>
Tensor5<T> load_tensor(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return tensor_from_snapshot_bytes<T>(bytes.data(), bytes.size());
}

// Checkpoint container: a text manifest (one "name N C T H W" line per
// buffer, in order) followed by the raw snapshot blobs in the same order.
template <typename T>
using NamedTensorList = std::vector<std::pair<std::string, const Tensor5<T>*>>;

template <typename T>
void save_checkpoint(const std::string& path, const NamedTensorList<T>& buffers) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "STAN_CKPT 1 " << buffers.size() << "\n";
    for (const auto& [name, tensor] : buffers) {
        f << name;
        for (int i = 0; i < 5; ++i) f << ' ' << tensor->shape[static_cast<size_t>(i)];
        f << "\n";
    }
    for (const auto& [name, tensor] : buffers) {
        const std::string bytes = tensor_snapshot_bytes(*tensor);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

template <typename T>
std::vector<std::pair<std::string, Tensor5<T>>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    int version = 0;
    size_t count = 0;
    f >> magic >> version >> count;
    if (magic != "STAN_CKPT" || version != 1)
        throw IoError("not a checkpoint file: " + path);
    std::vector<std::pair<std::string, Shape5>> manifest(count);
    for (size_t i = 0; i < count; ++i) {
        f >> manifest[i].first;
        for (int d = 0; d < 5; ++d) f >> manifest[i].second[static_cast<size_t>(d)];
    }
    f.ignore(1, '\n');
    if (!f) throw IoError("checkpoint manifest truncated: " + path);

    std::vector<std::pair<std::string, Tensor5<T>>> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const std::int64_t vol = Tensor5<T>::checked_volume(manifest[i].second);
        std::vector<unsigned char> bytes(20 + static_cast<size_t>(vol) * 4);
        f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("checkpoint blob truncated: " + path);
        Tensor5<T> tensor = tensor_from_snapshot_bytes<T>(bytes.data(), bytes.size());
        if (tensor.shape != manifest[i].second)
            throw IoError("checkpoint manifest/blob shape mismatch for " + manifest[i].first);
        out.emplace_back(manifest[i].first, std::move(tensor));
    }
    return out;
}

// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::string& path, std::int64_t h, std::int64_t w,
                      const std::vector<unsigned char>& pixels) {
    if (static_cast<std::int64_t>(pixels.size()) != h * w)
        throw IoError("write_pgm: pixel count does not match dimensions");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed: " + path);
}

// Min-max normalizes one frame to bytes; a constant frame maps to 0.
template <typename T>
std::vector<unsigned char> frame_to_bytes(const T* frame, std::int64_t h, std::int64_t w) {
    T lo = frame[0], hi = frame[0];
    for (std::int64_t i = 1; i < h * w; ++i) {
        lo = std::min(lo, frame[i]);
        hi = std::max(hi, frame[i]);
    }
    std::vector<unsigned char> out(static_cast<size_t>(h * w), 0);
    const T span = hi - lo;
    if (span > T(0)) {
        for (std::int64_t i = 0; i < h * w; ++i) {
            const T v = (frame[i] - lo) / span * T(255);
            out[static_cast<size_t>(i)] =
                static_cast<unsigned char>(v < T(0) ? 0 : (v > T(255) ? 255 : v + T(0.5)));
        }
    }
    return out;
}

// Metrics CSV row; formatting is pinned so reruns are byte-identical.
struct MetricsRow {
    std::string experiment;
    std::uint64_t seed = 0;
    std::int64_t epoch = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
};

inline std::string format_metric_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
}

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "experiment,seed,epoch,split,metric,value\n";
    for (const auto& r : rows) {
        out += r.experiment;
        out += ',' + std::to_string(r.seed);
        out += ',' + std::to_string(r.epoch);
        out += ',' + r.split;
        out += ',' + r.metric;
        out += ',' + format_metric_value(r.value);
        out += '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace stan
