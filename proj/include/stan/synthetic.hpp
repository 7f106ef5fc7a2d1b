#pragma once
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "stan/errors.hpp"
#include "stan/io.hpp"
#include "stan/tensor.hpp"
#include "stan/theta.hpp"
#include "stan/warp.hpp"

namespace stan {

// Synthetic clip family: a Gaussian blob whose trajectory direction encodes
// the class, warped per sample by a random "camera viewpoint" transform whose
// ground truth is stored alongside. The desk-scale stand-in for real video.
struct SyntheticSpec {
    int num_classes = 4;
    std::int64_t channels = 1, frames = 8, height = 16, width = 16;
    int samples = 48;

    double blob_sigma = 0.18;       // normalized units
    double motion_extent = 0.35;    // blob sweep around its start position
    double start_jitter = 0.2;
    double speed_jitter = 0.15;
    double motion_angle_offset = 0.0;  // rotates the class direction family
    double noise_sigma = 0.01;

    // bounds on the random ParamVec entries of the per-sample perturbation
    double max_translation = 0.3;
    double max_linear = 0.0;

    double min_mass_kept = 0.6;
    int rejection_budget = 200;
    std::uint64_t seed = 1;
};

template <typename T>
struct Sample {
    Tensor5<T> clip;   // perturbed render + noise, (1,C,T,H,W)
    Tensor5<T> clean;  // unperturbed render
    Theta<T> gt_theta;
    int label = 0;
};

template <typename T>
struct Dataset {
    SyntheticSpec spec;
    std::vector<Sample<T>> samples;
};

namespace detail {

template <typename T>
Tensor5<T> render_motion_clip(const SyntheticSpec& spec, int label, std::mt19937_64& rng) {
    const double angle =
        2.0 * M_PI * double(label) / double(spec.num_classes) + spec.motion_angle_offset;
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const double sx = spec.start_jitter * jitter(rng);
    const double sy = spec.start_jitter * jitter(rng);
    const double extent = spec.motion_extent * (1.0 + spec.speed_jitter * jitter(rng));
    const double dx = std::cos(angle), dy = std::sin(angle);

    Tensor5<T> clip({1, spec.channels, spec.frames, spec.height, spec.width}, T(0));
    for (std::int64_t t = 0; t < spec.frames; ++t) {
        const double tau = spec.frames > 1 ? -1.0 + 2.0 * double(t) / double(spec.frames - 1) : 0.0;
        const double px = sx + dx * extent * tau;
        const double py = sy + dy * extent * tau;
        for (std::int64_t c = 0; c < spec.channels; ++c) {
            const double sigma = spec.blob_sigma * (1.0 + 0.25 * double(c));
            const double inv = 1.0 / (2.0 * sigma * sigma);
            for (std::int64_t h = 0; h < spec.height; ++h) {
                const double y = normalized_coord<double>(h, spec.height);
                for (std::int64_t w = 0; w < spec.width; ++w) {
                    const double x = normalized_coord<double>(w, spec.width);
                    const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                    clip.at(0, c, t, h, w) = static_cast<T>(std::exp(-d2 * inv));
                }
            }
        }
    }
    return clip;
}

template <typename T>
Theta<T> random_perturbation(const SyntheticSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> lin(-spec.max_linear, spec.max_linear);
    std::uniform_real_distribution<double> tr(-spec.max_translation, spec.max_translation);
    std::vector<T> p(12, T(0));
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c)
            p[static_cast<size_t>(r * 4 + c)] =
                spec.max_linear > 0.0 ? static_cast<T>(lin(rng)) : T(0);
        p[static_cast<size_t>(r * 4 + 3)] =
            spec.max_translation > 0.0 ? static_cast<T>(tr(rng)) : T(0);
    }
    return build_affine_theta(ParamVec<T>(ParamMode::Affine12, std::move(p)));
}

}  // namespace detail

// Deterministic given the spec seed. Classes cycle through sample indices so
// every prefix is balanced within one sample per class.
template <typename T>
Dataset<T> gen_dataset(const SyntheticSpec& spec) {
    if (spec.num_classes < 1 || spec.samples < 1)
        throw ConfigError("gen_dataset: need at least one class and one sample");
    Dataset<T> data;
    data.spec = spec;
    data.samples.reserve(static_cast<size_t>(spec.samples));
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (int i = 0; i < spec.samples; ++i) {
        Sample<T> sample;
        sample.label = i % spec.num_classes;
        sample.clean = detail::render_motion_clip<T>(spec, sample.label, rng);
        const double clean_mass = static_cast<double>(sum(sample.clean));

        Tensor5<T> warped;
        bool accepted = false;
        for (int attempt = 0; attempt < spec.rejection_budget; ++attempt) {
            sample.gt_theta = detail::random_perturbation<T>(spec, rng);
            warped = warp(sample.gt_theta, sample.clean);
            if (static_cast<double>(sum(warped)) >= spec.min_mass_kept * clean_mass) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw ConfigError("gen_dataset: perturbation rejection budget exceeded; "
                              "mass bound " + std::to_string(spec.min_mass_kept) +
                              " is unreachable for this spec");
        if (spec.noise_sigma > 0.0)
            for (auto& v : warped.data) v += static_cast<T>(noise(rng));
        sample.clip = std::move(warped);
        data.samples.push_back(std::move(sample));
    }
    return data;
}

// Contiguous index split: [0, count) for training, the rest for evaluation.
template <typename T>
Dataset<T> slice_dataset(const Dataset<T>& data, size_t begin, size_t end) {
    Dataset<T> out;
    out.spec = data.spec;
    for (size_t i = begin; i < end && i < data.samples.size(); ++i)
        out.samples.push_back(data.samples[i]);
    return out;
}

// On-disk cache: a text manifest (count, classes, then one "label theta..."
// line per sample) followed by clip and clean snapshots per sample.
template <typename T>
void save_dataset(const std::string& path, const Dataset<T>& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "STAN_DATASET 1 " << data.samples.size() << " " << data.spec.num_classes << "\n";
    for (const auto& s : data.samples)
        f << s.label << " " << theta_to_string(s.gt_theta) << "\n";
    for (const auto& s : data.samples) {
        const std::string clip = tensor_snapshot_bytes(s.clip);
        const std::string clean = tensor_snapshot_bytes(s.clean);
        f.write(clip.data(), static_cast<std::streamsize>(clip.size()));
        f.write(clean.data(), static_cast<std::streamsize>(clean.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

template <typename T>
Dataset<T> load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    int version = 0;
    size_t count = 0;
    Dataset<T> data;
    f >> magic >> version >> count >> data.spec.num_classes;
    if (magic != "STAN_DATASET" || version != 1) throw IoError("not a dataset file: " + path);
    data.samples.resize(count);
    for (auto& s : data.samples) {
        f >> s.label;
        std::string theta_text;
        for (int i = 0; i < 16; ++i) {
            std::string tok;
            f >> tok;
            theta_text += tok + " ";
        }
        s.gt_theta = theta_from_string<T>(theta_text);
    }
    f.ignore(1, '\n');
    for (auto& s : data.samples) {
        for (Tensor5<T>* dst : {&s.clip, &s.clean}) {
            std::array<unsigned char, 20> header{};
            f.read(reinterpret_cast<char*>(header.data()), 20);
            if (!f) throw IoError("dataset blob truncated: " + path);
            Shape5 shape;
            for (int i = 0; i < 5; ++i)
                shape[static_cast<size_t>(i)] =
                    static_cast<std::int64_t>(detail::get_u32_le(header.data() + 4 * i));
            const std::int64_t vol = Tensor5<T>::checked_volume(shape);
            std::vector<unsigned char> bytes(20 + static_cast<size_t>(vol) * 4);
            std::copy(header.begin(), header.end(), bytes.begin());
            f.read(reinterpret_cast<char*>(bytes.data() + 20),
                   static_cast<std::streamsize>(vol * 4));
            if (!f) throw IoError("dataset blob truncated: " + path);
            *dst = tensor_from_snapshot_bytes<T>(bytes.data(), bytes.size());
        }
    }
    if (data.samples.empty()) return data;
    data.spec.channels = data.samples[0].clip.c();
    data.spec.frames = data.samples[0].clip.t();
    data.spec.height = data.samples[0].clip.h();
    data.spec.width = data.samples[0].clip.w();
    data.spec.samples = static_cast<int>(count);
    return data;
}

}  // namespace stan
