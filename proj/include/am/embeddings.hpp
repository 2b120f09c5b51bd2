#pragma once

// Embedding sets: the AMEB on-disk format, synthetic Gaussian generation, and
// the l2 / PLC feature pre-processing applied before every episode solve.
//
// AMEB layout (little-endian, no padding, no footer):
//   bytes 0-3   magic "AMEB"
//   bytes 4-7   u32 version = 1
//   bytes 8-11  u32 d        (embedding dimension)
//   bytes 12-19 u64 n        (number of records)
//   bytes 20-23 u32 num_classes
//   then n records: u32 label, d * f32 values
//
// Storage is float32; all in-memory computation is float64.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "am/errors.hpp"
#include "am/rng.hpp"

namespace am {

struct EmbeddingSet {
    int dim = 0;
    Eigen::MatrixXd vectors;            // dim x n, one column per example
    std::vector<std::uint32_t> labels;  // length n, each < num_classes
    std::uint32_t num_classes = 0;
    std::vector<std::string> class_names;  // optional, not persisted

    Eigen::Index count() const { return vectors.cols(); }
};

struct SynthConfig {
    std::uint32_t num_classes = 5;
    int dim = 16;
    int per_class = 100;
    double class_sep = 4.0;   // means at class_sep * e_c, pairwise distance class_sep * sqrt(2)
    double noise_sigma = 1.0; // isotropic within-class std
    std::uint64_t seed = 0;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingSet& set) {
    const auto n = static_cast<std::uint64_t>(set.vectors.cols());
    const auto d = static_cast<std::uint32_t>(set.dim);
    std::string out;
    out.reserve(24 + n * (4 + 4 * d));
    out += "AMEB";
    detail::put_u32(out, 1u);
    detail::put_u32(out, d);
    detail::put_u64(out, n);
    detail::put_u32(out, set.num_classes);
    for (std::uint64_t i = 0; i < n; ++i) {
        detail::put_u32(out, set.labels[i]);
        for (std::uint32_t r = 0; r < d; ++r) {
            const auto f = static_cast<float>(set.vectors(r, static_cast<Eigen::Index>(i)));
            detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
        }
    }
    return out;
}

inline EmbeddingSet decode_embeddings(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 24) throw DataError(origin + ": truncated file (header incomplete)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, "AMEB", 4) != 0) throw DataError(origin + ": bad magic");
    const std::uint32_t version = detail::get_u32(p + 4);
    if (version != 1) throw DataError(origin + ": unsupported version " + std::to_string(version));
    const std::uint32_t d = detail::get_u32(p + 8);
    const std::uint64_t n = detail::get_u64(p + 12);
    const std::uint32_t num_classes = detail::get_u32(p + 20);
    if (d == 0 || n == 0) throw DataError(origin + ": empty set (d and n must be positive)");
    const std::uint64_t record = 4 + 4ull * d;
    if (n > (std::numeric_limits<std::uint64_t>::max() - 24) / record)
        throw DataError(origin + ": truncated file (record count exceeds the file)");
    const std::uint64_t expect = 24 + n * record;
    if (bytes.size() < expect) throw DataError(origin + ": truncated file");
    if (bytes.size() > expect) throw DataError(origin + ": trailing bytes after last record");

    EmbeddingSet set;
    set.dim = static_cast<int>(d);
    set.num_classes = num_classes;
    set.vectors.resize(d, static_cast<Eigen::Index>(n));
    set.labels.resize(n);
    const unsigned char* rec = p + 24;
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint32_t label = detail::get_u32(rec);
        if (label >= num_classes)
            throw DataError(origin + ": record " + std::to_string(i) + " has label " +
                            std::to_string(label) + " >= num_classes " + std::to_string(num_classes));
        set.labels[i] = label;
        rec += 4;
        for (std::uint32_t r = 0; r < d; ++r) {
            const float f = std::bit_cast<float>(detail::get_u32(rec));
            if (!std::isfinite(f))
                throw DataError(origin + ": non-finite value in record " + std::to_string(i));
            set.vectors(r, static_cast<Eigen::Index>(i)) = static_cast<double>(f);
            rec += 4;
        }
    }
    return set;
}

inline EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw DataError(path + ": read failure");
    return decode_embeddings(bytes, path);
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path) {
    const std::string bytes = encode_embeddings(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out.good()) throw DataError(path + ": write failure");
}

/// Gaussian mixture with means class_sep * e_c. Deterministic given cfg.seed.
inline EmbeddingSet synth_gaussian(const SynthConfig& cfg) {
    if (cfg.num_classes == 0 || cfg.dim <= 0 || cfg.per_class <= 0)
        throw std::invalid_argument("synth_gaussian: num_classes, dim, per_class must be positive");
    if (cfg.class_sep <= 0 || cfg.noise_sigma <= 0)
        throw std::invalid_argument("synth_gaussian: class_sep and noise_sigma must be positive");
    if (cfg.num_classes > static_cast<std::uint32_t>(cfg.dim))
        throw std::invalid_argument(
            "synth_gaussian: num_classes > dim would collapse class means (means are class_sep*e_c)");

    const Eigen::Index n = static_cast<Eigen::Index>(cfg.num_classes) * cfg.per_class;
    EmbeddingSet set;
    set.dim = cfg.dim;
    set.num_classes = cfg.num_classes;
    set.vectors.resize(cfg.dim, n);
    set.labels.resize(static_cast<std::size_t>(n));

    std::mt19937_64 rng(splitmix64(cfg.seed));
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    Eigen::Index col = 0;
    for (std::uint32_t c = 0; c < cfg.num_classes; ++c) {
        for (int i = 0; i < cfg.per_class; ++i, ++col) {
            for (int r = 0; r < cfg.dim; ++r)
                set.vectors(r, col) = (static_cast<std::uint32_t>(r) == c ? cfg.class_sep : 0.0) + noise(rng);
            set.labels[static_cast<std::size_t>(col)] = c;
        }
    }
    return set;
}

/// Unit-normalize every column. Errors on a zero column, naming its index.
inline Eigen::MatrixXd preprocess_l2(const Eigen::MatrixXd& vectors) {
    Eigen::MatrixXd out = vectors;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double norm = out.col(j).norm();
        if (norm == 0.0)
            throw NumericError("preprocess_l2: column " + std::to_string(j) + " has zero norm");
        out.col(j) /= norm;
    }
    return out;
}

/// PLC: signed elementwise square root, l2-normalization, then centering by the
/// mean over all columns. The signed power reduces to v^0.5 on non-negative input.
inline Eigen::MatrixXd preprocess_plc(const Eigen::MatrixXd& vectors) {
    Eigen::MatrixXd out =
        vectors.unaryExpr([](double v) { return v < 0 ? -std::sqrt(-v) : std::sqrt(v); });
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double norm = out.col(j).norm();
        if (norm == 0.0)
            throw NumericError("preprocess_plc: column " + std::to_string(j) +
                               " has zero norm after power transform");
        out.col(j) /= norm;
    }
    const Eigen::VectorXd mean = out.rowwise().mean();
    out.colwise() -= mean;
    return out;
}

}  // namespace am
