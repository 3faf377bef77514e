#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sift/fragmenter.hpp"

namespace sift {

inline constexpr std::size_t kByteValues = 256;

/// Occurrence counts of each byte value in one fragment; counts sum to the
/// fragment size.
struct ByteHistogram {
    std::array<std::uint32_t, kByteValues> counts{};
};

inline ByteHistogram byte_histogram(std::span<const std::uint8_t> fragment) {
    ByteHistogram histogram;
    for (std::uint8_t b : fragment) {
        ++histogram.counts[b];
    }
    return histogram;
}

/// Document-frequency statistics over a fitted fragment corpus: doc_freq[v]
/// is the number of fragments containing byte value v at least once, and
/// total_fragments is the corpus size the stats were fitted on.
struct DocFreqStats {
    std::array<std::uint64_t, kByteValues> doc_freq{};
    std::uint64_t total_fragments = 0;
};

namespace detail {

inline void accumulate_presence(DocFreqStats& stats, std::span<const std::uint8_t> bytes) {
    std::array<bool, kByteValues> present{};
    for (std::uint8_t b : bytes) {
        present[b] = true;
    }
    for (std::size_t v = 0; v < kByteValues; ++v) {
        if (present[v]) {
            ++stats.doc_freq[v];
        }
    }
    ++stats.total_fragments;
}

} // namespace detail

inline DocFreqStats fit_doc_freq(const std::vector<Fragment>& fragments) {
    if (fragments.empty()) {
        throw std::invalid_argument("fit_doc_freq: empty fragment list");
    }
    DocFreqStats stats;
    for (const auto& fragment : fragments) {
        detail::accumulate_presence(stats, fragment.bytes);
    }
    return stats;
}

/// Fits on the subset of fragments selected by `subset` (indices into
/// `fragments`), e.g. one cross-validation training split.
inline DocFreqStats fit_doc_freq(const std::vector<Fragment>& fragments,
                                 std::span<const std::uint32_t> subset) {
    if (subset.empty()) {
        throw std::invalid_argument("fit_doc_freq: empty fragment subset");
    }
    DocFreqStats stats;
    for (std::uint32_t index : subset) {
        detail::accumulate_presence(stats, fragments.at(index).bytes);
    }
    return stats;
}

/// Term frequency of byte value v: its count divided by the fragment size.
inline double tf(const ByteHistogram& histogram, unsigned value, std::size_t fragment_size) {
    return static_cast<double>(histogram.counts[value]) / static_cast<double>(fragment_size);
}

/// Inverse document frequency of byte value v: ln(N / K_v). A value unseen
/// during fitting (K_v = 0) gets 0 rather than infinity; a test fragment
/// containing it then carries zero weight for that byte.
inline double idf(const DocFreqStats& stats, unsigned value) {
    if (stats.total_fragments < 1) {
        throw std::invalid_argument("idf: stats not fitted");
    }
    const std::uint64_t k = stats.doc_freq[value];
    if (k == 0) {
        return 0.0;
    }
    return std::log(static_cast<double>(stats.total_fragments) / static_cast<double>(k));
}

/// 256 non-negative per-byte weights; the classifier's input row.
using FeatureVector = std::array<double, kByteValues>;

/// W_v = TF_v x IDF_v for each of the 256 byte values. Zeros stay exact:
/// a byte absent from the fragment or present in every fitted fragment
/// contributes nothing.
inline FeatureVector weight_vector(std::span<const std::uint8_t> fragment,
                                   const DocFreqStats& stats) {
    if (fragment.empty()) {
        throw std::invalid_argument("weight_vector: empty fragment");
    }
    const ByteHistogram histogram = byte_histogram(fragment);
    FeatureVector weights{};
    for (std::size_t v = 0; v < kByteValues; ++v) {
        if (histogram.counts[v] == 0) {
            continue;
        }
        weights[v] = tf(histogram, static_cast<unsigned>(v), fragment.size()) *
                     idf(stats, static_cast<unsigned>(v));
    }
    return weights;
}

struct FeatureMatrix {
    std::vector<FeatureVector> rows;
};

inline FeatureMatrix vectorize_all(const std::vector<Fragment>& fragments,
                                   const DocFreqStats& stats) {
    FeatureMatrix matrix;
    matrix.rows.reserve(fragments.size());
    for (const auto& fragment : fragments) {
        matrix.rows.push_back(weight_vector(fragment.bytes, stats));
    }
    return matrix;
}

inline FeatureMatrix vectorize_all(const std::vector<Fragment>& fragments,
                                   std::span<const std::uint32_t> subset,
                                   const DocFreqStats& stats) {
    FeatureMatrix matrix;
    matrix.rows.reserve(subset.size());
    for (std::uint32_t index : subset) {
        matrix.rows.push_back(weight_vector(fragments.at(index).bytes, stats));
    }
    return matrix;
}

/// CSV export: 256 columns b00..bff plus a trailing label column.
inline std::string feature_matrix_csv(const FeatureMatrix& matrix,
                                      std::span<const std::uint16_t> label_ids,
                                      const std::vector<ClassLabel>& labels) {
    if (matrix.rows.size() != label_ids.size()) {
        throw std::invalid_argument("feature_matrix_csv: row/label count mismatch");
    }
    std::string out;
    char buf[64];
    for (std::size_t v = 0; v < kByteValues; ++v) {
        std::snprintf(buf, sizeof buf, "b%02zx,", v);
        out += buf;
    }
    out += "label\n";
    for (std::size_t row = 0; row < matrix.rows.size(); ++row) {
        for (std::size_t v = 0; v < kByteValues; ++v) {
            std::snprintf(buf, sizeof buf, "%.17g,", matrix.rows[row][v]);
            out += buf;
        }
        out += labels.at(label_ids[row]).str();
        out += '\n';
    }
    return out;
}

} // namespace sift
