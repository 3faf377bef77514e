#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sift/classifier.hpp"
#include "sift/features.hpp"
#include "sift/fragmenter.hpp"
#include "sift/rng.hpp"

namespace sift {

/// Whether document-frequency stats are fitted on each fold's training
/// split only, or once on the whole corpus (leaks test statistics into the
/// features; kept for whole-corpus calibration runs).
enum class StatsPolicy { per_fold, global };

/// Per-fragment fold index in [0, k).
struct FoldAssignment {
    std::vector<std::uint16_t> fold_of;
    std::uint16_t k = 0;
};

namespace detail {

inline void validate_k(std::size_t n, std::uint16_t k) {
    if (k < 2) {
        throw std::invalid_argument("k must be at least 2");
    }
    if (k > n) {
        throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " +
                                    std::to_string(n) + " items to split");
    }
}

} // namespace detail

/// Uniformly random partition into k folds whose sizes differ by at most
/// one (the first n mod k folds take the extra element).
inline FoldAssignment kfold_split(std::size_t n_fragments, std::uint16_t k, std::uint64_t seed) {
    detail::validate_k(n_fragments, k);
    std::vector<std::uint32_t> order(n_fragments);
    std::iota(order.begin(), order.end(), 0u);
    SeededRng rng(seed);
    rng.shuffle(order);

    FoldAssignment assignment;
    assignment.k = k;
    assignment.fold_of.resize(n_fragments);
    const std::size_t base = n_fragments / k;
    const std::size_t extra = n_fragments % k;
    std::size_t pos = 0;
    for (std::uint16_t fold = 0; fold < k; ++fold) {
        const std::size_t size = base + (fold < extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) {
            assignment.fold_of[order[pos++]] = fold;
        }
    }
    return assignment;
}

/// Stratified variant: items are grouped by label, shuffled within each
/// group, then dealt round-robin across the class-grouped sequence. Total
/// fold sizes still differ by at most one, and each class's count per fold
/// differs by at most one.
inline FoldAssignment kfold_split_stratified(std::span<const std::uint16_t> labels,
                                             std::uint16_t k, std::uint64_t seed) {
    detail::validate_k(labels.size(), k);
    const std::uint16_t n_labels =
        labels.empty() ? 0 : *std::ranges::max_element(labels) + 1;
    SeededRng rng(seed);
    std::vector<std::uint32_t> sequence;
    sequence.reserve(labels.size());
    for (std::uint16_t c = 0; c < n_labels; ++c) {
        std::vector<std::uint32_t> members;
        for (std::uint32_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == c) {
                members.push_back(i);
            }
        }
        rng.shuffle(members);
        sequence.insert(sequence.end(), members.begin(), members.end());
    }
    FoldAssignment assignment;
    assignment.k = k;
    assignment.fold_of.resize(labels.size());
    for (std::size_t pos = 0; pos < sequence.size(); ++pos) {
        assignment.fold_of[sequence[pos]] = static_cast<std::uint16_t>(pos % k);
    }
    return assignment;
}

/// Group-level variant: whole groups (files) are assigned to folds, so no
/// group straddles a train/test boundary. Fold sizes are near-equal in
/// groups, not in fragments.
inline FoldAssignment kfold_split_grouped(std::span<const std::uint32_t> group_of,
                                          std::uint16_t k, std::uint64_t seed) {
    std::vector<std::uint32_t> groups(group_of.begin(), group_of.end());
    std::ranges::sort(groups);
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    detail::validate_k(groups.size(), k);

    SeededRng rng(seed);
    std::vector<std::uint32_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0u);
    rng.shuffle(order);
    std::vector<std::uint16_t> fold_of_group(groups.size());
    const std::size_t base = groups.size() / k;
    const std::size_t extra = groups.size() % k;
    std::size_t pos = 0;
    for (std::uint16_t fold = 0; fold < k; ++fold) {
        const std::size_t size = base + (fold < extra ? 1 : 0);
        for (std::size_t i = 0; i < size; ++i) {
            fold_of_group[order[pos++]] = fold;
        }
    }

    FoldAssignment assignment;
    assignment.k = k;
    assignment.fold_of.resize(group_of.size());
    for (std::size_t i = 0; i < group_of.size(); ++i) {
        const auto it = std::ranges::lower_bound(groups, group_of[i]);
        assignment.fold_of[i] = fold_of_group[static_cast<std::size_t>(it - groups.begin())];
    }
    return assignment;
}

/// Rows are true classes, columns are predicted classes.
struct ConfusionMatrix {
    std::vector<ClassLabel> labels;
    std::vector<std::uint64_t> counts; // row-major |labels| x |labels|

    explicit ConfusionMatrix(std::vector<ClassLabel> label_set = {})
        : labels(std::move(label_set)), counts(labels.size() * labels.size(), 0) {}

    std::size_t size() const { return labels.size(); }

    std::uint64_t& at(std::size_t true_class, std::size_t predicted) {
        return counts[true_class * size() + predicted];
    }

    std::uint64_t at(std::size_t true_class, std::size_t predicted) const {
        return counts[true_class * size() + predicted];
    }

    std::uint64_t row_sum(std::size_t true_class) const {
        std::uint64_t sum = 0;
        for (std::size_t j = 0; j < size(); ++j) {
            sum += at(true_class, j);
        }
        return sum;
    }

    std::uint64_t col_sum(std::size_t predicted) const {
        std::uint64_t sum = 0;
        for (std::size_t i = 0; i < size(); ++i) {
            sum += at(i, predicted);
        }
        return sum;
    }

    std::uint64_t total() const {
        return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    }
};

struct ClassMetrics {
    double tpr = 0.0;
    double fpr = 0.0;
    double precision = 0.0;
    double f_measure = 0.0;
    std::uint64_t support = 0; // P, fragments of this class
};

/// Per-class rates from raw counts. P is the class's fragment count, N the
/// count of all other classes. Zero denominators (precision at tp + fp = 0,
/// F at tp = fp = fn = 0, FPR at n = 0) resolve to 0.
inline ClassMetrics metrics_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                                        std::uint64_t p, std::uint64_t n) {
    if (p == 0) {
        throw std::invalid_argument("metrics_from_counts: class has no fragments (P = 0)");
    }
    if (tp > p) {
        throw std::invalid_argument("metrics_from_counts: tp exceeds P");
    }
    if (n == 0 && fp > 0) {
        throw std::invalid_argument("metrics_from_counts: fp > 0 with N = 0");
    }
    ClassMetrics metrics;
    metrics.support = p;
    metrics.tpr = static_cast<double>(tp) / static_cast<double>(p);
    metrics.fpr = n > 0 ? static_cast<double>(fp) / static_cast<double>(n) : 0.0;
    metrics.precision =
        tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const std::uint64_t f_denominator = 2 * tp + fp + fn;
    metrics.f_measure =
        f_denominator > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(f_denominator)
                          : 0.0;
    return metrics;
}

/// Same metrics recomputed from the matrix alone: tp is the diagonal cell,
/// P the row sum, fp the rest of the column.
inline ClassMetrics metrics_for_class(const ConfusionMatrix& matrix, std::size_t class_index) {
    const std::uint64_t tp = matrix.at(class_index, class_index);
    const std::uint64_t p = matrix.row_sum(class_index);
    const std::uint64_t fp = matrix.col_sum(class_index) - tp;
    const std::uint64_t fn = p - tp;
    const std::uint64_t n = matrix.total() - p;
    return metrics_from_counts(tp, fp, fn, p, n);
}

struct EvalConfig {
    std::uint16_t k = 10;
    std::uint64_t seed = 0;
    Hyperparams hyper;
    StatsPolicy stats_policy = StatsPolicy::per_fold;
    bool stratified = false;
    bool group_by_file = false;
};

struct EvalReport {
    std::size_t fragment_size = 0;
    EvalConfig config;
    ConfusionMatrix matrix;
    std::vector<ClassMetrics> per_class; // parallel to matrix.labels
    ClassMetrics weighted;               // support-weighted averages; support = total
    std::vector<std::string> warnings;
};

namespace detail {

inline ClassMetrics weighted_average(std::span<const ClassMetrics> per_class) {
    ClassMetrics weighted;
    double total = 0.0;
    for (const auto& m : per_class) {
        const auto w = static_cast<double>(m.support);
        weighted.tpr += w * m.tpr;
        weighted.fpr += w * m.fpr;
        weighted.precision += w * m.precision;
        weighted.f_measure += w * m.f_measure;
        weighted.support += m.support;
        total += w;
    }
    if (total > 0.0) {
        weighted.tpr /= total;
        weighted.fpr /= total;
        weighted.precision /= total;
        weighted.f_measure /= total;
    }
    return weighted;
}

} // namespace detail

/// k-fold cross-validation. Per fold: fit document-frequency stats on the
/// training split (or once on everything under the global policy), vectorize
/// both splits, train a forest, predict the held-out fragments, and pool the
/// outcomes into one confusion matrix. Metrics derive from that pooled
/// matrix. Seed use: the fold assignment draws from mix_seed(seed, 0) and
/// fold f trains with mix_seed(seed, 1 + f), so the whole report is a pure
/// function of (fragments, config).
inline EvalReport cross_validate(const FragmentSet& fragments, const EvalConfig& config) {
    const std::size_t n = fragments.fragments.size();
    if (n == 0) {
        throw std::invalid_argument("cross_validate: no fragments");
    }
    const std::size_t n_labels = fragments.labels.size();
    if (n_labels < 2) {
        throw std::invalid_argument("cross_validate: need at least 2 classes");
    }
    if (config.stratified && config.group_by_file) {
        throw std::invalid_argument("cross_validate: stratified and group-by-file split "
                                    "modes cannot be combined");
    }

    std::vector<std::uint16_t> y(n);
    std::vector<std::uint32_t> file_of(n);
    std::vector<std::uint64_t> support(n_labels, 0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = fragments.fragments[i].label_id;
        file_of[i] = fragments.fragments[i].file_id;
        ++support[y[i]];
    }
    for (std::size_t c = 0; c < n_labels; ++c) {
        if (support[c] == 0) {
            throw std::invalid_argument("cross_validate: class \"" +
                                        fragments.labels[c].str() + "\" has no fragments");
        }
    }

    const std::uint64_t split_seed = mix_seed(config.seed, 0);
    const FoldAssignment folds =
        config.group_by_file ? kfold_split_grouped(file_of, config.k, split_seed)
        : config.stratified  ? kfold_split_stratified(y, config.k, split_seed)
                             : kfold_split(n, config.k, split_seed);

    EvalReport report;
    report.fragment_size = fragments.fragment_size;
    report.config = config;
    report.matrix = ConfusionMatrix(fragments.labels);

    DocFreqStats global_stats;
    if (config.stats_policy == StatsPolicy::global) {
        global_stats = fit_doc_freq(fragments.fragments);
    }

    for (std::uint16_t fold = 0; fold < config.k; ++fold) {
        std::vector<std::uint32_t> train_idx;
        std::vector<std::uint32_t> test_idx;
        for (std::uint32_t i = 0; i < n; ++i) {
            (folds.fold_of[i] == fold ? test_idx : train_idx).push_back(i);
        }

        const DocFreqStats stats = config.stats_policy == StatsPolicy::global
                                       ? global_stats
                                       : fit_doc_freq(fragments.fragments, train_idx);

        std::vector<std::uint16_t> y_train;
        y_train.reserve(train_idx.size());
        std::vector<bool> present(n_labels, false);
        for (std::uint32_t i : train_idx) {
            y_train.push_back(y[i]);
            present[y[i]] = true;
        }
        std::vector<std::string> absent;
        for (std::size_t c = 0; c < n_labels; ++c) {
            if (!present[c]) {
                absent.push_back(fragments.labels[c].str());
            }
        }
        if (!absent.empty()) {
            std::string message = "fold " + std::to_string(fold) +
                                  ": classes absent from training split:";
            for (const auto& name : absent) {
                message += " " + name;
            }
            report.warnings.push_back(std::move(message));
        }

        const FeatureMatrix x_train = vectorize_all(fragments.fragments, train_idx, stats);
        const std::uint64_t fold_seed = mix_seed(config.seed, 1 + fold);
        Forest forest;
        if (absent.size() + 1 == n_labels) { // training split collapsed to one class
            forest = make_constant_forest(fragments.labels, y_train.front(), config.hyper,
                                          fold_seed, stats, fragments.fragment_size);
        } else {
            forest = train(x_train, y_train, fragments.labels, config.hyper, fold_seed, stats,
                           fragments.fragment_size);
        }

        for (std::uint32_t i : test_idx) {
            const FeatureVector x = weight_vector(fragments.fragments[i].bytes, stats);
            const Prediction prediction = predict(forest, x);
            ++report.matrix.at(y[i], prediction.label_id);
        }
    }

    report.per_class.reserve(n_labels);
    for (std::size_t c = 0; c < n_labels; ++c) {
        report.per_class.push_back(metrics_for_class(report.matrix, c));
    }
    report.weighted = detail::weighted_average(report.per_class);
    return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json classes = nlohmann::json::array();
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const auto& m = report.per_class[c];
        classes.push_back({{"label", report.matrix.labels[c].str()},
                           {"support", m.support},
                           {"tpr", m.tpr},
                           {"fpr", m.fpr},
                           {"precision", m.precision},
                           {"f_measure", m.f_measure}});
    }
    nlohmann::json matrix_labels = nlohmann::json::array();
    for (const auto& label : report.matrix.labels) {
        matrix_labels.push_back(label.str());
    }
    nlohmann::json matrix_rows = nlohmann::json::array();
    for (std::size_t i = 0; i < report.matrix.size(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j < report.matrix.size(); ++j) {
            row.push_back(report.matrix.at(i, j));
        }
        matrix_rows.push_back(std::move(row));
    }
    const auto& hyper = report.config.hyper;
    return {{"config",
             {{"fragment_size", report.fragment_size},
              {"k", report.config.k},
              {"seed", report.config.seed},
              {"stats_policy",
               report.config.stats_policy == StatsPolicy::global ? "global" : "per-fold"},
              {"stratified", report.config.stratified},
              {"group_by_file", report.config.group_by_file},
              {"trees", hyper.n_trees},
              {"mtry", hyper.max_features_per_split},
              {"min_leaf_size", hyper.min_leaf_size},
              {"max_depth", hyper.max_depth},
              {"class_weight", hyper.balanced_class_weight ? "balanced" : "none"}}},
            {"classes", classes},
            {"weighted_avg",
             {{"support", report.weighted.support},
              {"tpr", report.weighted.tpr},
              {"fpr", report.weighted.fpr},
              {"precision", report.weighted.precision},
              {"f_measure", report.weighted.f_measure}}},
            {"confusion_matrix", {{"labels", matrix_labels}, {"rows", matrix_rows}}},
            {"warnings", report.warnings}};
}

/// CSV with a predicted-label header row and one row per true label.
inline std::string confusion_matrix_csv(const ConfusionMatrix& matrix) {
    std::string out;
    for (const auto& label : matrix.labels) {
        out += ',';
        out += label.str();
    }
    out += '\n';
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        out += matrix.labels[i].str();
        for (std::size_t j = 0; j < matrix.size(); ++j) {
            out += ',' + std::to_string(matrix.at(i, j));
        }
        out += '\n';
    }
    return out;
}

/// Per-class metric table (file_type, tpr, fpr, precision, f_measure) with
/// a weighted_avg row at the bottom.
inline std::string per_class_metrics_csv(const EvalReport& report) {
    std::string out = "file_type,tpr,fpr,precision,f_measure\n";
    char buf[128];
    const auto append_row = [&](const std::string& name, const ClassMetrics& m) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", name.c_str(), m.tpr, m.fpr,
                      m.precision, m.f_measure);
        out += buf;
    };
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        append_row(report.matrix.labels[c].str(), report.per_class[c]);
    }
    append_row("weighted_avg", report.weighted);
    return out;
}

} // namespace sift
