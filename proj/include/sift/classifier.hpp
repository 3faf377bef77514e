#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sift/detail/binio.hpp"
#include "sift/features.hpp"
#include "sift/rng.hpp"

namespace sift {

struct Hyperparams {
    std::uint32_t n_trees = 100;
    std::uint32_t max_features_per_split = 16; // floor(sqrt(256))
    std::uint32_t min_leaf_size = 1;
    std::uint32_t max_depth = 0; // 0 = unbounded
    bool balanced_class_weight = false;
};

/// Node of a Gini decision tree, stored flat. Node 0 is the root, so a zero
/// left index marks a leaf. Internal nodes route x[feature] < threshold to
/// the left child; leaves keep per-label counts of the training samples
/// that reached them.
struct TreeNode {
    std::uint16_t feature = 0;
    double threshold = 0.0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::vector<std::uint32_t> class_counts;

    bool is_leaf() const { return left == 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
};

/// Trained ensemble plus everything inference needs: the label set, the
/// document-frequency statistics the features were computed with, and the
/// per-class mean training weights served by weight inspection.
struct Forest {
    std::vector<Tree> trees;
    std::vector<ClassLabel> label_set;
    std::vector<double> class_weights; // leaf-vote weights; all 1 unless balanced
    DocFreqStats doc_freq;
    Hyperparams config;
    std::uint64_t train_seed = 0;
    std::size_t fragment_size = 0;
    std::vector<FeatureVector> class_mean_weights; // per label

    const ClassLabel& label(std::uint16_t id) const { return label_set.at(id); }
};

struct Prediction {
    std::uint16_t label_id = 0;
    std::vector<double> vote_fractions; // per label, sums to 1
};

namespace detail {

/// Majority label of a leaf under the forest's class weights; ties go to
/// the lowest label id.
inline std::uint16_t leaf_majority(const std::vector<std::uint32_t>& counts,
                                   std::span<const double> class_weights) {
    std::uint16_t best = 0;
    double best_score = -1.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const double score = static_cast<double>(counts[c]) * class_weights[c];
        if (score > best_score) {
            best_score = score;
            best = static_cast<std::uint16_t>(c);
        }
    }
    return best;
}

inline std::uint16_t tree_vote(const Tree& tree, const FeatureVector& x,
                               std::span<const double> class_weights) {
    std::uint32_t index = 0;
    while (!tree.nodes[index].is_leaf()) {
        const TreeNode& node = tree.nodes[index];
        index = x[node.feature] < node.threshold ? node.left : node.right;
    }
    return leaf_majority(tree.nodes[index].class_counts, class_weights);
}

/// Grows one tree on a bootstrap sample. Rng draw order: n bootstrap draws,
/// then per-node candidate-feature draws in pre-order (left subtree before
/// right), so a fixed per-tree seed reproduces the tree exactly.
class TreeGrower {
public:
    TreeGrower(const FeatureMatrix& x, std::span<const std::uint16_t> y, std::size_t n_labels,
               const Hyperparams& hyper, std::span<const double> class_weights,
               std::uint64_t tree_seed)
        : x_(x), y_(y), n_labels_(n_labels), hyper_(hyper), class_weights_(class_weights),
          rng_(tree_seed) {}

    Tree grow() {
        const std::size_t n = x_.rows.size();
        samples_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            samples_[j] = static_cast<std::uint32_t>(rng_.below(n));
        }
        tree_.nodes.clear();
        grow_nodes(n);
        return std::move(tree_);
    }

private:
    struct Split {
        double gain = 0.0;
        std::uint16_t feature = 0;
        double threshold = 0.0;
    };

    std::vector<std::uint32_t> count_classes(std::size_t begin, std::size_t end) const {
        std::vector<std::uint32_t> counts(n_labels_, 0);
        for (std::size_t j = begin; j < end; ++j) {
            ++counts[y_[samples_[j]]];
        }
        return counts;
    }

    static double impurity(std::span<const double> weighted_counts, double total) {
        if (total <= 0.0) {
            return 0.0;
        }
        double sum_sq = 0.0;
        for (double w : weighted_counts) {
            sum_sq += w * w;
        }
        return 1.0 - sum_sq / (total * total);
    }

    /// Candidate feature indices for one node: max_features_per_split
    /// distinct values sampled by partial Fisher-Yates, then sorted so the
    /// lowest feature index wins equal-gain ties.
    std::vector<std::uint16_t> sample_features() {
        std::array<std::uint16_t, kByteValues> pool;
        for (std::size_t v = 0; v < kByteValues; ++v) {
            pool[v] = static_cast<std::uint16_t>(v);
        }
        const std::size_t m = std::min<std::size_t>(hyper_.max_features_per_split, kByteValues);
        for (std::size_t j = 0; j < m; ++j) {
            const auto k = j + static_cast<std::size_t>(rng_.below(kByteValues - j));
            std::swap(pool[j], pool[k]);
        }
        std::vector<std::uint16_t> features(pool.begin(), pool.begin() + m);
        std::ranges::sort(features);
        return features;
    }

    /// Best Gini split among `features`, or gain 0 when none clears
    /// min_leaf_size with a positive gain. Candidates are scanned in
    /// ascending (feature, threshold) order and replaced only on a strictly
    /// greater gain, which fixes the documented tie-break.
    Split best_split_among(std::span<const std::uint16_t> features, std::size_t begin,
                           std::size_t end, const std::vector<std::uint32_t>& node_counts) {
        const std::size_t m = end - begin;

        std::vector<double> parent_weighted(n_labels_);
        double total_weight = 0.0;
        for (std::size_t c = 0; c < n_labels_; ++c) {
            parent_weighted[c] = static_cast<double>(node_counts[c]) * class_weights_[c];
            total_weight += parent_weighted[c];
        }
        const double parent_impurity = impurity(parent_weighted, total_weight);

        Split best;
        std::vector<std::pair<double, std::uint16_t>> order(m);
        std::vector<double> left_weighted(n_labels_);
        std::vector<double> right_weighted(n_labels_);
        for (std::uint16_t feature : features) {
            for (std::size_t j = 0; j < m; ++j) {
                const std::uint32_t sample = samples_[begin + j];
                order[j] = {x_.rows[sample][feature], y_[sample]};
            }
            std::ranges::sort(order, {}, [](const auto& p) { return p.first; });

            std::ranges::fill(left_weighted, 0.0);
            double left_weight = 0.0;
            for (std::size_t j = 0; j + 1 < m; ++j) {
                left_weighted[order[j].second] += class_weights_[order[j].second];
                left_weight += class_weights_[order[j].second];
                if (order[j].first == order[j + 1].first) {
                    continue;
                }
                const std::size_t n_left = j + 1;
                const std::size_t n_right = m - n_left;
                if (n_left < hyper_.min_leaf_size || n_right < hyper_.min_leaf_size) {
                    continue;
                }
                for (std::size_t c = 0; c < n_labels_; ++c) {
                    right_weighted[c] = parent_weighted[c] - left_weighted[c];
                }
                const double right_weight = total_weight - left_weight;
                const double children =
                    (left_weight / total_weight) * impurity(left_weighted, left_weight) +
                    (right_weight / total_weight) * impurity(right_weighted, right_weight);
                const double gain = parent_impurity - children;
                if (gain > best.gain) {
                    const double lo = order[j].first;
                    const double hi = order[j + 1].first;
                    double threshold = lo + (hi - lo) / 2.0;
                    if (!(threshold > lo)) { // midpoint rounded down to lo
                        threshold = hi;
                    }
                    best = {gain, feature, threshold};
                }
            }
        }
        return best;
    }

    /// Split search: first over the sampled candidate features; when none of
    /// them yields a valid split, over the remaining features (ascending, no
    /// further draws). The widening keeps impure nodes splittable whenever
    /// any feature separates them, so trees fit their in-bag samples exactly
    /// under min_leaf_size 1 and unbounded depth.
    Split find_split(std::size_t begin, std::size_t end,
                     const std::vector<std::uint32_t>& node_counts) {
        const auto sampled = sample_features();
        Split best = best_split_among(sampled, begin, end, node_counts);
        if (best.gain > 0.0 || sampled.size() == kByteValues) {
            return best;
        }
        std::array<bool, kByteValues> in_sample{};
        for (std::uint16_t feature : sampled) {
            in_sample[feature] = true;
        }
        std::vector<std::uint16_t> rest;
        rest.reserve(kByteValues - sampled.size());
        for (std::size_t v = 0; v < kByteValues; ++v) {
            if (!in_sample[v]) {
                rest.push_back(static_cast<std::uint16_t>(v));
            }
        }
        return best_split_among(rest, begin, end, node_counts);
    }

    /// Builds the node array in pre-order with an explicit stack (left
    /// subtree processed before right), keeping the per-node rng draws in
    /// that same order and the stack depth off the call stack.
    void grow_nodes(std::size_t n) {
        struct Pending {
            std::size_t begin;
            std::size_t end;
            std::uint32_t depth;
            std::uint32_t parent; // index into tree_.nodes
            bool is_left;
            bool is_root;
        };
        std::vector<Pending> stack;
        stack.push_back({0, n, 0, 0, false, true});
        while (!stack.empty()) {
            const Pending task = stack.back();
            stack.pop_back();
            const auto node_index = static_cast<std::uint32_t>(tree_.nodes.size());
            tree_.nodes.emplace_back();
            if (!task.is_root) {
                auto& parent = tree_.nodes[task.parent];
                (task.is_left ? parent.left : parent.right) = node_index;
            }

            auto counts = count_classes(task.begin, task.end);
            const bool pure =
                std::ranges::count_if(counts, [](auto c) { return c > 0; }) <= 1;
            const bool too_small =
                task.end - task.begin < 2 * static_cast<std::size_t>(hyper_.min_leaf_size);
            const bool at_depth = hyper_.max_depth > 0 && task.depth >= hyper_.max_depth;
            if (!pure && !too_small && !at_depth) {
                const Split split = find_split(task.begin, task.end, counts);
                if (split.gain > 0.0) {
                    const auto mid_it = std::partition(
                        samples_.begin() + static_cast<std::ptrdiff_t>(task.begin),
                        samples_.begin() + static_cast<std::ptrdiff_t>(task.end),
                        [&](std::uint32_t sample) {
                            return x_.rows[sample][split.feature] < split.threshold;
                        });
                    const auto mid = static_cast<std::size_t>(mid_it - samples_.begin());
                    TreeNode& node = tree_.nodes[node_index];
                    node.feature = split.feature;
                    node.threshold = split.threshold;
                    stack.push_back({mid, task.end, task.depth + 1, node_index, false, false});
                    stack.push_back({task.begin, mid, task.depth + 1, node_index, true, false});
                    continue;
                }
            }
            tree_.nodes[node_index].class_counts = std::move(counts);
        }
    }

    const FeatureMatrix& x_;
    std::span<const std::uint16_t> y_;
    std::size_t n_labels_;
    const Hyperparams& hyper_;
    std::span<const double> class_weights_;
    SeededRng rng_;
    Tree tree_;
    std::vector<std::uint32_t> samples_;
};

inline void validate_hyperparams(const Hyperparams& hyper, std::size_t n_rows) {
    if (hyper.n_trees == 0) {
        throw std::invalid_argument("n_trees must be positive");
    }
    if (hyper.max_features_per_split == 0 || hyper.max_features_per_split > kByteValues) {
        throw std::invalid_argument("max_features_per_split must be in [1, 256]");
    }
    if (hyper.min_leaf_size == 0 || hyper.min_leaf_size > n_rows) {
        throw std::invalid_argument("min_leaf_size must be in [1, sample count]");
    }
}

} // namespace detail

/// Trains a bagged Gini-tree ensemble. Each tree grows on a bootstrap sample
/// (with replacement, same size as the input) using its own rng stream
/// seeded with seed ^ tree_index; trees may be grown on several threads and
/// the result is identical either way.
inline Forest train(const FeatureMatrix& x, std::span<const std::uint16_t> y,
                    std::vector<ClassLabel> label_set, const Hyperparams& hyper,
                    std::uint64_t seed, const DocFreqStats& stats, std::size_t fragment_size) {
    const std::size_t n = x.rows.size();
    if (n != y.size()) {
        throw std::invalid_argument("train: feature row count does not match label count");
    }
    if (n < 2) {
        throw std::invalid_argument("train: need at least 2 samples");
    }
    detail::validate_hyperparams(hyper, n);
    const std::size_t n_labels = label_set.size();

    std::vector<std::uint64_t> support(n_labels, 0);
    for (std::uint16_t id : y) {
        if (id >= n_labels) {
            throw std::invalid_argument("train: label id out of range");
        }
        ++support[id];
    }
    const auto distinct =
        static_cast<std::size_t>(std::ranges::count_if(support, [](auto s) { return s > 0; }));
    if (distinct < 2) {
        throw std::invalid_argument("degenerate training set: fewer than 2 distinct labels");
    }
    for (const auto& row : x.rows) {
        for (double v : row) {
            if (std::isnan(v)) {
                throw std::invalid_argument("train: NaN in feature matrix");
            }
        }
    }

    Forest forest;
    forest.label_set = std::move(label_set);
    forest.config = hyper;
    forest.train_seed = seed;
    forest.doc_freq = stats;
    forest.fragment_size = fragment_size;

    forest.class_weights.assign(n_labels, 1.0);
    if (hyper.balanced_class_weight) {
        for (std::size_t c = 0; c < n_labels; ++c) {
            forest.class_weights[c] =
                support[c] > 0 ? static_cast<double>(n) / (static_cast<double>(distinct) *
                                                           static_cast<double>(support[c]))
                               : 0.0;
        }
    }

    forest.class_mean_weights.assign(n_labels, FeatureVector{});
    for (std::size_t row = 0; row < n; ++row) {
        auto& mean = forest.class_mean_weights[y[row]];
        for (std::size_t v = 0; v < kByteValues; ++v) {
            mean[v] += x.rows[row][v];
        }
    }
    for (std::size_t c = 0; c < n_labels; ++c) {
        if (support[c] > 0) {
            for (double& v : forest.class_mean_weights[c]) {
                v /= static_cast<double>(support[c]);
            }
        }
    }

    forest.trees.resize(hyper.n_trees);
    const unsigned n_threads =
        std::max(1u, std::min(std::thread::hardware_concurrency(), hyper.n_trees));
    std::atomic<std::uint32_t> next_tree{0};
    auto worker = [&] {
        for (;;) {
            const std::uint32_t t = next_tree.fetch_add(1);
            if (t >= hyper.n_trees) {
                return;
            }
            detail::TreeGrower grower(x, y, n_labels, hyper, forest.class_weights,
                                      seed ^ static_cast<std::uint64_t>(t));
            forest.trees[t] = grower.grow();
        }
    };
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_threads);
        for (unsigned i = 0; i < n_threads; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& thread : pool) {
            thread.join();
        }
    }
    return forest;
}

/// Spec-surface overload taking labels directly; the label set is their
/// sorted distinct values.
inline Forest train(const FeatureMatrix& x, const std::vector<ClassLabel>& y,
                    const Hyperparams& hyper, std::uint64_t seed, const DocFreqStats& stats,
                    std::size_t fragment_size) {
    std::vector<ClassLabel> label_set = y;
    std::ranges::sort(label_set);
    label_set.erase(std::unique(label_set.begin(), label_set.end()), label_set.end());
    std::vector<std::uint16_t> ids;
    ids.reserve(y.size());
    for (const auto& label : y) {
        const auto it = std::ranges::lower_bound(label_set, label);
        ids.push_back(static_cast<std::uint16_t>(it - label_set.begin()));
    }
    return train(x, ids, std::move(label_set), hyper, seed, stats, fragment_size);
}

/// Forest of single-leaf trees that always vote `label_id`. Stands in for a
/// trained forest when a training split collapses to one class.
inline Forest make_constant_forest(std::vector<ClassLabel> label_set, std::uint16_t label_id,
                                   const Hyperparams& hyper, std::uint64_t seed,
                                   const DocFreqStats& stats, std::size_t fragment_size) {
    Forest forest;
    forest.label_set = std::move(label_set);
    forest.class_weights.assign(forest.label_set.size(), 1.0);
    forest.config = hyper;
    forest.train_seed = seed;
    forest.doc_freq = stats;
    forest.fragment_size = fragment_size;
    forest.class_mean_weights.assign(forest.label_set.size(), FeatureVector{});
    TreeNode leaf;
    leaf.class_counts.assign(forest.label_set.size(), 0);
    leaf.class_counts.at(label_id) = 1;
    forest.trees.assign(hyper.n_trees, Tree{{leaf}});
    return forest;
}

/// Plurality vote over the trees. Vote ties go to the first label in
/// label-set order.
inline Prediction predict(const Forest& forest, const FeatureVector& x) {
    if (forest.trees.empty()) {
        throw std::invalid_argument("predict: forest has no trees");
    }
    const std::size_t n_labels = forest.label_set.size();
    std::vector<std::uint32_t> votes(n_labels, 0);
    for (const Tree& tree : forest.trees) {
        ++votes[detail::tree_vote(tree, x, forest.class_weights)];
    }
    Prediction prediction;
    prediction.vote_fractions.resize(n_labels);
    std::uint32_t best_votes = 0;
    for (std::size_t c = 0; c < n_labels; ++c) {
        prediction.vote_fractions[c] =
            static_cast<double>(votes[c]) / static_cast<double>(forest.trees.size());
        if (votes[c] > best_votes) {
            best_votes = votes[c];
            prediction.label_id = static_cast<std::uint16_t>(c);
        }
    }
    return prediction;
}

/// End-to-end inference on raw bytes: TF-IDF vectorization with the stats
/// the forest was trained with, then a forest vote.
inline Prediction classify_fragment(const Forest& forest, std::span<const std::uint8_t> raw) {
    if (raw.size() != forest.fragment_size) {
        throw std::invalid_argument("fragment of " + std::to_string(raw.size()) +
                                    " bytes does not match model fragment size " +
                                    std::to_string(forest.fragment_size));
    }
    return predict(forest, weight_vector(raw, forest.doc_freq));
}

inline constexpr char kModelMagic[8] = {'S', 'I', 'F', 'T', 'M', 'O', 'D', 'L'};
inline constexpr std::uint16_t kModelVersion = 1;

/// Model file layout (little-endian):
///   magic "SIFTMODL", version u16, fragment_size u32, train_seed u64,
///   n_trees u32, max_features_per_split u32, min_leaf_size u32,
///   max_depth u32, flags u8 (bit 0 = balanced class weights),
///   label_count u16, labels (u16 length + bytes each),
///   class_weights label_count x f64,
///   class_mean_weights label_count x 256 x f64,
///   doc_freq 256 x u64, total_fragments u64,
///   trees n_trees x (node_count u32, nodes), node = kind u8 then
///     internal (0): feature u16, threshold f64, left u32, right u32
///     leaf (1): label_count x u32 class counts,
///   crc32 u32 over all preceding bytes.
inline void save_model(const Forest& forest, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kModelMagic), 8));
    w.u16(kModelVersion);
    w.u32(static_cast<std::uint32_t>(forest.fragment_size));
    w.u64(forest.train_seed);
    w.u32(forest.config.n_trees);
    w.u32(forest.config.max_features_per_split);
    w.u32(forest.config.min_leaf_size);
    w.u32(forest.config.max_depth);
    w.u8(forest.config.balanced_class_weight ? 1 : 0);
    w.u16(static_cast<std::uint16_t>(forest.label_set.size()));
    for (const auto& label : forest.label_set) {
        w.str(label.str());
    }
    for (double weight : forest.class_weights) {
        w.f64(weight);
    }
    for (const auto& mean : forest.class_mean_weights) {
        for (double v : mean) {
            w.f64(v);
        }
    }
    for (std::uint64_t k : forest.doc_freq.doc_freq) {
        w.u64(k);
    }
    w.u64(forest.doc_freq.total_fragments);
    for (const Tree& tree : forest.trees) {
        w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf()) {
                w.u8(1);
                for (std::uint32_t count : node.class_counts) {
                    w.u32(count);
                }
            } else {
                w.u8(0);
                w.u16(node.feature);
                w.f64(node.threshold);
                w.u32(node.left);
                w.u32(node.right);
            }
        }
    }
    w.u32(detail::crc32(w.bytes));
    detail::write_file(path, w.bytes);
}

inline Forest load_model(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    if (bytes.size() < 14) {
        throw std::runtime_error("model file too short: " + path.string());
    }
    const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
    const std::span<const std::uint8_t> crc_bytes(bytes.data() + bytes.size() - 4, 4);
    {
        detail::ByteReader crc_reader(crc_bytes);
        if (detail::crc32(body) != crc_reader.u32()) {
            throw std::runtime_error("model checksum mismatch (corrupted or truncated): " +
                                     path.string());
        }
    }
    detail::ByteReader r(body);
    const auto magic = r.raw(8);
    if (!std::equal(magic.begin(), magic.end(),
                    reinterpret_cast<const std::uint8_t*>(kModelMagic))) {
        throw std::runtime_error("not a model file: " + path.string());
    }
    const std::uint16_t version = r.u16();
    if (version > kModelVersion) {
        throw std::runtime_error("model format version " + std::to_string(version) +
                                 " is newer than supported version " +
                                 std::to_string(kModelVersion));
    }

    Forest forest;
    forest.fragment_size = r.u32();
    require_allowed_fragment_size(forest.fragment_size);
    forest.train_seed = r.u64();
    forest.config.n_trees = r.u32();
    forest.config.max_features_per_split = r.u32();
    forest.config.min_leaf_size = r.u32();
    forest.config.max_depth = r.u32();
    forest.config.balanced_class_weight = (r.u8() & 1) != 0;
    const std::uint16_t label_count = r.u16();
    if (label_count == 0) {
        throw std::runtime_error("model has empty label set: " + path.string());
    }
    for (std::uint16_t i = 0; i < label_count; ++i) {
        forest.label_set.emplace_back(r.str());
    }
    forest.class_weights.resize(label_count);
    for (double& weight : forest.class_weights) {
        weight = r.f64();
    }
    forest.class_mean_weights.resize(label_count);
    for (auto& mean : forest.class_mean_weights) {
        for (double& v : mean) {
            v = r.f64();
        }
    }
    for (std::uint64_t& k : forest.doc_freq.doc_freq) {
        k = r.u64();
    }
    forest.doc_freq.total_fragments = r.u64();
    forest.trees.resize(forest.config.n_trees);
    for (Tree& tree : forest.trees) {
        const std::uint32_t node_count = r.u32();
        tree.nodes.resize(node_count);
        for (std::uint32_t index = 0; index < node_count; ++index) {
            TreeNode& node = tree.nodes[index];
            const std::uint8_t kind = r.u8();
            if (kind == 1) {
                node.class_counts.resize(label_count);
                for (std::uint32_t& count : node.class_counts) {
                    count = r.u32();
                }
            } else if (kind == 0) {
                node.feature = r.u16();
                node.threshold = r.f64();
                node.left = r.u32();
                node.right = r.u32();
                // children of a pre-order tree always follow their parent;
                // anything else cannot terminate a descent
                if (node.feature >= kByteValues || node.left <= index ||
                    node.right <= index || node.left >= node_count ||
                    node.right >= node_count) {
                    throw std::runtime_error("model has malformed tree node: " + path.string());
                }
            } else {
                throw std::runtime_error("model has unknown node kind: " + path.string());
            }
        }
        if (node_count == 0) {
            throw std::runtime_error("model has empty tree: " + path.string());
        }
    }
    if (r.remaining() != 0) {
        throw std::runtime_error("model has trailing bytes: " + path.string());
    }
    return forest;
}

} // namespace sift
