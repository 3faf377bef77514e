#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sift/classifier.hpp"
#include "sift/rng.hpp"
#include "test_util.hpp"

using namespace sift;
using sift_test::TempDir;

namespace {

std::vector<ClassLabel> two_labels() {
    return {ClassLabel("csv"), ClassLabel("pdf")};
}

DocFreqStats dummy_stats() {
    DocFreqStats stats;
    stats.total_fragments = 4;
    stats.doc_freq[0x2C] = 2;
    return stats;
}

/// A forest assembled by hand from single-leaf trees, one per vote.
Forest handmade_forest(const std::vector<std::uint16_t>& votes) {
    Forest forest;
    forest.label_set = two_labels();
    forest.class_weights = {1.0, 1.0};
    forest.doc_freq = dummy_stats();
    forest.fragment_size = 512;
    forest.class_mean_weights.assign(2, FeatureVector{});
    for (std::uint16_t vote : votes) {
        TreeNode leaf;
        leaf.class_counts = {0, 0};
        leaf.class_counts[vote] = 3;
        forest.trees.push_back(Tree{{leaf}});
    }
    return forest;
}

/// Two clusters separated on feature 0x2C: class 0 sits near 0.6, class 1
/// at exactly 0.
struct StumpFixture {
    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    double min_positive = 1.0;
};

StumpFixture separable_clusters(std::size_t per_class) {
    StumpFixture fixture;
    SeededRng rng(77);
    for (std::size_t i = 0; i < per_class; ++i) {
        FeatureVector row{};
        row[0x2C] = 0.58 + static_cast<double>(rng.below(41)) / 1000.0; // [0.58, 0.62]
        fixture.min_positive = std::min(fixture.min_positive, row[0x2C]);
        fixture.x.rows.push_back(row);
        fixture.y.push_back(0);
    }
    for (std::size_t i = 0; i < per_class; ++i) {
        fixture.x.rows.push_back(FeatureVector{});
        fixture.y.push_back(1);
    }
    return fixture;
}

} // namespace

TEST_CASE("a separable single-feature problem trains to a clean stump") {
    // class 0 has weight exactly 0.6 on byte 0x2C, class 1 exactly 0; the
    // hand-computed stump splits feature 0x2C at the midpoint 0.3
    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    for (int i = 0; i < 10; ++i) {
        FeatureVector row{};
        row[0x2C] = 0.6;
        x.rows.push_back(row);
        y.push_back(0);
        x.rows.push_back(FeatureVector{});
        y.push_back(1);
    }

    Hyperparams hyper;
    hyper.n_trees = 1;
    hyper.max_features_per_split = 256; // consider every feature
    hyper.max_depth = 1;
    const Forest forest = train(x, y, two_labels(), hyper, 5, dummy_stats(), 512);

    REQUIRE(forest.trees.size() == 1);
    const Tree& tree = forest.trees[0];
    REQUIRE(tree.nodes.size() == 3);
    const TreeNode& root = tree.nodes[0];
    REQUIRE_FALSE(root.is_leaf());
    CHECK(root.feature == 0x2C);
    CHECK_THAT(root.threshold, Catch::Matchers::WithinAbs(0.3, 1e-15));

    for (std::size_t i = 0; i < x.rows.size(); ++i) {
        CHECK(predict(forest, x.rows[i]).label_id == y[i]);
    }
}

TEST_CASE("default forest separates the clusters with full accuracy") {
    const auto fixture = separable_clusters(10);
    Hyperparams hyper;
    hyper.n_trees = 25;
    const Forest forest =
        train(fixture.x, fixture.y, two_labels(), hyper, 5, dummy_stats(), 512);
    for (std::size_t i = 0; i < fixture.x.rows.size(); ++i) {
        CHECK(predict(forest, fixture.x.rows[i]).label_id == fixture.y[i]);
    }
}

TEST_CASE("identical rows cannot be split; the majority class wins") {
    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    FeatureVector row{};
    row[3] = 0.25;
    for (int i = 0; i < 8; ++i) {
        x.rows.push_back(row);
        y.push_back(0);
    }
    for (int i = 0; i < 2; ++i) {
        x.rows.push_back(row);
        y.push_back(1);
    }
    Hyperparams hyper;
    hyper.n_trees = 50;
    const Forest forest = train(x, y, two_labels(), hyper, 11, dummy_stats(), 512);
    for (const Tree& tree : forest.trees) {
        REQUIRE(tree.nodes.size() == 1);
        REQUIRE(tree.nodes[0].is_leaf());
    }
    CHECK(predict(forest, row).label_id == 0);
}

TEST_CASE("vote arithmetic and tie-breaks") {
    FeatureVector x{};

    SECTION("single tree gives a unanimous vote") {
        const Forest forest = handmade_forest({0});
        const auto prediction = predict(forest, x);
        CHECK(prediction.label_id == 0);
        CHECK(prediction.vote_fractions == std::vector<double>{1.0, 0.0});
    }

    SECTION("2-1 split yields two thirds") {
        const Forest forest = handmade_forest({0, 0, 1});
        const auto prediction = predict(forest, x);
        CHECK(prediction.label_id == 0);
        CHECK_THAT(prediction.vote_fractions[0],
                   Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
        CHECK_THAT(prediction.vote_fractions[1],
                   Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
    }

    SECTION("ties go to label-set order") {
        const Forest forest = handmade_forest({1, 0});
        CHECK(predict(forest, x).label_id == 0);
    }

    SECTION("vote fractions sum to one and the label attains the maximum") {
        SeededRng rng(21);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::uint16_t> votes;
            const std::size_t count = 1 + rng.below(9);
            for (std::size_t i = 0; i < count; ++i) {
                votes.push_back(static_cast<std::uint16_t>(rng.below(2)));
            }
            const Forest forest = handmade_forest(votes);
            const auto prediction = predict(forest, x);
            const double sum =
                prediction.vote_fractions[0] + prediction.vote_fractions[1];
            CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));
            const double max_fraction =
                std::max(prediction.vote_fractions[0], prediction.vote_fractions[1]);
            CHECK(prediction.vote_fractions[prediction.label_id] == max_fraction);
        }
    }
}

TEST_CASE("training validates its inputs") {
    const auto fixture = separable_clusters(5);
    Hyperparams hyper;
    hyper.n_trees = 2;

    SECTION("single-class labels") {
        std::vector<std::uint16_t> y(fixture.y.size(), 0);
        CHECK_THROWS_WITH(train(fixture.x, y, two_labels(), hyper, 1, dummy_stats(), 512),
                          Catch::Matchers::ContainsSubstring("degenerate"));
    }
    SECTION("NaN features") {
        auto x = fixture.x;
        x.rows[0][7] = std::nan("");
        CHECK_THROWS_WITH(
            train(x, fixture.y, two_labels(), hyper, 1, dummy_stats(), 512),
            Catch::Matchers::ContainsSubstring("NaN"));
    }
    SECTION("too few samples") {
        FeatureMatrix x;
        x.rows.push_back(FeatureVector{});
        const std::vector<std::uint16_t> y{0};
        CHECK_THROWS_AS(train(x, y, two_labels(), hyper, 1, dummy_stats(), 512),
                        std::invalid_argument);
    }
    SECTION("bad hyperparameters") {
        Hyperparams bad = hyper;
        bad.max_features_per_split = 0;
        CHECK_THROWS_AS(
            train(fixture.x, fixture.y, two_labels(), bad, 1, dummy_stats(), 512),
            std::invalid_argument);
    }
}

TEST_CASE("training is deterministic given the seed") {
    const auto fixture = separable_clusters(8);
    Hyperparams hyper;
    hyper.n_trees = 12;

    TempDir dir("model-det");
    const Forest first =
        train(fixture.x, fixture.y, two_labels(), hyper, 99, dummy_stats(), 512);
    const Forest second =
        train(fixture.x, fixture.y, two_labels(), hyper, 99, dummy_stats(), 512);
    save_model(first, dir / "a.model");
    save_model(second, dir / "b.model");
    CHECK(sift_test::read_bytes(dir / "a.model") == sift_test::read_bytes(dir / "b.model"));
}

TEST_CASE("model save/load round-trip") {
    const auto fixture = separable_clusters(8);
    Hyperparams hyper;
    hyper.n_trees = 10;
    const Forest forest =
        train(fixture.x, fixture.y, two_labels(), hyper, 3, dummy_stats(), 512);

    TempDir dir("model-io");
    const auto path = dir / "forest.model";
    save_model(forest, path);

    SECTION("round-trip predicts identically on random vectors") {
        const Forest loaded = load_model(path);
        CHECK(loaded.fragment_size == forest.fragment_size);
        CHECK(loaded.label_set == forest.label_set);
        CHECK(loaded.doc_freq.doc_freq == forest.doc_freq.doc_freq);
        CHECK(loaded.doc_freq.total_fragments == forest.doc_freq.total_fragments);
        SeededRng rng(14);
        for (int trial = 0; trial < 200; ++trial) {
            FeatureVector x{};
            for (int v = 0; v < 256; ++v) {
                x[v] = static_cast<double>(rng.below(1000)) / 1000.0;
            }
            const auto a = predict(forest, x);
            const auto b = predict(loaded, x);
            CHECK(a.label_id == b.label_id);
            CHECK(a.vote_fractions == b.vote_fractions);
        }
    }

    SECTION("corrupted magic is rejected with no partial model") {
        auto bytes = sift_test::read_bytes(path);
        bytes[2] ^= 0x40;
        sift_test::write_bytes(path, bytes);
        CHECK_THROWS(load_model(path));
    }

    SECTION("newer format version is rejected explicitly") {
        auto bytes = sift_test::read_bytes(path);
        bytes[8] = 0x63; // version field follows the magic
        // refresh the trailing checksum so the version check is what trips
        const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
        const std::uint32_t crc = sift::detail::crc32(body);
        for (int i = 0; i < 4; ++i) {
            bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
        }
        sift_test::write_bytes(path, bytes);
        CHECK_THROWS_WITH(load_model(path), Catch::Matchers::ContainsSubstring("version"));
    }

    SECTION("truncation is caught by the checksum") {
        auto bytes = sift_test::read_bytes(path);
        bytes.resize(bytes.size() - 9);
        sift_test::write_bytes(path, bytes);
        CHECK_THROWS_WITH(load_model(path),
                          Catch::Matchers::ContainsSubstring("checksum"));
    }

    SECTION("a tree with a back-pointing child cannot load") {
        Forest cyclic = forest;
        TreeNode internal;
        internal.feature = 1;
        internal.threshold = 0.5;
        internal.left = 1;
        internal.right = 2;
        TreeNode loop = internal; // node 1 pointing back at itself
        TreeNode leaf;
        leaf.class_counts = {1, 0};
        cyclic.trees = {Tree{{internal, loop, leaf}}};
        cyclic.config.n_trees = 1;
        const auto cyclic_path = dir / "cyclic.model";
        save_model(cyclic, cyclic_path);
        CHECK_THROWS_WITH(load_model(cyclic_path),
                          Catch::Matchers::ContainsSubstring("malformed"));
    }
}

TEST_CASE("classify_fragment checks the fragment length") {
    DocFreqStats stats;
    stats.total_fragments = 2;
    stats.doc_freq[0x2C] = 1;
    stats.doc_freq[0x00] = 1;

    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    for (int i = 0; i < 4; ++i) {
        FeatureVector row{};
        row[0x2C] = i < 2 ? 0.5 : 0.0;
        row[0x00] = i < 2 ? 0.0 : 0.3;
        x.rows.push_back(row);
        y.push_back(i < 2 ? 0 : 1);
    }
    Hyperparams hyper;
    hyper.n_trees = 5;
    const Forest forest = train(x, y, two_labels(), hyper, 1, stats, 512);

    const std::vector<std::uint8_t> short_raw(511, 0x2C);
    CHECK_THROWS_WITH(classify_fragment(forest, short_raw),
                      Catch::Matchers::ContainsSubstring("512"));

    const std::vector<std::uint8_t> raw(512, 0x2C);
    const auto first = classify_fragment(forest, raw);
    const auto second = classify_fragment(forest, raw);
    CHECK(first.label_id == second.label_id);
    CHECK(first.vote_fractions == second.vote_fractions);
}

TEST_CASE("trees fit their in-bag samples exactly when rows are distinct") {
    // one-hot rows: any two rows are separated only by their own hot
    // features, so a fixed 16-feature sample often misses every separating
    // feature and the split search must widen
    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    for (int i = 0; i < 30; ++i) {
        FeatureVector row{};
        row[static_cast<std::size_t>(i)] = 1.0;
        x.rows.push_back(row);
        y.push_back(static_cast<std::uint16_t>(i % 2));
    }
    Hyperparams hyper;
    hyper.n_trees = 30;
    const Forest forest = train(x, y, two_labels(), hyper, 4, dummy_stats(), 512);

    // in-bag fit is exact iff every leaf holds a single class
    for (const Tree& tree : forest.trees) {
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf()) {
                const auto populated = std::ranges::count_if(
                    node.class_counts, [](std::uint32_t c) { return c > 0; });
                REQUIRE(populated == 1);
            }
        }
    }
}

TEST_CASE("balanced class weights scale inversely with support") {
    FeatureMatrix x;
    std::vector<std::uint16_t> y;
    FeatureVector overlap{};
    overlap[5] = 0.4;
    for (int i = 0; i < 9; ++i) {
        x.rows.push_back(overlap);
        y.push_back(0);
    }
    for (int i = 0; i < 3; ++i) {
        x.rows.push_back(overlap);
        y.push_back(1);
    }
    Hyperparams hyper;
    hyper.n_trees = 1;
    hyper.balanced_class_weight = true;
    const Forest forest = train(x, y, two_labels(), hyper, 2, dummy_stats(), 512);
    CHECK(forest.class_weights[1] > forest.class_weights[0]);
}
