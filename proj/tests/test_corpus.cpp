#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "sift/corpus.hpp"
#include "sift/rng.hpp"
#include "test_util.hpp"

using namespace sift;
using sift_test::TempDir;

namespace {

std::vector<std::uint8_t> filler(std::size_t n) {
    return std::vector<std::uint8_t>(n, 0x55);
}

std::vector<std::string> entry_paths(const CorpusManifest& manifest) {
    std::vector<std::string> paths;
    for (const auto& entry : manifest.entries) {
        paths.push_back(entry.path);
    }
    return paths;
}

} // namespace

TEST_CASE("label derivation") {
    CHECK(label_of("docs/report.PDF", LabelRule::extension).str() == "pdf");
    CHECK(label_of("a/b/data.tar.gz", LabelRule::extension).str() == "gz");
    CHECK(label_of("data/blob", LabelRule::extension).str() == "unk");
    CHECK(label_of("train/eps/file001", LabelRule::parent_dir).str() == "eps");
    CHECK(label_of("train/EPS/file001", LabelRule::parent_dir).str() == "eps");
    CHECK_THROWS_AS(label_of("train/My Docs/file001", LabelRule::parent_dir),
                    std::invalid_argument);
}

TEST_CASE("class label validation") {
    CHECK(ClassLabel::is_valid("csv"));
    CHECK(ClassLabel::is_valid("dbase3"));
    CHECK_FALSE(ClassLabel::is_valid(""));
    CHECK_FALSE(ClassLabel::is_valid("C++"));
    CHECK_FALSE(ClassLabel::is_valid("two words"));
    CHECK_THROWS_AS(ClassLabel("Bad Label"), std::invalid_argument);
}

TEST_CASE("scan_dataset filters, deduplicates, and labels") {
    SECTION("empty directory gives an empty manifest") {
        TempDir dir("scan-empty");
        const auto result = scan_dataset(dir.path(), 512, LabelRule::extension);
        CHECK(result.manifest.entries.empty());
        CHECK(result.manifest.label_set.empty());
    }

    SECTION("duplicate base names keep the lexicographically-first path") {
        TempDir dir("scan-dup");
        sift_test::write_bytes(dir / "a/x.csv", filler(2048));
        sift_test::write_bytes(dir / "b/x.csv", filler(4096));
        const auto result = scan_dataset(dir.path(), 512, LabelRule::extension);
        REQUIRE(result.manifest.entries.size() == 1);
        CHECK(result.manifest.entries[0].path.ends_with("a/x.csv"));
        CHECK(result.manifest.entries[0].size_bytes == 2048);
        REQUIRE(result.dropped_dupes.size() == 1);
        CHECK(result.dropped_dupes[0].ends_with("b/x.csv"));
    }

    SECTION("files below twice the fragment size are dropped") {
        TempDir dir("scan-small");
        sift_test::write_bytes(dir / "small.csv", filler(900));
        sift_test::write_bytes(dir / "big.csv", filler(1024));
        const auto result = scan_dataset(dir.path(), 512, LabelRule::extension);
        REQUIRE(result.manifest.entries.size() == 1);
        CHECK(result.manifest.entries[0].base_name == "big.csv");
        REQUIRE(result.dropped_small.size() == 1);
        CHECK(result.dropped_small[0].ends_with("small.csv"));
    }

    SECTION("files whose label cannot be derived land in the rejects report") {
        TempDir dir("scan-reject");
        sift_test::write_bytes(dir / "Bad Dir/file001", filler(2048));
        sift_test::write_bytes(dir / "eps/file002", filler(2048));
        const auto result = scan_dataset(dir.path(), 512, LabelRule::parent_dir);
        REQUIRE(result.manifest.entries.size() == 1);
        CHECK(result.manifest.entries[0].label.str() == "eps");
        REQUIRE(result.rejects.size() == 1);
        CHECK(result.rejects[0].path.ends_with("file001"));
    }

    SECTION("extension-less files fall back to unk") {
        TempDir dir("scan-unk");
        sift_test::write_bytes(dir / "blob", filler(1024));
        const auto result = scan_dataset(dir.path(), 512, LabelRule::extension);
        REQUIRE(result.manifest.entries.size() == 1);
        CHECK(result.manifest.entries[0].label.str() == "unk");
    }

    SECTION("nonexistent root is an I/O error") {
        CHECK_THROWS_AS(scan_dataset("/nonexistent/sift/root", 512, LabelRule::extension),
                        std::runtime_error);
    }

    SECTION("fragment size outside the allowed set is a config error") {
        TempDir dir("scan-badr");
        CHECK_THROWS_AS(scan_dataset(dir.path(), 500, LabelRule::extension),
                        std::invalid_argument);
    }
}

TEST_CASE("scan_dataset invariants on a randomized tree") {
    TempDir dir("scan-prop");
    SeededRng rng(2024);
    const std::vector<std::string> exts{"csv", "pdf", "gz", "xml"};
    for (int i = 0; i < 40; ++i) {
        const auto sub = std::string(1, static_cast<char>('a' + rng.below(3)));
        const auto ext = exts[rng.below(exts.size())];
        const auto name = "file" + std::to_string(rng.below(25)) + "." + ext;
        const std::size_t size = rng.below(5000);
        sift_test::write_bytes(dir.path() / sub / name, filler(size));
    }

    const auto first = scan_dataset(dir.path(), 512, LabelRule::extension);
    const auto second = scan_dataset(dir.path(), 512, LabelRule::extension);

    SECTION("scanning twice is byte-identical") {
        CHECK(manifest_to_json(first.manifest).dump() ==
              manifest_to_json(second.manifest).dump());
    }

    SECTION("no two entries share a base name") {
        std::set<std::string> names;
        for (const auto& entry : first.manifest.entries) {
            CHECK(names.insert(entry.base_name).second);
        }
    }

    SECTION("every entry meets the size floor and entries are sorted") {
        for (const auto& entry : first.manifest.entries) {
            CHECK(entry.size_bytes >= 1024);
        }
        const auto paths = entry_paths(first.manifest);
        CHECK(std::ranges::is_sorted(paths));
    }

    SECTION("every entry label is in the label set") {
        for (const auto& entry : first.manifest.entries) {
            CHECK(first.manifest.label_id(entry.label).has_value());
        }
    }

    SECTION("growing the fragment size only shrinks the entry set") {
        const auto coarse = scan_dataset(dir.path(), 1024, LabelRule::extension);
        const auto fine_paths = entry_paths(first.manifest);
        for (const auto& entry : coarse.manifest.entries) {
            CHECK(std::ranges::find(fine_paths, entry.path) != fine_paths.end());
        }
        CHECK(coarse.manifest.entries.size() <= first.manifest.entries.size());
    }
}

TEST_CASE("dedup does not depend on the fragment size") {
    // the duplicate-name winner is fixed before the size filter runs, so a
    // coarser run can lose the winner but never swap in the shadowed file
    TempDir dir("scan-mono");
    sift_test::write_bytes(dir / "a/x.csv", filler(1500));
    sift_test::write_bytes(dir / "b/x.csv", filler(3000));

    const auto fine = scan_dataset(dir.path(), 512, LabelRule::extension);
    REQUIRE(fine.manifest.entries.size() == 1);
    CHECK(fine.manifest.entries[0].path.ends_with("a/x.csv"));

    const auto coarse = scan_dataset(dir.path(), 1024, LabelRule::extension);
    CHECK(coarse.manifest.entries.empty());
    REQUIRE(coarse.dropped_small.size() == 1);
    CHECK(coarse.dropped_small[0].ends_with("a/x.csv"));
}

TEST_CASE("manifest serializes to audit JSON") {
    TempDir dir("scan-json");
    sift_test::write_bytes(dir / "a.csv", filler(2048));
    sift_test::write_bytes(dir / "b.pdf", filler(4096));
    const auto result = scan_dataset(dir.path(), 512, LabelRule::extension);
    const auto json = manifest_to_json(result.manifest);

    CHECK(json["fragment_size"] == 512);
    REQUIRE(json["entries"].size() == 2);
    CHECK(json["entries"][0]["label"] == "csv");
    CHECK(json["entries"][0]["size"] == 2048);
    CHECK(json["label_set"] == nlohmann::json::array({"csv", "pdf"}));
}
