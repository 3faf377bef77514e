// sift: file-fragment type-classification toolkit.
//
// Subcommands: scan, extract, train, evaluate, classify, inspect-weights.
// Every randomized step takes an explicit --seed; reruns with the same
// configuration produce byte-identical outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "sift/sift.hpp"

namespace {

namespace fs = std::filesystem;

// Stream constants separating the CLI's rng uses of one user seed.
constexpr std::uint64_t kExtractStream = 0x65787472; // fragment extraction
constexpr std::uint64_t kTrainStream = 0x7472696e;   // forest training

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    out << text;
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

struct DataOptions {
    std::string dataset;
    std::string dump;
    std::size_t fragment_size = 512;
    std::string label_rule = "extension";
};

struct HyperOptions {
    std::uint32_t trees = 100;
    std::uint32_t mtry = 16;
    std::uint32_t min_leaf = 1;
    std::uint32_t max_depth = 0;
    std::string class_weight = "none";

    sift::Hyperparams to_hyperparams() const {
        sift::Hyperparams hyper;
        hyper.n_trees = trees;
        hyper.max_features_per_split = mtry;
        hyper.min_leaf_size = min_leaf;
        hyper.max_depth = max_depth;
        hyper.balanced_class_weight = class_weight == "balanced";
        return hyper;
    }
};

void add_data_options(CLI::App* cmd, DataOptions& opts, bool allow_dump) {
    auto* dataset = cmd->add_option("--dataset", opts.dataset,
                                    "Root directory of the labeled dataset");
    cmd->add_option("--fragment-size", opts.fragment_size, "Fragment size R in bytes")
        ->check(CLI::IsMember({32, 64, 128, 256, 512, 1024, 2048, 4096}))
        ->capture_default_str();
    cmd->add_option("--label-rule", opts.label_rule, "How file labels are derived")
        ->check(CLI::IsMember({"extension", "parent-dir"}))
        ->capture_default_str();
    if (allow_dump) {
        auto* dump = cmd->add_option("--dump", opts.dump,
                                     "Read fragments from this dump instead of a dataset");
        dataset->excludes(dump);
        dump->excludes(dataset);
    } else {
        dataset->required();
    }
}

void add_hyper_options(CLI::App* cmd, HyperOptions& opts) {
    cmd->add_option("--trees", opts.trees, "Number of trees in the forest")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--mtry", opts.mtry, "Features sampled per split")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    cmd->add_option("--min-leaf", opts.min_leaf, "Minimum samples per leaf")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--max-depth", opts.max_depth, "Maximum tree depth (0 = unbounded)")
        ->capture_default_str();
    cmd->add_option("--class-weight", opts.class_weight, "Leaf-vote class weighting")
        ->check(CLI::IsMember({"none", "balanced"}))
        ->capture_default_str();
}

sift::LabelRule parse_label_rule(const std::string& rule) {
    return rule == "parent-dir" ? sift::LabelRule::parent_dir : sift::LabelRule::extension;
}

void report_scan_drops(const sift::ScanResult& scan) {
    for (const auto& reject : scan.rejects) {
        std::cerr << "reject: " << reject.path << " (" << reject.reason << ")\n";
    }
    if (!scan.dropped_small.empty()) {
        std::cerr << scan.dropped_small.size()
                  << " file(s) below twice the fragment size were excluded\n";
    }
    if (!scan.dropped_dupes.empty()) {
        std::cerr << scan.dropped_dupes.size()
                  << " duplicate-named file(s) were excluded\n";
    }
}

/// Fragments either read back from a dump or extracted fresh from a dataset.
sift::FragmentSet load_fragments(const DataOptions& opts, std::uint64_t seed) {
    if (!opts.dump.empty()) {
        return sift::read_fragment_dump(opts.dump);
    }
    if (opts.dataset.empty()) {
        throw std::runtime_error("either --dataset or --dump is required");
    }
    const auto scan =
        sift::scan_dataset(opts.dataset, opts.fragment_size, parse_label_rule(opts.label_rule));
    report_scan_drops(scan);
    if (scan.manifest.entries.empty()) {
        throw std::runtime_error("no usable files in dataset: " + opts.dataset);
    }
    return sift::extract_fragments(scan.manifest, sift::mix_seed(seed, kExtractStream));
}

int run_scan(const DataOptions& data, const std::string& output) {
    const auto scan =
        sift::scan_dataset(data.dataset, data.fragment_size, parse_label_rule(data.label_rule));
    report_scan_drops(scan);
    const auto json = sift::manifest_to_json(scan.manifest);
    if (output.empty()) {
        std::cout << json.dump(2) << '\n';
    } else {
        write_text_file(output, json.dump(2) + "\n");
        std::cout << "manifest: " << output << " (" << scan.manifest.entries.size()
                  << " entries, " << scan.manifest.label_set.size() << " classes)\n";
    }
    return 0;
}

int run_extract(const DataOptions& data, std::uint64_t seed, const std::string& dump_path,
                const std::string& summary_path, const std::string& features_csv_path) {
    const auto set = load_fragments(data, seed);
    sift::write_fragment_dump(set, dump_path);

    struct ClassTotals {
        std::uint64_t files = 0;
        std::uint64_t fragments = 0;
    };
    std::map<std::string, ClassTotals> totals;
    {
        std::size_t frag_index = 0;
        for (const auto count : set.per_file_counts) {
            const auto& label = set.labels[set.fragments[frag_index].label_id];
            auto& t = totals[label.str()];
            ++t.files;
            t.fragments += count;
            frag_index += count;
        }
    }

    std::printf("%-12s %8s %12s\n", "class", "files", "fragments");
    std::uint64_t all_files = 0;
    std::uint64_t all_fragments = 0;
    for (const auto& [label, t] : totals) {
        std::printf("%-12s %8llu %12llu\n", label.c_str(),
                    static_cast<unsigned long long>(t.files),
                    static_cast<unsigned long long>(t.fragments));
        all_files += t.files;
        all_fragments += t.fragments;
    }
    std::printf("%-12s %8llu %12llu\n", "total", static_cast<unsigned long long>(all_files),
                static_cast<unsigned long long>(all_fragments));
    std::printf("dump: %s\n", dump_path.c_str());

    if (!summary_path.empty()) {
        nlohmann::json classes = nlohmann::json::array();
        for (const auto& [label, t] : totals) {
            classes.push_back({{"label", label}, {"files", t.files}, {"fragments", t.fragments}});
        }
        const nlohmann::json summary = {{"fragment_size", set.fragment_size},
                                        {"seed", seed},
                                        {"classes", classes},
                                        {"total_files", all_files},
                                        {"total_fragments", all_fragments}};
        write_text_file(summary_path, summary.dump(2) + "\n");
    }
    if (!features_csv_path.empty()) {
        const auto stats = sift::fit_doc_freq(set.fragments);
        const auto matrix = sift::vectorize_all(set.fragments, stats);
        std::vector<std::uint16_t> ids;
        ids.reserve(set.fragments.size());
        for (const auto& fragment : set.fragments) {
            ids.push_back(fragment.label_id);
        }
        write_text_file(features_csv_path, sift::feature_matrix_csv(matrix, ids, set.labels));
    }
    return 0;
}

int run_train(const DataOptions& data, const HyperOptions& hyper_opts, std::uint64_t seed,
              const std::string& model_path) {
    const auto set = load_fragments(data, seed);
    const auto stats = sift::fit_doc_freq(set.fragments);
    const auto matrix = sift::vectorize_all(set.fragments, stats);
    std::vector<std::uint16_t> y;
    y.reserve(set.fragments.size());
    for (const auto& fragment : set.fragments) {
        y.push_back(fragment.label_id);
    }
    const auto forest =
        sift::train(matrix, y, set.labels, hyper_opts.to_hyperparams(),
                    sift::mix_seed(seed, kTrainStream), stats, set.fragment_size);
    sift::save_model(forest, model_path);
    std::cout << "trained " << forest.trees.size() << " trees on " << set.fragments.size()
              << " fragments across " << set.labels.size() << " classes\n";
    std::cout << "model: " << model_path << '\n';
    return 0;
}

int run_evaluate(const DataOptions& data, const HyperOptions& hyper_opts,
                 const sift::EvalConfig& base_config, const std::string& report_prefix) {
    const auto set = load_fragments(data, base_config.seed);
    sift::EvalConfig config = base_config;
    config.hyper = hyper_opts.to_hyperparams();
    const auto report = sift::cross_validate(set, config);

    std::printf("%-12s %8s %8s %10s %10s %10s\n", "class", "tpr", "fpr", "precision",
                "f-measure", "support");
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const auto& m = report.per_class[c];
        std::printf("%-12s %8.4f %8.4f %10.4f %10.4f %10llu\n",
                    report.matrix.labels[c].str().c_str(), m.tpr, m.fpr, m.precision,
                    m.f_measure, static_cast<unsigned long long>(m.support));
    }
    std::printf("%-12s %8.4f %8.4f %10.4f %10.4f %10llu\n", "weighted-avg",
                report.weighted.tpr, report.weighted.fpr, report.weighted.precision,
                report.weighted.f_measure,
                static_cast<unsigned long long>(report.weighted.support));
    for (const auto& warning : report.warnings) {
        std::cerr << "warning: " << warning << '\n';
    }

    if (!report_prefix.empty()) {
        write_text_file(report_prefix + ".json", sift::report_to_json(report).dump(2) + "\n");
        write_text_file(report_prefix + "_confusion.csv",
                        sift::confusion_matrix_csv(report.matrix));
        write_text_file(report_prefix + "_metrics.csv", sift::per_class_metrics_csv(report));
        std::cout << "report: " << report_prefix << ".json\n";
    }
    return 0;
}

int run_classify(const std::string& model_path, const std::string& input) {
    const auto forest = sift::load_model(model_path);
    const std::size_t r = forest.fragment_size;

    std::vector<std::uint8_t> bytes;
    const bool from_stdin = input == "-";
    if (from_stdin) {
        std::cin.sync_with_stdio(false);
        bytes.assign(std::istreambuf_iterator<char>(std::cin),
                     std::istreambuf_iterator<char>());
    } else {
        bytes = sift::detail::read_file(input);
    }

    const std::size_t blocks = bytes.size() / r;
    const std::size_t tail = bytes.size() % r;
    if (tail != 0 && from_stdin) {
        throw std::runtime_error("stream length " + std::to_string(bytes.size()) +
                                 " is not a multiple of the model fragment size " +
                                 std::to_string(r));
    }
    for (std::size_t block = 0; block < blocks; ++block) {
        const std::span<const std::uint8_t> slice(bytes.data() + block * r, r);
        const auto prediction = sift::classify_fragment(forest, slice);
        std::printf("%zu\t%s\t%.4f\n", block * r,
                    forest.label(prediction.label_id).str().c_str(),
                    prediction.vote_fractions[prediction.label_id]);
    }
    if (tail != 0) {
        std::cerr << "note: " << tail << " trailing byte(s) do not fill a fragment "
                  << "and were not classified\n";
    }
    return 0;
}

int run_inspect_weights(const std::string& model_path, const std::string& class_name,
                        std::size_t top_n) {
    const auto forest = sift::load_model(model_path);
    const auto it = std::ranges::find_if(
        forest.label_set, [&](const sift::ClassLabel& l) { return l.str() == class_name; });
    if (it == forest.label_set.end()) {
        std::string valid;
        for (const auto& label : forest.label_set) {
            valid += valid.empty() ? label.str() : ", " + label.str();
        }
        throw std::runtime_error("unknown class \"" + class_name + "\" (valid: " + valid + ")");
    }
    const auto& means =
        forest.class_mean_weights[static_cast<std::size_t>(it - forest.label_set.begin())];

    std::vector<std::size_t> order(sift::kByteValues);
    for (std::size_t v = 0; v < order.size(); ++v) {
        order[v] = v;
    }
    std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
        if (means[a] != means[b]) {
            return means[a] > means[b];
        }
        return a < b;
    });

    std::printf("%-6s %-8s %12s\n", "byte", "symbol", "mean_weight");
    for (std::size_t rank = 0; rank < std::min(top_n, order.size()); ++rank) {
        const std::size_t v = order[rank];
        std::string symbol = ".";
        if (v == 0x20) {
            symbol = "(space)";
        } else if (v > 0x20 && v < 0x7F) {
            symbol = std::string(1, static_cast<char>(v));
        }
        std::printf("0x%02zX   %-8s %12.6f\n", v, symbol.c_str(), means[v]);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sift-carve: file-fragment type classification"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file (key=value; one [section] per subcommand)");

    int exit_code = 0;

    // scan
    DataOptions scan_data;
    std::string scan_output;
    auto* scan = app.add_subcommand("scan", "Scan a dataset and write its manifest");
    add_data_options(scan, scan_data, /*allow_dump=*/false);
    scan->add_option("--output", scan_output, "Manifest JSON path (default: stdout)");
    scan->callback([&] { exit_code = run_scan(scan_data, scan_output); });

    // extract
    DataOptions extract_data;
    std::uint64_t extract_seed = 0;
    std::string extract_dump;
    std::string extract_summary;
    std::string extract_features_csv;
    auto* extract = app.add_subcommand("extract", "Extract fragments into a binary dump");
    add_data_options(extract, extract_data, /*allow_dump=*/false);
    extract->add_option("--seed", extract_seed, "Rng seed (required)")->required();
    extract->add_option("--dump", extract_dump, "Output fragment dump path")->required();
    extract->add_option("--summary", extract_summary, "Per-class summary JSON path");
    extract->add_option("--features-csv", extract_features_csv,
                        "Optional TF-IDF feature matrix CSV (whole-set stats)");
    extract->callback([&] {
        exit_code = run_extract(extract_data, extract_seed, extract_dump, extract_summary,
                                extract_features_csv);
    });

    // train
    DataOptions train_data;
    HyperOptions train_hyper;
    std::uint64_t train_seed = 0;
    std::string train_model;
    auto* train = app.add_subcommand("train", "Train a forest and save the model");
    add_data_options(train, train_data, /*allow_dump=*/true);
    add_hyper_options(train, train_hyper);
    train->add_option("--seed", train_seed, "Rng seed (required)")->required();
    train->add_option("--model", train_model, "Output model path")->required();
    train->callback([&] { exit_code = run_train(train_data, train_hyper, train_seed, train_model); });

    // evaluate
    DataOptions eval_data;
    HyperOptions eval_hyper;
    sift::EvalConfig eval_config;
    std::string eval_report;
    std::string eval_stats_policy = "per-fold";
    auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation report");
    add_data_options(evaluate, eval_data, /*allow_dump=*/true);
    add_hyper_options(evaluate, eval_hyper);
    evaluate->add_option("--k", eval_config.k, "Number of folds")
        ->check(CLI::Range(2, 65535))
        ->capture_default_str();
    evaluate->add_option("--seed", eval_config.seed, "Rng seed (required)")->required();
    evaluate->add_option("--stats-policy", eval_stats_policy,
                         "Fit byte statistics per training fold or once globally")
        ->check(CLI::IsMember({"per-fold", "global"}))
        ->capture_default_str();
    evaluate->add_flag("--stratified", eval_config.stratified,
                       "Stratify folds by class");
    evaluate->add_flag("--group-by-file", eval_config.group_by_file,
                       "Keep each file's fragments in one fold");
    evaluate->add_option("--report", eval_report,
                         "Report path prefix (writes <prefix>.json, _confusion.csv, _metrics.csv)");
    evaluate->callback([&] {
        eval_config.stats_policy = eval_stats_policy == "global" ? sift::StatsPolicy::global
                                                                 : sift::StatsPolicy::per_fold;
        exit_code = run_evaluate(eval_data, eval_hyper, eval_config, eval_report);
    });

    // classify
    std::string classify_model;
    std::string classify_input;
    auto* classify = app.add_subcommand("classify", "Label every fragment-sized block of input");
    classify->add_option("--model", classify_model, "Trained model path")->required();
    classify->add_option("--input", classify_input, "Input file, or '-' for stdin")->required();
    classify->callback([&] { exit_code = run_classify(classify_model, classify_input); });

    // inspect-weights
    std::string inspect_model;
    std::string inspect_class;
    std::size_t inspect_top = 10;
    auto* inspect = app.add_subcommand("inspect-weights",
                                       "Top mean byte weights for one class");
    inspect->add_option("--model", inspect_model, "Trained model path")->required();
    inspect->add_option("--class", inspect_class, "Class label to inspect")->required();
    inspect->add_option("--top", inspect_top, "Rows to print")->capture_default_str();
    inspect->callback([&] { exit_code = run_inspect_weights(inspect_model, inspect_class, inspect_top); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return exit_code;
}
