#include "tracemia/cli.hpp"

#include "tracemia/baselines.hpp"
#include "tracemia/classifier.hpp"
#include "tracemia/evaluation.hpp"
#include "tracemia/feature_matrix.hpp"
#include "tracemia/synth.hpp"
#include "tracemia/toy_lm.hpp"
#include "tracemia/trace_io.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tracemia {

namespace {

namespace fs = std::filesystem;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void write_output(const std::string& path, const std::string& text) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    save_text(path, text);
}

std::string csv_text(const std::function<void(std::ostream&)>& writer) {
    std::ostringstream out;
    writer(out);
    return out.str();
}

struct Args {
    std::string manifest, head, out, features, model, report, method = "ppl", paired, spec, config, params,
        members, nonmembers;
    std::optional<std::size_t> layer;
    unsigned workers = 1;
    std::uint64_t seed = 420;
    double threshold = kNeighborThreshold;
    double k = 20.0;
    bool fast = false;
};

int cmd_extract(const Args& a) {
    ExtractOptions opt;
    opt.layer_filter = a.layer;
    opt.workers = a.workers;
    const auto matrix = extract_matrix(read_manifest(a.manifest), read_head(a.head), opt);
    write_output(a.out, csv_text([&](std::ostream& o) { write_csv(matrix, o); }));
    std::cerr << "extracted " << matrix.rows() << " rows x " << matrix.cols() << " features\n";
    return 0;
}

int cmd_train(const Args& a) {
    const auto matrix = read_csv(a.features);
    PipelineOptions opt;
    opt.workers = a.workers;
    const auto result = train_pipeline(matrix, a.seed, opt);
    write_output(a.out, model_to_json(result.model));
    if (!a.report.empty()) write_output(a.report, report_to_json(result.report));
    std::cerr << "held-out AUC " << format_real(result.report.heldout_auc) << ", fold AUC "
              << format_real(result.report.fold_auc_mean) << " +/- " << format_real(result.report.fold_auc_std)
              << "\n";
    return 0;
}

int cmd_eval(const Args& a) {
    const auto model = model_from_json(load_text(a.model));
    const auto summary = evaluate_model(model, read_csv(a.features), a.threshold);
    write_output(a.out, eval_to_json(summary));
    if (summary.auc) std::cerr << "AUC " << format_real(*summary.auc) << "\n";
    return 0;
}

int cmd_neighbors(const Args& a) {
    const auto model = model_from_json(load_text(a.model));
    const auto summary = evaluate_neighbors(model, read_csv(a.features), a.threshold);
    write_output(a.out, eval_to_json(summary));
    std::cerr << "precision " << (summary.pr.precision ? format_real(*summary.pr.precision) : "undefined")
              << ", recall " << format_real(summary.pr.recall) << "\n";
    return 0;
}

int cmd_layerwise(const Args& a) {
    LayerwiseOptions opt;
    opt.full_pipeline = !a.fast;
    opt.workers = a.workers;
    const auto curve = layerwise_auc(read_manifest(a.manifest), read_head(a.head), a.seed, opt);
    write_output(a.out, csv_text([&](std::ostream& o) { write_layerwise_csv(curve, o); }));
    return 0;
}

int cmd_baseline(const Args& a) {
    BaselineOptions opt;
    opt.method = parse_baseline_method(a.method);
    opt.k_percent = a.k;
    opt.workers = a.workers;
    std::optional<DatasetManifest> paired;
    if (!a.paired.empty()) {
        paired = read_manifest(a.paired);
        opt.paired = &*paired;
    }
    const auto rows = run_baseline(read_manifest(a.manifest), read_head(a.head), opt);
    write_output(a.out, csv_text([&](std::ostream& o) { write_baseline_csv(rows, o); }));
    return 0;
}

int cmd_synth(const Args& a) {
    const auto spec = synth_spec_from_json(load_text(a.spec));
    const auto manifest = generate(spec, a.out, a.workers);
    std::cerr << "wrote " << manifest.entries.size() << " traces to " << a.out << "\n";
    return 0;
}

int cmd_toy_train(const Args& a) {
    const auto recipe = toy::load_recipe(a.config);
    const auto data = toy::make_recipe_data(recipe);
    auto params = toy::init_params(recipe.model);
    const auto member_tokens = toy::token_lists(data.members);
    const auto result = toy::train(params, member_tokens, recipe.train);

    const fs::path out(a.out);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    toy::save_params(params, a.out);
    const fs::path dir = out.parent_path();
    toy::write_sequences((dir / "members.jsonl").string(), data.members);
    toy::write_sequences((dir / "nonmembers.jsonl").string(), data.nonmembers);
    write_output((dir / "loss_curve.csv").string(), csv_text([&](std::ostream& o) {
                     o << "step,loss\n";
                     for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
                         o << i << ',' << format_real(result.loss_curve[i]) << '\n';
                     }
                 }));

    auto mean_loss = [&](const std::vector<toy::LabeledSequence>& seqs) {
        double total = 0.0;
        for (const auto& s : seqs) total += toy::loss(params, s.tokens);
        return seqs.empty() ? 0.0 : total / static_cast<double>(seqs.size());
    };
    std::cerr << "member loss " << format_real(mean_loss(data.members)) << ", nonmember loss "
              << format_real(mean_loss(data.nonmembers)) << "\n";
    return 0;
}

int cmd_toy_export(const Args& a) {
    const auto params = toy::load_params(a.params);
    const auto members = toy::read_sequences(a.members);
    const auto nonmembers = toy::read_sequences(a.nonmembers);
    const auto manifest = toy::export_traces(params, members, nonmembers, a.out, a.workers);
    std::cerr << "wrote " << manifest.entries.size() << " traces to " << a.out << "\n";
    return 0;
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Membership inference from internal model traces"};
    app.name("tracemia");
    app.require_subcommand(1);
    Args a;

    auto workers_opt = [&](CLI::App* sub) {
        sub->add_option("--workers", a.workers, "worker threads (0 = all cores)")->capture_default_str();
    };

    auto* extract = app.add_subcommand("extract", "extract feature vectors from traces");
    extract->add_option("--manifest", a.manifest, "dataset manifest (.jsonl)")->required();
    extract->add_option("--head", a.head, "model head (.mthd)")->required();
    extract->add_option("--out", a.out, "features.csv")->required();
    extract->add_option("--layer", a.layer, "keep only features tagged with this layer");
    workers_opt(extract);

    auto* train = app.add_subcommand("train", "nested-CV training of the random forest");
    train->add_option("--features", a.features, "features.csv")->required();
    train->add_option("--seed", a.seed, "random seed")->capture_default_str();
    train->add_option("--out", a.out, "model.json")->required();
    train->add_option("--report", a.report, "report.json");
    workers_opt(train);

    auto* eval = app.add_subcommand("eval", "score members against nonmembers");
    eval->add_option("--model", a.model, "model.json")->required();
    eval->add_option("--features", a.features, "features.csv")->required();
    eval->add_option("--out", a.out, "eval.json")->required();

    auto* layerwise = app.add_subcommand("layerwise", "held-out AUC per layer");
    layerwise->add_option("--manifest", a.manifest, "dataset manifest (.jsonl)")->required();
    layerwise->add_option("--head", a.head, "model head (.mthd)")->required();
    layerwise->add_option("--seed", a.seed, "random seed")->capture_default_str();
    layerwise->add_option("--out", a.out, "layerwise.csv")->required();
    layerwise->add_flag("--fast", a.fast, "fixed hyperparameters instead of the nested search");
    workers_opt(layerwise);

    auto* neighbors = app.add_subcommand("neighbors", "zero-shot precision/recall on neighbor rows");
    neighbors->add_option("--model", a.model, "model.json")->required();
    neighbors->add_option("--features", a.features, "features.csv with neighbor rows")->required();
    neighbors->add_option("--threshold", a.threshold, "decision threshold")->capture_default_str();
    neighbors->add_option("--out", a.out, "eval.json")->required();

    auto* baseline = app.add_subcommand("baseline", "output-only reference attacks");
    baseline->add_option("--manifest", a.manifest, "dataset manifest (.jsonl)")->required();
    baseline->add_option("--head", a.head, "model head (.mthd)")->required();
    baseline->add_option("--method", a.method, "ppl|mink|zlib|lowercase")
        ->required()
        ->check(CLI::IsMember({"ppl", "mink", "zlib", "lowercase"}));
    baseline->add_option("--k", a.k, "percent of tokens for mink")->capture_default_str();
    baseline->add_option("--paired", a.paired, "manifest of lowercased traces");
    baseline->add_option("--out", a.out, "baseline.csv")->required();
    workers_opt(baseline);

    auto* synth = app.add_subcommand("synth", "generate synthetic traces with planted signal");
    synth->add_option("--spec", a.spec, "spec.json")->required();
    synth->add_option("--out", a.out, "output directory")->required();
    workers_opt(synth);

    auto* toy_train = app.add_subcommand("toy-train", "train the toy language model");
    toy_train->add_option("--config", a.config, "recipe .json")->required();
    toy_train->add_option("--out", a.out, "params.bin")->required();

    auto* toy_export = app.add_subcommand("toy-export", "write traces from the toy language model");
    toy_export->add_option("--params", a.params, "params.bin")->required();
    toy_export->add_option("--members", a.members, "member sequences (.jsonl)")->required();
    toy_export->add_option("--nonmembers", a.nonmembers, "nonmember sequences (.jsonl)")->required();
    toy_export->add_option("--out", a.out, "output directory")->required();
    workers_opt(toy_export);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*extract) return cmd_extract(a);
        if (*train) return cmd_train(a);
        if (*eval) return cmd_eval(a);
        if (*layerwise) return cmd_layerwise(a);
        if (*neighbors) return cmd_neighbors(a);
        if (*baseline) return cmd_baseline(a);
        if (*synth) return cmd_synth(a);
        if (*toy_train) return cmd_toy_train(a);
        if (*toy_export) return cmd_toy_export(a);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace tracemia
