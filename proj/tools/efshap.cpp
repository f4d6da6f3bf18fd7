// efshap: synthetic cohort -> ETL -> boosted trees -> SHAP -> t-SNE -> SVG,
// as one binary with a subcommand per stage plus `run` for whole pipelines.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "efshap/pipeline.hpp"

namespace {

using namespace efshap;

int run_app(int argc, char** argv) {
    CLI::App app{"interpretable EF regression pipeline on EHR-style event tables"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags like --threads may follow the subcommand

    int threads = 0;
    app.add_option("--threads", threads,
                   "worker threads (0 = EFSHAP_THREADS env or hardware)")
        ->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort as raw CSV tables");
    std::string synth_config, synth_out;
    std::uint64_t synth_seed = 0;
    bool synth_seed_set = false;
    synth->add_option("--config", synth_config, "cohort config JSON")->required();
    synth->add_option("--out", synth_out, "output directory for raw tables")->required();
    synth->add_option("--seed", synth_seed, "override the config seed")
        ->each([&](const std::string&) { synth_seed_set = true; });

    // etl
    auto* etl = app.add_subcommand("etl", "raw tables -> case matrix directory");
    std::string etl_raw, etl_maps, etl_config, etl_out;
    etl->add_option("--raw", etl_raw, "raw table directory")->required();
    etl->add_option("--maps", etl_maps, "code map directory (ndc_to_atc.tsv, icd9_to_icd10.tsv)")
        ->required();
    etl->add_option("--config", etl_config, "etl config JSON")->required();
    etl->add_option("--out", etl_out, "case directory to write")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "fit boosted regression trees on the train split");
    std::string train_cases, train_params, train_out;
    train_cmd->add_option("--cases", train_cases, "case directory")->required();
    train_cmd->add_option("--params", train_params, "hyperparameter JSON")->required();
    train_cmd->add_option("--out", train_out, "model JSON to write")->required();

    // tune
    auto* tune_cmd = app.add_subcommand("tune", "coordinate-descent grid search with k-fold CV");
    std::string tune_cases, tune_grid, tune_out;
    tune_cmd->add_option("--cases", tune_cases, "case directory")->required();
    tune_cmd->add_option("--grid", tune_grid, "grid config JSON")->required();
    tune_cmd->add_option("--out", tune_out, "best hyperparameters JSON to write")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "RMSE / R^2 / Pearson r on a split");
    std::string eval_cases, eval_model, eval_split = "test", eval_out;
    eval_cmd->add_option("--cases", eval_cases, "case directory")->required();
    eval_cmd->add_option("--model", eval_model, "model JSON")->required();
    eval_cmd->add_option("--split", eval_split, "train|valid|test|all")->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "report JSON to write")->required();

    // explain
    auto* explain_cmd = app.add_subcommand("explain", "TreeSHAP values for a split");
    std::string explain_cases, explain_model, explain_split = "test", explain_out;
    explain_cmd->add_option("--cases", explain_cases, "case directory")->required();
    explain_cmd->add_option("--model", explain_model, "model JSON")->required();
    explain_cmd->add_option("--split", explain_split, "train|valid|test|all")->capture_default_str();
    explain_cmd->add_option("--out", explain_out, "shap directory to write")->required();

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "t-SNE to 2D in raw-feature or SHAP space");
    std::string embed_input, embed_cases, embed_space = "shap", embed_split = "test";
    std::string embed_config, embed_out;
    std::size_t embed_max_n = 2000;
    embed_cmd->add_option("--input", embed_input, "shap directory (space=shap) or case directory (space=raw)");
    embed_cmd->add_option("--cases", embed_cases,
                          "case directory for labels (defaults to --input for space=raw)");
    embed_cmd->add_option("--space", embed_space, "shap|raw")->capture_default_str();
    embed_cmd->add_option("--split", embed_split, "rows for space=raw")->capture_default_str();
    embed_cmd->add_option("--config", embed_config, "t-SNE config JSON");
    embed_cmd->add_option("--max-n", embed_max_n, "cap on embedded rows (exact O(N^2) cost)")
        ->capture_default_str();
    embed_cmd->add_option("--out", embed_out, "embedding CSV to write")->required();

    // plot
    auto* plot_cmd = app.add_subcommand("plot", "render a deterministic SVG figure");
    std::string plot_kind, plot_model, plot_cases, plot_shap, plot_embed;
    std::string plot_split = "test", plot_feature, plot_color_by;
    std::size_t plot_top = 20;
    int plot_width = 800, plot_height = 500;
    std::uint64_t plot_seed = 0;
    std::string plot_out;
    plot_cmd->add_option("--kind", plot_kind,
                         "pred_scatter|importance_bars|beeswarm|dependence|embedding")
        ->required();
    plot_cmd->add_option("--model", plot_model, "model JSON (pred_scatter, importance_bars)");
    plot_cmd->add_option("--cases", plot_cases, "case directory");
    plot_cmd->add_option("--shap", plot_shap, "shap directory (beeswarm, dependence)");
    plot_cmd->add_option("--embed", plot_embed, "embedding CSV (embedding)");
    plot_cmd->add_option("--split", plot_split, "train|valid|test|all")->capture_default_str();
    plot_cmd->add_option("--feature", plot_feature, "feature name (dependence)");
    plot_cmd->add_option("--color-by", plot_color_by, "feature name or 'ef' (embedding)");
    plot_cmd->add_option("--top", plot_top, "features shown (beeswarm, importance)")
        ->capture_default_str();
    plot_cmd->add_option("--width", plot_width)->capture_default_str();
    plot_cmd->add_option("--height", plot_height)->capture_default_str();
    plot_cmd->add_option("--seed", plot_seed, "jitter seed")->capture_default_str();
    plot_cmd->add_option("--out", plot_out, "SVG to write")->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "execute a whole pipeline config");
    std::string run_config;
    run_cmd->add_option("--config", run_config, "pipeline JSON")->required();

    CLI11_PARSE(app, argc, argv);

    if (*synth) {
        stage_synth(synth_config, synth_out,
                    synth_seed_set ? std::optional<std::uint64_t>(synth_seed) : std::nullopt,
                    threads);
        std::printf("wrote raw tables to %s\n", synth_out.c_str());
    } else if (*etl) {
        stage_etl(etl_raw, etl_maps, etl_config, etl_out);
        std::printf("wrote case directory %s\n", etl_out.c_str());
    } else if (*train_cmd) {
        stage_train(train_cases, train_params, train_out);
        std::printf("wrote model %s\n", train_out.c_str());
    } else if (*tune_cmd) {
        const TuneResult r = stage_tune(tune_cases, tune_grid, tune_out);
        std::printf("best cv rmse %.6f after %d sweep(s)%s -> %s\n", r.best_rmse, r.sweeps,
                    r.converged ? "" : " (sweep budget hit)", tune_out.c_str());
    } else if (*eval_cmd) {
        const EvalReport r = stage_eval(eval_cases, eval_model, parse_split_part(eval_split), eval_out);
        std::printf("n=%zu rmse=%.6f", r.n, r.rmse);
        if (r.r2) std::printf(" r2=%.6f", *r.r2);
        if (r.pearson_r) std::printf(" pearson_r=%.6f", *r.pearson_r);
        std::printf(" -> %s\n", eval_out.c_str());
    } else if (*explain_cmd) {
        stage_explain(explain_cases, explain_model, parse_split_part(explain_split), explain_out,
                      threads);
        std::printf("wrote shap directory %s\n", explain_out.c_str());
    } else if (*embed_cmd) {
        EmbedStageOptions options;
        options.space = embed_space;
        options.input_dir = embed_input;
        options.cases_dir = embed_cases;
        if (options.space == "raw" && embed_cases.empty()) options.cases_dir = embed_input;
        options.split = parse_split_part(embed_split);
        options.max_n = embed_max_n;
        options.config_file = embed_config;
        options.threads = threads;
        if (options.space == "shap" && (embed_input.empty() || embed_cases.empty())) {
            throw ConfigError("--space shap needs --input (shap directory) and --cases");
        }
        if (options.cases_dir.empty()) {
            throw ConfigError("embed needs --input or --cases to locate the case directory");
        }
        const Embedding2D e = stage_embed(options, embed_out);
        std::printf("embedded %zu points (%s), final KL %.6f -> %s\n", e.coords.size() / 2,
                    e.input_space.c_str(), e.final_kl, embed_out.c_str());
    } else if (*plot_cmd) {
        PlotSpec spec;
        spec.kind = parse_plot_kind(plot_kind);
        spec.model_file = plot_model;
        spec.cases_dir = plot_cases;
        spec.shap_dir = plot_shap;
        spec.embed_file = plot_embed;
        spec.split = parse_split_part(plot_split);
        spec.feature = plot_feature;
        spec.color_by = plot_color_by;
        spec.top_k = plot_top;
        spec.width = plot_width;
        spec.height = plot_height;
        spec.seed = plot_seed;
        stage_plot(spec, plot_out);
        std::printf("wrote %s\n", plot_out.c_str());
    } else if (*run_cmd) {
        const RunManifest manifest = run_pipeline(run_config, threads);
        std::printf("pipeline complete: %zu stage(s)\n", manifest.stages.size());
        for (const StageRecord& r : manifest.stages) {
            std::printf("  %-8s %6.2fs  %zu output file(s)\n", r.stage.c_str(), r.wall_seconds,
                        r.output_checksums.size());
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_app(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
