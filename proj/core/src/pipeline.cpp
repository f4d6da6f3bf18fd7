#include "efshap/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "efshap/csv.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

void stage_synth(const std::filesystem::path& config_file, const std::filesystem::path& out_dir,
                 std::optional<std::uint64_t> seed_override, int threads) {
    CohortConfig config = cohort_config_from_json_file(config_file);
    if (seed_override) config.seed = *seed_override;
    const EventStore store = generate_cohort(config, threads);
    write_raw_tables(store, out_dir, config.seed);
}

void stage_etl(const std::filesystem::path& raw_dir, const std::filesystem::path& maps_dir,
               const std::filesystem::path& config_file, const std::filesystem::path& out_dir) {
    const EventStore store = read_raw_tables(raw_dir);
    const CodeMaps maps = load_code_maps(maps_dir);
    const EtlConfig config = etl_config_from_json_file(config_file);
    std::optional<std::uint64_t> source_seed;
    const auto raw_manifest = raw_dir / "manifest.json";
    if (std::filesystem::exists(raw_manifest)) {
        const json j = json::parse(read_text_file(raw_manifest));
        if (j.contains("seed")) source_seed = j.at("seed").get<std::uint64_t>();
    }
    run_etl_to_dir(store, maps, config, out_dir, source_seed);
}

void stage_train(const std::filesystem::path& cases_dir, const std::filesystem::path& params_file,
                 const std::filesystem::path& out_file) {
    const CaseMatrix cases = load_case_dir(cases_dir);
    const CaseDirMeta meta = load_case_dir_meta(cases_dir);
    const Hyperparams hp = hyperparams_from_json_file(params_file);
    const CaseMatrix train_part = cases.select_rows(select_split(cases, meta, SplitPart::Train));
    save_model(out_file, train(train_part, hp));
}

TuneResult stage_tune(const std::filesystem::path& cases_dir, const std::filesystem::path& grid_file,
                      const std::filesystem::path& out_file) {
    const CaseMatrix cases = load_case_dir(cases_dir);
    const CaseDirMeta meta = load_case_dir_meta(cases_dir);
    const TuneGrid grid = tune_grid_from_json_file(grid_file);
    const CaseMatrix train_part = cases.select_rows(select_split(cases, meta, SplitPart::Train));
    const TuneResult result = tune(train_part, grid);

    json j{{"version", 1},
           {"cv_rmse", result.best_rmse},
           {"sweeps", result.sweeps},
           {"converged", result.converged},
           {"n_trees", result.best.n_trees},
           {"max_depth", result.best.max_depth},
           {"eta", result.best.eta},
           {"min_child_weight", result.best.min_child_weight},
           {"col_sample_by_tree", result.best.col_sample_by_tree},
           {"col_sample_by_level", result.best.col_sample_by_level},
           {"subsample", result.best.subsample},
           {"reg_alpha", result.best.reg_alpha},
           {"reg_lambda", result.best.reg_lambda},
           {"gamma", result.best.gamma},
           {"seed", result.best.seed}};
    write_text_file(out_file, j.dump(2) + "\n");
    return result;
}

EvalReport stage_eval(const std::filesystem::path& cases_dir, const std::filesystem::path& model_file,
                      SplitPart split, const std::filesystem::path& out_file) {
    const CaseMatrix cases = load_case_dir(cases_dir);
    const CaseDirMeta meta = load_case_dir_meta(cases_dir);
    const GbtModel model = load_model(model_file);
    const CaseMatrix part = cases.select_rows(select_split(cases, meta, split));
    const EvalReport report = evaluate(model, part);
    save_eval_report(out_file, report);
    return report;
}

void stage_explain(const std::filesystem::path& cases_dir, const std::filesystem::path& model_file,
                   SplitPart split, const std::filesystem::path& out_dir, int threads) {
    const CaseMatrix cases = load_case_dir(cases_dir);
    const CaseDirMeta meta = load_case_dir_meta(cases_dir);
    const GbtModel model = load_model(model_file);
    const CaseMatrix part = cases.select_rows(select_split(cases, meta, split));
    const ShapMatrix shap = explain_dataset(model, part, threads);
    save_shap_dir(out_dir, shap, part.catalog(), checksum_file(model_file));
}

Embedding2D stage_embed(const EmbedStageOptions& options, const std::filesystem::path& out_file) {
    TsneConfig config;
    if (!options.config_file.empty()) config = tsne_config_from_json_file(options.config_file);

    std::vector<double> points;
    std::vector<CaseId> ids;
    std::vector<double> labels;
    std::size_t dim = 0;

    if (options.space == "shap") {
        const ShapMatrix shap = load_shap_dir(options.input_dir);
        const CaseMatrix cases = load_case_dir(options.cases_dir);
        std::map<std::pair<std::string, Date>, double> label_of;
        for (std::size_t i = 0; i < cases.n_cases(); ++i) {
            label_of[{cases.case_ids()[i].patient_id, cases.case_ids()[i].echo_date}] =
                cases.labels()[i];
        }
        std::vector<std::size_t> rows(std::min(options.max_n, shap.n_cases()));
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
        points = prepare_shap_points(shap, rows);
        dim = shap.n_features;
        for (std::size_t i : rows) {
            const CaseId& id = shap.case_ids[i];
            const auto it = label_of.find({id.patient_id, id.echo_date});
            if (it == label_of.end()) {
                throw ContractError("shap case " + id.patient_id + " missing from cases.csv");
            }
            ids.push_back(id);
            labels.push_back(it->second);
        }
    } else if (options.space == "raw") {
        const CaseMatrix cases = load_case_dir(options.cases_dir);
        const CaseDirMeta meta = load_case_dir_meta(options.cases_dir);
        std::vector<std::size_t> rows = select_split(cases, meta, options.split);
        if (rows.size() > options.max_n) rows.resize(options.max_n);
        const std::vector<std::size_t> train_rows = select_split(cases, meta, SplitPart::Train);
        points = prepare_raw_points(cases, rows, train_rows);
        dim = cases.n_features();
        for (std::size_t i : rows) {
            ids.push_back(cases.case_ids()[i]);
            labels.push_back(cases.labels()[i]);
        }
    } else {
        throw ConfigError("embed space must be shap|raw, got '" + options.space + "'");
    }

    Embedding2D embedding = tsne(points, ids.size(), dim, config, options.threads);
    embedding.input_space = options.space == "shap" ? "shap_values" : "raw_features";
    save_embedding(out_file, embedding, ids, labels);
    return embedding;
}

void stage_plot(const PlotSpec& spec, const std::filesystem::path& out_file) {
    write_text_file(out_file, render(spec));
}

// ------------------------------ pipeline runner ------------------------------

namespace {

struct PathResolver {
    std::filesystem::path out_dir;
    std::filesystem::path config_dir;

    std::filesystem::path output(const std::string& rel) const { return out_dir / rel; }

    // Inputs may name a prior stage's output (under out_dir) or an external
    // file next to the pipeline config.
    std::filesystem::path input(const std::string& rel) const {
        const auto in_run = out_dir / rel;
        if (std::filesystem::exists(in_run)) return in_run;
        const auto external = config_dir / rel;
        if (std::filesystem::exists(external)) return external;
        throw ConfigError("pipeline input '" + rel + "' not found under " +
                          out_dir.generic_string() + " or " + config_dir.generic_string());
    }

    // Manifest keys are run-relative so identical runs in different
    // directories produce identical checksum maps.
    std::string relative_key(const std::filesystem::path& p) const {
        const auto rel = std::filesystem::relative(p, out_dir);
        if (!rel.empty() && rel.generic_string().rfind("..", 0) != 0) return rel.generic_string();
        const auto rel_cfg = std::filesystem::relative(p, config_dir);
        if (!rel_cfg.empty() && rel_cfg.generic_string().rfind("..", 0) != 0) {
            return rel_cfg.generic_string();
        }
        return p.filename().generic_string();
    }

    void collect_checksums(const std::filesystem::path& path,
                           std::map<std::string, std::string>& out) const {
        if (!std::filesystem::exists(path)) return;
        if (std::filesystem::is_directory(path)) {
            std::vector<std::filesystem::path> files;
            for (const auto& entry : std::filesystem::recursive_directory_iterator(path)) {
                if (entry.is_regular_file()) files.push_back(entry.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) out[relative_key(f)] = checksum_file(f);
        } else {
            out[relative_key(path)] = checksum_file(path);
        }
    }
};

std::string require_string(const json& stage, const char* key, const std::string& stage_name) {
    if (!stage.contains(key)) {
        throw ConfigError("stage '" + stage_name + "' is missing required key '" + key + "'");
    }
    return stage.at(key).get<std::string>();
}

}  // namespace

RunManifest run_pipeline(const std::filesystem::path& config_file, int threads) {
    json config;
    try {
        config = json::parse(read_text_file(config_file));
    } catch (const json::exception& e) {
        throw ConfigError("bad pipeline config " + config_file.string() + ": " + e.what());
    }
    if (!config.contains("stages") || !config.at("stages").is_array()) {
        throw ConfigError("pipeline config needs /stages array");
    }
    PathResolver paths;
    paths.out_dir = config.value("out_dir", std::string("run"));
    if (paths.out_dir.is_relative()) {
        paths.out_dir = config_file.parent_path() / paths.out_dir;
    }
    paths.config_dir = config_file.parent_path();
    std::filesystem::create_directories(paths.out_dir);

    RunManifest manifest;
    for (const json& stage : config.at("stages")) {
        const std::string name = require_string(stage, "stage", "?");
        StageRecord record;
        record.stage = name;
        record.config_snapshot = stage.dump();
        const auto started = std::chrono::steady_clock::now();

        try {
            if (name == "synth") {
                const auto cfg = paths.input(require_string(stage, "config", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(cfg, record.input_checksums);
                std::optional<std::uint64_t> seed;
                if (stage.contains("seed")) seed = stage.at("seed").get<std::uint64_t>();
                stage_synth(cfg, out, seed, threads);
                record.seed = seed ? *seed : cohort_config_from_json_file(cfg).seed;
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "etl") {
                const auto raw = paths.input(require_string(stage, "raw", name));
                const auto maps = paths.input(require_string(stage, "maps", name));
                const auto cfg = paths.input(require_string(stage, "config", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(raw, record.input_checksums);
                paths.collect_checksums(maps, record.input_checksums);
                paths.collect_checksums(cfg, record.input_checksums);
                stage_etl(raw, maps, cfg, out);
                record.seed = etl_config_from_json_file(cfg).split.seed;
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "train") {
                const auto cases = paths.input(require_string(stage, "cases", name));
                const auto params = paths.input(require_string(stage, "params", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(cases, record.input_checksums);
                paths.collect_checksums(params, record.input_checksums);
                stage_train(cases, params, out);
                record.seed = hyperparams_from_json_file(params).seed;
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "tune") {
                const auto cases = paths.input(require_string(stage, "cases", name));
                const auto grid = paths.input(require_string(stage, "grid", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(cases, record.input_checksums);
                paths.collect_checksums(grid, record.input_checksums);
                stage_tune(cases, grid, out);
                record.seed = tune_grid_from_json_file(grid).seed;
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "eval") {
                const auto cases = paths.input(require_string(stage, "cases", name));
                const auto model = paths.input(require_string(stage, "model", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(cases, record.input_checksums);
                paths.collect_checksums(model, record.input_checksums);
                stage_eval(cases, model, parse_split_part(stage.value("split", "test")), out);
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "explain") {
                const auto cases = paths.input(require_string(stage, "cases", name));
                const auto model = paths.input(require_string(stage, "model", name));
                const auto out = paths.output(require_string(stage, "out", name));
                paths.collect_checksums(cases, record.input_checksums);
                paths.collect_checksums(model, record.input_checksums);
                stage_explain(cases, model, parse_split_part(stage.value("split", "test")), out,
                              threads);
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "embed") {
                EmbedStageOptions options;
                options.space = stage.value("space", "shap");
                options.cases_dir = paths.input(require_string(stage, "cases", name));
                if (options.space == "shap") {
                    options.input_dir = paths.input(require_string(stage, "input", name));
                    paths.collect_checksums(options.input_dir, record.input_checksums);
                }
                if (stage.contains("config")) {
                    options.config_file = paths.input(stage.at("config").get<std::string>());
                    paths.collect_checksums(options.config_file, record.input_checksums);
                    record.seed = tsne_config_from_json_file(options.config_file).seed;
                }
                options.split = parse_split_part(stage.value("split", "test"));
                options.max_n = stage.value("max_n", options.max_n);
                options.threads = threads;
                paths.collect_checksums(options.cases_dir, record.input_checksums);
                const auto out = paths.output(require_string(stage, "out", name));
                stage_embed(options, out);
                paths.collect_checksums(out, record.output_checksums);
            } else if (name == "plot") {
                PlotSpec spec;
                spec.kind = parse_plot_kind(require_string(stage, "kind", name));
                if (stage.contains("model")) spec.model_file = paths.input(stage.at("model").get<std::string>());
                if (stage.contains("cases")) spec.cases_dir = paths.input(stage.at("cases").get<std::string>());
                if (stage.contains("shap")) spec.shap_dir = paths.input(stage.at("shap").get<std::string>());
                if (stage.contains("embed")) spec.embed_file = paths.input(stage.at("embed").get<std::string>());
                spec.split = parse_split_part(stage.value("split", "test"));
                spec.feature = stage.value("feature", "");
                spec.color_by = stage.value("color_by", "");
                spec.top_k = stage.value("top", spec.top_k);
                spec.width = stage.value("width", spec.width);
                spec.height = stage.value("height", spec.height);
                spec.seed = stage.value("seed", spec.seed);
                record.seed = spec.seed;
                for (const auto& p : {spec.model_file, spec.cases_dir, spec.shap_dir, spec.embed_file}) {
                    if (!p.empty()) paths.collect_checksums(p, record.input_checksums);
                }
                const auto out = paths.output(require_string(stage, "out", name));
                stage_plot(spec, out);
                paths.collect_checksums(out, record.output_checksums);
            } else {
                throw ConfigError("unknown stage '" + name + "'");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("stage '" + name + "' failed: " + e.what());
        }

        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        manifest.stages.push_back(std::move(record));
    }

    json out_stages = json::array();
    for (const StageRecord& r : manifest.stages) {
        json inputs = json::object(), outputs = json::object();
        for (const auto& [p, sum] : r.input_checksums) inputs[p] = sum;
        for (const auto& [p, sum] : r.output_checksums) outputs[p] = sum;
        out_stages.push_back({{"stage", r.stage},
                              {"seed", r.seed},
                              {"wall_seconds", r.wall_seconds},
                              {"config", json::parse(r.config_snapshot)},
                              {"inputs", inputs},
                              {"outputs", outputs}});
    }
    write_text_file(paths.out_dir / "manifest.json",
                    json{{"version", 1}, {"stages", out_stages}}.dump(2) + "\n");
    return manifest;
}

}  // namespace efshap
