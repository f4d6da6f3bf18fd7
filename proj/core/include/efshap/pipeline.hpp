#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"
#include "efshap/etl.hpp"
#include "efshap/gbt.hpp"
#include "efshap/shap.hpp"
#include "efshap/synth.hpp"
#include "efshap/tsne.hpp"
#include "efshap/tune.hpp"
#include "efshap/viz.hpp"

namespace efshap {

// ---------------------------------------------------------------------------
// Stage entry points. The CLI subcommands and the pipeline runner share these
// so tests can drive every stage without a shell.
// ---------------------------------------------------------------------------

void stage_synth(const std::filesystem::path& config_file, const std::filesystem::path& out_dir,
                 std::optional<std::uint64_t> seed_override, int threads);

void stage_etl(const std::filesystem::path& raw_dir, const std::filesystem::path& maps_dir,
               const std::filesystem::path& config_file, const std::filesystem::path& out_dir);

void stage_train(const std::filesystem::path& cases_dir, const std::filesystem::path& params_file,
                 const std::filesystem::path& out_file);

TuneResult stage_tune(const std::filesystem::path& cases_dir, const std::filesystem::path& grid_file,
                      const std::filesystem::path& out_file);

EvalReport stage_eval(const std::filesystem::path& cases_dir, const std::filesystem::path& model_file,
                      SplitPart split, const std::filesystem::path& out_file);

void stage_explain(const std::filesystem::path& cases_dir, const std::filesystem::path& model_file,
                   SplitPart split, const std::filesystem::path& out_dir, int threads);

struct EmbedStageOptions {
    std::string space = "shap";              // "shap" | "raw"
    std::filesystem::path input_dir;         // shap dir (space=shap)
    std::filesystem::path cases_dir;         // labels, raw rows, train medians
    SplitPart split = SplitPart::Test;       // rows for space=raw
    std::size_t max_n = 2000;                // O(N^2) cost cap, deterministic head
    std::filesystem::path config_file;       // t-SNE config JSON, optional
    int threads = 0;
};

Embedding2D stage_embed(const EmbedStageOptions& options, const std::filesystem::path& out_file);

void stage_plot(const PlotSpec& spec, const std::filesystem::path& out_file);

// ---------------------------------------------------------------------------
// Pipeline runner
// ---------------------------------------------------------------------------

struct StageRecord {
    std::string stage;
    std::map<std::string, std::string> input_checksums;   // path -> fnv1a
    std::map<std::string, std::string> output_checksums;
    std::string config_snapshot;                          // the stage JSON object
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
};

struct RunManifest {
    std::vector<StageRecord> stages;
};

// Executes the configured stages in order under out_dir, persisting every
// intermediate artifact, and writes manifest.json on success. A stage failure
// aborts with the stage name; artifacts from earlier stages stay on disk.
RunManifest run_pipeline(const std::filesystem::path& config_file, int threads = 0);

}  // namespace efshap
