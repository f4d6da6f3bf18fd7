#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"
#include "efshap/synth.hpp"

namespace efshap {

enum class NumericAggregation { Nearest, Mean, Latest };

struct EtlConfig {
    std::size_t min_code_count = 20;     // strict: codes must appear more often than this
    double winsor_lo = 1.0;              // percentiles in (0,100)
    double winsor_hi = 99.0;
    int window_days = 45;
    int independence_days = 180;
    NumericAggregation numeric_aggregation = NumericAggregation::Nearest;
    SplitSpec split;                     // winsor bounds come from the train split only

    void validate() const;
};

EtlConfig etl_config_from_json_file(const std::filesystem::path& path);
EtlConfig etl_config_from_json(const std::string& text);

// Exact lookup tables, loaded from two-column TSV files. A source code maps
// to at most one target.
struct CodeMaps {
    std::map<std::string, std::string> ndc_to_atc;     // applied to MD, MF, MO
    std::map<std::string, std::string> icd9_to_icd10;  // applied to PL, DI
};

CodeMaps load_code_maps(const std::filesystem::path& dir);
std::map<std::string, std::string> load_code_map_tsv(const std::filesystem::path& file);

// Rule 1: drop codes in the five code-bearing categories whose total count is
// not strictly greater than min_count. Other categories pass through.
EventStore filter_rare_codes(const EventStore& store, std::size_t min_count);

// Rule 2 primitive: nearest-rank percentile clamp. Values below the low
// percentile value become that value, above the high percentile value
// likewise; order and length preserved. Empty input is a domain error.
std::vector<double> winsorize(const std::vector<double>& values, double lo_percentile,
                              double hi_percentile);

// Nearest-rank percentile of a non-empty list.
double nearest_rank_percentile(std::vector<double> values, double percentile);

// Rule 3: codes with a mapping are rewritten to the target vocabulary;
// unmapped codes are dropped and tallied per category in the report.
struct UnmappedReport {
    // category name -> code -> dropped occurrence count
    std::map<std::string, std::map<std::string, std::size_t>> dropped;
    std::size_t total_dropped() const;
};

EventStore normalize_codes(const EventStore& store, const CodeMaps& maps,
                           UnmappedReport* report = nullptr);

// Catalog from a filtered+normalized store: demographics, one numeric feature
// per distinct VL/LB measurement name, binary presence for OR/PL/DI codes and
// in-window counts for MD/MF/MO codes. Ids are dense in (category, name) order.
FeatureCatalog build_catalog(const EventStore& store);

// Temporal case construction. Echo reports are scanned per patient in date
// order; a report opens a case only when it lies more than independence_days
// after the previous accepted report. Features aggregate events with
// |event_date - echo_date| <= window_days; numeric features with no event in
// the window stay missing, binary/count features default to 0.
CaseMatrix build_cases(const EventStore& store, const EtlConfig& config,
                       const FeatureCatalog& catalog);

// Per-feature clamp bounds learned on the training split.
struct WinsorBounds {
    // feature id -> (low value, high value); absent when the train split has
    // no observed values for the feature
    std::map<int, std::pair<double, double>> bounds;
};

WinsorBounds learn_winsor_bounds(const CaseMatrix& m, const std::vector<std::size_t>& train_rows,
                                 double lo_percentile, double hi_percentile);
CaseMatrix apply_winsor_bounds(const CaseMatrix& m, const WinsorBounds& bounds);

void save_winsor_bounds(const std::filesystem::path& file, const WinsorBounds& bounds,
                        const FeatureCatalog& catalog);
WinsorBounds load_winsor_bounds(const std::filesystem::path& file, const FeatureCatalog& catalog);

// Whole stage: filter -> normalize -> catalog -> cases -> train-split winsor.
struct EtlResult {
    CaseMatrix cases;
    UnmappedReport unmapped;
    WinsorBounds bounds;
};

EtlResult run_etl(const EventStore& store, const CodeMaps& maps, const EtlConfig& config);

// run_etl plus persistence: the case directory with bounds.json and
// unmapped_report.json alongside catalog/cases/manifest.
EtlResult run_etl_to_dir(const EventStore& store, const CodeMaps& maps, const EtlConfig& config,
                         const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> source_seed = std::nullopt);

}  // namespace efshap
