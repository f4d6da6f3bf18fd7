#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "efshap/common.hpp"
#include "efshap/dataset.hpp"

namespace efshap {

// ---------------------------------------------------------------------------
// Raw event store: nine per-category event tables plus echo reports. This is
// the shape the ETL stage consumes, whether the rows came from the generator
// or from externally supplied CSVs.
// ---------------------------------------------------------------------------

struct EventRow {
    std::string patient_id;
    Date date = 0;
    std::string code;                  // measurement name, drug code, or diagnosis code
    std::optional<double> value;       // numeric categories only

    friend bool operator==(const EventRow&, const EventRow&) = default;
};

struct EchoReport {
    std::string patient_id;
    Date date = 0;
    double ef_percent = 0.0;           // [5, 85]

    friend bool operator==(const EchoReport&, const EchoReport&) = default;
};

struct EventStore {
    std::array<std::vector<EventRow>, 9> tables;  // indexed by Category order
    std::vector<EchoReport> echo_reports;

    std::vector<EventRow>& table(Category c) { return tables[static_cast<std::size_t>(c)]; }
    const std::vector<EventRow>& table(Category c) const {
        return tables[static_cast<std::size_t>(c)];
    }
    std::size_t total_rows() const;

    friend bool operator==(const EventStore&, const EventStore&) = default;
};

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

struct PlantedEffect {
    enum class Form { Linear, BinaryShift };

    std::string feature_name;
    double effect_on_ef = 0.0;  // EF percent points: per 1 SD for linear,
                                // additive when the indicator matches `level`
    Form form = Form::BinaryShift;
    double level = 1.0;         // binary_shift fires when the covariate equals this
};

struct CohortConfig {
    std::size_t n_patients = 2000;
    Date start_date = 0;
    Date end_date = 0;
    std::vector<PlantedEffect> effects;
    std::map<std::string, double> event_rates;  // per-category mean events/patient/year
    double missing_rate = 0.1;                  // [0,1): chance a numeric signal is never measured
    double rare_code_rate = 0.05;               // long-tail codes injected into code tables
    double outlier_rate = 0.01;                 // implausible vitals/labs values
    double anchor_prob = 0.9;                   // active flags emitted near each echo
    double base_ef = 55.0;
    double noise_sd = 8.0;
    std::uint64_t seed = 0;

    void validate() const;
};

CohortConfig cohort_config_from_json_file(const std::filesystem::path& path);
CohortConfig cohort_config_from_json(const std::string& text);

// Ground truth covariates per patient; the oracle for recovery tests.
struct PatientTruth {
    std::string patient_id;
    std::map<std::string, double> covariates;  // feature name -> true value / flag
    double ef_mean = 0.0;                      // EF before per-echo noise
};

struct Cohort {
    EventStore store;
    std::vector<PatientTruth> truth;
};

// Nominal (mean, sd) the generator uses for a numeric signal; linear planted
// effects are expressed per 1 SD of these.
struct SignalMoments {
    double mean = 0.0;
    double sd = 1.0;
};
const std::map<std::string, SignalMoments>& generator_signal_moments();

// Deterministic for a given config: each patient's stream is seeded from
// (seed, patient index) so thread count cannot change the output.
Cohort generate_cohort_with_truth(const CohortConfig& config, int threads = 0);
EventStore generate_cohort(const CohortConfig& config, int threads = 0);

// ---------------------------------------------------------------------------
// Raw-table persistence: nine CSVs plus echo.csv plus a manifest with row
// counts and checksums. Schema documented in docs/raw_schema.md.
// ---------------------------------------------------------------------------

struct RawManifest {
    std::map<std::string, std::size_t> row_counts;
    std::map<std::string, std::string> checksums;
    std::uint64_t seed = 0;
};

RawManifest write_raw_tables(const EventStore& store, const std::filesystem::path& dir,
                             std::uint64_t seed = 0);
EventStore read_raw_tables(const std::filesystem::path& dir);

}  // namespace efshap
