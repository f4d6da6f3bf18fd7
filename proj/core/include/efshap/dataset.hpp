#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "efshap/common.hpp"

namespace efshap {

// ---------------------------------------------------------------------------
// Feature catalog
// ---------------------------------------------------------------------------

enum class Category { DEMO, VL, LB, MD, MF, MO, OR, PL, DI };

inline constexpr std::array<Category, 9> kAllCategories = {
    Category::DEMO, Category::VL, Category::LB, Category::MD, Category::MF,
    Category::MO,   Category::OR, Category::PL, Category::DI};

std::string_view category_name(Category c);
Category parse_category(std::string_view name);

enum class FeatureKind { Numeric, Binary, Count };

std::string_view kind_name(FeatureKind k);
FeatureKind parse_kind(std::string_view name);

struct Feature {
    int id = 0;                      // dense 0..M-1
    std::string name;                // carries the category prefix, e.g. "VL_BP_SYSTOLIC"
    Category category = Category::DEMO;
    FeatureKind kind = FeatureKind::Numeric;
};

class FeatureCatalog {
public:
    FeatureCatalog() = default;
    explicit FeatureCatalog(std::vector<Feature> entries);

    const std::vector<Feature>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    const Feature& at(int id) const;
    std::optional<int> find(std::string_view name) const;

    // Stable fingerprint over (id, name, category, kind), used to tie models
    // and SHAP matrices to the matrix they were computed on.
    std::string fingerprint() const;

private:
    std::vector<Feature> entries_;
};

// ---------------------------------------------------------------------------
// Case matrix. A cell is either a finite value or missing; missing is kept as
// an explicit mask, never as a sentinel number.
// ---------------------------------------------------------------------------

struct CaseId {
    std::string patient_id;
    Date echo_date = 0;

    friend bool operator==(const CaseId&, const CaseId&) = default;
    friend auto operator<=>(const CaseId&, const CaseId&) = default;
};

class CaseMatrix {
public:
    CaseMatrix() = default;
    CaseMatrix(FeatureCatalog catalog, std::vector<CaseId> case_ids,
               std::vector<double> values, std::vector<std::uint8_t> present,
               std::vector<double> labels);

    std::size_t n_cases() const { return case_ids_.size(); }
    std::size_t n_features() const { return catalog_.size(); }
    const FeatureCatalog& catalog() const { return catalog_; }
    const std::vector<CaseId>& case_ids() const { return case_ids_; }
    const std::vector<double>& labels() const { return labels_; }

    bool is_missing(std::size_t row, std::size_t col) const {
        return present_[row * catalog_.size() + col] == 0;
    }
    std::optional<double> cell(std::size_t row, std::size_t col) const {
        const std::size_t k = row * catalog_.size() + col;
        if (present_[k] == 0) return std::nullopt;
        return values_[k];
    }
    // Raw value; only meaningful when the cell is present.
    double raw(std::size_t row, std::size_t col) const { return values_[row * catalog_.size() + col]; }

    std::span<const double> row_values(std::size_t row) const {
        return {values_.data() + row * catalog_.size(), catalog_.size()};
    }
    std::span<const std::uint8_t> row_present(std::size_t row) const {
        return {present_.data() + row * catalog_.size(), catalog_.size()};
    }

    CaseMatrix select_rows(const std::vector<std::size_t>& rows) const;

private:
    FeatureCatalog catalog_;
    std::vector<CaseId> case_ids_;
    std::vector<double> values_;          // row-major n_cases x M
    std::vector<std::uint8_t> present_;   // 1 = value, 0 = missing
    std::vector<double> labels_;          // EF percent, [0, 100]
};

// Row-wise builder used by the ETL stage and tests.
class CaseMatrixBuilder {
public:
    explicit CaseMatrixBuilder(FeatureCatalog catalog);
    void add_case(CaseId id, const std::vector<std::optional<double>>& features, double label);
    CaseMatrix build();

private:
    FeatureCatalog catalog_;
    std::vector<CaseId> case_ids_;
    std::vector<double> values_;
    std::vector<std::uint8_t> present_;
    std::vector<double> labels_;
};

// ---------------------------------------------------------------------------
// Severity bands. Boundary EF values belong to the higher-EF band.
// ---------------------------------------------------------------------------

enum class SeverityBand { Severe, Mild, Slight, Normal };

std::string_view band_name(SeverityBand b);

// Half-open bands on EF percent: Severe [0,35), Mild [35,40), Slight [40,50),
// Normal [50,100]. Out-of-range input is a domain error.
SeverityBand band_of(double ef_percent);

// ---------------------------------------------------------------------------
// Deterministic splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
    double train_fraction = 0.7;
    double valid_fraction = 0.2;
    double test_fraction = 0.1;
    std::uint64_t seed = 0;
    bool group_by_patient = false;

    void validate() const;  // fractions in (0,1), sum to 1 within 1e-9
};

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> valid;
    std::vector<std::size_t> test;
};

enum class SplitPart { Train, Valid, Test, All };
SplitPart parse_split_part(std::string_view name);

// Row indices per split, ascending within each part. Sizes are
// floor(n * fraction) for valid and test with the remainder going to train;
// identical seeds give identical partitions on every platform.
SplitIndices split_indices(const CaseMatrix& m, const SplitSpec& spec);

std::tuple<CaseMatrix, CaseMatrix, CaseMatrix> split_dataset(const CaseMatrix& m,
                                                             const SplitSpec& spec);

// ---------------------------------------------------------------------------
// On-disk form: a directory with catalog.json, cases.csv (empty field =
// missing, final column = label) and manifest.json (counts, checksums, split
// spec and seed provenance).
// ---------------------------------------------------------------------------

struct CaseDirMeta {
    std::optional<SplitSpec> split;           // recorded by the ETL stage
    std::optional<std::uint64_t> source_seed; // cohort seed, if known
};

void save_case_dir(const std::filesystem::path& dir, const CaseMatrix& m,
                   const CaseDirMeta& meta = {});
CaseMatrix load_case_dir(const std::filesystem::path& dir);
CaseDirMeta load_case_dir_meta(const std::filesystem::path& dir);

// Rows of `m` belonging to `part` per the split spec recorded in the
// directory manifest (required for parts other than All).
std::vector<std::size_t> select_split(const CaseMatrix& m, const CaseDirMeta& meta, SplitPart part);

}  // namespace efshap
