#include "efshap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "efshap/csv.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

std::string_view category_name(Category c) {
    switch (c) {
        case Category::DEMO: return "DEMO";
        case Category::VL: return "VL";
        case Category::LB: return "LB";
        case Category::MD: return "MD";
        case Category::MF: return "MF";
        case Category::MO: return "MO";
        case Category::OR: return "OR";
        case Category::PL: return "PL";
        case Category::DI: return "DI";
    }
    return "?";
}

Category parse_category(std::string_view name) {
    for (Category c : kAllCategories) {
        if (category_name(c) == name) return c;
    }
    throw ConfigError("unknown category '" + std::string(name) + "'");
}

std::string_view kind_name(FeatureKind k) {
    switch (k) {
        case FeatureKind::Numeric: return "numeric";
        case FeatureKind::Binary: return "binary";
        case FeatureKind::Count: return "count";
    }
    return "?";
}

FeatureKind parse_kind(std::string_view name) {
    if (name == "numeric") return FeatureKind::Numeric;
    if (name == "binary") return FeatureKind::Binary;
    if (name == "count") return FeatureKind::Count;
    throw ConfigError("unknown feature kind '" + std::string(name) + "'");
}

FeatureCatalog::FeatureCatalog(std::vector<Feature> entries) : entries_(std::move(entries)) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const Feature& f = entries_[i];
        if (f.id != static_cast<int>(i)) {
            throw ContractError("feature ids must be dense 0..M-1; got id " +
                                std::to_string(f.id) + " at position " + std::to_string(i));
        }
        const std::string prefix = std::string(category_name(f.category)) + "_";
        if (f.name.rfind(prefix, 0) != 0) {
            throw ContractError("feature '" + f.name + "' lacks its category prefix " + prefix);
        }
        if (!names.insert(f.name).second) {
            throw ContractError("duplicate feature name '" + f.name + "'");
        }
    }
}

const Feature& FeatureCatalog::at(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
        throw ContractError("feature id out of range: " + std::to_string(id));
    }
    return entries_[static_cast<std::size_t>(id)];
}

std::optional<int> FeatureCatalog::find(std::string_view name) const {
    for (const Feature& f : entries_) {
        if (f.name == name) return f.id;
    }
    return std::nullopt;
}

std::string FeatureCatalog::fingerprint() const {
    std::string blob;
    for (const Feature& f : entries_) {
        blob += std::to_string(f.id);
        blob += '|';
        blob += f.name;
        blob += '|';
        blob += category_name(f.category);
        blob += '|';
        blob += kind_name(f.kind);
        blob += '\n';
    }
    return fnv1a_hex(blob);
}

CaseMatrix::CaseMatrix(FeatureCatalog catalog, std::vector<CaseId> case_ids,
                       std::vector<double> values, std::vector<std::uint8_t> present,
                       std::vector<double> labels)
    : catalog_(std::move(catalog)),
      case_ids_(std::move(case_ids)),
      values_(std::move(values)),
      present_(std::move(present)),
      labels_(std::move(labels)) {
    const std::size_t n = case_ids_.size();
    const std::size_t m = catalog_.size();
    if (values_.size() != n * m || present_.size() != n * m || labels_.size() != n) {
        throw ContractError("case matrix shape mismatch");
    }
    for (std::size_t k = 0; k < values_.size(); ++k) {
        if (present_[k] && !std::isfinite(values_[k])) {
            throw ContractError("non-finite value at cell " + std::to_string(k));
        }
    }
    for (double y : labels_) {
        if (!(y >= 0.0 && y <= 100.0)) {
            throw ContractError("label out of [0,100]: " + format_double(y));
        }
    }
    std::set<CaseId> seen;
    for (const CaseId& id : case_ids_) {
        if (!seen.insert(id).second) {
            throw ContractError("duplicate case id " + id.patient_id + "/" + format_date(id.echo_date));
        }
    }
}

CaseMatrix CaseMatrix::select_rows(const std::vector<std::size_t>& rows) const {
    const std::size_t m = catalog_.size();
    std::vector<CaseId> ids;
    std::vector<double> values;
    std::vector<std::uint8_t> present;
    std::vector<double> labels;
    ids.reserve(rows.size());
    values.reserve(rows.size() * m);
    present.reserve(rows.size() * m);
    labels.reserve(rows.size());
    for (std::size_t r : rows) {
        if (r >= n_cases()) throw ContractError("row index out of range");
        ids.push_back(case_ids_[r]);
        labels.push_back(labels_[r]);
        values.insert(values.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * m),
                      values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * m));
        present.insert(present.end(), present_.begin() + static_cast<std::ptrdiff_t>(r * m),
                       present_.begin() + static_cast<std::ptrdiff_t>((r + 1) * m));
    }
    return CaseMatrix(catalog_, std::move(ids), std::move(values), std::move(present),
                      std::move(labels));
}

CaseMatrixBuilder::CaseMatrixBuilder(FeatureCatalog catalog) : catalog_(std::move(catalog)) {}

void CaseMatrixBuilder::add_case(CaseId id, const std::vector<std::optional<double>>& features,
                                 double label) {
    if (features.size() != catalog_.size()) {
        throw ContractError("feature row width " + std::to_string(features.size()) +
                            " != catalog size " + std::to_string(catalog_.size()));
    }
    case_ids_.push_back(std::move(id));
    labels_.push_back(label);
    for (const auto& v : features) {
        values_.push_back(v.value_or(0.0));
        present_.push_back(v.has_value() ? 1 : 0);
    }
}

CaseMatrix CaseMatrixBuilder::build() {
    return CaseMatrix(std::move(catalog_), std::move(case_ids_), std::move(values_),
                      std::move(present_), std::move(labels_));
}

std::string_view band_name(SeverityBand b) {
    switch (b) {
        case SeverityBand::Severe: return "Severe";
        case SeverityBand::Mild: return "Mild";
        case SeverityBand::Slight: return "Slight";
        case SeverityBand::Normal: return "Normal";
    }
    return "?";
}

SeverityBand band_of(double ef_percent) {
    if (!(ef_percent >= 0.0 && ef_percent <= 100.0)) {
        throw std::domain_error("EF out of [0,100]: " + format_double(ef_percent));
    }
    if (ef_percent >= 50.0) return SeverityBand::Normal;
    if (ef_percent >= 40.0) return SeverityBand::Slight;
    if (ef_percent >= 35.0) return SeverityBand::Mild;
    return SeverityBand::Severe;
}

void SplitSpec::validate() const {
    for (double f : {train_fraction, valid_fraction, test_fraction}) {
        if (!(f > 0.0 && f < 1.0)) {
            throw ConfigError("split fractions must lie in (0,1); got " + format_double(f));
        }
    }
    const double sum = train_fraction + valid_fraction + test_fraction;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1; got " + format_double(sum));
    }
}

SplitPart parse_split_part(std::string_view name) {
    if (name == "train") return SplitPart::Train;
    if (name == "valid") return SplitPart::Valid;
    if (name == "test") return SplitPart::Test;
    if (name == "all") return SplitPart::All;
    throw ConfigError("unknown split '" + std::string(name) + "' (train|valid|test|all)");
}

namespace {

// floor with a tolerance matching the 1e-9 budget allowed on the fractions,
// so exact divisions like n=3 with thirds do not lose a case to rounding.
std::size_t floor_count(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

}  // namespace

SplitIndices split_indices(const CaseMatrix& m, const SplitSpec& spec) {
    spec.validate();
    const std::size_t n = m.n_cases();
    if (n < 3) throw ContractError("split needs at least 3 cases, got " + std::to_string(n));

    const std::size_t n_valid = floor_count(n, spec.valid_fraction);
    const std::size_t n_test = floor_count(n, spec.test_fraction);
    if (n_valid + n_test > n) throw ConfigError("split fractions exceed case count");
    const std::size_t n_train = n - n_valid - n_test;

    SplitIndices out;
    Rng rng(derive_seed(spec.seed, "split"));

    if (!spec.group_by_patient) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
        out.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                         order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
        out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
    } else {
        // Whole patients go to one split; each patient lands where the
        // remaining deficit is largest so sizes track the targets.
        std::map<std::string, std::vector<std::size_t>> by_patient;
        for (std::size_t i = 0; i < n; ++i) by_patient[m.case_ids()[i].patient_id].push_back(i);
        std::vector<std::string> patients;
        patients.reserve(by_patient.size());
        for (const auto& [pid, _] : by_patient) patients.push_back(pid);
        rng.shuffle(patients);

        const double targets[3] = {static_cast<double>(n_train), static_cast<double>(n_valid),
                                   static_cast<double>(n_test)};
        double filled[3] = {0, 0, 0};
        std::vector<std::size_t>* parts[3] = {&out.train, &out.valid, &out.test};
        for (const std::string& pid : patients) {
            int best = 0;
            double best_deficit = targets[0] - filled[0];
            for (int k = 1; k < 3; ++k) {
                const double deficit = targets[k] - filled[k];
                if (deficit > best_deficit) {
                    best = k;
                    best_deficit = deficit;
                }
            }
            const auto& rows = by_patient[pid];
            parts[best]->insert(parts[best]->end(), rows.begin(), rows.end());
            filled[best] += static_cast<double>(rows.size());
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.valid.begin(), out.valid.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::tuple<CaseMatrix, CaseMatrix, CaseMatrix> split_dataset(const CaseMatrix& m,
                                                             const SplitSpec& spec) {
    const SplitIndices idx = split_indices(m, spec);
    return {m.select_rows(idx.train), m.select_rows(idx.valid), m.select_rows(idx.test)};
}

// -------------------------------- persistence --------------------------------

namespace {

json split_to_json(const SplitSpec& s) {
    return json{{"train", s.train_fraction},
                {"valid", s.valid_fraction},
                {"test", s.test_fraction},
                {"seed", s.seed},
                {"group_by_patient", s.group_by_patient}};
}

SplitSpec split_from_json(const json& j) {
    SplitSpec s;
    s.train_fraction = j.at("train").get<double>();
    s.valid_fraction = j.at("valid").get<double>();
    s.test_fraction = j.at("test").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.group_by_patient = j.value("group_by_patient", false);
    return s;
}

}  // namespace

void save_case_dir(const std::filesystem::path& dir, const CaseMatrix& m, const CaseDirMeta& meta) {
    std::filesystem::create_directories(dir);

    json catalog = json::array();
    for (const Feature& f : m.catalog().entries()) {
        catalog.push_back({{"id", f.id},
                           {"name", f.name},
                           {"category", category_name(f.category)},
                           {"kind", kind_name(f.kind)}});
    }
    write_text_file(dir / "catalog.json",
                    json{{"version", 1}, {"features", catalog}}.dump(2) + "\n");

    csv::Table cases;
    cases.header = {"patient_id", "echo_date"};
    for (const Feature& f : m.catalog().entries()) cases.header.push_back(f.name);
    cases.header.push_back("label_ef");
    cases.rows.reserve(m.n_cases());
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        std::vector<std::string> row;
        row.reserve(m.n_features() + 3);
        row.push_back(m.case_ids()[i].patient_id);
        row.push_back(format_date(m.case_ids()[i].echo_date));
        for (std::size_t j = 0; j < m.n_features(); ++j) {
            const auto v = m.cell(i, j);
            row.push_back(v ? format_double(*v) : std::string());
        }
        row.push_back(format_double(m.labels()[i]));
        cases.rows.push_back(std::move(row));
    }
    csv::write_file(dir / "cases.csv", cases);

    json manifest{{"version", 1},
                  {"n_cases", m.n_cases()},
                  {"n_features", m.n_features()},
                  {"catalog_fingerprint", m.catalog().fingerprint()},
                  {"checksums",
                   {{"catalog.json", checksum_file(dir / "catalog.json")},
                    {"cases.csv", checksum_file(dir / "cases.csv")}}}};
    if (meta.split) manifest["split"] = split_to_json(*meta.split);
    if (meta.source_seed) manifest["source_seed"] = *meta.source_seed;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

CaseMatrix load_case_dir(const std::filesystem::path& dir) {
    const json cat_json = json::parse(read_text_file(dir / "catalog.json"));
    std::vector<Feature> feats;
    for (const auto& f : cat_json.at("features")) {
        feats.push_back(Feature{f.at("id").get<int>(), f.at("name").get<std::string>(),
                                parse_category(f.at("category").get<std::string>()),
                                parse_kind(f.at("kind").get<std::string>())});
    }
    FeatureCatalog catalog(std::move(feats));

    const csv::Table cases = csv::read_file(dir / "cases.csv");
    const std::size_t m = catalog.size();
    if (cases.header.size() != m + 3) {
        throw IoError("cases.csv width does not match catalog in " + dir.string());
    }
    CaseMatrixBuilder builder(catalog);
    std::vector<std::optional<double>> row(m);
    for (const auto& r : cases.rows) {
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = r[j + 2].empty() ? std::nullopt : std::optional<double>(parse_double(r[j + 2]));
        }
        builder.add_case(CaseId{r[0], parse_date(r[1])}, row, parse_double(r.back()));
    }
    return builder.build();
}

CaseDirMeta load_case_dir_meta(const std::filesystem::path& dir) {
    const json manifest = json::parse(read_text_file(dir / "manifest.json"));
    CaseDirMeta meta;
    if (manifest.contains("split")) meta.split = split_from_json(manifest.at("split"));
    if (manifest.contains("source_seed")) meta.source_seed = manifest.at("source_seed").get<std::uint64_t>();
    return meta;
}

std::vector<std::size_t> select_split(const CaseMatrix& m, const CaseDirMeta& meta, SplitPart part) {
    if (part == SplitPart::All) {
        std::vector<std::size_t> all(m.n_cases());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    if (!meta.split) {
        throw ConfigError("case directory manifest records no split spec; use --split all");
    }
    const SplitIndices idx = split_indices(m, *meta.split);
    switch (part) {
        case SplitPart::Train: return idx.train;
        case SplitPart::Valid: return idx.valid;
        case SplitPart::Test: return idx.test;
        default: return {};
    }
}

}  // namespace efshap
