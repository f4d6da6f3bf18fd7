#include "efshap/etl.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "json.hpp"

namespace efshap {

using nlohmann::json;

void EtlConfig::validate() const {
    if (!(winsor_lo > 0.0 && winsor_lo < 100.0 && winsor_hi > 0.0 && winsor_hi < 100.0)) {
        throw ConfigError("winsor percentiles must lie in (0,100)");
    }
    if (!(winsor_lo < winsor_hi)) throw ConfigError("winsor_lo must be below winsor_hi");
    if (window_days <= 0) throw ConfigError("window_days must be positive");
    if (independence_days < window_days) {
        throw ConfigError("independence_days must be >= window_days");
    }
    split.validate();
}

EtlConfig etl_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    EtlConfig c;
    c.min_code_count = j.value("min_code_count", c.min_code_count);
    c.winsor_lo = j.value("winsor_lo", c.winsor_lo);
    c.winsor_hi = j.value("winsor_hi", c.winsor_hi);
    c.window_days = j.value("window_days", c.window_days);
    c.independence_days = j.value("independence_days", c.independence_days);
    if (j.contains("numeric_aggregation")) {
        const std::string a = j.at("numeric_aggregation").get<std::string>();
        if (a == "nearest") c.numeric_aggregation = NumericAggregation::Nearest;
        else if (a == "mean") c.numeric_aggregation = NumericAggregation::Mean;
        else if (a == "latest") c.numeric_aggregation = NumericAggregation::Latest;
        else throw ConfigError("numeric_aggregation must be nearest|mean|latest, got '" + a + "'");
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        c.split.train_fraction = s.value("train", c.split.train_fraction);
        c.split.valid_fraction = s.value("valid", c.split.valid_fraction);
        c.split.test_fraction = s.value("test", c.split.test_fraction);
        c.split.seed = s.value("seed", c.split.seed);
        c.split.group_by_patient = s.value("group_by_patient", false);
    }
    c.validate();
    return c;
}

EtlConfig etl_config_from_json_file(const std::filesystem::path& path) {
    try {
        return etl_config_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad etl config " + path.string() + ": " + e.what());
    }
}

std::map<std::string, std::string> load_code_map_tsv(const std::filesystem::path& file) {
    const std::string text = read_text_file(file);
    std::map<std::string, std::string> map;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw IoError(file.string() + ":" + std::to_string(line_no) + ": expected two tab-separated columns");
        }
        const std::string src(line.substr(0, tab));
        const std::string dst(line.substr(tab + 1));
        const auto [it, inserted] = map.emplace(src, dst);
        if (!inserted && it->second != dst) {
            throw ConfigError(file.string() + ": source code '" + src + "' maps to two targets");
        }
    }
    return map;
}

CodeMaps load_code_maps(const std::filesystem::path& dir) {
    CodeMaps maps;
    maps.ndc_to_atc = load_code_map_tsv(dir / "ndc_to_atc.tsv");
    maps.icd9_to_icd10 = load_code_map_tsv(dir / "icd9_to_icd10.tsv");
    return maps;
}

namespace {

constexpr Category kCodeCategories[] = {Category::MF, Category::MO, Category::MD, Category::PL,
                                        Category::DI};

}  // namespace

EventStore filter_rare_codes(const EventStore& store, std::size_t min_count) {
    std::map<std::pair<Category, std::string>, std::size_t> counts;
    for (Category c : kCodeCategories) {
        for (const EventRow& row : store.table(c)) ++counts[{c, row.code}];
    }
    EventStore out = store;
    for (Category c : kCodeCategories) {
        auto& table = out.table(c);
        std::erase_if(table, [&](const EventRow& row) {
            return counts[{c, row.code}] <= min_count;  // "over" is strict
        });
    }
    return out;
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
    if (values.empty()) throw std::domain_error("percentile of empty list");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    std::size_t rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

std::vector<double> winsorize(const std::vector<double>& values, double lo_percentile,
                              double hi_percentile) {
    if (values.empty()) throw std::domain_error("winsorize of empty list");
    const double lo = nearest_rank_percentile(values, lo_percentile);
    const double hi = nearest_rank_percentile(values, hi_percentile);
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(std::clamp(v, lo, hi));
    return out;
}

std::size_t UnmappedReport::total_dropped() const {
    std::size_t n = 0;
    for (const auto& [cat, codes] : dropped) {
        for (const auto& [code, count] : codes) n += count;
    }
    return n;
}

EventStore normalize_codes(const EventStore& store, const CodeMaps& maps, UnmappedReport* report) {
    EventStore out = store;
    auto apply = [&](Category c, const std::map<std::string, std::string>& table) {
        auto& rows = out.table(c);
        std::vector<EventRow> kept;
        kept.reserve(rows.size());
        for (EventRow& row : rows) {
            const auto it = table.find(row.code);
            if (it == table.end()) {
                if (report) ++report->dropped[std::string(category_name(c))][row.code];
                continue;
            }
            row.code = it->second;
            kept.push_back(std::move(row));
        }
        rows = std::move(kept);
    };
    for (Category c : {Category::MD, Category::MF, Category::MO}) apply(c, maps.ndc_to_atc);
    for (Category c : {Category::PL, Category::DI}) apply(c, maps.icd9_to_icd10);
    return out;
}

FeatureCatalog build_catalog(const EventStore& store) {
    // (category, name) pairs; category order fixes the id order.
    std::vector<Feature> feats;
    auto add = [&](Category c, const std::string& code, FeatureKind kind) {
        feats.push_back(Feature{0, std::string(category_name(c)) + "_" + code, c, kind});
    };

    std::set<std::string> demo_codes, numeric_codes[2];
    for (const EventRow& r : store.table(Category::DEMO)) demo_codes.insert(r.code);
    for (const std::string& code : demo_codes) {
        add(Category::DEMO, code, code == "GENDER" ? FeatureKind::Binary : FeatureKind::Numeric);
    }
    int slot = 0;
    for (Category c : {Category::VL, Category::LB}) {
        std::set<std::string>& codes = numeric_codes[slot++];
        for (const EventRow& r : store.table(c)) codes.insert(r.code);
        for (const std::string& code : codes) add(c, code, FeatureKind::Numeric);
    }
    for (Category c : {Category::MD, Category::MF, Category::MO}) {
        std::set<std::string> codes;
        for (const EventRow& r : store.table(c)) codes.insert(r.code);
        for (const std::string& code : codes) add(c, code, FeatureKind::Count);
    }
    for (Category c : {Category::OR, Category::PL, Category::DI}) {
        std::set<std::string> codes;
        for (const EventRow& r : store.table(c)) codes.insert(r.code);
        for (const std::string& code : codes) add(c, code, FeatureKind::Binary);
    }
    for (std::size_t i = 0; i < feats.size(); ++i) feats[i].id = static_cast<int>(i);
    return FeatureCatalog(std::move(feats));
}

namespace {

struct PatientEvents {
    // feature id -> (date, value) stream, date-sorted
    std::map<int, std::vector<std::pair<Date, double>>> numeric;
    std::map<int, std::vector<Date>> occurrences;  // binary/count features
    std::map<int, double> demo;                    // copied as-is, not windowed
    std::vector<const EchoReport*> echoes;
};

}  // namespace

CaseMatrix build_cases(const EventStore& store, const EtlConfig& config,
                       const FeatureCatalog& catalog) {
    config.validate();

    std::map<std::string, int> feature_ids;
    for (const Feature& f : catalog.entries()) feature_ids[f.name] = f.id;

    std::map<std::string, PatientEvents> patients;
    for (Category c : kAllCategories) {
        for (const EventRow& row : store.table(c)) {
            const auto it = feature_ids.find(std::string(category_name(c)) + "_" + row.code);
            if (it == feature_ids.end()) continue;  // not in catalog (filtered away)
            PatientEvents& pe = patients[row.patient_id];
            const Feature& f = catalog.at(it->second);
            if (c == Category::DEMO) {
                if (row.value) pe.demo[f.id] = *row.value;
            } else if (f.kind == FeatureKind::Numeric) {
                if (row.value) pe.numeric[f.id].push_back({row.date, *row.value});
            } else {
                pe.occurrences[f.id].push_back(row.date);
            }
        }
    }
    for (const EchoReport& echo : store.echo_reports) patients[echo.patient_id].echoes.push_back(&echo);

    for (auto& [pid, pe] : patients) {
        for (auto& [fid, stream] : pe.numeric) std::sort(stream.begin(), stream.end());
        for (auto& [fid, dates] : pe.occurrences) std::sort(dates.begin(), dates.end());
        std::sort(pe.echoes.begin(), pe.echoes.end(),
                  [](const EchoReport* a, const EchoReport* b) { return a->date < b->date; });
    }

    CaseMatrixBuilder builder(catalog);
    std::vector<std::optional<double>> row(catalog.size());
    for (auto& [pid, pe] : patients) {
        bool have_case = false;
        Date last_case_date = 0;
        for (const EchoReport* echo : pe.echoes) {
            if (have_case && echo->date - last_case_date <= config.independence_days) continue;
            have_case = true;
            last_case_date = echo->date;

            std::fill(row.begin(), row.end(), std::nullopt);
            for (const Feature& f : catalog.entries()) {
                if (f.category == Category::DEMO) {
                    const auto it = pe.demo.find(f.id);
                    if (it != pe.demo.end()) row[static_cast<std::size_t>(f.id)] = it->second;
                    continue;
                }
                if (f.kind == FeatureKind::Numeric) {
                    const auto it = pe.numeric.find(f.id);
                    if (it == pe.numeric.end()) continue;
                    double acc = 0.0;
                    std::size_t n = 0;
                    std::optional<double> chosen;
                    int best_dist = config.window_days + 1;
                    for (const auto& [d, v] : it->second) {
                        const int dist = std::abs(d - echo->date);
                        if (dist > config.window_days) continue;
                        switch (config.numeric_aggregation) {
                            case NumericAggregation::Nearest:
                                // ties resolved toward the earlier measurement:
                                // the stream is date-sorted and only a strictly
                                // smaller distance replaces the choice
                                if (dist < best_dist) {
                                    best_dist = dist;
                                    chosen = v;
                                }
                                break;
                            case NumericAggregation::Mean:
                                acc += v;
                                ++n;
                                break;
                            case NumericAggregation::Latest:
                                chosen = v;  // stream is date-sorted
                                break;
                        }
                    }
                    if (config.numeric_aggregation == NumericAggregation::Mean && n > 0) {
                        chosen = acc / static_cast<double>(n);
                    }
                    if (chosen) row[static_cast<std::size_t>(f.id)] = *chosen;
                } else {
                    const auto it = pe.occurrences.find(f.id);
                    std::size_t n = 0;
                    if (it != pe.occurrences.end()) {
                        for (Date d : it->second) {
                            if (std::abs(d - echo->date) <= config.window_days) ++n;
                        }
                    }
                    row[static_cast<std::size_t>(f.id)] =
                        f.kind == FeatureKind::Binary ? (n > 0 ? 1.0 : 0.0) : static_cast<double>(n);
                }
            }
            builder.add_case(CaseId{pid, echo->date}, row, echo->ef_percent);
        }
    }
    return builder.build();
}

WinsorBounds learn_winsor_bounds(const CaseMatrix& m, const std::vector<std::size_t>& train_rows,
                                 double lo_percentile, double hi_percentile) {
    WinsorBounds out;
    for (const Feature& f : m.catalog().entries()) {
        if (f.kind != FeatureKind::Numeric) continue;
        std::vector<double> values;
        for (std::size_t r : train_rows) {
            const auto v = m.cell(r, static_cast<std::size_t>(f.id));
            if (v) values.push_back(*v);
        }
        if (values.empty()) continue;
        out.bounds[f.id] = {nearest_rank_percentile(values, lo_percentile),
                            nearest_rank_percentile(values, hi_percentile)};
    }
    return out;
}

CaseMatrix apply_winsor_bounds(const CaseMatrix& m, const WinsorBounds& bounds) {
    CaseMatrixBuilder builder(m.catalog());
    std::vector<std::optional<double>> row(m.n_features());
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        for (std::size_t j = 0; j < m.n_features(); ++j) {
            auto v = m.cell(i, j);
            if (v) {
                const auto it = bounds.bounds.find(static_cast<int>(j));
                if (it != bounds.bounds.end()) v = std::clamp(*v, it->second.first, it->second.second);
            }
            row[j] = v;
        }
        builder.add_case(m.case_ids()[i], row, m.labels()[i]);
    }
    return builder.build();
}

void save_winsor_bounds(const std::filesystem::path& file, const WinsorBounds& bounds,
                        const FeatureCatalog& catalog) {
    json entries = json::array();
    for (const auto& [fid, minmax] : bounds.bounds) {
        entries.push_back({{"feature", catalog.at(fid).name},
                           {"min", minmax.first},
                           {"max", minmax.second}});
    }
    write_text_file(file, json{{"version", 1}, {"bounds", entries}}.dump(2) + "\n");
}

WinsorBounds load_winsor_bounds(const std::filesystem::path& file, const FeatureCatalog& catalog) {
    const json j = json::parse(read_text_file(file));
    WinsorBounds out;
    for (const auto& e : j.at("bounds")) {
        const auto id = catalog.find(e.at("feature").get<std::string>());
        if (!id) continue;
        out.bounds[*id] = {e.at("min").get<double>(), e.at("max").get<double>()};
    }
    return out;
}

EtlResult run_etl(const EventStore& store, const CodeMaps& maps, const EtlConfig& config) {
    config.validate();
    EtlResult result;
    // Rule order: rare-code filter first, then vocabulary normalization.
    const EventStore filtered = filter_rare_codes(store, config.min_code_count);
    const EventStore normalized = normalize_codes(filtered, maps, &result.unmapped);
    const FeatureCatalog catalog = build_catalog(normalized);
    const CaseMatrix cases = build_cases(normalized, config, catalog);
    const SplitIndices idx = split_indices(cases, config.split);
    result.bounds = learn_winsor_bounds(cases, idx.train, config.winsor_lo, config.winsor_hi);
    result.cases = apply_winsor_bounds(cases, result.bounds);
    return result;
}

EtlResult run_etl_to_dir(const EventStore& store, const CodeMaps& maps, const EtlConfig& config,
                         const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> source_seed) {
    EtlResult result = run_etl(store, maps, config);
    CaseDirMeta meta;
    meta.split = config.split;
    meta.source_seed = source_seed;
    save_case_dir(out_dir, result.cases, meta);
    save_winsor_bounds(out_dir / "bounds.json", result.bounds, result.cases.catalog());

    json dropped = json::object();
    for (const auto& [cat, codes] : result.unmapped.dropped) {
        json per_cat = json::object();
        for (const auto& [code, count] : codes) per_cat[code] = count;
        dropped[cat] = per_cat;
    }
    write_text_file(out_dir / "unmapped_report.json",
                    json{{"version", 1},
                         {"total_dropped", result.unmapped.total_dropped()},
                         {"dropped", dropped}}
                            .dump(2) +
                        "\n");
    return result;
}

}  // namespace efshap
