#include "efshap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <tuple>

#include "efshap/csv.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

std::size_t EventStore::total_rows() const {
    std::size_t n = echo_reports.size();
    for (const auto& t : tables) n += t.size();
    return n;
}

void CohortConfig::validate() const {
    if (end_date < start_date) throw ConfigError("date_range end precedes start");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
        throw ConfigError("missing_rate must lie in [0,1)");
    }
    for (const auto& [cat, rate] : event_rates) {
        parse_category(cat);
        if (rate < 0.0) throw ConfigError("event rate for " + cat + " is negative");
    }
    if (noise_sd < 0.0) throw ConfigError("noise_sd must be >= 0");
    const auto& moments = generator_signal_moments();
    for (const auto& e : effects) {
        if (!moments.count(e.feature_name)) {
            throw ConfigError("planted effect references unknown feature '" + e.feature_name + "'");
        }
    }
}

CohortConfig cohort_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    CohortConfig c;
    c.n_patients = j.value("n_patients", c.n_patients);
    if (j.contains("date_range")) {
        c.start_date = parse_date(j.at("date_range").at(0).get<std::string>());
        c.end_date = parse_date(j.at("date_range").at(1).get<std::string>());
    }
    c.missing_rate = j.value("missing_rate", c.missing_rate);
    c.rare_code_rate = j.value("rare_code_rate", c.rare_code_rate);
    c.outlier_rate = j.value("outlier_rate", c.outlier_rate);
    c.anchor_prob = j.value("anchor_prob", c.anchor_prob);
    c.base_ef = j.value("base_ef", c.base_ef);
    c.noise_sd = j.value("noise_sd", c.noise_sd);
    c.seed = j.value("seed", c.seed);
    if (j.contains("event_rates")) {
        for (const auto& [k, v] : j.at("event_rates").items()) c.event_rates[k] = v.get<double>();
    }
    if (j.contains("effects")) {
        for (const auto& e : j.at("effects")) {
            PlantedEffect pe;
            pe.feature_name = e.at("feature").get<std::string>();
            pe.effect_on_ef = e.at("effect").get<double>();
            const std::string form = e.at("form").get<std::string>();
            if (form == "linear") {
                pe.form = PlantedEffect::Form::Linear;
            } else if (form == "binary_shift") {
                pe.form = PlantedEffect::Form::BinaryShift;
            } else {
                throw ConfigError("effects[].form must be linear|binary_shift, got '" + form + "'");
            }
            pe.level = e.value("level", 1.0);
            c.effects.push_back(std::move(pe));
        }
    }
    c.validate();
    return c;
}

CohortConfig cohort_config_from_json_file(const std::filesystem::path& path) {
    try {
        return cohort_config_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad cohort config " + path.string() + ": " + e.what());
    }
}

namespace {

struct NumericSignal {
    Category category;
    const char* code;     // code column value, without category prefix
    double mean, sd;
    double lo, hi;        // plausible clamp for regular draws
    double visit_sd;      // per-measurement wobble around the patient base
};

// Patient-level numeric signals. Outlier injections deliberately escape the
// plausible range so the percentile clipping rule has work to do.
const NumericSignal kNumericSignals[] = {
    {Category::VL, "BP_SYSTOLIC", 130.0, 18.0, 80.0, 210.0, 5.0},
    {Category::VL, "BP_DIASTOLIC", 78.0, 12.0, 45.0, 130.0, 4.0},
    {Category::VL, "PULSE", 76.0, 12.0, 40.0, 140.0, 5.0},
    {Category::VL, "BMI", 29.0, 6.0, 15.0, 60.0, 0.6},
    {Category::VL, "RESP_RATE", 17.0, 3.0, 8.0, 40.0, 1.5},
    {Category::LB, "SODIUM", 139.0, 3.5, 120.0, 160.0, 1.5},
    {Category::LB, "POTASSIUM", 4.2, 0.45, 2.5, 7.0, 0.2},
    {Category::LB, "CREATININE", 1.25, 0.35, 0.4, 6.0, 0.12},
    {Category::LB, "BNP", 420.0, 260.0, 5.0, 4000.0, 60.0},
    {Category::LB, "HGB", 12.5, 1.8, 6.0, 19.0, 0.5},
};

struct FlagSignal {
    Category category;
    const char* code;
    double prevalence;
};

const FlagSignal kFlagSignals[] = {
    {Category::DI, "I25.5", 0.20}, {Category::DI, "I42.8", 0.12}, {Category::DI, "I42.9", 0.15},
    {Category::DI, "I50.9", 0.60}, {Category::DI, "I10", 0.50},   {Category::DI, "E11.9", 0.30},
    {Category::DI, "N18.3", 0.15}, {Category::DI, "J44.9", 0.18},
    {Category::PL, "I50.9", 0.45}, {Category::PL, "I10", 0.40},   {Category::PL, "E78.5", 0.35},
    {Category::OR, "MITRAL REGURGITATION", 0.30},
    {Category::OR, "AORTIC STENOSIS", 0.15},
    {Category::OR, "TRICUSPID REGURGITATION", 0.20},
    {Category::OR, "LV DILATION", 0.25},
    {Category::MD, "C03CA", 0.40}, {Category::MD, "C07AB", 0.35}, {Category::MD, "C09AA", 0.30},
    {Category::MD, "B01AC", 0.45},
    {Category::MF, "C03CA", 0.30}, {Category::MF, "C10AA", 0.40}, {Category::MF, "A10BA", 0.25},
    {Category::MO, "C07AB", 0.30}, {Category::MO, "C09AA", 0.25}, {Category::MO, "C03CA", 0.20},
};

// Digit aliases for drug codes; the shipped lookup tables normalize these
// back to the ATC form so code tables are a realistic NDC/ATC mixture.
const std::map<std::string, std::string>& ndc_alias() {
    static const std::map<std::string, std::string> aliases = {
        {"C03CA", "00071015623"}, {"C07AB", "00186077660"}, {"C09AA", "00093505698"},
        {"B01AC", "63304062901"}, {"C10AA", "00071015523"}, {"A10BA", "00087607105"},
    };
    return aliases;
}

// ICD-9 aliases for diagnosis/problem codes, likewise normalized away.
const std::map<std::string, std::string>& icd9_alias() {
    static const std::map<std::string, std::string> aliases = {
        {"I25.5", "414.8"},  {"I42.8", "425.8"}, {"I42.9", "425.4"}, {"I50.9", "428.0"},
        {"I10", "401.9"},    {"E11.9", "250.00"}, {"N18.3", "585.3"}, {"J44.9", "496"},
        {"E78.5", "272.4"},
    };
    return aliases;
}

std::string full_name(Category c, const std::string& code) {
    return std::string(category_name(c)) + "_" + code;
}

bool is_code_category(Category c) {
    return c == Category::MD || c == Category::MF || c == Category::MO || c == Category::PL ||
           c == Category::DI;
}

double default_rate(Category c) {
    switch (c) {
        case Category::DEMO: return 0.0;  // one row per attribute, not rate driven
        case Category::VL: return 10.0;
        case Category::LB: return 8.0;
        case Category::MD: return 4.0;
        case Category::MF: return 3.0;
        case Category::MO: return 3.0;
        case Category::OR: return 2.0;
        case Category::PL: return 2.0;
        case Category::DI: return 3.0;
    }
    return 0.0;
}

struct PatientPlan {
    PatientTruth truth;
    std::vector<EchoReport> echoes;
    std::array<std::vector<EventRow>, 9> events;
};

}  // namespace

const std::map<std::string, SignalMoments>& generator_signal_moments() {
    static const std::map<std::string, SignalMoments> moments = [] {
        std::map<std::string, SignalMoments> m;
        m["DEMO_GENDER"] = {0.5, 0.5};
        m["DEMO_AGE"] = {65.0, 50.0 / std::sqrt(12.0)};  // uniform(40, 90)
        for (const auto& s : kNumericSignals) m[full_name(s.category, s.code)] = {s.mean, s.sd};
        for (const auto& f : kFlagSignals) {
            m[full_name(f.category, f.code)] = {f.prevalence,
                                                std::sqrt(f.prevalence * (1.0 - f.prevalence))};
        }
        return m;
    }();
    return moments;
}

namespace {

double planted_ef_shift(const CohortConfig& config, const PatientTruth& truth) {
    double shift = 0.0;
    const auto& moments = generator_signal_moments();
    for (const auto& e : config.effects) {
        const auto it = truth.covariates.find(e.feature_name);
        const double v = it == truth.covariates.end() ? 0.0 : it->second;
        if (e.form == PlantedEffect::Form::Linear) {
            const SignalMoments& sm = moments.at(e.feature_name);
            shift += e.effect_on_ef * (v - sm.mean) / sm.sd;
        } else {
            if (v == e.level) shift += e.effect_on_ef;
        }
    }
    return shift;
}

PatientPlan generate_patient(const CohortConfig& config, std::size_t index) {
    PatientPlan plan;
    Rng rng(derive_seed(config.seed, index));

    char pid[16];
    std::snprintf(pid, sizeof(pid), "P%06zu", index);
    plan.truth.patient_id = pid;
    auto& cov = plan.truth.covariates;

    cov["DEMO_GENDER"] = rng.bernoulli(0.5) ? 1.0 : 0.0;  // 0 female, 1 male
    cov["DEMO_AGE"] = std::floor(rng.uniform(40.0, 90.0));
    for (const auto& s : kNumericSignals) {
        cov[full_name(s.category, s.code)] = std::clamp(rng.normal(s.mean, s.sd), s.lo, s.hi);
    }
    for (const auto& f : kFlagSignals) {
        cov[full_name(f.category, f.code)] = rng.bernoulli(f.prevalence) ? 1.0 : 0.0;
    }

    const int span_days = config.end_date - config.start_date;
    const double years = std::max(0.25, span_days / 365.25);

    // Echo schedule; gaps below the independence window occur on purpose.
    const std::size_t n_echo = 1 + rng.poisson(0.8);
    std::vector<Date> echo_dates;
    for (std::size_t k = 0; k < n_echo; ++k) {
        echo_dates.push_back(config.start_date +
                             static_cast<Date>(rng.bounded(static_cast<std::uint64_t>(span_days) + 1)));
    }
    std::sort(echo_dates.begin(), echo_dates.end());
    echo_dates.erase(std::unique(echo_dates.begin(), echo_dates.end()), echo_dates.end());

    plan.truth.ef_mean = config.base_ef + planted_ef_shift(config, plan.truth);
    for (Date d : echo_dates) {
        const double ef = std::clamp(plan.truth.ef_mean + rng.normal(0.0, config.noise_sd), 5.0, 85.0);
        plan.echoes.push_back({plan.truth.patient_id, d, ef});
    }

    auto rate_of = [&](Category c) {
        const auto it = config.event_rates.find(std::string(category_name(c)));
        return it != config.event_rates.end() ? it->second : default_rate(c);
    };
    auto random_date = [&] {
        return config.start_date + static_cast<Date>(rng.bounded(static_cast<std::uint64_t>(span_days) + 1));
    };

    // DEMO: one row per attribute.
    plan.events[static_cast<std::size_t>(Category::DEMO)].push_back(
        {plan.truth.patient_id, echo_dates.front(), "GENDER", cov["DEMO_GENDER"]});
    plan.events[static_cast<std::size_t>(Category::DEMO)].push_back(
        {plan.truth.patient_id, echo_dates.front(), "AGE", cov["DEMO_AGE"]});

    // Numeric measurements: background stream at the category rate. A signal
    // can be entirely unmeasured for a patient (missing_rate), and a small
    // share of values is implausible on purpose.
    std::map<std::string, bool> measured;
    for (const auto& s : kNumericSignals) {
        measured[full_name(s.category, s.code)] = !rng.bernoulli(config.missing_rate);
    }
    for (const auto& s : kNumericSignals) {
        if (!measured[full_name(s.category, s.code)]) continue;
        const double per_signal_rate =
            rate_of(s.category) / static_cast<double>(s.category == Category::VL ? 5 : 5);
        std::size_t n_events = rng.poisson(per_signal_rate * years);
        // At least one reading near each echo keeps windows populated.
        for (Date d : echo_dates) {
            if (!rng.bernoulli(config.anchor_prob)) continue;
            const Date when = d + static_cast<Date>(rng.bounded(61)) - 30;
            double v = cov[full_name(s.category, s.code)] + rng.normal(0.0, s.visit_sd);
            if (rng.bernoulli(config.outlier_rate)) v = s.hi * (2.0 + rng.uniform());
            plan.events[static_cast<std::size_t>(s.category)].push_back(
                {plan.truth.patient_id, std::clamp(when, config.start_date, config.end_date), s.code, v});
        }
        for (std::size_t k = 0; k < n_events; ++k) {
            double v = cov[full_name(s.category, s.code)] + rng.normal(0.0, s.visit_sd);
            if (rng.bernoulli(config.outlier_rate)) v = s.lo * rng.uniform() * 0.2;
            plan.events[static_cast<std::size_t>(s.category)].push_back(
                {plan.truth.patient_id, random_date(), s.code, v});
        }
    }

    // Code-bearing categories: anchored emissions for active flags near each
    // echo, a background stream, and a rare-code long tail.
    for (const auto& f : kFlagSignals) {
        if (cov[full_name(f.category, f.code)] != 1.0) continue;
        for (Date d : echo_dates) {
            if (!rng.bernoulli(config.anchor_prob)) continue;
            const Date when = d + static_cast<Date>(rng.bounded(61)) - 30;
            plan.events[static_cast<std::size_t>(f.category)].push_back(
                {plan.truth.patient_id, std::clamp(when, config.start_date, config.end_date),
                 f.code, std::nullopt});
        }
    }
    for (Category c : {Category::MD, Category::MF, Category::MO, Category::PL, Category::DI,
                       Category::OR}) {
        std::vector<const FlagSignal*> active;
        for (const auto& f : kFlagSignals) {
            if (f.category == c && cov[full_name(f.category, f.code)] == 1.0) active.push_back(&f);
        }
        const std::size_t n_events = rng.poisson(rate_of(c) * years);
        for (std::size_t k = 0; k < n_events; ++k) {
            std::string code;
            if (is_code_category(c) && rng.bernoulli(config.rare_code_rate)) {
                char buf[24];
                std::snprintf(buf, sizeof(buf), "RARE%05llu",
                              static_cast<unsigned long long>(rng.bounded(100000)));
                code = buf;
            } else if (!active.empty()) {
                code = active[rng.bounded(active.size())]->code;
            } else {
                continue;
            }
            plan.events[static_cast<std::size_t>(c)].push_back(
                {plan.truth.patient_id, random_date(), code, std::nullopt});
        }
    }

    // Swap drug codes to their NDC alias and diagnosis codes to their ICD-9
    // alias for a share of rows; normalization maps them back.
    for (Category c : {Category::MD, Category::MF, Category::MO}) {
        for (auto& row : plan.events[static_cast<std::size_t>(c)]) {
            const auto it = ndc_alias().find(row.code);
            if (it != ndc_alias().end() && rng.bernoulli(0.5)) row.code = it->second;
        }
    }
    for (Category c : {Category::PL, Category::DI}) {
        for (auto& row : plan.events[static_cast<std::size_t>(c)]) {
            const auto it = icd9_alias().find(row.code);
            if (it != icd9_alias().end() && rng.bernoulli(0.4)) row.code = it->second;
        }
    }

    for (auto& table : plan.events) {
        std::sort(table.begin(), table.end(), [](const EventRow& a, const EventRow& b) {
            return std::tie(a.date, a.code) < std::tie(b.date, b.code);
        });
    }
    return plan;
}

}  // namespace

Cohort generate_cohort_with_truth(const CohortConfig& config, int threads) {
    config.validate();
    std::vector<PatientPlan> plans(config.n_patients);
    parallel_for(config.n_patients, threads,
                 [&](std::size_t i) { plans[i] = generate_patient(config, i); });

    Cohort cohort;
    for (auto& plan : plans) {
        for (std::size_t c = 0; c < plan.events.size(); ++c) {
            auto& dst = cohort.store.tables[c];
            dst.insert(dst.end(), std::make_move_iterator(plan.events[c].begin()),
                       std::make_move_iterator(plan.events[c].end()));
        }
        cohort.store.echo_reports.insert(cohort.store.echo_reports.end(), plan.echoes.begin(),
                                         plan.echoes.end());
        cohort.truth.push_back(std::move(plan.truth));
    }
    return cohort;
}

EventStore generate_cohort(const CohortConfig& config, int threads) {
    return generate_cohort_with_truth(config, threads).store;
}

namespace {

const char* table_filename(Category c) {
    switch (c) {
        case Category::DEMO: return "demo.csv";
        case Category::VL: return "vl.csv";
        case Category::LB: return "lb.csv";
        case Category::MD: return "md.csv";
        case Category::MF: return "mf.csv";
        case Category::MO: return "mo.csv";
        case Category::OR: return "or.csv";
        case Category::PL: return "pl.csv";
        case Category::DI: return "di.csv";
    }
    return "?";
}

}  // namespace

RawManifest write_raw_tables(const EventStore& store, const std::filesystem::path& dir,
                             std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    RawManifest manifest;
    manifest.seed = seed;

    for (Category c : kAllCategories) {
        csv::Table t;
        t.header = {"patient_id", "date", "code", "value"};
        for (const EventRow& row : store.table(c)) {
            t.rows.push_back({row.patient_id, format_date(row.date), row.code,
                              row.value ? format_double(*row.value) : std::string()});
        }
        const std::string name = table_filename(c);
        csv::write_file(dir / name, t);
        manifest.row_counts[name] = t.rows.size();
        manifest.checksums[name] = checksum_file(dir / name);
    }

    csv::Table echo;
    echo.header = {"patient_id", "date", "ef_percent"};
    for (const EchoReport& r : store.echo_reports) {
        echo.rows.push_back({r.patient_id, format_date(r.date), format_double(r.ef_percent)});
    }
    csv::write_file(dir / "echo.csv", echo);
    manifest.row_counts["echo.csv"] = echo.rows.size();
    manifest.checksums["echo.csv"] = checksum_file(dir / "echo.csv");

    json j{{"version", 1}, {"seed", seed}};
    for (const auto& [name, count] : manifest.row_counts) j["row_counts"][name] = count;
    for (const auto& [name, sum] : manifest.checksums) j["checksums"][name] = sum;
    write_text_file(dir / "manifest.json", j.dump(2) + "\n");
    return manifest;
}

EventStore read_raw_tables(const std::filesystem::path& dir) {
    EventStore store;
    for (Category c : kAllCategories) {
        const csv::Table t = csv::read_file(dir / table_filename(c));
        if (t.header != std::vector<std::string>{"patient_id", "date", "code", "value"}) {
            throw IoError("unexpected header in " + (dir / table_filename(c)).string());
        }
        for (const auto& row : t.rows) {
            store.table(c).push_back({row[0], parse_date(row[1]), row[2],
                                      row[3].empty() ? std::nullopt
                                                     : std::optional<double>(parse_double(row[3]))});
        }
    }
    const csv::Table echo = csv::read_file(dir / "echo.csv");
    for (const auto& row : echo.rows) {
        store.echo_reports.push_back({row[0], parse_date(row[1]), parse_double(row[2])});
    }
    return store;
}

}  // namespace efshap
