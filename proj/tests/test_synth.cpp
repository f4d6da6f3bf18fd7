#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <map>
#include <set>

#include "efshap/synth.hpp"
#include "oracles.hpp"

using namespace efshap;

namespace {

CohortConfig small_config(std::size_t n_patients, std::uint64_t seed) {
    CohortConfig c;
    c.n_patients = n_patients;
    c.start_date = parse_date("2014-01-01");
    c.end_date = parse_date("2019-12-31");
    c.seed = seed;
    c.effects = {
        {"DEMO_GENDER", 5.0, PlantedEffect::Form::BinaryShift, 0.0},  // +5 for female (0)
        {"VL_BP_SYSTOLIC", 3.0, PlantedEffect::Form::Linear, 1.0},
        {"VL_BP_DIASTOLIC", -3.0, PlantedEffect::Form::Linear, 1.0},
        {"DI_I25.5", -4.0, PlantedEffect::Form::BinaryShift, 1.0},
        {"OR_MITRAL REGURGITATION", -4.0, PlantedEffect::Form::BinaryShift, 1.0},
    };
    return c;
}

std::string serialize(const EventStore& store) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("efshap_serialize_probe_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    write_raw_tables(store, dir, 0);
    std::string blob;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) blob += read_text_file(f);
    std::filesystem::remove_all(dir);
    return blob;
}

}  // namespace

TEST_CASE("empty cohort produces empty tables") {
    const EventStore store = generate_cohort(small_config(0, 1));
    for (Category c : kAllCategories) CHECK(store.table(c).empty());
    CHECK(store.echo_reports.empty());
}

TEST_CASE("same config and seed give byte-identical serialization") {
    const auto config = small_config(40, 9);
    const EventStore a = generate_cohort(config, 1);
    const EventStore b = generate_cohort(config, 4);  // thread count must not matter
    CHECK(a == b);
    CHECK(serialize(a) == serialize(b));

    auto other = config;
    other.seed = 10;
    CHECK_FALSE(generate_cohort(other) == a);
}

TEST_CASE("echo EF stays in [5,85] and dates stay in range") {
    const auto config = small_config(60, 3);
    const EventStore store = generate_cohort(config);
    REQUIRE(!store.echo_reports.empty());
    for (const EchoReport& r : store.echo_reports) {
        CHECK(r.ef_percent >= 5.0);
        CHECK(r.ef_percent <= 85.0);
        CHECK(r.date >= config.start_date);
        CHECK(r.date <= config.end_date);
    }
    for (Category c : kAllCategories) {
        for (const EventRow& row : store.table(c)) {
            CHECK(row.date >= config.start_date);
            CHECK(row.date <= config.end_date);
        }
    }
}

TEST_CASE("planted gender effect shows up in group means") {
    auto config = small_config(2000, 21);
    config.effects = {{"DEMO_GENDER", 5.0, PlantedEffect::Form::BinaryShift, 0.0}};
    config.noise_sd = 8.0;
    const Cohort cohort = generate_cohort_with_truth(config);

    std::map<std::string, double> gender_of;
    for (const PatientTruth& t : cohort.truth) {
        gender_of[t.patient_id] = t.covariates.at("DEMO_GENDER");
    }
    double sum_f = 0.0, sum_m = 0.0;
    std::size_t n_f = 0, n_m = 0;
    for (const EchoReport& r : cohort.store.echo_reports) {
        if (gender_of.at(r.patient_id) == 0.0) {
            sum_f += r.ef_percent;
            ++n_f;
        } else {
            sum_m += r.ef_percent;
            ++n_m;
        }
    }
    REQUIRE(n_f > 100);
    REQUIRE(n_m > 100);
    const double diff = sum_f / n_f - sum_m / n_m;
    CHECK(diff == doctest::Approx(5.0).epsilon(0.2));
    CHECK(std::abs(diff - 5.0) <= 1.0);
}

TEST_CASE("OLS on true covariates recovers every planted coefficient within 3 SE") {
    const auto config = small_config(2500, 31);
    const Cohort cohort = generate_cohort_with_truth(config);
    const auto& moments = generator_signal_moments();

    std::map<std::string, const PatientTruth*> truth_of;
    for (const PatientTruth& t : cohort.truth) truth_of[t.patient_id] = &t;

    // Design: intercept plus one standardized regressor per planted effect,
    // built from ground-truth covariates so the fit checks the generator.
    std::vector<std::vector<double>> design;
    std::vector<double> response;
    for (const EchoReport& r : cohort.store.echo_reports) {
        const PatientTruth& t = *truth_of.at(r.patient_id);
        std::vector<double> row{1.0};
        for (const PlantedEffect& e : config.effects) {
            const double v = t.covariates.at(e.feature_name);
            if (e.form == PlantedEffect::Form::Linear) {
                const auto& sm = moments.at(e.feature_name);
                row.push_back((v - sm.mean) / sm.sd);
            } else {
                row.push_back(v == e.level ? 1.0 : 0.0);
            }
        }
        design.push_back(std::move(row));
        response.push_back(r.ef_percent);
    }
    const oracles::OlsFit fit = oracles::ols(design, response);
    for (std::size_t k = 0; k < config.effects.size(); ++k) {
        const double planted = config.effects[k].effect_on_ef;
        const double est = fit.beta[k + 1];
        const double se = fit.stderr_beta[k + 1];
        INFO("effect ", config.effects[k].feature_name, " planted ", planted, " est ", est, " se ",
             se);
        CHECK(std::abs(est - planted) <= 3.0 * se);
    }
}

TEST_CASE("generated EF histogram spans at least three severity bands") {
    const EventStore store = generate_cohort(small_config(400, 17));
    std::set<SeverityBand> bands;
    for (const EchoReport& r : store.echo_reports) bands.insert(band_of(r.ef_percent));
    CHECK(bands.size() >= 3);
}

TEST_CASE("raw tables round-trip through the directory format") {
    const EventStore store = generate_cohort(small_config(25, 5));
    const auto dir = std::filesystem::temp_directory_path() / "efshap_test_rawdir";
    std::filesystem::remove_all(dir);
    const RawManifest manifest = write_raw_tables(store, dir, 5);
    CHECK(manifest.row_counts.at("echo.csv") == store.echo_reports.size());
    CHECK(manifest.row_counts.at("vl.csv") == store.table(Category::VL).size());

    const EventStore back = read_raw_tables(dir);
    CHECK(back == store);
    std::filesystem::remove_all(dir);
}

TEST_CASE("empty store writes header-only CSVs") {
    EventStore store;
    const auto dir = std::filesystem::temp_directory_path() / "efshap_test_rawdir_empty";
    std::filesystem::remove_all(dir);
    write_raw_tables(store, dir, 0);
    for (const char* name : {"demo.csv", "vl.csv", "lb.csv", "md.csv", "mf.csv", "mo.csv",
                             "or.csv", "pl.csv", "di.csv"}) {
        const std::string text = read_text_file(dir / name);
        CHECK(text == "patient_id,date,code,value\n");
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("single vitals row lands in the VL table alone") {
    EventStore store;
    store.table(Category::VL).push_back({"P000001", parse_date("2015-06-01"), "BP_SYSTOLIC", 132.0});
    const auto dir = std::filesystem::temp_directory_path() / "efshap_test_rawdir_one";
    std::filesystem::remove_all(dir);
    const RawManifest manifest = write_raw_tables(store, dir, 0);
    CHECK(manifest.row_counts.at("vl.csv") == 1);
    CHECK(manifest.row_counts.at("lb.csv") == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config validation rejects unknown planted features and bad rates") {
    auto config = small_config(5, 1);
    config.effects.push_back({"VL_NOT_A_SIGNAL", 1.0, PlantedEffect::Form::Linear, 1.0});
    CHECK_THROWS_AS(config.validate(), ConfigError);

    auto bad_rate = small_config(5, 1);
    bad_rate.missing_rate = 1.0;
    CHECK_THROWS_AS(bad_rate.validate(), ConfigError);
}

TEST_CASE("cohort config parses from JSON") {
    const std::string text = R"({
        "n_patients": 12,
        "date_range": ["2014-01-01", "2016-01-01"],
        "seed": 4,
        "noise_sd": 6.5,
        "event_rates": {"VL": 9.0},
        "effects": [{"feature": "DEMO_GENDER", "effect": 5.0, "form": "binary_shift", "level": 0}]
    })";
    const CohortConfig c = cohort_config_from_json(text);
    CHECK(c.n_patients == 12);
    CHECK(c.seed == 4);
    CHECK(c.noise_sd == 6.5);
    CHECK(c.event_rates.at("VL") == 9.0);
    REQUIRE(c.effects.size() == 1);
    CHECK(c.effects[0].level == 0.0);
    CHECK_THROWS_AS(cohort_config_from_json(R"({"effects":[{"feature":"X","effect":1,"form":"nope"}]})"),
                    ConfigError);
}
