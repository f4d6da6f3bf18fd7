#include "doctest.h"

#include <filesystem>
#include <map>
#include <set>

#include "efshap/dataset.hpp"

using namespace efshap;

namespace {

FeatureCatalog tiny_catalog() {
    return FeatureCatalog({{0, "DEMO_GENDER", Category::DEMO, FeatureKind::Binary},
                           {1, "VL_BP_SYSTOLIC", Category::VL, FeatureKind::Numeric},
                           {2, "DI_I50.9", Category::DI, FeatureKind::Binary}});
}

CaseMatrix matrix_of(std::size_t n, std::uint64_t seed = 11) {
    CaseMatrixBuilder b(tiny_catalog());
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::optional<double>> row(3);
        row[0] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        if (!rng.bernoulli(0.2)) row[1] = rng.normal(130, 15);
        row[2] = rng.bernoulli(0.4) ? 1.0 : 0.0;
        b.add_case(CaseId{"P" + std::to_string(i / 2), static_cast<Date>(100 * i)}, row,
                   rng.uniform(10.0, 80.0));
    }
    return b.build();
}

}  // namespace

TEST_CASE("band_of maps the EF ranges with boundaries going up") {
    CHECK(band_of(60.0) == SeverityBand::Normal);
    CHECK(band_of(35.0) == SeverityBand::Mild);
    CHECK(band_of(0.0) == SeverityBand::Severe);
    CHECK(band_of(50.0) == SeverityBand::Normal);
    CHECK(band_of(40.0) == SeverityBand::Slight);
    CHECK(band_of(100.0) == SeverityBand::Normal);
    CHECK(band_of(34.999) == SeverityBand::Severe);
    CHECK_THROWS_AS(band_of(-0.5), std::domain_error);
    CHECK_THROWS_AS(band_of(100.5), std::domain_error);
}

TEST_CASE("band_of is total on [0,100] and monotone in severity") {
    auto rank = [](SeverityBand b) {
        switch (b) {
            case SeverityBand::Severe: return 3;
            case SeverityBand::Mild: return 2;
            case SeverityBand::Slight: return 1;
            case SeverityBand::Normal: return 0;
        }
        return -1;
    };
    int prev = rank(band_of(100.0));
    for (double ef = 100.0; ef >= 0.0; ef -= 0.125) {
        const int r = rank(band_of(ef));
        CHECK(r >= prev);
        prev = r;
    }
}

TEST_CASE("split sizes follow floor(n*f) with remainder to train") {
    SplitSpec spec{0.7, 0.2, 0.1, 1};
    const auto idx = split_indices(matrix_of(10), spec);
    CHECK(idx.train.size() == 7);
    CHECK(idx.valid.size() == 2);
    CHECK(idx.test.size() == 1);

    SplitSpec thirds{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1};
    const auto idx3 = split_indices(matrix_of(3), thirds);
    CHECK(idx3.train.size() == 1);
    CHECK(idx3.valid.size() == 1);
    CHECK(idx3.test.size() == 1);
}

TEST_CASE("split is deterministic and partitions the cases") {
    const CaseMatrix m = matrix_of(57);
    SplitSpec spec{0.7, 0.2, 0.1, 42};
    const auto a = split_indices(m, spec);
    const auto b = split_indices(m, spec);
    CHECK(a.train == b.train);
    CHECK(a.valid == b.valid);
    CHECK(a.test == b.test);

    std::set<std::size_t> seen;
    for (const auto* part : {&a.train, &a.valid, &a.test}) {
        for (std::size_t i : *part) CHECK(seen.insert(i).second);
    }
    CHECK(seen.size() == m.n_cases());

    SplitSpec other = spec;
    other.seed = 43;
    const auto c = split_indices(m, other);
    CHECK(a.train != c.train);
}

TEST_CASE("same seed gives identical case_id lists across calls") {
    const CaseMatrix m = matrix_of(30);
    SplitSpec spec{0.7, 0.2, 0.1, 7};
    auto [tr1, va1, te1] = split_dataset(m, spec);
    auto [tr2, va2, te2] = split_dataset(m, spec);
    CHECK(tr1.case_ids() == tr2.case_ids());
    CHECK(va1.case_ids() == va2.case_ids());
    CHECK(te1.case_ids() == te2.case_ids());
}

TEST_CASE("group-by-patient keeps each patient in one split") {
    const CaseMatrix m = matrix_of(60);  // two cases per patient
    SplitSpec spec{0.6, 0.2, 0.2, 5, true};
    const auto idx = split_indices(m, spec);
    std::map<std::string, int> home;
    int part_id = 0;
    for (const auto* part : {&idx.train, &idx.valid, &idx.test}) {
        for (std::size_t i : *part) {
            const auto& pid = m.case_ids()[i].patient_id;
            auto [it, inserted] = home.emplace(pid, part_id);
            CHECK(it->second == part_id);
        }
        ++part_id;
    }
    CHECK(idx.train.size() + idx.valid.size() + idx.test.size() == m.n_cases());
}

TEST_CASE("bad split fractions are rejected") {
    CHECK_THROWS_AS((SplitSpec{0.7, 0.2, 0.2, 0}).validate(), ConfigError);
    CHECK_THROWS_AS((SplitSpec{1.5, -0.3, -0.2, 0}).validate(), ConfigError);
    CHECK_NOTHROW((SplitSpec{0.7, 0.2, 0.1, 0}).validate());
}

TEST_CASE("catalog rejects bad prefixes, duplicate names, sparse ids") {
    CHECK_THROWS_AS(FeatureCatalog({{0, "VL_X", Category::DEMO, FeatureKind::Numeric}}),
                    ContractError);
    CHECK_THROWS_AS(FeatureCatalog({{0, "DEMO_A", Category::DEMO, FeatureKind::Numeric},
                                    {1, "DEMO_A", Category::DEMO, FeatureKind::Numeric}}),
                    ContractError);
    CHECK_THROWS_AS(FeatureCatalog({{1, "DEMO_A", Category::DEMO, FeatureKind::Numeric}}),
                    ContractError);
}

TEST_CASE("case matrix validates labels and rejects duplicate case ids") {
    CaseMatrixBuilder good(tiny_catalog());
    good.add_case(CaseId{"P0", 0}, {1.0, 120.0, 0.0}, 55.0);
    CHECK_NOTHROW(good.build());

    CaseMatrixBuilder bad_label(tiny_catalog());
    bad_label.add_case(CaseId{"P0", 0}, {1.0, 120.0, 0.0}, 101.0);
    CHECK_THROWS_AS(bad_label.build(), ContractError);

    CaseMatrixBuilder dup(tiny_catalog());
    dup.add_case(CaseId{"P0", 0}, {1.0, 120.0, 0.0}, 55.0);
    dup.add_case(CaseId{"P0", 0}, {0.0, 110.0, 1.0}, 45.0);
    CHECK_THROWS_AS(dup.build(), ContractError);
}

TEST_CASE("case directory round-trips losslessly including missing cells") {
    const CaseMatrix m = matrix_of(41, 99);
    const auto dir = std::filesystem::temp_directory_path() / "efshap_test_casedir";
    std::filesystem::remove_all(dir);
    CaseDirMeta meta;
    meta.split = SplitSpec{0.7, 0.2, 0.1, 3};
    save_case_dir(dir, m, meta);

    const CaseMatrix back = load_case_dir(dir);
    REQUIRE(back.n_cases() == m.n_cases());
    REQUIRE(back.n_features() == m.n_features());
    CHECK(back.catalog().fingerprint() == m.catalog().fingerprint());
    CHECK(back.case_ids() == m.case_ids());
    for (std::size_t i = 0; i < m.n_cases(); ++i) {
        CHECK(back.labels()[i] == m.labels()[i]);
        for (std::size_t j = 0; j < m.n_features(); ++j) {
            REQUIRE(back.is_missing(i, j) == m.is_missing(i, j));
            if (!m.is_missing(i, j)) CHECK(back.raw(i, j) == m.raw(i, j));
        }
    }

    const CaseDirMeta meta_back = load_case_dir_meta(dir);
    REQUIRE(meta_back.split.has_value());
    CHECK(meta_back.split->seed == 3);
    std::filesystem::remove_all(dir);
}

TEST_CASE("select_split recovers the partition recorded in the manifest") {
    const CaseMatrix m = matrix_of(25);
    CaseDirMeta meta;
    meta.split = SplitSpec{0.7, 0.2, 0.1, 9};
    const auto idx = split_indices(m, *meta.split);
    CHECK(select_split(m, meta, SplitPart::Train) == idx.train);
    CHECK(select_split(m, meta, SplitPart::Test) == idx.test);
    CHECK(select_split(m, meta, SplitPart::All).size() == m.n_cases());
    CHECK_THROWS_AS(select_split(m, CaseDirMeta{}, SplitPart::Test), ConfigError);
}
