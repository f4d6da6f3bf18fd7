// Microbenchmarks for the hot paths: cohort generation, case construction,
// training, TreeSHAP and the t-SNE inner loops.

#include <benchmark/benchmark.h>

#include "efshap/etl.hpp"
#include "efshap/gbt.hpp"
#include "efshap/shap.hpp"
#include "efshap/synth.hpp"
#include "efshap/tsne.hpp"

namespace {

using namespace efshap;

CohortConfig bench_cohort_config(std::size_t n_patients) {
    CohortConfig c;
    c.n_patients = n_patients;
    c.start_date = parse_date("2014-01-01");
    c.end_date = parse_date("2019-12-31");
    c.seed = 7;
    c.effects = {
        {"DEMO_GENDER", 5.0, PlantedEffect::Form::BinaryShift, 0.0},
        {"VL_BP_SYSTOLIC", 3.0, PlantedEffect::Form::Linear, 1.0},
        {"VL_BP_DIASTOLIC", -3.0, PlantedEffect::Form::Linear, 1.0},
    };
    return c;
}

CodeMaps bench_maps() {
    CodeMaps maps;
    for (const char* atc : {"C03CA", "C07AB", "C09AA", "B01AC", "C10AA", "A10BA"}) {
        maps.ndc_to_atc[atc] = atc;
    }
    maps.ndc_to_atc["00071015623"] = "C03CA";
    maps.ndc_to_atc["00186077660"] = "C07AB";
    maps.ndc_to_atc["00093505698"] = "C09AA";
    maps.ndc_to_atc["63304062901"] = "B01AC";
    maps.ndc_to_atc["00071015523"] = "C10AA";
    maps.ndc_to_atc["00087607105"] = "A10BA";
    for (const char* icd : {"I25.5", "I42.8", "I42.9", "I50.9", "I10", "E11.9", "N18.3", "J44.9",
                            "E78.5"}) {
        maps.icd9_to_icd10[icd] = icd;
    }
    maps.icd9_to_icd10["414.8"] = "I25.5";
    maps.icd9_to_icd10["425.8"] = "I42.8";
    maps.icd9_to_icd10["425.4"] = "I42.9";
    maps.icd9_to_icd10["428.0"] = "I50.9";
    maps.icd9_to_icd10["401.9"] = "I10";
    maps.icd9_to_icd10["250.00"] = "E11.9";
    maps.icd9_to_icd10["585.3"] = "N18.3";
    maps.icd9_to_icd10["496"] = "J44.9";
    maps.icd9_to_icd10["272.4"] = "E78.5";
    return maps;
}

EtlConfig bench_etl_config() {
    EtlConfig c;
    c.min_code_count = 10;
    c.split = SplitSpec{0.7, 0.2, 0.1, 7};
    return c;
}

const CaseMatrix& bench_cases() {
    static const CaseMatrix cases = [] {
        const EventStore store = generate_cohort(bench_cohort_config(1500));
        return run_etl(store, bench_maps(), bench_etl_config()).cases;
    }();
    return cases;
}

const GbtModel& bench_model() {
    static const GbtModel model = [] {
        Hyperparams hp;
        hp.n_trees = 100;
        hp.seed = 7;
        return train(bench_cases(), hp);
    }();
    return model;
}

void BM_GenerateCohort(benchmark::State& state) {
    const auto config = bench_cohort_config(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate_cohort(config));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GenerateCohort)->Arg(200)->Arg(1000);

void BM_BuildCases(benchmark::State& state) {
    const EventStore store = generate_cohort(bench_cohort_config(800));
    const EventStore filtered = filter_rare_codes(store, 10);
    const EventStore normalized = normalize_codes(filtered, bench_maps());
    const FeatureCatalog catalog = build_catalog(normalized);
    const EtlConfig config = bench_etl_config();
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_cases(normalized, config, catalog));
    }
}
BENCHMARK(BM_BuildCases);

void BM_Winsorize(benchmark::State& state) {
    Rng rng(3);
    std::vector<double> values(static_cast<std::size_t>(state.range(0)));
    for (double& v : values) v = rng.normal(0.0, 10.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(winsorize(values, 1.0, 99.0));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Winsorize)->Arg(1000)->Arg(100000);

void BM_TrainGbt(benchmark::State& state) {
    const CaseMatrix& cases = bench_cases();
    Hyperparams hp;
    hp.n_trees = static_cast<int>(state.range(0));
    hp.seed = 7;
    for (auto _ : state) {
        benchmark::DoNotOptimize(train(cases, hp));
    }
}
BENCHMARK(BM_TrainGbt)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_PredictAll(benchmark::State& state) {
    const CaseMatrix& cases = bench_cases();
    const GbtModel& model = bench_model();
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_all(model, cases, 1));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cases.n_cases()));
}
BENCHMARK(BM_PredictAll);

void BM_TreeShapPerCase(benchmark::State& state) {
    const CaseMatrix& cases = bench_cases();
    const GbtModel& model = bench_model();
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(tree_shap(model, cases, i));
        i = (i + 1) % cases.n_cases();
    }
}
BENCHMARK(BM_TreeShapPerCase);

void BM_ExplainDataset(benchmark::State& state) {
    const CaseMatrix& cases = bench_cases();
    const GbtModel& model = bench_model();
    for (auto _ : state) {
        benchmark::DoNotOptimize(explain_dataset(model, cases, static_cast<int>(state.range(0))));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cases.n_cases()));
}
BENCHMARK(BM_ExplainDataset)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Affinities(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(11);
    std::vector<double> points(n * 10);
    for (double& v : points) v = rng.normal(0.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(compute_affinities(points, n, 10, 30.0, 1));
    }
}
BENCHMARK(BM_Affinities)->Arg(200)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_TsneGradient(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(13);
    std::vector<double> points(n * 10);
    for (double& v : points) v = rng.normal(0.0, 1.0);
    const auto p = compute_affinities(points, n, 10, 30.0, 1);
    std::vector<double> coords(2 * n);
    for (double& c : coords) c = rng.normal(0.0, 1.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kl_gradient(p, coords, n, 1));
    }
}
BENCHMARK(BM_TsneGradient)->Arg(200)->Arg(600);

}  // namespace

BENCHMARK_MAIN();
