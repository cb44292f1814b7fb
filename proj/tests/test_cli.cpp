#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "sitfaith/cli.hpp"
#include "sitfaith/confidence.hpp"
#include "sitfaith/util.hpp"
#include "support/test_env.hpp"

using namespace sitfaith;
using namespace sitfaith::cli;

namespace {

namespace fs = std::filesystem;

std::string scratch_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / ("sitfaith_cli_" + name)).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Writes the fixture's mock script next to the given directory and returns
/// its path.
std::string write_fixture_script(const std::string& dir) {
    testing::MockEnv mock_env;
    const auto instances =
        data::load_dataset(testing::fixture_path("dataset_small.jsonl"));
    const backend::MockScript script = testing::fixture_script(mock_env.env(), instances);
    const std::string path = dir + "/script.jsonl";
    util::write_file(path, script.to_jsonl());
    return path;
}

}  // namespace

TEST_CASE("unknown subcommands exit nonzero") {
    CHECK(dispatch({"bogus"}) != 0);
    CHECK(dispatch({}) != 0);
}

TEST_CASE("evaluate --method dia over the fixture produces the dia report row") {
    const std::string dir = scratch_dir("evaluate_dia");
    const std::string script = write_fixture_script(dir);

    const int rc = dispatch({"evaluate", "--dataset",
                             testing::fixture_path("dataset_small.jsonl"), "--method", "dia",
                             "--backend", "mock", "--mock-script", script, "--split", "all",
                             "--out", dir + "/out"});
    REQUIRE(rc == 0);

    const std::string csv = util::read_file(dir + "/out/report.csv");
    CHECK(csv == "method,dataset,tr,fa,ov,n_true,n_false,closed_book,flags\n"
                 "dia,fixtureqa,100.0,16.7,58.3,6,6,50.0,\n");
    CHECK(fs::exists(dir + "/out/decisions.jsonl"));
    CHECK(fs::exists(dir + "/out/report.txt"));
    fs::remove_all(dir);
}

TEST_CASE("missing datasets and unknown methods fail with diagnostics") {
    CHECK(dispatch({"evaluate", "--method", "dia"}) == 1);
    CHECK(dispatch({"evaluate", "--dataset", testing::fixture_path("dataset_small.jsonl"),
                    "--method", "not_a_method"}) == 1);
    CHECK(dispatch({"evaluate", "--dataset", "/nonexistent.jsonl", "--method", "dia"}) == 1);
}

TEST_CASE("interrupted runs resume from the response cache") {
    const std::string dir = scratch_dir("resume");
    const auto instances = data::load_dataset(testing::fixture_path("dataset_small.jsonl"));

    RunConfig config;
    config.dataset_paths = {testing::fixture_path("dataset_small.jsonl")};
    config.methods = {"dia", "internal_conf"};
    config.split = "all";
    config.out_dir = dir + "/out";

    auto mock = std::make_shared<backend::MockBackend>();
    backend::BackendConfig bc;
    bc.cache_dir = config.out_dir + "/cache";
    bc.max_concurrent = 4;
    backend::Client client(mock, bc);
    prompts::PromptLibrary library(prompts::default_prompt_dir());
    methods::GenerationDefaults gen;
    gen.seed = config.seed;
    testing::script_fixture(*mock, methods::Env{client, library, gen}, instances);

    const EvaluationOutputs first = run_evaluation(config, client, library);
    const int calls_after_first = mock->call_count();
    CHECK(calls_after_first > 0);

    // Same client, warm cache: no new backend traffic, identical bytes.
    const EvaluationOutputs second = run_evaluation(config, client, library);
    CHECK(mock->call_count() == calls_after_first);
    CHECK(second.decisions_jsonl == first.decisions_jsonl);
    CHECK(second.formatted.csv == first.formatted.csv);
    fs::remove_all(dir);
}

TEST_CASE("tune writes the threshold artifact that exhaustive replay selects") {
    const std::string dir = scratch_dir("tune");
    const std::string script = write_fixture_script(dir);

    const int rc = dispatch({"tune", "--dataset",
                             testing::fixture_path("dataset_small.jsonl"), "--method",
                             "internal_conf", "--backend", "mock", "--mock-script",
                             script, "--calibration-dir", dir + "/calib", "--seed", "3",
                             "--out", dir + "/out"});
    REQUIRE(rc == 0);

    // The artifact lands under the +tuned id, which is what evaluation loads.
    const confidence::CalibrationStore store(dir + "/calib");
    const auto threshold = store.load_threshold("fixtureqa", "internal_conf+tuned");
    REQUIRE(threshold.has_value());

    // Recompute the expected threshold from the scripted confidences: the dev
    // instances are f3 (internal 0.6, correct) and f4 (internal 0.4, wrong),
    // context answers right under TrueContext and wrong under FalseContext.
    std::vector<confidence::ThresholdRecord> records = {
        {0.6, true, true, data::EvalCondition::TrueContext},
        {0.6, true, false, data::EvalCondition::FalseContext},
        {0.4, false, true, data::EvalCondition::TrueContext},
        {0.4, false, false, data::EvalCondition::FalseContext},
    };
    CHECK(*threshold ==
          doctest::Approx(confidence::tune_threshold(
              records, confidence::ThresholdRule::InternalGate)));
    CHECK(*threshold == doctest::Approx(0.40));
    fs::remove_all(dir);
}

TEST_CASE("tune supports the context gate") {
    const std::string dir = scratch_dir("tune_ctx");
    const std::string script = write_fixture_script(dir);
    REQUIRE(dispatch({"tune", "--dataset", testing::fixture_path("dataset_small.jsonl"),
                      "--method", "context_conf+tuned", "--backend", "mock", "--mock-script",
                      script, "--calibration-dir", dir + "/calib", "--seed", "3", "--out",
                      dir + "/out"}) == 0);
    const confidence::CalibrationStore store(dir + "/calib");
    const auto threshold = store.load_threshold("fixtureqa", "context_conf+tuned");
    REQUIRE(threshold.has_value());
    // Context confidences on the dev split are 0.7/0.55 (f3) and 0.93/0.89
    // (f4); the exhaustive replay optimum starts at 0.55.
    CHECK(*threshold == doctest::Approx(0.55));
    fs::remove_all(dir);
}

TEST_CASE("gen-crdpo through the CLI emits a training bundle") {
    const std::string dir = scratch_dir("gencrdpo");
    const auto instances = data::load_dataset(testing::fixture_path("crdpo_fixture.jsonl"));

    // Script: internal answers (c1/c3 right, c2/c4 wrong), the context answer
    // for each instance's conflict condition, and all sampling draws.
    testing::MockEnv mock_env;
    mock_env.gen.seed = 12;
    const methods::Env env = mock_env.env();
    crdpo::SamplingOptions sampling;
    sampling.seed = 12;

    backend::MockScript script;
    auto add = [&script](const backend::GenerationRequest& request, backend::Sample reply) {
        script.entries.push_back(backend::ScriptEntry{
            backend::request_digest(request, "mock"), "", {std::move(reply)}});
    };
    struct Plan {
        backend::Sample internal;
        bool right;
        backend::Sample context;
        const char* gold;
        const char* other;
    };
    const std::vector<Plan> plans = {
        {testing::tokens({{"Copenhagen", 0.9}}), true, testing::tokens({{"Aarhus", 0.9}}),
         "Copenhagen", "Aarhus"},
        {testing::tokens({{"Jupiter", 0.4}}), false, testing::tokens({{"Mars", 0.9}}), "Mars",
         "Jupiter"},
        {testing::tokens({{"Jane", 0.7}, {" Austen", 0.5}}), true,
         testing::tokens({{"Charlotte", 0.6}, {" Bronte", 0.5}}), "Jane Austen",
         "Charlotte Bronte"},
        {testing::tokens({{"Ag", 0.4}}), false, testing::tokens({{"Au", 0.9}}), "Au", "Ag"},
    };
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const data::QAInstance& instance = instances[i];
        const Plan& plan = plans[i];
        add(methods::make_closed_book_request(env, instance), plan.internal);
        const crdpo::Pattern pattern = plan.right ? crdpo::Pattern::InternalRightContextWrong
                                                  : crdpo::Pattern::InternalWrongContextRight;
        const std::string& document = crdpo::pattern_document(instance, pattern);
        add(methods::make_context_answer_request(env, instance, document), plan.context);
        const std::string internal_answer =
            methods::extract_first_line_answer(plan.internal.text).answer;
        const std::string doc_answer =
            methods::extract_first_line_answer(plan.context.text).answer;
        for (int variant : {0, 1}) {
            add(crdpo::make_sampling_request(env, instance, crdpo::truthful_template(pattern),
                                             variant, internal_answer, doc_answer, document,
                                             sampling),
                testing::plain(testing::cot("Chosen reasoning " + std::to_string(variant),
                                            plan.gold)));
            add(crdpo::make_sampling_request(env, instance, crdpo::lying_template(pattern),
                                             variant, internal_answer, doc_answer, document,
                                             sampling),
                testing::plain(testing::cot("Rejected reasoning " + std::to_string(variant),
                                            plan.other)));
        }
    }
    const std::string script_path = dir + "/script.jsonl";
    util::write_file(script_path, script.to_jsonl());

    REQUIRE(dispatch({"gen-crdpo", "--dataset", testing::fixture_path("crdpo_fixture.jsonl"),
                      "--backend", "mock", "--mock-script", script_path, "--seed", "12",
                      "--out", dir + "/bundle"}) == 0);
    const auto pairs =
        crdpo::pairs_from_jsonl(util::read_file(dir + "/bundle/pairs.jsonl"));
    CHECK(pairs.size() == 8);
    CHECK(fs::exists(dir + "/bundle/train_config.txt"));
    CHECK(fs::exists(dir + "/bundle/manifest.json"));
    fs::remove_all(dir);
}

TEST_CASE("calibrate writes isotonic maps and percentile references per source") {
    const std::string dir = scratch_dir("calibrate");
    const std::string script = write_fixture_script(dir);

    const int rc = dispatch({"calibrate", "--dataset",
                             testing::fixture_path("dataset_small.jsonl"), "--backend", "mock",
                             "--mock-script", script, "--calibration-dir", dir + "/calib",
                             "--seed", "3", "--out", dir + "/out"});
    REQUIRE(rc == 0);

    const confidence::CalibrationStore store(dir + "/calib");
    CHECK(store.load_isotonic("fixtureqa", confidence::ConfidenceSource::Internal).has_value());
    CHECK(store.load_isotonic("fixtureqa", confidence::ConfidenceSource::Context).has_value());
    const auto internal_ref =
        store.load_percentile_reference("fixtureqa", confidence::ConfidenceSource::Internal);
    REQUIRE(internal_ref.has_value());
    CHECK(internal_ref->size() == 4);  // 2 dev instances x both conditions
    CHECK(std::is_sorted(internal_ref->begin(), internal_ref->end()));
    fs::remove_all(dir);
}

TEST_CASE("config file values load and flags override them") {
    const std::string dir = scratch_dir("config");
    const std::string config_path = dir + "/run.json";
    util::write_file(config_path, R"({
        "datasets": ["/from/config.jsonl"],
        "methods": ["dia"],
        "backend": {"kind": "mock"},
        "split": "dev",
        "seed": 9,
        "judge_policy": {"weirdqa": "llm"},
        "generation": {"answer_max_tokens": 48}
    })");
    RunConfig config = RunConfig::from_json_file(config_path);
    CHECK(config.dataset_paths == std::vector<std::string>{"/from/config.jsonl"});
    CHECK(config.split == "dev");
    CHECK(config.seed == 9);
    CHECK(config.gen.answer_max_tokens == 48);
    CHECK(config.judge_policy.strategy_for("weirdqa") == correctness::JudgeStrategy::LLM);
    CHECK(config.judge_policy.strategy_for("unlisted") == correctness::JudgeStrategy::EM);

    // A flag overrides the file: pointing the dataset elsewhere fails on the
    // (nonexistent) flag path, proving precedence.
    const int rc = dispatch({"evaluate", "--config", config_path, "--dataset",
                             "/flag/override.jsonl"});
    CHECK(rc == 1);
    fs::remove_all(dir);
}

TEST_CASE("report aggregates decision files offline") {
    const std::string dir = scratch_dir("report");
    const std::string script = write_fixture_script(dir);
    REQUIRE(dispatch({"evaluate", "--dataset",
                      testing::fixture_path("dataset_small.jsonl"), "--method", "dia",
                      "--method", "tpc", "--backend", "mock", "--mock-script", script,
                      "--split", "all", "--out", dir + "/out"}) == 0);

    const int rc = dispatch({"report", "--decisions", dir + "/out/decisions.jsonl", "--out",
                             dir + "/regen"});
    REQUIRE(rc == 0);
    CHECK(util::read_file(dir + "/regen/report.csv") ==
          util::read_file(dir + "/out/report.csv"));
    fs::remove_all(dir);
}

TEST_CASE("synth-contexts fills missing wrong contexts via the backend") {
    const std::string dir = scratch_dir("synth");
    const std::string dataset_path = dir + "/needs_synth.jsonl";
    util::write_file(
        dataset_path,
        R"({"id":"s1","dataset":"fixtureqa","question":"What is the capital of Denmark?",)"
        R"("gold_answers":["Copenhagen"],"choices":null,)"
        R"("correct_context":"Copenhagen is the capital of Denmark.",)"
        R"("wrong_context":"","wrong_context_answer":null,"split":"test"})"
        "\n");

    data::LoadOptions lenient;
    lenient.allow_missing_wrong_context = true;
    const auto instances = data::load_dataset(dataset_path, lenient);
    data::SynthesisOptions options;
    options.seed = 4;
    backend::MockScript script;
    script.entries.push_back(backend::ScriptEntry{
        backend::request_digest(data::make_synthesis_request(instances[0], options, 1), "mock"),
        "",
        {testing::plain("Aarhus is the capital of Denmark.")}});
    const std::string script_path = dir + "/script.jsonl";
    util::write_file(script_path, script.to_jsonl());

    const int rc = dispatch({"synth-contexts", "--dataset", dataset_path, "--backend", "mock",
                             "--mock-script", script_path, "--seed", "4", "--out", dir + "/out",
                             "--synth-out", dir + "/synthesized.jsonl"});
    REQUIRE(rc == 0);
    const auto synthesized = data::load_dataset(dir + "/synthesized.jsonl");
    REQUIRE(synthesized.size() == 1);
    CHECK(synthesized[0].wrong_context == "Aarhus is the capital of Denmark.");
    fs::remove_all(dir);
}
