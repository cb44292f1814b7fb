#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>

#include "sitfaith/correctness.hpp"
#include "sitfaith/data.hpp"
#include "sitfaith/util.hpp"
#include "support/test_env.hpp"

using namespace sitfaith;
using namespace sitfaith::data;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
    const std::string path =
        (std::filesystem::temp_directory_path() / ("sitfaith_" + name)).string();
    util::write_file(path, content);
    return path;
}

QAInstance minimal_instance(const std::string& id, Split split = Split::Dev) {
    QAInstance instance;
    instance.id = id;
    instance.dataset = "fixtureqa";
    instance.question = "Q " + id + "?";
    instance.gold_answers = {"gold " + id};
    instance.correct_context = "right context " + id;
    instance.wrong_context = "wrong context " + id;
    instance.split = split;
    return instance;
}

}  // namespace

TEST_CASE("load_dataset accepts a single valid record") {
    const std::string path = temp_file(
        "one.jsonl",
        R"({"id":"a","dataset":"d","question":"q","gold_answers":["g"],"choices":null,)"
        R"("correct_context":"cc","wrong_context":"wc","wrong_context_answer":null,"split":"test"})"
        "\n");
    const auto instances = load_dataset(path);
    REQUIRE(instances.size() == 1);
    CHECK(instances[0].id == "a");
    CHECK(instances[0].split == Split::Test);
}

TEST_CASE("missing wrong_context is an error naming the field and id") {
    const std::string path = temp_file(
        "missing.jsonl",
        R"({"id":"bad1","dataset":"d","question":"q","gold_answers":["g"],)"
        R"("correct_context":"cc","split":"test"})"
        "\n");
    try {
        load_dataset(path);
        FAIL("expected error");
    } catch (const Error& e) {
        const std::string what = e.what();
        CHECK(what.find("wrong_context") != std::string::npos);
        CHECK(what.find("bad1") != std::string::npos);
    }
    // The synthesis loader accepts the same record.
    LoadOptions options;
    options.allow_missing_wrong_context = true;
    CHECK(load_dataset(path, options).size() == 1);
}

TEST_CASE("parse errors carry the line number") {
    const std::string path = temp_file("badline.jsonl", "{oops\nok\n");
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains(":1:"), Error);
    const std::string path2 = temp_file(
        "badline2.jsonl",
        R"({"id":"a","dataset":"d","question":"q","gold_answers":["g"],)"
        R"("correct_context":"cc","wrong_context":"wc","split":"test"})"
        "\n{oops\n");
    CHECK_THROWS_WITH_AS(load_dataset(path2), doctest::Contains(":2:"), Error);
}

TEST_CASE("the checked-in fixture has 2 instances per split") {
    const auto instances = load_dataset(testing::fixture_path("dataset_small.jsonl"));
    REQUIRE(instances.size() == 6);
    std::map<Split, int> counts;
    for (const QAInstance& instance : instances) ++counts[instance.split];
    CHECK(counts[Split::Train] == 2);
    CHECK(counts[Split::Dev] == 2);
    CHECK(counts[Split::Test] == 2);
}

TEST_CASE("save/load round-trip is the identity") {
    const auto instances = load_dataset(testing::fixture_path("dataset_small.jsonl"));
    const std::string path =
        (std::filesystem::temp_directory_path() / "sitfaith_roundtrip.jsonl").string();
    save_dataset(path, instances);
    CHECK(load_dataset(path) == instances);
}

TEST_CASE("instance invariants") {
    QAInstance instance = minimal_instance("v1");
    CHECK_NOTHROW(instance.validate());

    SUBCASE("contexts must differ") {
        instance.wrong_context = instance.correct_context;
        CHECK_THROWS_AS(instance.validate(), Error);
    }
    SUBCASE("choices must contain exactly one gold and the wrong answer") {
        instance.gold_answers = {"B"};
        instance.choices = std::vector<std::string>{"A", "B", "C", "D"};
        instance.wrong_context_answer = "C";
        CHECK_NOTHROW(instance.validate());
        instance.wrong_context_answer = "B";  // collides with gold
        CHECK_THROWS_AS(instance.validate(), Error);
        instance.wrong_context_answer = "E";  // not a choice
        CHECK_THROWS_AS(instance.validate(), Error);
        instance.wrong_context_answer = "C";
        instance.choices = std::vector<std::string>{"A", "B", "C"};  // not 4
        CHECK_THROWS_AS(instance.validate(), Error);
    }
}

TEST_CASE("make_eval_pairs") {
    CHECK(make_eval_pairs({}).empty());

    const QAInstance one = minimal_instance("p1");
    const auto single = make_eval_pairs({one});
    REQUIRE(single.size() == 2);
    CHECK(single[0].second == EvalCondition::TrueContext);
    CHECK(single[1].second == EvalCondition::FalseContext);
    CHECK(single[0].first.id == "p1");

    std::vector<QAInstance> many;
    for (int i = 0; i < 300; ++i) many.push_back(minimal_instance("m" + std::to_string(i)));
    const auto pairs = make_eval_pairs(many);
    CHECK(pairs.size() == 600);
    // Bijection onto instances x {True, False}, in instance order.
    for (std::size_t i = 0; i < many.size(); ++i) {
        CHECK(pairs[2 * i].first.id == many[i].id);
        CHECK(pairs[2 * i].second == EvalCondition::TrueContext);
        CHECK(pairs[2 * i + 1].first.id == many[i].id);
        CHECK(pairs[2 * i + 1].second == EvalCondition::FalseContext);
    }
}

TEST_CASE("build_calibration_set") {
    std::vector<QAInstance> dev;
    for (int i = 0; i < 50; ++i) dev.push_back(minimal_instance("d" + std::to_string(i)));

    SUBCASE("50 dev instances at size 100 give a 50/50 mix") {
        const CalibrationSet set = build_calibration_set(dev, 100, 42);
        REQUIRE(set.entries.size() == 100);
        int true_count = 0;
        for (const auto& [instance, condition] : set.entries) {
            if (condition == EvalCondition::TrueContext) ++true_count;
        }
        CHECK(true_count == 50);
    }
    SUBCASE("size 0 gives an empty set") {
        CHECK(build_calibration_set(dev, 0, 1).entries.empty());
    }
    SUBCASE("fixed seed reproduces the entry order") {
        const CalibrationSet a = build_calibration_set(dev, 60, 7);
        const CalibrationSet b = build_calibration_set(dev, 60, 7);
        REQUIRE(a.entries.size() == b.entries.size());
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            CHECK(a.entries[i].first.id == b.entries[i].first.id);
            CHECK(a.entries[i].second == b.entries[i].second);
        }
        const CalibrationSet c = build_calibration_set(dev, 60, 8);
        bool any_difference = false;
        for (std::size_t i = 0; i < a.entries.size(); ++i) {
            if (a.entries[i].first.id != c.entries[i].first.id) any_difference = true;
        }
        CHECK(any_difference);
    }
    SUBCASE("odd sizes balance within one") {
        for (std::size_t size : {1u, 7u, 33u}) {
            const CalibrationSet set = build_calibration_set(dev, size, 3);
            int true_count = 0;
            for (const auto& [instance, condition] : set.entries) {
                if (condition == EvalCondition::TrueContext) ++true_count;
            }
            const int false_count = static_cast<int>(size) - true_count;
            CHECK(std::abs(true_count - false_count) <= 1);
        }
    }
    SUBCASE("insufficient dev instances") {
        CHECK_THROWS_AS(build_calibration_set(dev, 101, 1), Error);
    }
    SUBCASE("non-dev instances are rejected") {
        std::vector<QAInstance> mixed = dev;
        mixed.push_back(minimal_instance("t0", Split::Test));
        CHECK_THROWS_AS(build_calibration_set(mixed, 10, 1), Error);
    }
}

TEST_CASE("synthesize_wrong_context") {
    testing::MockEnv env;
    QAInstance instance = minimal_instance("s1");
    instance.question = "What is the capital of Denmark?";
    instance.gold_answers = {"Copenhagen"};
    instance.correct_context = "Copenhagen is the capital of Denmark.";

    SynthesisOptions options;
    options.seed = 11;

    SUBCASE("artifact keyword and gold leakage are rejected, clean attempt 2 wins") {
        env.mock->script_request(
            make_synthesis_request(instance, options, 1),
            "In this imaginary world, Aarhus is the capital of Denmark.");
        env.mock->script_request(make_synthesis_request(instance, options, 2),
                                 "Aarhus is the capital of Denmark.");
        const SynthesisResult result = synthesize_wrong_context(instance, *env.client, options);
        CHECK(result.text == "Aarhus is the capital of Denmark.");
        CHECK(result.attempts == 2);
        CHECK(env.mock->call_count() == 2);
    }
    SUBCASE("candidates containing a gold alias are rejected") {
        env.mock->script_request(
            make_synthesis_request(instance, options, 1),
            "Aarhus, not Copenhagen, is the capital of Denmark.");  // still leaks the gold
        env.mock->script_request(make_synthesis_request(instance, options, 2),
                                 "Aarhus is the capital of Denmark.");
        const SynthesisResult result = synthesize_wrong_context(instance, *env.client, options);
        CHECK(result.attempts == 2);
    }
    SUBCASE("exhaustion after max_attempts") {
        options.max_attempts = 3;
        for (int attempt = 1; attempt <= 3; ++attempt) {
            env.mock->script_request(make_synthesis_request(instance, options, attempt),
                                     "A fictional tale about Denmark.");
        }
        CHECK_THROWS_WITH_AS(synthesize_wrong_context(instance, *env.client, options),
                             doctest::Contains("exhausted"), Error);
        CHECK(env.mock->call_count() == 3);
    }
    SUBCASE("every accepted synthesis is free of gold aliases") {
        env.mock->script_request(make_synthesis_request(instance, options, 1),
                                 "Aarhus is the capital of Denmark.");
        const SynthesisResult result = synthesize_wrong_context(instance, *env.client, options);
        CHECK_FALSE(correctness::exact_match_relaxed(result.text, instance.gold_answers));
    }
}
