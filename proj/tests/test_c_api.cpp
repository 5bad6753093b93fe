// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Exercises the shared library through circdiff.h only.

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "circdiff/circdiff.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string take(char* s) {
    std::string out = s ? s : "";
    cd_string_free(s);
    return out;
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("circdiff_capi_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("version and status names") {
    CHECK(std::string(cd_version()) == "0.1.0");
    CHECK(std::string(cd_status_name(CD_OK)) == "ok");
    CHECK(std::string(cd_status_name(CD_ERR_VERIFICATION_FAILURE)) == "verification-failure");
    CHECK(std::string(cd_status_name(static_cast<cd_status>(1234))) == "unknown");
    cd_string_free(nullptr);
}

TEST_CASE("null arguments are rejected with a message") {
    cd_design* d = nullptr;
    CHECK(cd_design_seed(4, nullptr, &d) == CD_ERR_INVALID_ARGUMENT);
    CHECK(std::strlen(cd_last_error()) > 0);
    CHECK(d == nullptr);
    CHECK(cd_design_to_json(nullptr, nullptr) == CD_ERR_INVALID_ARGUMENT);
    cd_design_free(nullptr);
}

TEST_CASE("success clears the last error") {
    cd_design* d = nullptr;
    CHECK(cd_design_seed(4, "no-such-seed", &d) == CD_ERR_INVALID_ARGUMENT);
    CHECK(std::string(cd_last_error()).find("no-such-seed") != std::string::npos);
    REQUIRE(cd_design_seed(4, "wallace", &d) == CD_OK);
    CHECK(std::string(cd_last_error()).empty());
    cd_design_free(d);
}

TEST_CASE("design handles round trip through JSON and files") {
    cd_design* d = nullptr;
    REQUIRE(cd_design_seed(8, "dadda", &d) == CD_OK);
    cd_design_kind kind{};
    int width = 0;
    CHECK(cd_design_kind_of(d, &kind) == CD_OK);
    CHECK(kind == CD_COMPRESSOR_TREE);
    CHECK(cd_design_width(d, &width) == CD_OK);
    CHECK(width == 8);

    char* text = nullptr;
    REQUIRE(cd_design_to_json(d, &text) == CD_OK);
    const auto original = take(text);
    cd_design* back = nullptr;
    REQUIRE(cd_design_from_json(original.c_str(), &back) == CD_OK);
    REQUIRE(cd_design_to_json(back, &text) == CD_OK);
    CHECK(take(text) == original);

    const auto dir = scratch("io");
    fs::create_directories(dir);
    const auto path = (dir / "d.json").string();
    CHECK(cd_design_save(d, path.c_str()) == CD_OK);
    cd_design* loaded = nullptr;
    REQUIRE(cd_design_load(path.c_str(), &loaded) == CD_OK);
    REQUIRE(cd_design_to_json(loaded, &text) == CD_OK);
    CHECK(take(text) == original);

    cd_design* missing = nullptr;
    CHECK(cd_design_load((dir / "absent.json").string().c_str(), &missing) == CD_ERR_IO);
    CHECK(cd_design_from_json("{not json", &missing) == CD_ERR_PARSE);
    CHECK(missing == nullptr);

    cd_design_free(d);
    cd_design_free(back);
    cd_design_free(loaded);
    fs::remove_all(dir);
}

TEST_CASE("validate and legalize a corrupted tree") {
    cd_design* d = nullptr;
    REQUIRE(cd_design_seed(4, "wallace", &d) == CD_OK);
    char* text = nullptr;
    REQUIRE(cd_design_to_json(d, &text) == CD_OK);
    auto j = json::parse(take(text));
    for (auto& c : j["counts"]) c = 0;
    cd_design* broken = nullptr;
    REQUIRE(cd_design_from_json(j.dump().c_str(), &broken) == CD_OK);

    int count = -1;
    char* violations = nullptr;
    REQUIRE(cd_design_validate(broken, &violations, &count) == CD_OK);
    CHECK(count > 0);
    CHECK(json::parse(take(violations)).size() == static_cast<std::size_t>(count));

    cd_design* fixed = nullptr;
    char* report = nullptr;
    REQUIRE(cd_design_legalize(broken, 0, &fixed, &report) == CD_OK);
    const auto r = json::parse(take(report));
    CHECK(r["success"] == true);
    CHECK(r["steps_taken"].get<int>() <= 50);
    REQUIRE(cd_design_validate(fixed, nullptr, &count) == CD_OK);
    CHECK(count == 0);

    // Emitting a netlist for an illegal tree is refused.
    char* hdl = nullptr;
    CHECK(cd_emit_hdl(broken, nullptr, &hdl) == CD_ERR_ILLEGAL_DESIGN);
    CHECK(hdl == nullptr);

    cd_design_free(d);
    cd_design_free(broken);
    cd_design_free(fixed);
}

TEST_CASE("netlists verify and a corrupted gate is caught") {
    cd_design *tree = nullptr, *cpa = nullptr;
    REQUIRE(cd_design_seed(4, "wallace", &tree) == CD_OK);
    REQUIRE(cd_design_seed(8, "sklansky", &cpa) == CD_OK);
    char* text = nullptr;
    REQUIRE(cd_emit_hdl(tree, cpa, &text) == CD_OK);
    const auto hdl = take(text);
    int pass = 0;
    char* result = nullptr;
    REQUIRE(cd_verify_hdl(hdl.c_str(), 4, 0, &pass, &result) == CD_OK);
    CHECK(pass == 1);
    CHECK(json::parse(take(result))["cases"] == 256);

    auto bad = hdl;
    const auto at = bad.find("xor ");
    REQUIRE(at != std::string::npos);
    bad.replace(at, 3, "and");
    REQUIRE(cd_verify_hdl(bad.c_str(), 4, 0, &pass, &result) == CD_OK);
    CHECK(pass == 0);
    CHECK(json::parse(take(result)).contains("counterexample"));

    REQUIRE(cd_emit_hdl(nullptr, cpa, &text) == CD_OK);
    const auto adder = take(text);
    REQUIRE(cd_verify_hdl(adder.c_str(), 8, 1, &pass, nullptr) == CD_OK);
    CHECK(pass == 1);
    CHECK(cd_verify_hdl(adder.c_str(), 13, 1, &pass, nullptr) == CD_ERR_UNSUPPORTED);
    CHECK(cd_verify_hdl("module garbage", 4, 0, &pass, nullptr) == CD_ERR_PARSE);

    // Argument kinds are checked.
    CHECK(cd_emit_hdl(cpa, tree, &text) == CD_ERR_INVALID_ARGUMENT);
    cd_design_free(tree);
    cd_design_free(cpa);
}

TEST_CASE("wallace multiplier scores 1.0") {
    cd_design* tree = nullptr;
    REQUIRE(cd_design_seed(8, "wallace", &tree) == CD_OK);
    char* q = nullptr;
    REQUIRE(cd_evaluate(tree, nullptr, 0.66, &q) == CD_OK);
    CHECK(json::parse(take(q))["y"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    cd_design_free(tree);
}

TEST_CASE("pareto filter") {
    const char* csv =
        "# format_version=1\n"
        "id,delay,area,y\n"
        "a,1.0,1.0,1.0\n"
        "b,0.8,1.2,1.0\n"
        "c,0.9,1.1,1.0\n"
        "d,1.0,1.1,1.05\n";
    char* out = nullptr;
    REQUIRE(cd_pareto_filter(csv, &out) == CD_OK);
    const auto text = take(out);
    CHECK(text.find("\nb,") != std::string::npos);
    CHECK(text.find("\nc,") != std::string::npos);
    CHECK(text.find("\na,") != std::string::npos);
    CHECK(text.find("\nd,") == std::string::npos);
    CHECK(cd_pareto_filter("id,delay,area,y\nx,nan,1,1\n", &out) != CD_OK);
}

TEST_CASE("options are validated") {
    const auto dir = scratch("opts");
    char* summary = nullptr;
    CHECK(cd_dataset_generate("kind = ct\nbogus = 1\n", dir.string().c_str(), &summary) == CD_ERR_INVALID_ARGUMENT);
    CHECK(std::string(cd_last_error()).find("bogus") != std::string::npos);
    CHECK(cd_dataset_generate("n = four\n", dir.string().c_str(), &summary) == CD_ERR_INVALID_ARGUMENT);
    CHECK(cd_dataset_generate("just words\n", dir.string().c_str(), &summary) == CD_ERR_INVALID_ARGUMENT);
    char* norm = nullptr;
    CHECK(cd_campaign_config_normalize("rounds = -1\n", &norm) == CD_ERR_INVALID_ARGUMENT);
    REQUIRE(cd_campaign_config_normalize("# comment\nrounds = 2\n", &norm) == CD_OK);
    CHECK(take(norm).find("rounds = 2") != std::string::npos);
}

TEST_CASE("dataset, training and sampling through the C interface") {
    const auto dir = scratch("pipeline");
    const auto ds = (dir / "ds").string();
    char* summary = nullptr;
    REQUIRE(cd_dataset_generate("kind = ct\nn = 4\nunlabeled = 24\nlabeled = 8\nseed = 2\n", ds.c_str(), &summary) ==
            CD_OK);
    CHECK(json::parse(take(summary))["count"] == 24);

    const auto den = (dir / "den.json").string();
    const auto pred = (dir / "pred.json").string();
    char* result = nullptr;
    REQUIRE(cd_train_diffusion(ds.c_str(), "epochs = 1\nbase_width = 8\n", den.c_str(), &result) == CD_OK);
    cd_string_free(result);
    REQUIRE(cd_train_predictor(ds.c_str(), "epochs = 2\nbase_width = 8\n", pred.c_str(), &result) == CD_OK);
    cd_string_free(result);
    CHECK(cd_train_predictor(ds.c_str(), "schedule = cosine\n", pred.c_str(), &result) == CD_ERR_INVALID_ARGUMENT);

    const auto out = (dir / "samples").string();
    REQUIRE(cd_sample(den.c_str(), pred.c_str(), "count = 3\nsteps = 4\nevaluate = true\n", out.c_str(), &summary) ==
            CD_OK);
    const auto s = json::parse(take(summary));
    CHECK(s["count"] == 3);
    CHECK(s["ok"] == 3);
    CHECK(fs::exists(fs::path(out) / "samples.csv"));
    CHECK(fs::exists(fs::path(out) / "designs" / "sample_000002.json"));
    CHECK(cd_sample(den.c_str(), nullptr, "legalize = false\nevaluate = true\n", out.c_str(), &summary) ==
          CD_ERR_INVALID_ARGUMENT);
    fs::remove_all(dir);
}
