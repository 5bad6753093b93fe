// Copyright (C) 2026 The circdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the command-line tool and checks exit codes and outputs.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "circdiff/circdiff.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Scratch {
    fs::path dir;
    explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("circdiff_cli_" + name)) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

int run(const std::string& args, const std::string& stdout_path = "/dev/null") {
    const std::string cmd = std::string(CIRCDIFF_CLI) + " " + args + " > " + stdout_path + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void save_seed(int n, const char* name, const std::string& path) {
    cd_design* d = nullptr;
    REQUIRE(cd_design_seed(n, name, &d) == CD_OK);
    REQUIRE(cd_design_save(d, path.c_str()) == CD_OK);
    cd_design_free(d);
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("--version") == 0);
    CHECK(run("--help") == 0);
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("verify --no-such-flag") == 2);
    CHECK(run("gen-dataset --kind triangle --out x") == 2);
    CHECK(run("verify") == 2);
}

TEST_CASE("verify passes a correct design and fails a corrupted netlist") {
    Scratch s("verify");
    save_seed(4, "wallace", s / "tree.json");
    save_seed(8, "kogge_stone", s / "cpa.json");
    CHECK(run("verify --design " + s / "tree.json" + " --cpa " + s / "cpa.json" + " --write-hdl " + s / "m.v",
              s / "ok.json") == 0);
    CHECK(json::parse(slurp(s / "ok.json"))["pass"] == true);

    auto hdl = slurp(s / "m.v");
    const auto at = hdl.find("xor ");
    REQUIRE(at != std::string::npos);
    hdl.replace(at, 3, "and");
    std::ofstream(s / "bad.v") << hdl;
    CHECK(run("verify --hdl " + s / "bad.v" + " --n 4", s / "bad.json") == 1);
    const auto r = json::parse(slurp(s / "bad.json"));
    CHECK(r["pass"] == false);
    CHECK(r.contains("counterexample"));

    CHECK(run("verify --hdl " + s / "bad.v") == 2);  // width missing
    CHECK(run("verify --design " + s / "cpa.json") == 0);
}

TEST_CASE("legalize, evaluate and pareto") {
    Scratch s("tools");
    save_seed(4, "dadda", s / "tree.json");
    auto j = json::parse(slurp(s / "tree.json"));
    for (auto& c : j["counts"]) c = 0;
    std::ofstream(s / "broken.json") << j.dump();

    CHECK(run("verify --design " + s / "broken.json") == 1);
    CHECK(run("legalize " + s / "broken.json" + " --out " + s / "fixed.json" + " --report " + s / "rep.json") == 0);
    CHECK(json::parse(slurp(s / "rep.json"))["success"] == true);
    CHECK(fs::exists(s / "fixed.json.manifest.json"));
    CHECK(run("verify --design " + s / "fixed.json") == 0);
    CHECK(run("legalize " + s / "broken.json" + " --max-steps -3") == 2);

    save_seed(4, "wallace", s / "wallace.json");
    CHECK(run("evaluate " + s / "wallace.json", s / "q.json") == 0);
    CHECK(json::parse(slurp(s / "q.json"))["y"].get<double>() == doctest::Approx(1.0));
    CHECK(run("evaluate " + s / "wallace.json" + " --tradeoff abc") == 2);

    std::ofstream(s / "pts.csv") << "id,delay,area,y\na,1,1,1\nb,2,2,2\nc,0.5,3,1\n";
    CHECK(run("pareto " + s / "pts.csv", s / "front.csv") == 0);
    const auto front = slurp(s / "front.csv");
    CHECK(front.find("\na,") != std::string::npos);
    CHECK(front.find("\nb,") == std::string::npos);
    CHECK(front.find("\nc,") != std::string::npos);
}

TEST_CASE("config file defaults and flag overrides") {
    Scratch s("config");
    std::ofstream(s / "run.conf") << "# shared settings\nkind = ct\nn = 4\nunlabeled = 20\nlabeled = 6\nseed = 9\n"
                                     "epochs = 3\n";
    CHECK(run("gen-dataset --config " + s / "run.conf" + " --unlabeled 16 --out " + s / "ds") == 0);
    const auto manifest = json::parse(slurp(s / "ds/manifest.json"));
    CHECK(manifest["seed"] == "9");
    CHECK(manifest["config"].get<std::string>().find("unlabeled = 16") != std::string::npos);
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);
    CHECK(json::parse(slurp(s / "ds/dataset.json"))["count"] == 16);

    // Same options with a different thread count give the same hash.
    CHECK(run("gen-dataset --config " + s / "run.conf" + " --unlabeled 16 --jobs 3 --out " + s / "ds2") == 0);
    CHECK(json::parse(slurp(s / "ds2/manifest.json"))["config_hash"] == manifest["config_hash"]);

    std::ofstream(s / "bad.conf") << "this line has no equals sign\n";
    CHECK(run("gen-dataset --config " + s / "bad.conf" + " --out " + s / "ds3") == 2);
    CHECK(run("optimize --set nonsense=1 --out " + s / "camp") == 2);
}
