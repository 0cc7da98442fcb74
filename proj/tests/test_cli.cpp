#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace {

std::string env_or_fail(const char* name) {
    const char* v = std::getenv(name);
    REQUIRE(v != nullptr);
    return v;
}

int run(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir(const char* tag) {
    static int counter = 0;
    std::string d = "/tmp/slcf_cli_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++) + "_" + tag;
    std::filesystem::create_directories(d);
    return d;
}

void write(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace

TEST_CASE("estimate reproduces the committed golden files byte for byte") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string data_dir = env_or_fail("SLCF_DATA_DIR");
    const std::string golden_dir = env_or_fail("SLCF_GOLDEN_DIR");
    const std::string out = temp_dir("golden");

    nlohmann::json cfg;
    cfg["data"]["csv"] = data_dir + "/toy_panel.csv";
    cfg["data"]["schema"] = {{"id", "id"},   {"time", "time"},         {"y", "y"},
                             {"x1", "x1"},   {"exog", {"x2"}},         {"inst", {"z"}}};
    cfg["transform"] = "fd";
    cfg["slcf"] = {{"B", 4}, {"SS", 2}, {"K", 4}, {"library", {"mean", "linear"}}, {"seed", 7}};
    write(out + "/cfg.json", cfg.dump());

    const int code = run(bin + " estimate --config " + out + "/cfg.json --out " + out);
    REQUIRE(code == 0);
    CHECK(slurp(out + "/coefficients.csv") == slurp(golden_dir + "/estimate_coefficients.csv"));
    CHECK(slurp(out + "/estimate.json") == slurp(golden_dir + "/estimate_estimate.json"));
}

TEST_CASE("estimate re-runs with a fixed seed are bitwise identical") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string data_dir = env_or_fail("SLCF_DATA_DIR");
    const std::string out1 = temp_dir("seed1");
    const std::string out2 = temp_dir("seed2");

    nlohmann::json cfg;
    cfg["data"]["csv"] = data_dir + "/toy_panel.csv";
    cfg["data"]["schema"] = {{"exog", {"x2"}}, {"inst", {"z"}}};
    cfg["slcf"] = {{"B", 3}, {"SS", 1}, {"K", 3}, {"library", {"mean", "linear"}}};
    write(out1 + "/cfg.json", cfg.dump());

    REQUIRE(run(bin + " estimate --config " + out1 + "/cfg.json --seed 11 --out " + out1) == 0);
    REQUIRE(run(bin + " estimate --config " + out1 + "/cfg.json --seed 11 --out " + out2) == 0);
    CHECK(slurp(out1 + "/coefficients.csv") == slurp(out2 + "/coefficients.csv"));
    CHECK(slurp(out1 + "/estimate.json") == slurp(out2 + "/estimate.json"));
}

TEST_CASE("missing required column exits 2 and names the column") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string out = temp_dir("badcol");
    write(out + "/bad.csv", "id,time,y,x1,x2\n1,1,1,1,1\n1,2,1,1,1\n");
    nlohmann::json cfg;
    cfg["data"]["csv"] = out + "/bad.csv";
    cfg["data"]["schema"] = {{"exog", {"x2"}}, {"inst", {"z"}}};
    write(out + "/cfg.json", cfg.dump());

    const int status =
        std::system((env_or_fail("SLCF_BIN") + " estimate --config " + out + "/cfg.json --out " +
                     out + " 2> " + out + "/err.txt >/dev/null")
                        .c_str());
    CHECK(WEXITSTATUS(status) == 2);
    CHECK(slurp(out + "/err.txt").find("'z'") != std::string::npos);
    (void)bin;
}

TEST_CASE("malformed data exits 3, unknown config keys exit 2") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string out = temp_dir("errs");
    write(out + "/bad.csv", "id,time,y,x1,x2,z\n1,1,oops,1,1,1\n1,2,1,1,1,1\n");
    nlohmann::json cfg;
    cfg["data"]["csv"] = out + "/bad.csv";
    cfg["data"]["schema"] = {{"exog", {"x2"}}, {"inst", {"z"}}};
    write(out + "/cfg.json", cfg.dump());
    CHECK(run(bin + " estimate --config " + out + "/cfg.json --out " + out) == 3);

    cfg["typo_key"] = 1;
    write(out + "/cfg2.json", cfg.dump());
    CHECK(run(bin + " estimate --config " + out + "/cfg2.json --out " + out) == 2);

    CHECK(run(bin + " estimate --out " + out) == 2);  // missing --config
}

TEST_CASE("simulate smoke run emits all three files with the grid layout") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string out = temp_dir("sim");
    nlohmann::json cfg;
    cfg["mc"] = {{"a", 1.0}, {"N", 50}, {"T", 2}, {"R", 2}, {"seed", 3},
                 {"a_grid", {1.0, 5.0}}};
    cfg["estimators"] = {"WOLS", "W2SLS", "FDCF"};
    cfg["slcf"] = {{"B", 3}, {"SS", 1}, {"K", 3}, {"library", {"mean", "linear"}}};
    write(out + "/cfg.json", cfg.dump());

    REQUIRE(run(bin + " simulate --config " + out + "/cfg.json --out " + out) == 0);
    const std::string plot = slurp(out + "/plot_data.csv");
    // header + estimators x grid points
    CHECK(std::count(plot.begin(), plot.end(), '\n') == 1 + 3 * 2);
    CHECK(slurp(out + "/replications.csv").find("schema_version") == 0);
    CHECK(slurp(out + "/summary.json").find("schema_version") != std::string::npos);

    // determinism across thread counts
    const std::string out2 = temp_dir("sim2");
    REQUIRE(run(bin + " simulate --config " + out + "/cfg.json --threads 1 --out " + out2) == 0);
    CHECK(slurp(out + "/replications.csv") == slurp(out2 + "/replications.csv"));
    CHECK(slurp(out + "/summary.json") == slurp(out2 + "/summary.json"));
}

TEST_CASE("compare flags non-equivalence and rejects an empty estimator list") {
    const std::string bin = env_or_fail("SLCF_BIN");
    const std::string out = temp_dir("cmp");
    nlohmann::json cfg;
    cfg["dgp"] = {{"a", 5.0}, {"N", 150}, {"T", 2}, {"seed", 42}};
    cfg["transform"] = "fd";
    cfg["estimators"] = {"SLCF", "Naive2SLS"};
    cfg["slcf"] = {{"B", 3}, {"SS", 1}, {"K", 3}, {"library", {"mean", "linear"}},
                   {"seed", 42}};
    write(out + "/cfg.json", cfg.dump());

    REQUIRE(run(bin + " compare --config " + out + "/cfg.json --out " + out) == 0);
    const auto flags = nlohmann::json::parse(slurp(out + "/compare.json"));
    REQUIRE(flags.at("pairs").size() == 1);
    CHECK(flags.at("pairs")[0].at("equivalent") == false);
    CHECK(flags.at("pairs")[0].at("delta_beta1").get<double>() > 1e-6);

    cfg["estimators"] = nlohmann::json::array();
    write(out + "/cfg2.json", cfg.dump());
    CHECK(run(bin + " compare --config " + out + "/cfg2.json --out " + out) == 2);
}
