#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

// Drives the installed command-line binary end to end. The binary path is
// injected by the build system.
#ifndef DPA_CLI_PATH
#error "DPA_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path out_file =
        fs::temp_directory_path() / ("dpa_cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(DPA_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream f(out_file);
    std::stringstream ss;
    ss << f.rdbuf();
    r.out = ss.str();
    fs::remove(out_file);
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.is_open());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Two-class toy data: class 0 lives near (low, low), class 1 near (high, high).
void write_toy_csv(const fs::path& p, int n, unsigned seed, bool shuffle_rows) {
    std::mt19937 rng(seed);
    std::vector<std::string> rows;
    std::set<std::pair<int, int>> seen;
    while (int(rows.size()) < n) {
        const bool hi = rows.size() % 2 == 1;
        const int a = (hi ? 160 : 10) + int(rng() % 80);
        const int b = (hi ? 160 : 10) + int(rng() % 80);
        if (!seen.insert({a, b}).second) continue;
        rows.push_back(std::to_string(a) + "," + std::to_string(b) + "," + (hi ? "1" : "0"));
    }
    if (shuffle_rows) std::shuffle(rows.begin(), rows.end(), rng);
    std::ofstream f(p);
    for (const auto& r : rows) f << r << "\n";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("ingest normalizes a csv into the canonical container") {
    TempDir tmp("dpa_cli_ingest");
    write_toy_csv(tmp.path / "train.csv", 20, 1, false);
    auto r = run("ingest --csv " + (tmp.path / "train.csv").string() + " --out " +
                 (tmp.path / "train.dpads").string());
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("m") == 20);
    CHECK(j.at("dim") == 2);
    CHECK(j.at("num_classes") == 2);
    CHECK(j.at("unique_samples") == true);
    CHECK(fs::exists(tmp.path / "train.dpads"));

    // Ingesting a shuffled copy of the same rows produces the same content hash.
    write_toy_csv(tmp.path / "shuffled.csv", 20, 1, true);
    auto r2 = run("ingest --csv " + (tmp.path / "shuffled.csv").string() + " --out " +
                  (tmp.path / "shuffled.dpads").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(json::parse(r2.out).at("content_hash") == j.at("content_hash"));
    CHECK(slurp(tmp.path / "shuffled.dpads") == slurp(tmp.path / "train.dpads"));
}

TEST_CASE("train, certify, curve and the cache behave end to end") {
    TempDir tmp("dpa_cli_train");
    write_toy_csv(tmp.path / "train.csv", 30, 2, false);
    write_toy_csv(tmp.path / "test.csv", 10, 3, false);

    const std::string common = "train --train-csv " + (tmp.path / "train.csv").string() +
                               " --strategy ssdpa-sort --k 5 --learner nearest-centroid --out ";

    auto r1 = run(common + (tmp.path / "run1").string());
    REQUIRE(r1.exit_code == 0);
    const json m1 = json::parse(r1.out);
    CHECK(m1.at("models_trained") == 5);
    CHECK(m1.at("cache_hits") == 0);
    CHECK(fs::exists(tmp.path / "run1" / "manifest.json"));
    CHECK(fs::exists(tmp.path / "run1" / "ensemble" / "plan.json"));

    // Re-running into a second directory with a shared cache trains nothing.
    const std::string cache_env = "DPA_CACHE_DIR=" + (tmp.path / "run1" / "cache").string() + " ";
    {
        const std::string cmd = cache_env + std::string(DPA_CLI_PATH) + " " + common +
                                (tmp.path / "run2").string() + " > " +
                                (tmp.path / "out2.json").string() + " 2>&1";
        REQUIRE(std::system(cmd.c_str()) == 0);
    }
    const json m2 = json::parse(slurp(tmp.path / "out2.json"));
    CHECK(m2.at("models_trained") == 0);
    CHECK(m2.at("cache_hits") == 5);
    CHECK(m2.at("fmaps_cached") == 1);

    // Both runs must serialize identical ensembles.
    CHECK(slurp(tmp.path / "run1" / "ensemble" / "ensemble.json") ==
          slurp(tmp.path / "run2" / "ensemble" / "ensemble.json"));

    // certify: one certificate line per test sample, summary with the three
    // headline metrics, curve starting at the clean accuracy.
    auto rc = run("certify --ensemble " + (tmp.path / "run1" / "ensemble").string() +
                  " --test-csv " + (tmp.path / "test.csv").string() + " --out " +
                  (tmp.path / "run1").string());
    REQUIRE(rc.exit_code == 0);
    const std::string jsonl = slurp(tmp.path / "run1" / "certificates.jsonl");
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 10);
    const json summary = json::parse(slurp(tmp.path / "run1" / "summary.json"));
    CHECK(summary.contains("clean_accuracy"));
    CHECK(summary.contains("median_certified_robustness"));
    CHECK(summary.contains("base_classifier_accuracy"));

    const std::string curve_csv = slurp(tmp.path / "run1" / "curve.csv");
    std::stringstream cs(curve_csv);
    std::string header, first;
    std::getline(cs, header);
    std::getline(cs, first);
    CHECK(header == "rho,certified_accuracy");
    const double clean = summary.at("clean_accuracy").get<double>();
    const double at0 = std::stod(first.substr(first.find(',') + 1));
    CHECK(at0 <= clean + 1e-9);

    // curve recomputed from the certificates file matches the certify output.
    auto rk = run("curve --certificates " +
                  (tmp.path / "run1" / "certificates.jsonl").string() + " --rho-max 2 --out " +
                  (tmp.path / "recurve.csv").string());
    REQUIRE(rk.exit_code == 0);
    const std::string recurve = slurp(tmp.path / "recurve.csv");
    // first three lines (rho 0..2) must agree with certify's curve
    std::stringstream a(curve_csv), b(recurve);
    std::string la, lb;
    for (int i = 0; i < 3; ++i) {
        std::getline(a, la);
        std::getline(b, lb);
        CHECK(la == lb);
    }
}

TEST_CASE("training is reproducible from shuffled inputs, byte for byte") {
    TempDir tmp("dpa_cli_shuffle");
    write_toy_csv(tmp.path / "a.csv", 24, 4, false);
    write_toy_csv(tmp.path / "b.csv", 24, 4, true);  // same rows, different order
    write_toy_csv(tmp.path / "test.csv", 8, 5, false);

    for (const char* name : {"a", "b"}) {
        auto r = run("train --train-csv " + (tmp.path / (std::string(name) + ".csv")).string() +
                     " --strategy ssdpa-sort --k 3 --learner logistic-regression --epochs 5" +
                     " --out " + (tmp.path / name).string());
        REQUIRE(r.exit_code == 0);
        auto rc = run("certify --ensemble " + (tmp.path / name / "ensemble").string() +
                      " --test-csv " + (tmp.path / "test.csv").string() + " --out " +
                      (tmp.path / name).string());
        REQUIRE(rc.exit_code == 0);
    }
    CHECK(slurp(tmp.path / "a" / "certificates.jsonl") ==
          slurp(tmp.path / "b" / "certificates.jsonl"));
    CHECK(slurp(tmp.path / "a" / "curve.csv") == slurp(tmp.path / "b" / "curve.csv"));
    CHECK(slurp(tmp.path / "a" / "summary.json") == slurp(tmp.path / "b" / "summary.json"));
}

TEST_CASE("config files feed flags and flags override the file") {
    TempDir tmp("dpa_cli_config");
    write_toy_csv(tmp.path / "train.csv", 20, 6, false);
    {
        std::ofstream f(tmp.path / "run.conf");
        f << "config-version=1\n";
        f << "strategy=ssdpa-sort\n";
        f << "k=4\n";
        f << "learner=nearest-centroid\n";
    }
    auto r = run("train --train-csv " + (tmp.path / "train.csv").string() + " --config " +
                 (tmp.path / "run.conf").string() + " --out " + (tmp.path / "out").string());
    REQUIRE(r.exit_code == 0);
    CHECK(json::parse(r.out).at("config").at("k") == 4);

    // flag overrides the config file value
    auto r2 = run("train --train-csv " + (tmp.path / "train.csv").string() + " --config " +
                  (tmp.path / "run.conf").string() + " --k 2 --out " +
                  (tmp.path / "out2").string());
    REQUIRE(r2.exit_code == 0);
    CHECK(json::parse(r2.out).at("config").at("k") == 2);

    // unknown keys are named in the error; a missing version is rejected
    {
        std::ofstream f(tmp.path / "bad.conf");
        f << "config-version=1\nk=4\nbogus-knob=7\n";
    }
    auto r3 = run("train --train-csv " + (tmp.path / "train.csv").string() + " --config " +
                  (tmp.path / "bad.conf").string() + " --out " + (tmp.path / "out3").string());
    CHECK(r3.exit_code == 1);
    CHECK(r3.out.find("bogus-knob") != std::string::npos);

    {
        std::ofstream f(tmp.path / "nover.conf");
        f << "k=4\n";
    }
    auto r4 = run("train --train-csv " + (tmp.path / "train.csv").string() + " --config " +
                  (tmp.path / "nover.conf").string() + " --out " + (tmp.path / "out4").string());
    CHECK(r4.exit_code == 1);
    CHECK(r4.out.find("config-version") != std::string::npos);
}

TEST_CASE("verify exits 0 on sound, 2 on counterexample, 3 on refusal") {
    TempDir tmp("dpa_cli_verify");
    write_toy_csv(tmp.path / "train.csv", 12, 7, false);
    write_toy_csv(tmp.path / "test.csv", 4, 8, false);
    const std::string base = "verify --train-csv " + (tmp.path / "train.csv").string() +
                             " --test-csv " + (tmp.path / "test.csv").string() +
                             " --strategy ssdpa-sort --k 3 --learner nearest-centroid" +
                             " --threat label-flip --index 0";

    // default rho = the sample's own certificate -> sound by the theorem
    auto sound = run(base);
    CHECK(sound.exit_code == 0);
    CHECK(json::parse(sound.out).at("verdict") == "sound");

    // rho = m lets the adversary rewrite every label -> counterexample
    auto broken = run(base + " --rho 12 --enum-cap 100000000");
    CHECK(broken.exit_code == 2);
    const json bj = json::parse(broken.out);
    CHECK(bj.at("verdict") == "counterexample");
    CHECK(bj.contains("counterexample"));

    // tiny cap -> refusal, exit 3
    auto refused = run(base + " --rho 6 --enum-cap 10");
    CHECK(refused.exit_code == 3);
    const json rj = json::parse(refused.out);
    CHECK(rj.at("verdict") == "refused");
    CHECK(rj.at("required_enumeration").get<std::uint64_t>() > 10);
}

TEST_CASE("ra-compare prints the analytic comparison") {
    auto r = run("ra-compare 60000 50 200");
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("k") == 1200);
    CHECK(std::abs(j.at("ra_poison_prob").get<double>() - 0.154) < 0.0005);
    CHECK(std::abs(j.at("dpa_poison_bound").get<double>() - 0.16667) < 0.0005);
}

TEST_CASE("binary2means certifies a toy split and honours verify-rho") {
    TempDir tmp("dpa_cli_b2m");
    write_toy_csv(tmp.path / "train.csv", 15, 9, false);
    write_toy_csv(tmp.path / "test.csv", 6, 10, false);
    auto r = run("binary2means --train-csv " + (tmp.path / "train.csv").string() +
                 " --test-csv " + (tmp.path / "test.csv").string() +
                 " --class-a 0 --class-b 1 --verify-rho 2");
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("m") == 15);
    CHECK(j.at("clean_accuracy").get<double>() == 1.0);
    CHECK(j.at("rho_bar").get<int>() >= 2);  // clean separation: wide margin
    CHECK(j.at("verify").at("verdict") == "sound");
    const auto& votes = j.at("votes");
    int total = 0;
    for (const auto& row : votes)
        for (const auto& v : row) total += v.get<int>();
    CHECK(total == 15);
}

TEST_CASE("errors surface as exit code 1 with a message") {
    auto r = run("train --k 3 --out /tmp/nowhere_dpa");
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("error") != std::string::npos);

    auto r2 = run("certify --ensemble /nonexistent/dir --test-csv /nonexistent.csv");
    CHECK(r2.exit_code == 1);
}
