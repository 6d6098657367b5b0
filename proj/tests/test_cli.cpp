#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

const fs::path& workdir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "dbsa_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Run run(const std::string& args) {
    const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
    const std::string cmd = std::string("\"") + DBSA_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// Small model + synthetic dataset shared by the tests below.
struct Fixture {
    fs::path model = workdir() / "model.bin";
    fs::path data = workdir() / "data";
    std::string common;
    Fixture() {
        static bool ready = false;
        common = "--model " + model.string() + " --pool " + (data / "pool.jsonl").string() + " --labels " +
                 (data / "labels.txt").string() + " --block-size 4";
        if (ready) return;
        REQUIRE(run("init-model --out " + model.string() + " --seed 3 --d-model 16 --heads 2 --kv-heads 1 --ffn-dim 32 --layers 1").code == 0);
        REQUIRE(run("synth --out " + data.string() + " --pool-size 24 --test-size 3 --label-count 3 --seed 4").code == 0);
        ready = true;
    }
};

}  // namespace

TEST_CASE("storage reports the Llama-3.1-8B figures") {
    const Run r = run("storage --layers 32 --kv-heads 8 --head-dim 128 --bytes-per-value 2 --tokens 1,30000");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("bytes_per_token: 131072 (0.125000 MiB)") != std::string::npos);
    CHECK(r.out.find("30000,3932160000,3750.000000,3.662109") != std::string::npos);
    CHECK(run("storage --bytes-per-value 3").code == 2);
    CHECK(run("storage --tokens x").code == 2);
}

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("storage --layers notanumber").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("malformed JSONL is reported with its line number") {
    Fixture f;
    const fs::path bad = workdir() / "bad.jsonl";
    {
        std::ofstream out(bad);
        out << R"({"query": "a", "answer": "alpha"})" << "\n" << R"({"query": "b", "answer": "bravo"})" << "\n"
            << "{not json}\n";
    }
    const Run r = run("encode --model " + f.model.string() + " --pool " + bad.string() + " --labels " +
                      (f.data / "labels.txt").string() + " --out " + (workdir() / "x.cache").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("bad.jsonl:3:") != std::string::npos);
    CHECK(run("encode " + f.common + " --out " + (workdir() / "y.cache").string() + " --pattern zigzag").code == 2);
    CHECK(run("infer --model " + (workdir() / "missing.bin").string() + " --query q --pool p --labels l").code == 2);
}

TEST_CASE("encode then infer from the cache") {
    Fixture f;
    const fs::path cache = workdir() / "enc" / "pool.cache";
    const Run e = run("encode " + f.common + " --out " + cache.string());
    REQUIRE(e.code == 0);
    CHECK(fs::exists(cache));
    CHECK(fs::exists(cache.string() + ".index.json"));
    CHECK(fs::exists(cache.string() + ".manifest.json"));
    const auto summary = nlohmann::json::parse(e.out);
    CHECK(summary["blocks"] == 6);

    const std::string q = "--query \"abc def ghi\"";
    const Run a = run("infer " + f.common + " --cache " + cache.string() + " " + q + " --ratio 0.5");
    const Run b = run("infer " + f.common + " " + q + " --ratio 0.5");
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    const auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out);
    CHECK(ja["label"] == jb["label"]);
    CHECK(ja["label_scores"] == jb["label_scores"]);
    CHECK(ja["selected_units"].size() == 3);
    CHECK(ja["selected_units"][0] == 0);

    // A cache built for a different model is rejected.
    const fs::path other = workdir() / "other.bin";
    REQUIRE(run("init-model --out " + other.string() + " --d-model 16 --heads 2 --kv-heads 2 --ffn-dim 32 --layers 1").code == 0);
    const Run c = run("infer --model " + other.string() + " --pool " + (f.data / "pool.jsonl").string() + " --labels " +
                      (f.data / "labels.txt").string() + " --cache " + cache.string() + " " + q);
    CHECK(c.code == 2);
}

TEST_CASE("bench writes byte-reproducible reports and amortize reads them") {
    Fixture f;
    const std::string args = "bench " + f.common + " --test " + (f.data / "test.jsonl").string() +
                             " --methods dbsa,fixed --runs 2 --seed 7 --out ";
    const fs::path a = workdir() / "bench_a", b = workdir() / "bench_b";
    REQUIRE(run(args + a.string()).code == 0);
    REQUIRE(run(args + b.string()).code == 0);
    for (const char* name : {"report.csv", "report.json", "summary.csv"}) CHECK(slurp(a / name) == slurp(b / name));
    CHECK(fs::exists(a / "timings.json"));
    CHECK(fs::exists(a / "manifest.json"));
    std::istringstream csv(slurp(a / "report.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 1 + 2 * 2);

    const Run am = run("amortize --timings " + (a / "timings.json").string() + " --requests 1,10,100");
    REQUIRE(am.code == 0);
    CHECK(am.out.rfind("method,requests,setup_seconds,mean_query_seconds,amortized_seconds\n", 0) == 0);
    CHECK(am.out.find("dbsa,100,") != std::string::npos);
    CHECK(run("amortize --timings " + (a / "report.json").string()).code == 2);
    CHECK(run("amortize --timings " + (a / "timings.json").string() + " --requests 0").code == 2);
}

TEST_CASE("ablate emits one row per configuration") {
    Fixture f;
    const fs::path out = workdir() / "ablate";
    const Run r = run("ablate " + f.common + " --test " + (f.data / "test.jsonl").string() + " --axis all --out " + out.string());
    REQUIRE(r.code == 0);
    const auto rows = nlohmann::json::parse(slurp(out / "ablation.json"));
    // 4 patterns + 2 granularities x (dbsa, standard) + 3 groupings + 3 orderings.
    CHECK(rows.size() == 4 + 4 + 3 + 3);
    CHECK(run("ablate " + f.common + " --test " + (f.data / "test.jsonl").string() + " --axis depth --out " + out.string()).code == 2);
}
