#include "doctest.h"
#include "support.hpp"

#include "tracemia/classifier.hpp"
#include "tracemia/feature_matrix.hpp"
#include "tracemia/trace_io.hpp"

#include <cstdlib>
#include <string>
#include <sys/wait.h>

using namespace tracemia;

namespace {

struct Run {
    int status = -1;
    std::string output;
};

Run cli(const std::string& args, const testing::TempDir& dir) {
    const std::string log = dir.file("cli.log");
    const std::string cmd = std::string(TRACEMIA_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.output = load_text(log);
    return r;
}

std::string fixture(const std::string& name) { return testing::fixture_dir() + "/synth_small/" + name; }

} // namespace

TEST_CASE("usage errors exit with status 2") {
    testing::TempDir dir;
    const auto unknown = cli("frobnicate", dir);
    CHECK(unknown.status == 2);
    CHECK(unknown.output.find("Usage") != std::string::npos);
    CHECK(cli("", dir).status == 2);
    CHECK(cli("extract --head x.mthd", dir).status == 2);
    CHECK(cli("baseline --manifest m --head h --method bogus --out o.csv", dir).status == 2);
}

TEST_CASE("runtime errors exit with status 1") {
    testing::TempDir dir;
    const auto r = cli("extract --manifest " + dir.file("missing.jsonl") + " --head " + fixture("head.mthd") +
                           " --out " + dir.file("f.csv"),
                       dir);
    CHECK(r.status == 1);
    CHECK(r.output.starts_with("error: "));
}

TEST_CASE("extract is reproducible") {
    testing::TempDir dir;
    const std::string base = "extract --manifest " + fixture("manifest.jsonl") + " --head " + fixture("head.mthd");
    REQUIRE(cli(base + " --out " + dir.file("a.csv"), dir).status == 0);
    REQUIRE(cli(base + " --workers 2 --out " + dir.file("b.csv"), dir).status == 0);
    const auto a = load_text(dir.file("a.csv"));
    CHECK(a == load_text(dir.file("b.csv")));
    const auto m = read_csv(dir.file("a.csv"));
    CHECK(m.rows() == 8);
    CHECK(m.cols() == 127);
    REQUIRE(cli(base + " --layer 1 --out " + dir.file("l1.csv"), dir).status == 0);
    CHECK(read_csv(dir.file("l1.csv")).cols() == 53);
}

TEST_CASE("synth, train, eval and baseline from the command line") {
    testing::TempDir dir;
    save_text(dir.file("spec.json"), R"({"layers":2,"heads":2,"seq_len":10,"hidden_dim":4,"vocab_size":12,
        "members":20,"nonmembers":20,"neighbors":4,"seed":3})");
    REQUIRE(cli("synth --spec " + dir.file("spec.json") + " --out " + dir.file("data"), dir).status == 0);
    REQUIRE(cli("extract --manifest " + dir.file("data/manifest.jsonl") + " --head " + dir.file("data/head.mthd") +
                    " --out " + dir.file("f.csv"),
                dir)
                .status == 0);
    const std::string train = "train --features " + dir.file("f.csv") + " --seed 420";
    REQUIRE(cli(train + " --out " + dir.file("m1.json") + " --report " + dir.file("r1.json"), dir).status == 0);
    REQUIRE(cli(train + " --out " + dir.file("m2.json") + " --report " + dir.file("r2.json"), dir).status == 0);
    CHECK(load_text(dir.file("m1.json")) == load_text(dir.file("m2.json")));
    CHECK(load_text(dir.file("r1.json")) == load_text(dir.file("r2.json")));

    REQUIRE(cli("eval --model " + dir.file("m1.json") + " --features " + dir.file("f.csv") + " --out " +
                    dir.file("e.json"),
                dir)
                .status == 0);
    CHECK(load_text(dir.file("e.json")).find("\"auc\"") != std::string::npos);
    const auto n = cli("neighbors --model " + dir.file("m1.json") + " --features " + dir.file("f.csv") + " --out " +
                           dir.file("n.json"),
                       dir);
    REQUIRE(n.status == 0);
    CHECK(n.output.find("recall") != std::string::npos);
    CHECK(load_text(dir.file("n.json")).find("\"recall\"") != std::string::npos);

    REQUIRE(cli("baseline --manifest " + dir.file("data/manifest.jsonl") + " --head " + dir.file("data/head.mthd") +
                    " --method mink --out " + dir.file("b.csv"),
                dir)
                .status == 0);
    CHECK(load_text(dir.file("b.csv")).starts_with("id,label,method,score\n"));
}
