#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "support.hpp"
#include "unoranic/checkpoint.hpp"
#include "unoranic/dataset.hpp"

using namespace unoranic;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& text, const std::string& prefix) {
    std::size_t n = 0;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
    return n;
}

const std::vector<std::string> kTinyModel = {"--depth", "1", "--dim", "16", "--heads", "2", "--probe-depth", "1"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST_CASE("help documents every subcommand and flag") {
    const auto top = run({"--help"});
    CHECK(top.code == 0);
    for (const char* cmd : {"gen-data", "pretrain", "eval", "revise", "probe", "robustness"})
        CHECK(top.out.find(cmd) != std::string::npos);
    const auto pre = run({"pretrain", "--help"});
    CHECK(pre.code == 0);
    for (const char* flag : {"--data", "--out", "--preset", "--epochs", "--batch", "--seed", "--resume", "--config"})
        CHECK(pre.out.find(flag) != std::string::npos);
    CHECK(run({"--version"}).out.find(cli::kToolVersion) != std::string::npos);
}

TEST_CASE("usage errors") {
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"gen-data", "--out", "x", "--bogus"}).code == cli::kUsage);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({"gen-data"}).code == cli::kUsage);
    CHECK(run({"pretrain", "--data", "d", "--out", "o", "--preset", "huge"}).code == cli::kUsage);
}

TEST_CASE("gen-data writes an 8:1:1 split with stable hashes") {
    testing::TempDir a("cli_gen"), b("cli_gen");
    for (const auto* dir : {&a, &b}) {
        const auto r = run({"gen-data", "--out", dir->path().string(), "--count", "1000", "--seed", "4"});
        REQUIRE(r.code == 0);
    }
    CHECK(read_dataset_header(a.file("train.ornc")).count == 800);
    CHECK(read_dataset_header(a.file("val.ornc")).count == 100);
    CHECK(read_dataset_header(a.file("test.ornc")).count == 100);
    for (const char* f : {"train.ornc", "val.ornc", "test.ornc"}) CHECK(file_hash(a.file(f)) == file_hash(b.file(f)));
    const auto manifest = parse_config_text(slurp(a.file("manifest.txt")));
    CHECK(manifest.at("command") == "gen-data");
    CHECK(manifest.at("seed") == "4");
    CHECK(manifest.count("tool.version") == 1);
    CHECK(manifest.count("wall_clock_seconds") == 1);
    CHECK(manifest.count("artifact.train.fnv1a64") == 1);
}

TEST_CASE("error classes map to exit codes") {
    testing::TempDir dir("cli_err");
    REQUIRE(run({"gen-data", "--out", dir.path().string(), "--count", "50", "--size", "16"}).code == 0);
    const auto train = dir.file("train.ornc");

    // Missing input file.
    CHECK(run(concat({"pretrain", "--data", dir.file("none.ornc"), "--out", dir.file("o")}, kTinyModel)).code ==
          cli::kIo);
    // Data geometry does not match the preset.
    CHECK(run({"pretrain", "--data", train, "--out", dir.file("o"), "--epochs", "0"}).code == cli::kConfig);
    // Corrupt data file.
    {
        std::ofstream bad(dir.file("bad.ornc"), std::ios::binary);
        bad << "ORNCgarbage";
    }
    CHECK(run(concat({"pretrain", "--data", dir.file("bad.ornc"), "--out", dir.file("o")}, kTinyModel)).code ==
          cli::kFormat);
    // Unknown config file key.
    {
        std::ofstream cfg(dir.file("bad.cfg"));
        cfg << "train.epochs=1\nmodel.flavour=spicy\n";
    }
    CHECK(run(concat({"pretrain", "--data", train, "--out", dir.file("o"), "--config", dir.file("bad.cfg")},
                     kTinyModel))
              .code == cli::kConfig);
    // Probe without a checkpoint.
    CHECK(run({"probe", "--ckpt", dir.file("none.uorp"), "--data", train, "--out", dir.file("p")}).code == cli::kIo);
}

TEST_CASE("pretrain, eval, revise, probe and robustness end to end") {
    testing::TempDir dir("cli_flow");
    REQUIRE(run({"gen-data", "--out", dir.path().string(), "--count", "60", "--seed", "2"}).code == 0);
    const auto train = dir.file("train.ornc");
    const auto test = dir.file("test.ornc");

    // Precedence: the config file sets epochs and batch, the flag overrides the batch.
    {
        std::ofstream cfg(dir.file("run.cfg"));
        cfg << "# tiny\ntrain.epochs=2\ntrain.batch_size=16\ntrain.warmup_epochs=1\n";
    }
    const auto pre = run(concat({"pretrain", "--data", train, "--out", dir.file("m"), "--config", dir.file("run.cfg"),
                                 "--batch", "8", "--seed", "3"},
                                kTinyModel));
    INFO(pre.err);
    REQUIRE(pre.code == 0);
    const auto ckpt = dir.file("m/model.uorp");
    const auto file = read_checkpoint(ckpt);
    CHECK(file.config.at("train.batch_size") == "8");
    CHECK(file.config.at("train.epochs") == "2");
    CHECK(training_state(file).step == 12);
    CHECK(count_lines(slurp(dir.file("m/loss.csv")), "") == 13);
    const auto manifest = parse_config_text(slurp(dir.file("m/manifest.txt")));
    CHECK(manifest.at("command") == "pretrain");
    CHECK(manifest.at("seed") == "3");

    // Same seed again gives the same checkpoint bytes.
    REQUIRE(run(concat({"pretrain", "--data", train, "--out", dir.file("m2"), "--config", dir.file("run.cfg"),
                        "--batch", "8", "--seed", "3"},
                       kTinyModel))
                .code == 0);
    CHECK(file_hash(ckpt) == file_hash(dir.file("m2/model.uorp")));

    const auto ev = run({"eval", "--ckpt", ckpt, "--data", test, "--out", dir.file("e"), "--protocol", "reconstruction"});
    REQUIRE(ev.code == 0);
    CHECK(count_lines(slurp(dir.file("e/report.csv")), "aggregate,") == 4);
    CHECK(run({"eval", "--ckpt", ckpt, "--data", test, "--out", dir.file("e"), "--protocol", "mystery"}).code ==
          cli::kUsage);

    const auto rv = run({"revise", "--ckpt", ckpt, "--data", test, "--out", dir.file("r"), "--kind", "gamma",
                         "--severity", "2", "--limit", "3"});
    REQUIRE(rv.code == 0);
    CHECK(std::filesystem::file_size(dir.file("r/triplets.u8")) == 3 * 3 * 28 * 28);

    const auto pr = run(concat({"probe", "--ckpt", ckpt, "--data", train, "--test", test, "--out", dir.file("p"),
                                "--task", "disease", "--epochs", "1", "--batch", "8", "--warmup-epochs", "0",
                                "--allow-missing"},
                               {}));
    INFO(pr.err);
    REQUIRE(pr.code == 0);
    const auto probe_report = slurp(dir.file("p/report.csv"));
    CHECK(probe_report.find("aggregate,accuracy,") != std::string::npos);
    CHECK(probe_report.find("aggregate,auc,") != std::string::npos);

    const auto rb = run({"robustness", "--ckpt", ckpt, "--probe-ckpt", dir.file("p/probe.uorp"), "--data", test,
                         "--out", dir.file("rb")});
    REQUIRE(rb.code == 0);
    CHECK(count_lines(slurp(dir.file("rb/report.csv")), "aggregate,") == 12);

    // Zero epochs writes the initialization.
    REQUIRE(run(concat({"pretrain", "--data", train, "--out", dir.file("z"), "--epochs", "0", "--seed", "3"},
                       kTinyModel))
                .code == 0);
    CHECK(training_state(read_checkpoint(dir.file("z/model.uorp"))).step == 0);
}
