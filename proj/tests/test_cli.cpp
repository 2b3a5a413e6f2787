#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "persam/report.hpp"

using namespace persam;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* env = std::getenv("PERSAM_CLI");
    REQUIRE_MESSAGE(env != nullptr, "PERSAM_CLI must point at the CLI binary");
    return env;
}

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args) {
    const fs::path tmp = fs::temp_directory_path() / "persam_cli_capture.txt";
    const std::string cmd = cli_path() + " " + args + " > " + tmp.string() + " 2>&1";
    std::system(cmd.c_str());
    std::ifstream f(tmp);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "persam_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// small generator + model configs shared by the CLI tests
void write_configs() {
    std::ofstream g(work_dir() / "gen.json");
    g << R"({"cases": 18, "pool_size": 8})";
    g.close();
    std::ofstream m(work_dir() / "model.json");
    m << R"({"preset": "tiny", "bag_size": 4})";
    m.close();
}

}  // namespace

TEST_CASE("gen: byte-identical outputs for the same spec and seed; summary counts") {
    write_configs();
    const fs::path d1 = work_dir() / "ds1";
    const fs::path d2 = work_dir() / "ds2";
    const std::string spec = (work_dir() / "gen.json").string();
    std::string out = run_capture("gen --spec " + spec + " --seed 9 --out " + d1.string());
    CHECK(out.find("class 0: 6 cases") != std::string::npos);
    CHECK(run("gen --spec " + spec + " --seed 9 --out " + d2.string()) == 0);
    CHECK(read_file(d1 / "manifest.json") == read_file(d2 / "manifest.json"));
    CHECK(read_file(d1 / "data.bin") == read_file(d2 / "data.bin"));
    CHECK(!read_file(d1 / "data.bin").empty());
}

TEST_CASE("gen: usage and input errors exit with code 2") {
    write_configs();
    const std::string spec = (work_dir() / "gen.json").string();
    CHECK(run("gen --spec " + spec + " --seed 9") == 2);  // missing --out
    std::ofstream bad(work_dir() / "bad.json");
    bad << "{ not json";
    bad.close();
    CHECK(run("gen --spec " + (work_dir() / "bad.json").string() + " --seed 9 --out " +
              (work_dir() / "dsbad").string()) == 2);
}

TEST_CASE("train/eval: checkpoint round-trip reproduces the recorded val loss") {
    write_configs();
    const fs::path ds = work_dir() / "ds_train";
    const std::string spec = (work_dir() / "gen.json").string();
    REQUIRE(run("gen --spec " + spec + " --seed 11 --out " + ds.string()) == 0);

    const fs::path out = work_dir() / "run1";
    const std::string model_cfg = (work_dir() / "model.json").string();
    REQUIRE(run("train --data " + ds.string() + " --config " + model_cfg + " --out " +
                out.string() + " --model persam --seed 2 --bags 2 --folds 3") == 0);
    CHECK(fs::exists(out / "train_log.jsonl"));
    CHECK(fs::exists(out / "report.txt"));
    CHECK(fs::exists(out / "manifest.json"));

    const fs::path ckpt = out / "persam-fold0";
    std::string eval_out =
        run_capture("eval --data " + ds.string() + " --checkpoint " + ckpt.string());
    // "val loss X (recorded Y)": X must equal Y to high precision
    auto pos = eval_out.find("val loss ");
    REQUIRE(pos != std::string::npos);
    double recomputed = 0.0, recorded = 0.0;
    std::sscanf(eval_out.c_str() + pos, "val loss %lf (recorded %lf", &recomputed,
                &recorded);
    CHECK(std::fabs(recomputed - recorded) < 1e-9);
}

TEST_CASE("train: identical seeds give identical loss logs") {
    write_configs();
    const fs::path ds = work_dir() / "ds_repro";
    const std::string spec = (work_dir() / "gen.json").string();
    REQUIRE(run("gen --spec " + spec + " --seed 13 --out " + ds.string()) == 0);
    const std::string model_cfg = (work_dir() / "model.json").string();
    for (const char* tag : {"a", "b"}) {
        REQUIRE(run("train --data " + ds.string() + " --config " + model_cfg + " --out " +
                    (work_dir() / ("repro_" + std::string(tag))).string() +
                    " --model persam --seed 6 --bags 2 --folds 3") == 0);
    }
    CHECK(read_file(work_dir() / "repro_a" / "train_log.jsonl") ==
          read_file(work_dir() / "repro_b" / "train_log.jsonl"));
}

TEST_CASE("train: injected NaN aborts with exit code 3") {
    write_configs();
    const fs::path ds = work_dir() / "ds_nan";
    const std::string spec = (work_dir() / "gen.json").string();
    REQUIRE(run("gen --spec " + spec + " --seed 15 --out " + ds.string()) == 0);
    const std::string model_cfg = (work_dir() / "model.json").string();
    CHECK(run("train --data " + ds.string() + " --config " + model_cfg + " --out " +
              (work_dir() / "nan_run").string() +
              " --model persam --seed 2 --bags 2 --folds 3 --inject-nan 2") == 3);
}

TEST_CASE("attend: reports, heatmaps, swap variants, and error paths") {
    write_configs();
    const fs::path ds = work_dir() / "ds_att";
    const std::string spec = (work_dir() / "gen.json").string();
    REQUIRE(run("gen --spec " + spec + " --seed 17 --out " + ds.string()) == 0);
    const std::string model_cfg = (work_dir() / "model.json").string();
    const fs::path out = work_dir() / "att_train";
    REQUIRE(run("train --data " + ds.string() + " --config " + model_cfg + " --out " +
                out.string() + " --model persam --seed 3 --bags 2 --folds 3") == 0);
    const fs::path ckpt = out / "persam-fold0";

    const fs::path att = work_dir() / "att_out";
    REQUIRE(run("attend --data " + ds.string() + " --checkpoint " + ckpt.string() +
                " --case 1 --swap-record class --out " + att.string()) == 0);

    // original + one report per donor class
    int csv_count = 0, pgm_count = 0;
    for (const auto& e : fs::directory_iterator(att)) {
        if (e.path().extension() == ".csv") ++csv_count;
        if (e.path().extension() == ".pgm") ++pgm_count;
    }
    CHECK(csv_count == 4);  // original + 3 class swaps
    CHECK(pgm_count > 0);
    CHECK(fs::exists(att / "manifest.json"));

    // PGM header is a valid binary graymap
    std::ifstream pgm(att / "case1_exploratory.pgm", std::ios::binary);
    std::string magic;
    pgm >> magic;
    CHECK(magic == "P5");
    std::size_t w = 0, h = 0, maxv = 0;
    pgm >> w >> h >> maxv;
    CHECK(w * h >= 4);  // bag of 4 patches on a 2x2 grid
    CHECK(maxv == 255);

    // CSV values match the quantized pixels
    std::ifstream csv(att / "case1.csv");
    std::string line;
    std::getline(csv, line);  // comment header
    bool found = false;
    while (std::getline(csv, line)) {
        if (line.rfind("exploratory,", 0) == 0) {
            found = true;
            std::stringstream ss(line);
            std::string tok;
            std::getline(ss, tok, ',');  // kind
            std::getline(ss, tok, ',');  // index
            std::vector<double> vals;
            while (std::getline(ss, tok, ',')) vals.push_back(std::stod(tok));
            CHECK(vals.size() == 4);
            pgm.get();  // single whitespace after header
            for (double v : vals) {
                const int px = pgm.get();
                CHECK(px == static_cast<int>(quantize_attention(v)));
            }
        }
    }
    CHECK(found);

    // unknown case id -> exit 2
    CHECK(run("attend --data " + ds.string() + " --checkpoint " + ckpt.string() +
              " --case 999 --out " + (work_dir() / "att_bad").string()) == 2);
}

TEST_CASE("gradcheck command: pass, corrupted-backward negative control, group list") {
    std::string out = run_capture("gradcheck --seed 4");
    CHECK(out.find("OK") != std::string::npos);
    for (const char* g : {"extractor", "clinical", "encoder", "aggregator", "classifier"})
        CHECK(out.find(g) != std::string::npos);
    CHECK(run("gradcheck --seed 4") == 0);
    CHECK(run("gradcheck --seed 4 --corrupt-backward") == 4);
}

TEST_CASE("quantize_attention maps 1.0 to 255 and clamps") {
    CHECK(quantize_attention(1.0) == 255);
    CHECK(quantize_attention(0.0) == 0);
    CHECK(quantize_attention(0.5) == 128);  // round(127.5)
    CHECK(quantize_attention(2.0) == 255);
    CHECK(quantize_attention(-1.0) == 0);
}
