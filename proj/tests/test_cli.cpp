// Subprocess tests of the operator CLI. The binary path arrives through the
// SOVMAS_BIN environment variable, set by the test registration.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run(const std::string& args) {
  const char* bin = std::getenv("SOVMAS_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string(bin) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  CmdResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) result.output += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string sandbox() {
  static std::string dir = [] {
    auto p = fs::temp_directory_path() / "sovmas_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return dir;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

const char* kTinyModelFlags =
    "--vocab-size 256 --d 16 --d-c 16 --d-v 8 --text-layers 1 --vision-layers 1 "
    "--heads 2 --ffn-dim 32 --max-text-len 12 --max-summary-len 5 --classes 8 "
    "--n-images 2 --regions-per-image 3";

}  // namespace

TEST_CASE("synth writes a deterministic corpus and a stats table") {
  const std::string dir = sandbox();
  const std::string flags =
      "--langs 3 --sizes 200,100,50 --seed 7 --classes 8 --n-images 2 "
      "--regions-per-image 3 --d-v 8 --vocab-size 256";
  CmdResult a = run("synth --out " + dir + "/corp " + flags);
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("Avg. of Images") != std::string::npos);
  CHECK(a.output.find("wrote 350 examples") != std::string::npos);

  CmdResult b = run("synth --out " + dir + "/corp_again " + flags);
  CHECK(b.exit_code == 0);
  CHECK(file_bytes(dir + "/corp/corpus.jsonl") ==
        file_bytes(dir + "/corp_again/corpus.jsonl"));
  CHECK(file_bytes(dir + "/corp/corpus.feat") ==
        file_bytes(dir + "/corp_again/corpus.feat"));
  CHECK(file_bytes(dir + "/corp/vocab.txt") == file_bytes(dir + "/corp_again/vocab.txt"));

  // the average-images column is total images over total samples
  std::istringstream lines(a.output);
  std::string line;
  double avg = -1;
  int64_t images = -1, samples = -1;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::string k1, k2;
    ls >> k1 >> k2;
    if (k1 == "Total" && k2 == "Samples") ls >> samples;
    if (k1 == "Total" && k2 == "Images") ls >> images;
    if (k1 == "Avg.") ls >> k2 >> avg;
  }
  REQUIRE(samples > 0);
  const double expect = static_cast<double>(images) / static_cast<double>(samples);
  CHECK(avg == doctest::Approx(expect).epsilon(0.01));
}

TEST_CASE("split writes the zero-tier carve-out") {
  const std::string dir = sandbox();
  run("synth --out " + dir + "/zcorp --langs 1 --sizes 1000 --seed 3 --classes 8 "
      "--n-images 2 --regions-per-image 3 --d-v 8 --vocab-size 256");
  CmdResult r = run("split --corpus " + dir + "/zcorp/corpus.jsonl --tier zero --seed 2 --out " +
                    dir + "/zsplit.json");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("validation=450 test=450 few_shot=100") != std::string::npos);

  CmdResult low = run("split --corpus " + dir + "/zcorp/corpus.jsonl --tier low --seed 2 --out " +
                      dir + "/lsplit.json");
  CHECK(low.output.find("train=800 validation=100 test=100") != std::string::npos);
}

TEST_CASE("train rejects bad invocations without leaving a run directory") {
  const std::string dir = sandbox();
  CmdResult missing = run("train --corpus " + dir + "/corp/corpus.jsonl --out " + dir +
                          "/never --config " + dir + "/does_not_exist.cfg");
  CHECK(missing.exit_code != 0);
  CHECK(!fs::exists(dir + "/never"));

  CmdResult combo = run("train --corpus " + dir + "/corp/corpus.jsonl --out " + dir +
                        "/never2 " + std::string(kTinyModelFlags) +
                        " --mask-mode off --beta 1.0 --steps 2");
  CHECK(combo.exit_code != 0);
  CHECK(combo.output.find("beta") != std::string::npos);
  CHECK(!fs::exists(dir + "/never2"));
}

TEST_CASE("train, eval, and generate round-trip through run artifacts") {
  const std::string dir = sandbox();
  run("split --corpus " + dir + "/corp/corpus.jsonl --tier low --seed 2 --out " + dir +
      "/split.json");
  CmdResult t = run("train --corpus " + dir + "/corp/corpus.jsonl --split " + dir +
                    "/split.json --out " + dir + "/run " + kTinyModelFlags +
                    " --steps 30 --batch-size 4 --lr 2e-3 --warmup 15 --seed 9");
  CHECK(t.exit_code == 0);
  CHECK(fs::exists(dir + "/run/checkpoint_final.sovm"));
  CHECK(fs::exists(dir + "/run/metrics.jsonl"));
  CHECK(fs::exists(dir + "/run/losses.csv"));
  CHECK(fs::exists(dir + "/run/manifest.json"));
  CHECK(fs::exists(dir + "/run/config.resolved"));

  {
    const auto manifest = nlohmann::json::parse(std::ifstream(dir + "/run/manifest.json"));
    CHECK(manifest.contains("corpus_hash"));
    CHECK(manifest.at("seed").get<int64_t>() == 9);
  }

  // the snapshotted config is a valid --config for evaluation
  CmdResult e = run("eval --corpus " + dir + "/corp/corpus.jsonl --split " + dir +
                    "/split.json --checkpoint " + dir + "/run/checkpoint_final.sovm" +
                    " --config " + dir + "/run/config.resolved --beam 4 --length-penalty 0.6" +
                    " --out " + dir + "/table.tsv");
  CHECK(e.exit_code == 0);
  CHECK(e.output.find("Avg.") != std::string::npos);
  std::ifstream tsv(dir + "/table.tsv");
  std::string header;
  std::getline(tsv, header);
  CHECK(header == "language\tR-1\tR-2\tR-L");
  int rows = 0;
  std::string line;
  while (std::getline(tsv, line)) ++rows;
  CHECK(rows == 4);  // three languages + Avg.

  CmdResult g = run("generate --corpus " + dir + "/corp/corpus.jsonl --split " + dir +
                    "/split.json --checkpoint " + dir + "/run/checkpoint_final.sovm" +
                    " --config " + dir + "/run/config.resolved --vocab " + dir +
                    "/corp/vocab.txt --limit 4 --out " + dir + "/gens.jsonl");
  CHECK(g.exit_code == 0);
  std::ifstream gens(dir + "/gens.jsonl");
  int count = 0;
  while (std::getline(gens, line)) {
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.contains("id"));
    CHECK(rec.contains("token_ids"));
    CHECK(rec.contains("text"));
    ++count;
  }
  CHECK(count == 4);

  // deterministic under fixed seeds
  CmdResult t2 = run("train --corpus " + dir + "/corp/corpus.jsonl --split " + dir +
                     "/split.json --out " + dir + "/run_again " + kTinyModelFlags +
                     " --steps 30 --batch-size 4 --lr 2e-3 --warmup 15 --seed 9");
  CHECK(t2.exit_code == 0);
  CHECK(file_bytes(dir + "/run/checkpoint_final.sovm") ==
        file_bytes(dir + "/run_again/checkpoint_final.sovm"));
}

TEST_CASE("few-shot continuation picks up the checkpoint") {
  const std::string dir = sandbox();
  CmdResult c = run("train --corpus " + dir + "/corp/corpus.jsonl --out " + dir +
                    "/cont --continue-from " + dir + "/run/checkpoint_final.sovm " +
                    kTinyModelFlags + " --steps 5 --batch-size 4 --lr 1e-3 --seed 4");
  CHECK(c.exit_code == 0);
  CHECK(c.output.find("final step 35") != std::string::npos);  // 30 prior + 5
}

TEST_CASE("significance comparison against a generations file") {
  const std::string dir = sandbox();
  // empty-candidate baseline file for the test subset
  const auto split = nlohmann::json::parse(std::ifstream(dir + "/split.json"));
  {
    std::ofstream os(dir + "/empty_gens.jsonl");
    for (const auto& id : split.at("test")) {
      nlohmann::json rec;
      rec["id"] = id;
      rec["token_ids"] = nlohmann::json::array();
      os << rec.dump() << "\n";
    }
  }
  CmdResult r = run("eval --corpus " + dir + "/corp/corpus.jsonl --split " + dir +
                    "/split.json --checkpoint " + dir + "/run/checkpoint_final.sovm" +
                    " --config " + dir + "/run/config.resolved --compare " + dir +
                    "/empty_gens.jsonl --resamples 500 --significance-out " + dir +
                    "/sig.json");
  CHECK(r.exit_code == 0);
  const auto sig = nlohmann::json::parse(std::ifstream(dir + "/sig.json"));
  CHECK(sig.at("resamples").get<int64_t>() == 500);
  CHECK(sig.at("p_value").get<double>() >= 0.0);
  CHECK(sig.at("p_value").get<double>() <= 1.0);
}

TEST_CASE("gradcheck exits by tolerance") {
  CmdResult ok = run("gradcheck --precision 64 --max-entries 6");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("PASS") != std::string::npos);

  // an absurd tolerance must fail and signal through the exit code
  CmdResult bad = run("gradcheck --precision 64 --max-entries 6 --tolerance 1e-18");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("FAIL") != std::string::npos);

  CmdResult f32 = run("gradcheck --precision 32 --max-entries 6");
  CHECK(f32.exit_code == 0);
}

TEST_CASE("environment seed fallback") {
  const std::string dir = sandbox();
  const char* bin = std::getenv("SOVMAS_BIN");
  REQUIRE(bin != nullptr);
  const std::string cmd = std::string("SOVMAS_SEED=7 ") + bin + " synth --out " + dir +
                          "/envcorp --langs 1 --sizes 20 --classes 8 --n-images 2 "
                          "--regions-per-image 3 --d-v 8 --vocab-size 256 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), buf.size(), pipe) != nullptr) {
  }
  CHECK(WEXITSTATUS(pclose(pipe)) == 0);
  // equal to an explicit --seed 7 run
  run("synth --out " + dir + "/seedcorp --langs 1 --sizes 20 --seed 7 --classes 8 "
      "--n-images 2 --regions-per-image 3 --d-v 8 --vocab-size 256");
  CHECK(file_bytes(dir + "/envcorp/corpus.jsonl") ==
        file_bytes(dir + "/seedcorp/corpus.jsonl"));
}
