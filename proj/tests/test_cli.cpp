#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "test_support.hpp"
#include "xmr/checkpoint.hpp"
#include "xmr/eval.hpp"

namespace fs = std::filesystem;
using namespace xmr;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("xmr-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_config("config.json", 20, 20, 10);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  void write_config(const std::string& name, int pretrain, int finetune, int extend) {
    std::ofstream(dir_ / name) << R"({"n": 8, "m": 16, "d_out": 16, "vocab_size": 256, "hidden": 16,
      "seed": 3, "n_probe": 2, "candidate_k": 20, "final_k": 5, "batch_size": 4,
      "steps": {"pretrain": )" << pretrain
                               << ", \"finetune\": " << finetune << ", \"extend\": " << extend << "}}";
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  static std::string demo(const std::string& name) { return "'" + (fs::path(XMR_DEMO_DIR) / name).string() + "'"; }
  std::string arg(const std::string& name) const { return "'" + path(name).string() + "'"; }

  Result run(const std::string& args) const {
    const std::string cmd = std::string("'") + XMR_CLI + "' " + args + " > " + arg("stdout.txt") + " 2> " +
                            arg("stderr.txt");
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(path("stdout.txt"));
    r.err = slurp(path("stderr.txt"));
    return r;
  }

  std::string train_args(const std::string& out, const std::string& config = "config.json") const {
    return "train --config " + arg(config) + " --corpus " + demo("passages.jsonl") + " --queries " +
           demo("queries.jsonl") + " --triples " + demo("triples.txt") + " --out " + arg(out);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  auto r = run("");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("E_USAGE: ", 0), 0u) << r.err;
  r = run("train --no-such-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("E_USAGE: ", 0), 0u) << r.err;
  r = run("index --corpus x");
  EXPECT_EQ(r.code, 2) << "missing --out";
}

TEST_F(Cli, RuntimeErrorsAreOneCodedLine) {
  const auto r = run("train --corpus " + arg("missing.jsonl") + " --out " + arg("m.ckpt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("E_IO: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_FALSE(fs::exists(path("m.ckpt")));
}

TEST_F(Cli, TrainIndexSearchEval) {
  auto r = run(train_args("m.ckpt") + " --report " + arg("loss.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string report = slurp(path("loss.csv"));
  EXPECT_EQ(report.rfind("stage,step,loss\npretrain,1,", 0), 0u);
  EXPECT_NE(report.find("finetune,20,"), std::string::npos);

  r = run("index --config " + arg("config.json") + " --corpus " + demo("passages.jsonl") + " --checkpoint " +
          arg("m.ckpt") + " --out " + arg("idx"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("centroids "), std::string::npos);
  EXPECT_NE(r.out.find("bits_per_embedding "), std::string::npos);
  for (const char* f : {"meta.bin", "centroids.bin", "codes.bin", "ivf.bin", "passages.bin"})
    EXPECT_TRUE(fs::exists(path("idx") / f)) << f;

  r = run("search --config " + arg("config.json") + " --index " + arg("idx") + " --queries " +
          demo("queries.jsonl") + " --checkpoint " + arg("m.ckpt") + " --out " + arg("run.txt") + " --latency");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("mean_ms"), std::string::npos);
  std::istringstream run_in(slurp(path("run.txt")));
  const auto run_file = read_run(run_in);  // enforces ranks 1..k and descending scores
  EXPECT_EQ(run_file.queries.size(), 32u);
  for (const auto& [q, list] : run_file.queries) EXPECT_EQ(list.size(), 5u) << q;

  r = run("eval --run " + arg("run.txt") + " --qrels " + demo("qrels.txt") + " --metrics mrr@10,recall@5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("mrr@10\t", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("\nrecall@5\t"), std::string::npos) << r.out;

  r = run("search --config " + arg("config.json") + " --index " + arg("idx") + " --queries " +
          demo("queries.jsonl") + " --checkpoint " + arg("m.ckpt") + " --out " + arg("exact.txt") + " --exact");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(path("exact.txt")).find(" xmr-exact\n"), std::string::npos);
}

TEST_F(Cli, ZeroFinetuneStepsMatchesPretrainOnly) {
  write_config("no_ft.json", 20, 0, 10);
  ASSERT_EQ(run(train_args("all.ckpt", "no_ft.json")).code, 0);
  ASSERT_EQ(run(train_args("pre.ckpt", "no_ft.json") + " --stage pretrain").code, 0);
  EXPECT_EQ(slurp(path("all.ckpt")), slurp(path("pre.ckpt")));
}

TEST_F(Cli, SeedChangesTheCheckpoint) {
  ASSERT_EQ(run(train_args("a.ckpt")).code, 0);
  ASSERT_EQ(run(train_args("b.ckpt") + " --seed 4").code, 0);
  EXPECT_NE(slurp(path("a.ckpt")), slurp(path("b.ckpt")));
}

TEST_F(Cli, StagedTrainingAndExtension) {
  ASSERT_EQ(run(train_args("pre.ckpt") + " --stage pretrain --lang en").code, 0);
  auto r = run(train_args("ft.ckpt") + " --stage finetune --init " + arg("pre.ckpt"));
  ASSERT_EQ(r.code, 1) << "xx triples need an xx adapter";
  EXPECT_EQ(r.err.rfind("E_UNKNOWN_LANGUAGE", 0), 0u) << r.err;
  r = run(train_args("ft.ckpt") + " --stage finetune --lang en --init " + arg("pre.ckpt"));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run(train_args("ext.ckpt") + " --stage extend --lang xx --init " + arg("ft.ckpt"));
  ASSERT_EQ(r.code, 0) << r.err;

  const auto ft = load_checkpoint(path("ft.ckpt"));
  const auto ext = load_checkpoint(path("ext.ckpt"));
  EXPECT_EQ(ft.stage, Stage::Finetune);
  EXPECT_EQ(ext.stage, Stage::Extend);
  EXPECT_FALSE(ft.has_language("xx"));
  ASSERT_TRUE(ext.has_language("xx"));
  EXPECT_TRUE(ext.find_language("xx")->post_hoc);
  using xmr::testing::group_bytes;
  for (ParamKind kind : {ParamKind::Shared, ParamKind::Output, ParamKind::Embedding})
    EXPECT_EQ(group_bytes(ft, kind), group_bytes(ext, kind));
  EXPECT_EQ(group_bytes(ft, ParamKind::Adapter, "en"), group_bytes(ext, ParamKind::Adapter, "en"));
}

TEST_F(Cli, StageMisuseIsAStagingError) {
  auto r = run(train_args("ft.ckpt") + " --stage finetune");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("E_STAGING", 0), 0u) << r.err;
  ASSERT_EQ(run(train_args("pre.ckpt") + " --stage pretrain").code, 0);
  r = run(train_args("again.ckpt") + " --stage pretrain --init " + arg("pre.ckpt"));
  EXPECT_EQ(r.err.rfind("E_STAGING", 0), 0u) << r.err;
  r = run(train_args("ext.ckpt") + " --stage extend --init " + arg("pre.ckpt"));
  EXPECT_EQ(r.err.rfind("E_INVALID_ARGUMENT", 0), 0u) << r.err;
}

TEST_F(Cli, UnknownTripleIdIsNamed) {
  std::ofstream(path("triples.txt")) << "en-q0 en-p0-0 nope\n";
  const auto r = run("train --config " + arg("config.json") + " --corpus " + demo("passages.jsonl") + " --queries " +
                     demo("queries.jsonl") + " --triples " + arg("triples.txt") + " --out " + arg("m.ckpt"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "E_OUT_OF_RANGE: triples reference unknown passage id 'nope'\n");
}

TEST_F(Cli, QueryDimensionMustMatchTheIndex) {
  std::ofstream(path("p.jsonl")) << "{\"id\": \"a\", \"embeddings\": [[1, 0, 0], [0, 1, 0]]}\n"
                                    "{\"id\": \"b\", \"embeddings\": [[0, 0, 1]]}\n";
  std::ofstream(path("q.jsonl")) << "{\"id\": \"q\", \"embeddings\": [[1, 0]]}\n";
  ASSERT_EQ(run("index --corpus " + arg("p.jsonl") + " --out " + arg("idx")).code, 0);
  const auto r = run("search --index " + arg("idx") + " --queries " + arg("q.jsonl") + " --out " + arg("r.txt") +
                     " --nprobe 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "E_DIMENSION_MISMATCH: query 'q' has dim 2 but the index has dim 3\n");
}

TEST_F(Cli, EmbeddingCorpusNeedsNoCheckpoint) {
  std::ofstream(path("p.jsonl")) << "{\"id\": \"a\", \"embeddings\": [[1, 0, 0], [0, 1, 0]]}\n"
                                    "{\"id\": \"b\", \"embeddings\": [[0, 0, 1]]}\n";
  std::ofstream(path("q.jsonl")) << "{\"id\": \"q\", \"embeddings\": [[0, 0.1, 1]]}\n";
  ASSERT_EQ(run("index --corpus " + arg("p.jsonl") + " --out " + arg("idx")).code, 0);
  const auto r = run("search --index " + arg("idx") + " --queries " + arg("q.jsonl") + " --out " + arg("r.txt") +
                     " --k 2 --nprobe 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("r.txt")).substr(0, 9), "q Q0 b 1 ");
}

TEST_F(Cli, UnknownMetricListsTheSupportedOnes) {
  std::ofstream(path("run.txt")) << "q Q0 a 1 1.0 t\n";
  std::ofstream(path("qrels.txt")) << "q 0 a 1\n";
  auto r = run("eval --run " + arg("run.txt") + " --qrels " + arg("qrels.txt") + " --metrics ndcg@10");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "E_INVALID_ARGUMENT: unknown metric 'ndcg@10'; supported: mrr@K, recall@K\n");
  r = run("eval --run " + arg("run.txt") + " --qrels " + arg("qrels.txt"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "mrr@10\t1.0000\nrecall@100\t1.0000\n");
}
