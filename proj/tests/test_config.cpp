#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "xmr/config.hpp"

using namespace xmr;

namespace {
ErrorCode code_of(const nlohmann::json& j) {
  try {
    parse_config(j);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for " << j.dump();
  return ErrorCode::Io;
}
}  // namespace

TEST(Config, EmptyObjectKeepsDefaults) {
  const auto c = parse_config(nlohmann::json::object());
  EXPECT_EQ(c.n, 32u);
  EXPECT_EQ(c.m, 256u);
  EXPECT_EQ(c.encoder, EncoderShape{});
  EXPECT_EQ(c.search.candidate_k, 1000u);
  EXPECT_EQ(c.steps.finetune, 200u);
}

TEST(Config, FieldsOverrideDefaults) {
  const auto c = parse_config(nlohmann::json::parse(
      R"({"n": 8, "d_out": 16, "seed": 9, "n_probe": 3, "final_k": 5, "learning_rate": 0.1,
          "steps": {"pretrain": 0, "extend": 7}})"));
  EXPECT_EQ(c.n, 8u);
  EXPECT_EQ(c.encoder.output_dim, 16u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.search.n_probe, 3u);
  EXPECT_EQ(c.search.final_k, 5u);
  EXPECT_EQ(c.learning_rate, 0.1);
  EXPECT_EQ(c.steps.pretrain, 0u);
  EXPECT_EQ(c.steps.finetune, 200u);
  EXPECT_EQ(c.steps.extend, 7u);
}

TEST(Config, RejectsUnknownKeysAtEveryLevel) {
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"dout": 16})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"steps": {"warmup": 1}})")), ErrorCode::InvalidConfig);
}

TEST(Config, RejectsWrongTypesAndInvalidValues) {
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"n": "eight"})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"steps": 3})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"final_k": 20, "candidate_k": 10})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"mask_rate": 1.5})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"({"n": 2})")), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of(nlohmann::json::parse(R"([1, 2])")), ErrorCode::InvalidConfig);
}

TEST(Config, LoadReportsMissingFileAndBadJson) {
  const auto dir = std::filesystem::temp_directory_path() / "xmr-config-test";
  std::filesystem::create_directories(dir);
  try {
    load_config(dir / "missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
  std::ofstream(dir / "bad.json") << "{\"n\": ";
  try {
    load_config(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Parse);
  }
  std::filesystem::remove_all(dir);
}
