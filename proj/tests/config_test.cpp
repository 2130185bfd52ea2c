#include <gtest/gtest.h>

#include <string>

#include "foldattn/config.hpp"

using namespace foldattn;
using nlohmann::json;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(parse_json_text(text, "cfg.json"));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, BundledConfigsRoundTrip) {
  for (const char* name : {"librispeech_grid.json", "inhouse_grid.json", "toy_standard.json",
                           "toy_folding.json", "bench_small.json", "empty.json"}) {
    const auto cfg = load_config(std::string(FOLDATTN_CONFIG_DIR) + "/" + name);
    EXPECT_EQ(parse_config(to_json(cfg)), cfg) << name;
    EXPECT_EQ(parse_config(parse_json_text(serialize_config(cfg), name)), cfg) << name;
  }
}

TEST(Config, DefaultsFromEmptyObject) {
  const auto cfg = parse_config(json::object());
  EXPECT_TRUE(cfg.models.empty());
  EXPECT_EQ(cfg.model.heads, 8u);
  EXPECT_EQ(cfg.model.folding_factor, 2u);
  EXPECT_EQ(cfg.format, "text");
  EXPECT_FALSE(cfg.train.has_value());
}

TEST(Config, UnknownFieldNamesPath) {
  EXPECT_NE(error_of(R"({"model": {"embed_dimm": 4}})").find("model.embed_dimm"), std::string::npos);
  EXPECT_NE(error_of(R"({"models": [{"id": "a", "layers": 2}]})").find("models[0].layers"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"bogus": 1})").find("unknown field"), std::string::npos);
}

TEST(Config, SyntaxErrorHasLineAndColumn) {
  const auto msg = error_of("{\n  \"name\": \"x\",\n  oops\n}");
  EXPECT_NE(msg.find("cfg.json:3:"), std::string::npos) << msg;
}

TEST(Config, BadValues) {
  EXPECT_NE(error_of(R"({"model": {"heads": -1}})").find("model.heads"), std::string::npos);
  EXPECT_NE(error_of(R"({"format": "xml"})").find("format"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"activation": "tanh"}})").find("model.activation"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"models": [{"id": "a"}, {"id": "a"}]})").find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"pairs": [["a"]]})").find("pairs[0]"), std::string::npos);
  EXPECT_NE(error_of(R"({"cost": {"bytes_per_param": 2}})").find("bytes_per_param"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"task": {"num_classes": 1}}})").find("num_classes"),
            std::string::npos);
}

TEST(Config, MissingFileIsConfigError) {
  EXPECT_THROW(load_config("/nonexistent/cfg.json"), ConfigError);
}

TEST(Config, UnknownModelId) {
  const auto cfg = load_config(std::string(FOLDATTN_CONFIG_DIR) + "/librispeech_grid.json");
  EXPECT_EQ(cfg.find_model("B5").folding_layers, 10u);
  EXPECT_THROW(cfg.find_model("Z9"), ConfigError);
}

TEST(Config, EncoderSpecFromEntry) {
  const auto cfg = load_config(std::string(FOLDATTN_CONFIG_DIR) + "/librispeech_grid.json");
  const auto spec = encoder_spec(cfg.model, cfg.find_model("B1"));
  ASSERT_EQ(spec.layers.size(), 10u);
  EXPECT_EQ(spec.layers.front().kind, LayerKind::folding);
  EXPECT_EQ(spec.layers.front().embed_dim, 256u);
  EXPECT_EQ(spec.layers.back().kind, LayerKind::standard);
  EXPECT_EQ(spec.chunk_size + spec.left_context, 32u);

  const auto abstract = load_config(std::string(FOLDATTN_CONFIG_DIR) + "/inhouse_grid.json");
  EXPECT_THROW(encoder_spec(abstract.model, abstract.models.front()), ConfigError);
}
