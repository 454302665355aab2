#include <catch2/catch_amalgamated.hpp>

#include "deeprnmt/config.hpp"

using namespace deeprnmt;

TEST_CASE("flat config text parses with comments and blanks") {
  RunConfig rc = RunConfig::parse_text(
      "# a comment\n"
      "\n"
      "seed = 7\n"
      "encoder.kind = alternating\n"
      "  encoder.depth=4   \n"
      "train.lr = 0.0005\n");
  CHECK(rc.get_int("seed", 0) == 7);
  CHECK(rc.get_string("encoder.kind", "") == "alternating");
  CHECK(rc.get_int("encoder.depth", 0) == 4);
  CHECK(rc.get_real("train.lr", 0) == 0.0005);
}

TEST_CASE("unknown keys and malformed lines are rejected") {
  CHECK_THROWS_WITH(RunConfig::parse_text("nonsense.key = 1\n"),
                    Catch::Matchers::ContainsSubstring("unknown config key"));
  CHECK_THROWS_WITH(RunConfig::parse_text("seed = 1\njust words\n"),
                    Catch::Matchers::ContainsSubstring("line 2"));
  RunConfig rc;
  CHECK_THROWS_AS(rc.set("model.does_not_exist", "1"), ConfigError);
}

TEST_CASE("typed getters validate their values") {
  RunConfig rc = RunConfig::parse_text("seed = 7\nmodel.layer_norm = true\n");
  CHECK(rc.get_bool("model.layer_norm", false));
  CHECK_THROWS_AS(RunConfig::parse_text("seed = x\n").get_int("seed", 0), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("model.layer_norm = maybe\n")
                      .get_bool("model.layer_norm", false),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("decoder.depths = 4,x\n").get_int_list("decoder.depths"),
                  ConfigError);
  CHECK(RunConfig::parse_text("decoder.depths = 4, 2\n").get_int_list("decoder.depths") ==
        std::vector<int>{4, 2});
}

TEST_CASE("values round-trip through serialization unchanged") {
  RunConfig rc = RunConfig::parse_text(
      "train.lr = 0.00100\n"
      "seed = 42\n"
      "encoder.kind = shallow\n");
  std::string text = rc.serialize();
  // canonical form sorts keys and keeps the raw value spelling
  CHECK(text.find("train.lr = 0.00100") != std::string::npos);
  RunConfig again = RunConfig::parse_text(text);
  CHECK(again.serialize() == text);
}

TEST_CASE("overrides compose left to right, last write wins") {
  RunConfig rc = RunConfig::parse_text("seed = 1\n");
  rc.set_assignment("seed=2");
  rc.set_assignment("seed=3");
  CHECK(rc.get_int("seed", 0) == 3);
  CHECK_THROWS_AS(rc.set_assignment("no_equals_sign"), ConfigError);
}

TEST_CASE("model config defaults to the baseline") {
  ModelConfig cfg = model_config_from(RunConfig());
  CHECK(cfg.encoder.kind == EncoderKind::Shallow);
  CHECK(cfg.decoder.kind == DecoderKind::Baseline);
  CHECK(cfg.decoder.transition_depths == std::vector<int>{2});
  CHECK(cfg.output_inputs == OutputInputs::Full);
}

TEST_CASE("bideep decoder depths infer the stack depth") {
  RunConfig rc = RunConfig::parse_text(
      "decoder.kind = bideep\n"
      "decoder.depths = 4,2\n");
  ModelConfig cfg = model_config_from(rc);
  CHECK(cfg.decoder.stack_depth == 2);
  CHECK(cfg.decoder.transition_depths == std::vector<int>{4, 2});

  // explicit depth must agree with the list
  RunConfig bad = RunConfig::parse_text(
      "decoder.kind = bideep\n"
      "decoder.depth = 3\n"
      "decoder.depths = 4,2\n");
  CHECK_THROWS_AS(model_config_from(bad), ConfigError);
}

TEST_CASE("encoder transition depth broadcasts for bideep") {
  RunConfig rc = RunConfig::parse_text(
      "encoder.kind = bideep\n"
      "encoder.depth = 3\n"
      "encoder.transition_depth = 2\n");
  ModelConfig cfg = model_config_from(rc);
  CHECK(cfg.encoder.transition_depths == std::vector<int>{2, 2, 2});
}

TEST_CASE("mixed encoder depth comes from its layer split") {
  RunConfig rc = RunConfig::parse_text(
      "encoder.kind = mixed\n"
      "encoder.alt_layers = 2\n"
      "encoder.uni_layers = 1\n");
  ModelConfig cfg = model_config_from(rc);
  CHECK(cfg.encoder.stack_depth == 3);
}

TEST_CASE("deep transition decoder takes a scalar transition depth") {
  RunConfig rc = RunConfig::parse_text(
      "decoder.kind = deep_transition\n"
      "decoder.transition_depth = 8\n");
  ModelConfig cfg = model_config_from(rc);
  CHECK(cfg.decoder.transition_depths == std::vector<int>{8});
}

TEST_CASE("enum values are validated") {
  CHECK_THROWS_AS(model_config_from(RunConfig::parse_text("encoder.kind = convnet\n")),
                  ConfigError);
  CHECK_THROWS_AS(model_config_from(RunConfig::parse_text("decoder.variant = lstm\n")),
                  ConfigError);
  CHECK_THROWS_AS(model_config_from(RunConfig::parse_text("model.output_inputs = everything\n")),
                  ConfigError);
}

TEST_CASE("model config text round trips to the same normalized config") {
  RunConfig rc = RunConfig::parse_text(
      "seed = 9\n"
      "model.layer_norm = true\n"
      "encoder.kind = bideep\n"
      "encoder.depth = 2\n"
      "encoder.transition_depth = 2\n"
      "decoder.kind = bideep\n"
      "decoder.variant = rgru\n"
      "decoder.depths = 4,2\n");
  ModelConfig cfg = model_config_from(rc);
  std::string text = model_config_text(cfg);
  ModelConfig again = model_config_parse(text);
  CHECK(model_config_text(again) == text);
  CHECK(again.encoder.transition_depths == cfg.encoder.transition_depths);
  CHECK(again.decoder.transition_depths == cfg.decoder.transition_depths);
  CHECK(again.seed == cfg.seed);
  CHECK(again.layer_norm == cfg.layer_norm);
}
