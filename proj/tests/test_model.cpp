#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstdio>
#include <filesystem>

#include "deeprnmt/checkpoint.hpp"
#include "deeprnmt/decoder.hpp"
#include "test_util.hpp"

using namespace deeprnmt;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.encoder.hidden = 5;
  cfg.encoder.embedding = 4;
  cfg.decoder.hidden = 5;
  cfg.decoder.embedding = 4;
  cfg.source_vocab = 7;
  cfg.target_vocab = 7;
  return cfg;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("validate accepts the baseline and fills defaults") {
  ModelConfig cfg = validate(tiny());
  CHECK(cfg.decoder.transition_depths == std::vector<int>{2});
  CHECK(cfg.decoder.output_depth == 1);
}

TEST_CASE("validate rejects structural violations") {
  auto expect_reject = [](ModelConfig cfg, const std::string& needle) {
    try {
      validate(cfg);
      FAIL("expected rejection mentioning '" << needle << "'");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  ModelConfig alt = tiny();
  alt.encoder.kind = EncoderKind::Alternating;
  alt.encoder.stack_depth = 2;
  alt.encoder.transition_depths = {3};
  expect_reject(alt, "transition depth 1");

  ModelConfig short_list = tiny();
  short_list.decoder.kind = DecoderKind::Bideep;
  short_list.decoder.stack_depth = 3;
  short_list.decoder.transition_depths = {4, 2};
  expect_reject(short_list, "one entry per level");

  ModelConfig shallow_dt = tiny();
  shallow_dt.decoder.kind = DecoderKind::DeepTransition;
  shallow_dt.decoder.transition_depths = {1};
  expect_reject(shallow_dt, "transition depth >= 2");

  ModelConfig base2 = tiny();
  base2.decoder.kind = DecoderKind::Baseline;
  base2.decoder.stack_depth = 2;
  expect_reject(base2, "stack depth 1");

  ModelConfig bideep_base1 = tiny();
  bideep_base1.decoder.kind = DecoderKind::Bideep;
  bideep_base1.decoder.stack_depth = 2;
  bideep_base1.decoder.transition_depths = {1, 1};
  expect_reject(bideep_base1, "attention");

  ModelConfig mixed = tiny();
  mixed.encoder.kind = EncoderKind::Mixed;
  mixed.encoder.stack_depth = 4;
  mixed.encoder.alt_layers = 1;
  mixed.encoder.uni_layers = 1;
  expect_reject(mixed, "sum to the stack depth");

  ModelConfig tied = tiny();
  tied.tied_embeddings = true;
  tied.target_vocab = 9;
  expect_reject(tied, "tied embeddings");
}

TEST_CASE("init is deterministic in the seed and keyed by name") {
  ModelConfig cfg = validate(tiny());
  ParameterSet a = init_params(cfg, 5);
  ParameterSet b = init_params(cfg, 5);
  ParameterSet c = init_params(cfg, 6);
  REQUIRE(a.names() == b.names());
  bool any_diff = false;
  for (const std::string& name : a.names()) {
    REQUIRE(a.at(name).values() == b.at(name).values());
    if (a.at(name).values() != c.at(name).values()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("recurrent matrices are block-orthogonal") {
  ModelConfig cfg = tiny();
  cfg.encoder.hidden = 8;
  cfg.decoder.hidden = 8;
  cfg = validate(cfg);
  ParameterSet params = init_params(cfg, 9);
  const Tensor& U = params.at("dec.l1.t1.U");  // [8 x 24], three 8x8 gate blocks
  const int64_t h = 8;
  for (int block = 0; block < 3; ++block)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < h; ++j) {
        double dot = 0;
        for (int64_t k = 0; k < h; ++k)
          dot += U.values()[static_cast<size_t>(k * 3 * h + block * h + i)] *
                 U.values()[static_cast<size_t>(k * 3 * h + block * h + j)];
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-10);
      }
}

TEST_CASE("biases start at zero, layer norm gains at one") {
  ModelConfig cfg = validate(tiny());
  cfg.layer_norm = true;
  ParameterSet params = init_params(validate(cfg), 10);
  for (Real x : params.at("dec.l1.t1.b").values()) CHECK(x == 0.0);
  for (Real x : params.at("dec.l1.t1.ln_state.gain").values()) CHECK(x == 1.0);
  for (Real x : params.at("dec.l1.t1.ln_state.bias").values()) CHECK(x == 0.0);
}

TEST_CASE("single transition closed form") {
  // one GRU transition, d_in = 4, H = 8, no layer norm: 3*(4*8 + 8*8 + 8)
  ModelConfig cfg = tiny();
  cfg.encoder.hidden = 8;
  cfg = validate(cfg);
  ParamCount count = count_params(cfg);
  CHECK(count.parts.at("encoder") == 2 * 312);
}

TEST_CASE("analytic counts equal allocated totals across the architecture space") {
  std::vector<ModelConfig> configs;
  auto push = [&](ModelConfig cfg) { configs.push_back(validate(cfg)); };

  for (bool ln : {false, true}) {
    ModelConfig base = tiny();
    base.layer_norm = ln;
    push(base);

    for (auto [kind, depth, trans] :
         std::vector<std::tuple<EncoderKind, int, std::vector<int>>>{
             {EncoderKind::DeepTransition, 1, {4}},
             {EncoderKind::Alternating, 4, {1}},
             {EncoderKind::Biunidirectional, 4, {1}},
             {EncoderKind::Bideep, 2, {2, 2}},
             {EncoderKind::Bideep, 3, {4, 2, 2}},
         }) {
      ModelConfig cfg = base;
      cfg.encoder.kind = kind;
      cfg.encoder.stack_depth = depth;
      cfg.encoder.transition_depths = trans;
      push(cfg);
    }
    {
      ModelConfig cfg = base;
      cfg.encoder.kind = EncoderKind::Mixed;
      cfg.encoder.stack_depth = 4;
      cfg.encoder.alt_layers = 2;
      cfg.encoder.uni_layers = 2;
      push(cfg);
    }
    for (CellVariant v :
         {CellVariant::Gru, CellVariant::Rgru, CellVariant::Cgru, CellVariant::Crgru}) {
      ModelConfig cfg = base;
      cfg.decoder.kind = DecoderKind::Stacked;
      cfg.decoder.variant = v;
      cfg.decoder.stack_depth = 4;
      push(cfg);
      cfg.decoder.kind = DecoderKind::Bideep;
      cfg.decoder.stack_depth = 2;
      cfg.decoder.transition_depths = v == CellVariant::Gru || v == CellVariant::Rgru
                                          ? std::vector<int>{4, 2}
                                          : std::vector<int>{2, 2};
      push(cfg);
    }
    {
      ModelConfig cfg = base;
      cfg.decoder.kind = DecoderKind::DeepTransition;
      cfg.decoder.transition_depths = {8};
      cfg.decoder.output_depth = 4;
      push(cfg);
    }
    {
      ModelConfig cfg = base;
      cfg.tied_embeddings = true;
      cfg.decoder.output_depth = 2;
      push(cfg);
    }
  }
  REQUIRE(configs.size() >= 20);
  for (const ModelConfig& cfg : configs) {
    ParamCount analytic = count_params(cfg);
    ParameterSet allocated = init_params(cfg, 3);
    INFO("encoder " << to_string(cfg.encoder.kind) << " decoder " << to_string(cfg.decoder.kind)
                    << "/" << to_string(cfg.decoder.variant) << " ln " << cfg.layer_norm);
    CHECK(analytic.total == allocated.total_scalars());
  }
}

TEST_CASE("checkpoint round trip is byte-identical") {
  ModelConfig cfg = validate(tiny());
  ParameterSet params = init_params(cfg, 21);
  auto p1 = temp_file("ckpt_roundtrip_1.bin");
  auto p2 = temp_file("ckpt_roundtrip_2.bin");
  save_checkpoint(params, cfg, p1.string());
  Checkpoint loaded = load_checkpoint(p1.string());
  save_checkpoint(loaded.params, loaded.config, p2.string());
  REQUIRE(read_bytes(p1) == read_bytes(p2));
  for (const std::string& name : params.names())
    REQUIRE(loaded.params.at(name).values() == params.at(name).values());
}

TEST_CASE("checkpoint errors") {
  ModelConfig cfg = validate(tiny());
  ParameterSet params = init_params(cfg, 23);
  auto path = temp_file("ckpt_errors.bin");
  save_checkpoint(params, cfg, path.string());
  std::string bytes = read_bytes(path);

  SECTION("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_WITH(load_checkpoint(path.string()),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
  SECTION("unsupported version") {
    std::string bad = bytes;
    bad[8] = 99;
    write_bytes(path, bad);
    CHECK_THROWS_WITH(load_checkpoint(path.string()),
                      Catch::Matchers::ContainsSubstring("version"));
  }
  SECTION("truncated file") {
    write_bytes(path, bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_WITH(load_checkpoint(path.string()),
                      Catch::Matchers::ContainsSubstring("end of file"));
  }
  SECTION("renamed tensor names the offender") {
    // first record is emb.src; corrupt one name byte in place
    size_t pos = bytes.find("emb.src");
    REQUIRE(pos != std::string::npos);
    std::string bad = bytes;
    bad[pos] = 'q';
    write_bytes(path, bad);
    CHECK_THROWS_WITH(load_checkpoint(path.string()),
                      Catch::Matchers::ContainsSubstring("qmb.src"));
  }
}

TEST_CASE("golden checkpoint reproduces a frozen score bit-exactly") {
  ModelConfig cfg = validate(tiny());
  cfg.seed = 2017;
  Model m(cfg, init_params(cfg, cfg.seed));
  auto path = temp_file("ckpt_golden.bin");
  save_checkpoint(m.params, cfg, path.string());
  Checkpoint loaded = load_checkpoint(path.string());
  Model reloaded(loaded.config, std::move(loaded.params));
  SequenceScore s = score_sequence(reloaded, {2, 5, 3, 6}, {4, 3, 2, 0});
#ifndef DEEPRNMT_SINGLE_PRECISION
  // frozen at first build; fails if scoring, the parameter plan, the
  // initializer, or the file format drifts
  const uint64_t kGoldenScoreBits = 0x401f6a7ac750453dull;
  REQUIRE(std::bit_cast<uint64_t>(static_cast<double>(-s.total)) == kGoldenScoreBits);
#else
  CHECK(std::isfinite(s.total));
#endif
}

TEST_CASE("every parameter participates in the scoring graph") {
  // a parameter the graph never touches would silently pass gradient checks
  std::vector<ModelConfig> configs;
  {
    ModelConfig cfg = tiny();
    cfg.encoder.kind = EncoderKind::Bideep;
    cfg.encoder.stack_depth = 2;
    cfg.encoder.transition_depths = {2, 2};
    cfg.decoder.kind = DecoderKind::Bideep;
    cfg.decoder.variant = CellVariant::Cgru;
    cfg.decoder.stack_depth = 2;
    cfg.decoder.transition_depths = {3, 2};
    cfg.layer_norm = true;
    configs.push_back(validate(cfg));
  }
  {
    ModelConfig cfg = tiny();
    cfg.encoder.kind = EncoderKind::Mixed;
    cfg.encoder.stack_depth = 3;
    cfg.encoder.alt_layers = 2;
    cfg.encoder.uni_layers = 1;
    cfg.decoder.kind = DecoderKind::Stacked;
    cfg.decoder.variant = CellVariant::Rgru;
    cfg.decoder.stack_depth = 3;
    cfg.decoder.output_depth = 2;
    configs.push_back(validate(cfg));
  }
  for (const ModelConfig& cfg : configs) {
    Model m(cfg, init_params(cfg, 29));
    Tape tape;
    {
      Tape::Scope scope(tape);
      Mask mask(4, 1);
      SourceAnnotations src = m.encoder.encode({2, 3, 4, 5}, mask);
      DecoderNet::Attended att = m.decoder.attend(src);
      std::vector<Tensor> lp =
          score_tokens(m.decoder, att, m.decoder.init_state(src), {2, 3, 4, 0});
      Tensor total = lp[0];
      for (size_t i = 1; i < lp.size(); ++i) total = add(total, lp[i]);
      tape.backward(total);
    }
    for (const std::string& name : m.params.names()) {
      INFO("parameter " << name);
      CHECK(m.params.at(name).has_grad());
    }
  }
}
