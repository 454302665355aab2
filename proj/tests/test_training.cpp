#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "deeprnmt/train.hpp"
#include "test_util.hpp"

using namespace deeprnmt;

namespace {

ModelConfig tiny_task_model(int vocab = 9) {
  ModelConfig cfg;
  cfg.encoder.hidden = 6;
  cfg.encoder.embedding = 5;
  cfg.decoder.hidden = 6;
  cfg.decoder.embedding = 5;
  cfg.source_vocab = vocab;
  cfg.target_vocab = vocab;
  return validate(cfg);
}

Batch single_batch(const std::vector<Pair>& pairs) {
  std::vector<Pair> copy = pairs;
  append_eos(copy);
  return make_batches(std::move(copy), static_cast<int>(pairs.size()))[0];
}

// random architecture draw for property-style checks
ModelConfig random_architecture(Rng& rng) {
  ModelConfig cfg = tiny_task_model();
  switch (rng.uniform_int(0, 3)) {
    case 0: break;
    case 1:
      cfg.encoder.kind = EncoderKind::DeepTransition;
      cfg.encoder.transition_depths = {static_cast<int>(rng.uniform_int(2, 3))};
      break;
    case 2:
      cfg.encoder.kind = EncoderKind::Alternating;
      cfg.encoder.stack_depth = static_cast<int>(rng.uniform_int(2, 3));
      break;
    case 3:
      cfg.encoder.kind = EncoderKind::Bideep;
      cfg.encoder.stack_depth = 2;
      cfg.encoder.transition_depths = {2};
      break;
  }
  switch (rng.uniform_int(0, 3)) {
    case 0: break;
    case 1:
      cfg.decoder.kind = DecoderKind::DeepTransition;
      cfg.decoder.transition_depths = {static_cast<int>(rng.uniform_int(2, 4))};
      break;
    case 2: {
      cfg.decoder.kind = DecoderKind::Stacked;
      CellVariant vs[] = {CellVariant::Gru, CellVariant::Rgru, CellVariant::Cgru,
                          CellVariant::Crgru};
      cfg.decoder.variant = vs[rng.uniform_int(0, 3)];
      cfg.decoder.stack_depth = static_cast<int>(rng.uniform_int(2, 3));
      cfg.decoder.transition_depths = {2};
      break;
    }
    case 3:
      cfg.decoder.kind = DecoderKind::Bideep;
      cfg.decoder.variant = CellVariant::Rgru;
      cfg.decoder.stack_depth = 2;
      cfg.decoder.transition_depths = {2, 2};
      break;
  }
  cfg.layer_norm = rng.uniform() < 0.3;
  return validate(cfg);
}

}  // namespace

TEST_CASE("task generation") {
  SyntheticTask copy;
  copy.kind = TaskKind::Copy;
  copy.vocab = 9;
  std::vector<Pair> pairs = generate(copy, 50, 11);
  for (const Pair& p : pairs) {
    REQUIRE(p.target == p.source);
    for (int64_t t : p.source) {
      REQUIRE(t >= kFirstSymbolId);
      REQUIRE(t < 9);
    }
  }

  SyntheticTask rev = copy;
  rev.kind = TaskKind::Reverse;
  for (const Pair& p : generate(rev, 50, 11)) {
    std::vector<int64_t> r(p.source.rbegin(), p.source.rend());
    REQUIRE(p.target == r);
  }

  // determinism
  REQUIRE(generate(copy, 20, 5)[7].source == generate(copy, 20, 5)[7].source);
  bool differs = false;
  auto a = generate(copy, 20, 5), b = generate(copy, 20, 6);
  for (size_t i = 0; i < 20; ++i) differs = differs || a[i].source != b[i].source;
  CHECK(differs);
}

TEST_CASE("agreement pairs satisfy the form rule by construction") {
  SyntheticTask task;
  task.kind = TaskKind::Agreement;
  task.vocab = 12;
  task.min_distance = 1;
  task.max_distance = 20;
  bool saw_a = false, saw_b = false, saw_long = false;
  for (const Pair& p : generate(task, 200, 13)) {
    const int64_t subject = p.target.front();
    const int64_t verb = p.target.back();
    const int d = static_cast<int>(p.target.size()) - 1;
    REQUIRE((subject == kSubjectA || subject == kSubjectB));
    REQUIRE(verb == (subject == kSubjectA ? kVerbA : kVerbB));
    REQUIRE(p.source == std::vector<int64_t>(p.target.begin(), p.target.end() - 1));
    REQUIRE(d >= 1);
    REQUIRE(d <= 20);
    // verb form determined by a token emitted exactly d positions earlier
    REQUIRE(p.target[p.target.size() - 1 - d] == subject);
    saw_a = saw_a || subject == kSubjectA;
    saw_b = saw_b || subject == kSubjectB;
    saw_long = saw_long || d >= 16;
  }
  CHECK(saw_a);
  CHECK(saw_b);
  CHECK(saw_long);
}

TEST_CASE("batching pads, masks, and conserves tokens") {
  std::vector<Pair> pairs{{{2, 3}, {2, 3}}, {{2, 3, 4, 5}, {2, 3, 4, 5}}};
  std::vector<Batch> batches = make_batches(pairs, 2);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  REQUIRE(b.source_mask[0] == Mask{1, 1, 0, 0});
  REQUIRE(b.source_mask[1] == Mask{1, 1, 1, 1});
  REQUIRE(b.source[0].size() == 4);

  // batch_size 1 never pads
  for (const Batch& single : make_batches(pairs, 1)) {
    for (const Mask& m : single.source_mask)
      for (uint8_t bit : m) REQUIRE(bit == 1);
  }

  // token accounting across uneven random pairs
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 7;
  std::vector<Pair> many = generate(task, 33, 17);
  int64_t expect = 0;
  for (const Pair& p : many) expect += static_cast<int64_t>(p.source.size());
  int64_t got = 0;
  size_t count = 0;
  for (const Batch& bb : make_batches(many, 4)) {
    count += bb.source.size();
    for (const Mask& m : bb.source_mask)
      for (uint8_t bit : m) got += bit;
  }
  CHECK(got == expect);
  CHECK(count == many.size());
}

TEST_CASE("uniform model loss is exactly ln V") {
  ModelConfig cfg = tiny_task_model(9);
  ParameterSet params = init_params(cfg, 31);
  for (const std::string& name : params.names())
    if (name.rfind("dec.out.", 0) == 0)
      for (Real& x : params.at(name).values()) x = 0;
  Model m(cfg, std::move(params));
  SyntheticTask task;
  task.vocab = 9;
  Batch batch = single_batch(generate(task, 6, 37));
  Tensor loss = batch_loss(m, batch);
  CHECK(static_cast<double>(loss.item()) == Catch::Approx(std::log(9.0)).epsilon(1e-12));
}

TEST_CASE("padding contributes nothing to the loss") {
  Model m = Model::fresh(tiny_task_model(9));
  std::vector<Pair> pairs{{{2, 3}, {2, 3}}, {{4, 5, 6, 7}, {4, 5, 6, 7}}};
  Batch padded = single_batch(pairs);

  double expect = 0;
  int64_t tokens = 0;
  for (Pair p : pairs) {
    p.target.push_back(kEosId);
    SequenceScore s = score_sequence(m, p.source, p.target);
    expect -= s.total;
    tokens += static_cast<int64_t>(p.target.size());
  }
  Tensor loss = batch_loss(m, padded);
  REQUIRE(static_cast<double>(loss.item()) ==
          Catch::Approx(expect / static_cast<double>(tokens)).margin(1e-12));
}

TEST_CASE("batch losses combine token-weighted") {
  Model m = Model::fresh(tiny_task_model(9));
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 5;
  std::vector<Pair> pairs = generate(task, 8, 41);
  Batch all = single_batch(pairs);
  Tensor whole = batch_loss(m, all);

  std::vector<Pair> first(pairs.begin(), pairs.begin() + 3);
  std::vector<Pair> second(pairs.begin() + 3, pairs.end());
  Batch a = single_batch(first), b = single_batch(second);
  double merged = (static_cast<double>(batch_loss(m, a).item()) * a.target_tokens +
                   static_cast<double>(batch_loss(m, b).item()) * b.target_tokens) /
                  static_cast<double>(a.target_tokens + b.target_tokens);
  CHECK(static_cast<double>(whole.item()) == Catch::Approx(merged).margin(1e-12));
}

TEST_CASE("adam fixed point and first-step size") {
  // zero gradients leave parameters unchanged
  ModelConfig cfg = tiny_task_model();
  ParameterSet params = init_params(cfg, 43);
  ParameterSet before = clone_values(params);
  TrainState state;
  Hyper hyper;
  optimizer_step(state, params, hyper);  // no grads allocated anywhere
  for (const std::string& name : params.names())
    REQUIRE(params.at(name).values() == before.at(name).values());
  CHECK(state.step == 1);

  // single scalar with gradient 1 at step 1 moves by -lr/(1+eps)
  ParameterSet single;
  single.add("w", Tensor::from({1}, {Real(0.25)}, true));
  single.at("w").grad()[0] = 1;
  TrainState s2;
  optimizer_step(s2, single, hyper);
  double expect = 0.25 - static_cast<double>(hyper.lr) / (1.0 + static_cast<double>(hyper.epsilon));
  CHECK(static_cast<double>(single.at("w").values()[0]) == Catch::Approx(expect).margin(1e-15));
}

TEST_CASE("non-finite gradients abort with the tensor name") {
  ParameterSet params;
  params.add("bad.tensor", Tensor::from({2}, {1, 2}, true));
  params.at("bad.tensor").grad()[1] = std::numeric_limits<Real>::quiet_NaN();
  TrainState state;
  Hyper hyper;
  CHECK_THROWS_WITH(optimizer_step(state, params, hyper),
                    Catch::Matchers::ContainsSubstring("bad.tensor"));
}

TEST_CASE("clipping rescales without changing direction") {
  ParameterSet params;
  params.add("a", Tensor::from({3}, {1, 1, 1}, true));
  params.add("b", Tensor::from({2}, {1, 1}, true));
  params.at("a").grad() = {3, 0, -4};
  params.at("b").grad() = {0, 12};
  double norm = clip_gradients(params, 1.0);
  CHECK(norm == Catch::Approx(13.0));
  CHECK(params.at("a").grad()[0] == Catch::Approx(3.0 / 13.0));
  CHECK(params.at("a").grad()[2] == Catch::Approx(-4.0 / 13.0));
  CHECK(params.at("b").grad()[1] == Catch::Approx(12.0 / 13.0));
  // already under the threshold: untouched
  params.at("a").grad() = {0.1, 0, 0};
  params.at("b").grad() = {0, 0.2};
  clip_gradients(params, 1.0);
  CHECK(params.at("a").grad()[0] == Real(0.1));
}

TEST_CASE("one small step decreases the same example's loss") {
  Rng arch_rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg = random_architecture(arch_rng);
    cfg.seed = 100 + static_cast<uint64_t>(trial);
    Model m(cfg, init_params(cfg, cfg.seed));
    SyntheticTask task;
    task.vocab = 9;
    task.max_len = 4;
    Batch batch = single_batch(generate(task, 1, cfg.seed));

    Hyper hyper;
    hyper.lr = Real(1e-4);
    hyper.clip_norm = 0;  // pure step
    TrainState state;
    double before, after;
    {
      Tape tape;
      Tape::Scope scope(tape);
      Tensor loss = batch_loss(m, batch);
      before = loss.item();
      tape.backward(loss);
    }
    clip_gradients(m.params, hyper.clip_norm);
    optimizer_step(state, m.params, hyper);
    m.params.zero_grads();
    after = batch_loss(m, batch).item();
    INFO("encoder " << to_string(cfg.encoder.kind) << " decoder "
                    << to_string(cfg.decoder.kind) << "/" << to_string(cfg.decoder.variant)
                    << " ln " << cfg.layer_norm << " trial " << trial);
    CHECK(after < before);
  }
}

TEST_CASE("short training runs are bit-identical and log sane speeds") {
  ModelConfig cfg = tiny_task_model(9);
  cfg.seed = 77;
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 4;
  Hyper hyper;
  hyper.batch_size = 4;
  hyper.valid_every = 2;
  hyper.max_steps = 10;
  hyper.data_size = 16;
  hyper.valid_size = 8;

  TrainResult a = train(cfg, task, hyper);
  TrainResult b = train(cfg, task, hyper);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    REQUIRE(a.log[i].step == b.log[i].step);
    REQUIRE(a.log[i].train_ce == b.log[i].train_ce);
    REQUIRE(a.log[i].valid_ce == b.log[i].valid_ce);
    CHECK(a.log[i].tokens_per_s > 0);
    CHECK(std::isfinite(a.log[i].tokens_per_s));
  }
  for (const std::string& name : a.best_params.names())
    REQUIRE(a.best_params.at(name).values() == b.best_params.at(name).values());
}

TEST_CASE("patience zero stops at the first non-improving evaluation") {
  ModelConfig cfg = tiny_task_model(9);
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 3;
  Hyper hyper;
  hyper.lr = 0;  // loss can never improve after the first evaluation
  hyper.batch_size = 4;
  hyper.valid_every = 3;
  hyper.patience = 0;
  hyper.max_steps = 1000;
  hyper.data_size = 12;
  hyper.valid_size = 4;
  TrainResult r = train(cfg, task, hyper);
  CHECK(r.steps == 6);  // first eval improves on infinity, second ties and stops
}

TEST_CASE("divergence aborts with a diagnostic") {
  ModelConfig cfg = tiny_task_model(9);
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 3;
  Hyper hyper;
  hyper.lr = Real(50.0);
  hyper.clip_norm = 0;
  hyper.batch_size = 4;
  hyper.valid_every = 101;  // past the warmup guard
  hyper.patience = 100;
  hyper.max_steps = 600;
  hyper.data_size = 12;
  hyper.valid_size = 4;
  CHECK_THROWS_WITH(train(cfg, task, hyper), Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("training log file carries the config header and TSV rows") {
  namespace fs = std::filesystem;
  ModelConfig cfg = tiny_task_model(9);
  SyntheticTask task;
  task.vocab = 9;
  task.max_len = 3;
  Hyper hyper;
  hyper.batch_size = 4;
  hyper.valid_every = 2;
  hyper.max_steps = 4;
  hyper.data_size = 8;
  hyper.valid_size = 4;
  TrainPaths paths;
  paths.checkpoint = (fs::temp_directory_path() / "train_test.ckpt").string();
  paths.log = (fs::temp_directory_path() / "train_test.log").string();
  train(cfg, task, hyper, &paths);

  std::ifstream log(paths.log);
  REQUIRE(log.good());
  std::string line;
  int header = 0, rows = 0;
  while (std::getline(log, line)) {
    if (line.rfind("# ", 0) == 0) {
      ++header;
    } else {
      ++rows;
      int tabs = 0;
      for (char c : line) tabs += c == '\t';
      CHECK(tabs == 3);
    }
  }
  CHECK(header > 0);
  CHECK(rows >= 2);
  CHECK(load_checkpoint(paths.checkpoint).params.size() > 0);
}
