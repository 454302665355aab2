// Command-line front end: train, translate, score, contrast-eval, params,
// gradcheck. Exit codes: 0 success, 2 invalid configuration, 1 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deeprnmt/deeprnmt.hpp"

using namespace deeprnmt;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;  // -1: keep config value
  int workers = 1;
};

RunConfig effective_config(const CommonOpts& opts) {
  RunConfig rc =
      opts.config_path.empty() ? RunConfig() : RunConfig::parse_file(opts.config_path);
  for (const std::string& kv : opts.overrides) rc.set_assignment(kv);
  if (opts.seed >= 0) rc.set("seed", std::to_string(opts.seed));
  return rc;
}

SyntheticTask task_from(const RunConfig& rc) {
  SyntheticTask task;
  task.kind = task_kind_from(rc.get_string("task.kind", "copy"));
  task.vocab = static_cast<int>(rc.get_int("task.vocab", 22));
  task.min_len = static_cast<int>(rc.get_int("task.min_len", 1));
  task.max_len = static_cast<int>(rc.get_int("task.max_len", 10));
  task.min_distance = static_cast<int>(rc.get_int("task.min_distance", 1));
  task.max_distance = static_cast<int>(rc.get_int("task.max_distance", 16));
  return task;
}

Hyper hyper_from(const RunConfig& rc) {
  Hyper h;
  h.lr = static_cast<Real>(rc.get_real("train.lr", 1e-3));
  h.beta1 = static_cast<Real>(rc.get_real("train.beta1", 0.9));
  h.beta2 = static_cast<Real>(rc.get_real("train.beta2", 0.999));
  h.epsilon = static_cast<Real>(rc.get_real("train.epsilon", 1e-8));
  h.clip_norm = static_cast<Real>(rc.get_real("train.clip_norm", 1.0));
  h.batch_size = static_cast<int>(rc.get_int("train.batch_size", 32));
  h.valid_every = static_cast<int>(rc.get_int("train.valid_every", 500));
  h.patience = static_cast<int>(rc.get_int("train.patience", 10));
  h.max_steps = rc.get_int("train.max_steps", 10000);
  h.target_ce = static_cast<Real>(rc.get_real("train.target_ce", 0.0));
  h.data_size = static_cast<int>(rc.get_int("train.data_size", 2048));
  h.valid_size = static_cast<int>(rc.get_int("train.valid_size", 256));
  return h;
}

int cmd_train(const CommonOpts& opts) {
  RunConfig rc = effective_config(opts);
  ModelConfig cfg = model_config_from(rc);
  SyntheticTask task = task_from(rc);
  if (task.vocab > cfg.source_vocab || task.vocab > cfg.target_vocab)
    throw ConfigError("task vocabulary exceeds the model vocabulary");
  Hyper hyper = hyper_from(rc);
  TrainPaths paths;
  paths.checkpoint = rc.get_string("train.checkpoint", "model.ckpt");
  paths.log = rc.get_string("train.log", "train.log");
  // effective config: normalized model keys filled in, user values verbatim
  RunConfig effective = RunConfig::parse_text(model_config_text(cfg));
  for (const auto& [k, v] : rc.values()) effective.set(k, v);
  paths.log_header = effective.serialize();
  log_info("effective config:\n%s", paths.log_header.c_str());
  TrainResult result = train(cfg, task, hyper, &paths);
  save_checkpoint(result.best_params, cfg, paths.checkpoint);
  log_info("best validation cross-entropy %.6f after %lld steps",
           static_cast<double>(result.best_valid_ce), static_cast<long long>(result.steps));
  std::printf("best_valid_ce\t%.6f\nsteps\t%lld\ncheckpoint\t%s\n",
              static_cast<double>(result.best_valid_ce), static_cast<long long>(result.steps),
              paths.checkpoint.c_str());
  return 0;
}

std::vector<int64_t> parse_id_line(const std::string& line, int lineno, int vocab, bool allow_unk) {
  std::vector<int64_t> ids;
  std::istringstream in(line);
  std::string piece;
  while (in >> piece) {
    int64_t id;
    try {
      size_t pos = 0;
      id = std::stoll(piece, &pos);
      if (pos != piece.size()) throw std::invalid_argument("");
    } catch (...) {
      throw std::runtime_error("input line " + std::to_string(lineno) + ": bad token '" + piece +
                               "'");
    }
    if (id < 0 || id >= vocab) {
      if (!allow_unk)
        throw std::runtime_error("input line " + std::to_string(lineno) + ": token " +
                                 std::to_string(id) + " outside vocabulary (use --unk to map)");
      id = kUnkId;
    }
    ids.push_back(id);
  }
  return ids;
}

int cmd_translate(const std::string& ckpt_path, const std::string& input_path,
                  const std::string& output_path, int beam, int max_len, bool allow_unk,
                  int workers) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Model m(ckpt.config, std::move(ckpt.params));
  std::ifstream in(input_path);
  if (!in) throw std::runtime_error("cannot read input file: " + input_path);
  std::vector<std::vector<int64_t>> sources;
  std::string line;
  while (std::getline(in, line))
    sources.push_back(parse_id_line(line, static_cast<int>(sources.size()) + 1,
                                    m.cfg.source_vocab, allow_unk));

  std::vector<std::string> outputs(sources.size());
  auto translate_range = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      if (sources[i].empty()) continue;  // empty input line passes through
      DecodeResult r = decode(m, sources[i], beam, max_len);
      std::string out;
      for (size_t j = 0; j < r.tokens.size(); ++j) {
        if (j) out += ' ';
        out += std::to_string(r.tokens[j]);
      }
      outputs[i] = out;
    }
  };
  if (workers <= 1 || sources.size() < 2) {
    translate_range(0, sources.size());
  } else {
    size_t w = std::min<size_t>(static_cast<size_t>(workers), sources.size());
    std::vector<std::thread> threads;
    for (size_t t = 0; t < w; ++t)
      threads.emplace_back(translate_range, sources.size() * t / w, sources.size() * (t + 1) / w);
    for (auto& th : threads) th.join();
  }

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!output_path.empty()) {
    file.open(output_path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write output file: " + output_path);
    out = &file;
  }
  for (const std::string& o : outputs) *out << o << "\n";
  return 0;
}

int cmd_score(const std::string& ckpt_path, const std::string& input_path, bool per_token) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Model m(ckpt.config, std::move(ckpt.params));
  std::ifstream in(input_path);
  if (!in) throw std::runtime_error("cannot read input file: " + input_path);
  std::string line;
  int lineno = 0;
  Tape::Suspend no_grad;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("input line " + std::to_string(lineno) +
                               ": expected source<TAB>target");
    std::vector<int64_t> src =
        parse_id_line(line.substr(0, tab), lineno, m.cfg.source_vocab, false);
    std::vector<int64_t> tgt =
        parse_id_line(line.substr(tab + 1), lineno, m.cfg.target_vocab, false);
    SequenceScore s = score_sequence(m, src, tgt);
    std::printf("%.8f", static_cast<double>(s.total));
    if (per_token)
      for (Real lp : s.per_token) std::printf("\t%.8f", static_cast<double>(lp));
    std::printf("\n");
  }
  return 0;
}

int cmd_contrast_eval(const std::string& ckpt_path, const std::string& input_path,
                      const std::string& plot_path, int workers) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Model m(ckpt.config, std::move(ckpt.params));
  std::vector<ContrastiveItem> items = load_contrastive_tsv(input_path);
  DistanceBucketReport report = contrastive_eval(m, items, workers);
  std::printf("distance\tn\taccuracy\n");
  for (int b = 1; b <= DistanceBucketReport::kMaxBucket; ++b) {
    if (report.count[static_cast<size_t>(b)] == 0) continue;
    std::printf("%s\t%lld\t%.4f\n", b == DistanceBucketReport::kMaxBucket ? ">=16"
                                                                          : std::to_string(b).c_str(),
                static_cast<long long>(report.count[static_cast<size_t>(b)]),
                report.accuracy(b));
  }
  std::printf("overall\t%lld\t%.4f\n", static_cast<long long>(report.total_items()),
              report.overall_accuracy());
  save_bucket_plot(report, plot_path.empty() ? input_path + ".plot" : plot_path);
  return 0;
}

struct MatrixRow {
  const char* name;
  const char* settings;  // comma-separated key=value pairs
};

ModelConfig config_with(const RunConfig& base, const std::string& settings) {
  // carry only dimensions and global switches; each row sets its own shape
  RunConfig rc;
  for (const char* key : {"seed", "model.source_vocab", "model.target_vocab",
                          "model.layer_norm", "model.tied_embeddings", "model.output_inputs",
                          "encoder.hidden", "encoder.embedding", "decoder.hidden",
                          "decoder.embedding"})
    if (base.has(key)) rc.set(key, base.get_string(key, ""));
  std::istringstream in(settings);
  std::string kv;
  while (std::getline(in, kv, ';')) rc.set_assignment(kv);
  return model_config_from(rc);
}

int cmd_params(const CommonOpts& opts, bool matrix) {
  RunConfig rc = effective_config(opts);
  if (!matrix) {
    ModelConfig cfg = model_config_from(rc);
    ParamCount count = count_params(cfg);
    for (const auto& [part, n] : count.parts)
      std::printf("%s\t%lld\n", part.c_str(), static_cast<long long>(n));
    std::printf("total\t%lld\n", static_cast<long long>(count.total));
    return 0;
  }
  // architecture grid at the configured dimensions
  static const MatrixRow rows[] = {
      {"baseline", "encoder.kind=shallow;decoder.kind=baseline"},
      {"enc deep transition 4", "encoder.kind=deep_transition;encoder.transition_depth=4"},
      {"enc alternating 4", "encoder.kind=alternating;encoder.depth=4"},
      {"enc biunidirectional 4", "encoder.kind=biunidirectional;encoder.depth=4"},
      {"enc mixed 2+2",
       "encoder.kind=mixed;encoder.depth=4;encoder.alt_layers=2;encoder.uni_layers=2"},
      {"dec stacked gru 4", "decoder.kind=stacked;decoder.variant=gru;decoder.depth=4"},
      {"dec stacked rgru 4", "decoder.kind=stacked;decoder.variant=rgru;decoder.depth=4"},
      {"dec stacked cgru 4", "decoder.kind=stacked;decoder.variant=cgru;decoder.depth=4"},
      {"dec stacked crgru 4", "decoder.kind=stacked;decoder.variant=crgru;decoder.depth=4"},
      {"dec deep transition 8",
       "decoder.kind=deep_transition;decoder.transition_depth=8"},
      {"dec deep output 4", "decoder.kind=baseline;decoder.output_depth=4"},
      {"alternating 4 + stacked gru 4",
       "encoder.kind=alternating;encoder.depth=4;decoder.kind=stacked;decoder.variant=gru;"
       "decoder.depth=4"},
      {"biunidirectional 4 + stacked rgru 4",
       "encoder.kind=biunidirectional;encoder.depth=4;decoder.kind=stacked;decoder.variant=rgru;"
       "decoder.depth=4"},
      {"alternating 4 + stacked rgru 4",
       "encoder.kind=alternating;encoder.depth=4;decoder.kind=stacked;decoder.variant=rgru;"
       "decoder.depth=4"},
      {"alternating 4 + stacked cgru 4",
       "encoder.kind=alternating;encoder.depth=4;decoder.kind=stacked;decoder.variant=cgru;"
       "decoder.depth=4"},
      {"deep transition 4 + deep transition 8",
       "encoder.kind=deep_transition;encoder.transition_depth=4;decoder.kind=deep_transition;"
       "decoder.transition_depth=8"},
      {"bideep 2x2 + bideep rgru 2 (4/2)",
       "encoder.kind=bideep;encoder.depth=2;encoder.transition_depth=2;decoder.kind=bideep;"
       "decoder.variant=rgru;decoder.depth=2;decoder.depths=4,2"},
      {"bideep 4x2 + bideep rgru 4 (4/2)",
       "encoder.kind=bideep;encoder.depth=4;encoder.transition_depth=2;decoder.kind=bideep;"
       "decoder.variant=rgru;decoder.depth=4;decoder.depths=4,2,2,2"},
      {"alternating 8 + stacked rgru 8",
       "encoder.kind=alternating;encoder.depth=8;decoder.kind=stacked;decoder.variant=rgru;"
       "decoder.depth=8"},
  };
  std::printf("architecture\tparameters\n");
  for (const MatrixRow& row : rows) {
    ModelConfig cfg = config_with(rc, row.settings);
    std::printf("%s\t%lld\n", row.name, static_cast<long long>(count_params(cfg).total));
  }
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts, double tolerance) {
  RunConfig rc = effective_config(opts);
  ModelConfig cfg = model_config_from(rc);
  // tiny instance of the configured architecture
  cfg.encoder.hidden = 5;
  cfg.encoder.embedding = 4;
  cfg.decoder.hidden = 5;
  cfg.decoder.embedding = 4;
  cfg.source_vocab = 7;
  cfg.target_vocab = 7;
  cfg = validate(cfg);
  Model m(cfg, init_params(cfg, cfg.seed));
  randomize_params(m.params, seed_stream(cfg.seed, "gradcheck.params"));
  Rng rng(seed_stream(cfg.seed, "gradcheck.data"));
  std::vector<int64_t> source, target;
  for (int i = 0; i < 3; ++i) source.push_back(rng.uniform_int(2, 6));
  for (int i = 0; i < 4; ++i) target.push_back(rng.uniform_int(2, 6));
  GradCheckReport report = grad_check_model(m, source, target);
  for (const GradCheckEntry& e : report.entries)
    std::printf("%s\t%.3e\n", e.name.c_str(), e.max_err);
  std::printf("worst\t%s\t%.3e\n", report.worst_name.c_str(), report.worst_err);
  bool ok = report.passed(tolerance);
  std::printf("%s (tolerance %.1e)\n", ok ? "PASS" : "FAIL", tolerance);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep recurrent encoder-decoder architectures: training and evaluation"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string ckpt_path, input_path, output_path, plot_path;
  int beam = 1, max_len = 32;
  bool allow_unk = false, matrix = false, per_token = false;
  double tolerance = 1e-4;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) cmd->add_option("--config", opts.config_path, "configuration file");
    cmd->add_option("--set", opts.overrides, "override key=value (repeatable, last wins)");
    cmd->add_option("--seed", opts.seed, "override the seed");
    cmd->add_option("--workers", opts.workers, "worker cap (1 = bit-exact reproducible)");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a synthetic task");
  add_common(train_cmd, true);

  CLI::App* translate_cmd = app.add_subcommand("translate", "decode one sentence per line");
  translate_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  translate_cmd->add_option("--input", input_path, "input file, one sentence per line")
      ->required();
  translate_cmd->add_option("--output", output_path, "output file (default stdout)");
  translate_cmd->add_option("--beam", beam, "beam size");
  translate_cmd->add_option("--max-len", max_len, "maximum output length");
  translate_cmd->add_flag("--unk", allow_unk, "map out-of-vocabulary ids to the unk token");
  translate_cmd->add_option("--workers", opts.workers, "worker cap");

  CLI::App* score_cmd = app.add_subcommand("score", "score source<TAB>target pairs");
  score_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  score_cmd->add_option("--input", input_path, "TSV input file")->required();
  score_cmd->add_flag("--per-token", per_token, "also print per-token log probabilities");

  CLI::App* contrast_cmd =
      app.add_subcommand("contrast-eval", "accuracy on contrastive pairs, bucketed by distance");
  contrast_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  contrast_cmd->add_option("--input", input_path, "contrastive TSV file")->required();
  contrast_cmd->add_option("--plot-out", plot_path, "plot data output (default input + .plot)");
  contrast_cmd->add_option("--workers", opts.workers, "worker cap");

  CLI::App* params_cmd = app.add_subcommand("params", "parameter counts");
  add_common(params_cmd, true);
  params_cmd->add_flag("--matrix", matrix, "print the predefined architecture grid");

  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of a tiny instance");
  add_common(gradcheck_cmd, true);
  gradcheck_cmd->add_option("--tolerance", tolerance, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(opts);
    if (translate_cmd->parsed())
      return cmd_translate(ckpt_path, input_path, output_path, beam, max_len, allow_unk,
                           opts.workers);
    if (score_cmd->parsed()) return cmd_score(ckpt_path, input_path, per_token);
    if (contrast_cmd->parsed())
      return cmd_contrast_eval(ckpt_path, input_path, plot_path, opts.workers);
    if (params_cmd->parsed()) return cmd_params(opts, matrix);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(opts, tolerance);
  } catch (const ConfigError& e) {
    log_error("%s", e.what());
    return 2;
  } catch (const std::exception& e) {
    log_error("%s", e.what());
    return 1;
  }
  return 0;
}
