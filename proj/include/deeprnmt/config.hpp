#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deeprnmt/model.hpp"

namespace deeprnmt {

// Flat `section.key = value` configuration text with `#` comments. Values are
// kept verbatim so that parse -> serialize round-trips unchanged.
class RunConfig {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "seed",
        "model.source_vocab", "model.target_vocab", "model.layer_norm",
        "model.tied_embeddings", "model.output_inputs",
        "encoder.kind", "encoder.depth", "encoder.alt_layers", "encoder.uni_layers",
        "encoder.transition_depth", "encoder.hidden", "encoder.embedding",
        "decoder.kind", "decoder.variant", "decoder.depth", "decoder.transition_depth",
        "decoder.depths", "decoder.output_depth", "decoder.hidden", "decoder.embedding",
        "decoder.cgru_state_from_base",
        "task.kind", "task.vocab", "task.min_len", "task.max_len",
        "task.min_distance", "task.max_distance",
        "train.lr", "train.beta1", "train.beta2", "train.epsilon", "train.clip_norm",
        "train.batch_size", "train.valid_every", "train.patience", "train.max_steps",
        "train.target_ce", "train.data_size", "train.valid_size",
        "train.checkpoint", "train.log",
    };
    return keys;
  }

  static RunConfig parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      cfg.set(strip(s.substr(0, eq)), strip(s.substr(eq + 1)));
    }
    return cfg;
  }

  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value" as passed to --set; later writes win
  void set_assignment(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set(strip(kv.substr(0, eq)), strip(kv.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      size_t pos = 0;
      int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
    }
  }

  double get_real(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + it->second + "'");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::istringstream in(it->second);
    std::string piece;
    while (std::getline(in, piece, ',')) {
      piece = strip(piece);
      try {
        size_t pos = 0;
        out.push_back(std::stoi(piece, &pos));
        if (pos != piece.size()) throw std::invalid_argument("");
      } catch (...) {
        throw ConfigError("config key '" + key + "' expects a comma list of integers, got '" +
                          it->second + "'");
      }
    }
    if (out.empty())
      throw ConfigError("config key '" + key + "' expects a comma list of integers");
    return out;
  }

  // canonical form: sorted keys, one `key = value` per line
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

// ---- enum parsing ----

inline EncoderKind encoder_kind_from(const std::string& s) {
  if (s == "shallow") return EncoderKind::Shallow;
  if (s == "deep_transition") return EncoderKind::DeepTransition;
  if (s == "alternating") return EncoderKind::Alternating;
  if (s == "biunidirectional") return EncoderKind::Biunidirectional;
  if (s == "bideep") return EncoderKind::Bideep;
  if (s == "mixed") return EncoderKind::Mixed;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

inline DecoderKind decoder_kind_from(const std::string& s) {
  if (s == "baseline") return DecoderKind::Baseline;
  if (s == "deep_transition") return DecoderKind::DeepTransition;
  if (s == "stacked") return DecoderKind::Stacked;
  if (s == "bideep") return DecoderKind::Bideep;
  throw ConfigError("unknown decoder kind '" + s + "'");
}

inline CellVariant cell_variant_from(const std::string& s) {
  if (s == "gru") return CellVariant::Gru;
  if (s == "rgru") return CellVariant::Rgru;
  if (s == "cgru") return CellVariant::Cgru;
  if (s == "crgru") return CellVariant::Crgru;
  throw ConfigError("unknown decoder cell variant '" + s + "'");
}

// Builds and validates the model part of a run configuration.
inline ModelConfig model_config_from(const RunConfig& rc) {
  ModelConfig cfg;
  cfg.source_vocab = static_cast<int>(rc.get_int("model.source_vocab", 22));
  cfg.target_vocab = static_cast<int>(rc.get_int("model.target_vocab", 22));
  cfg.layer_norm = rc.get_bool("model.layer_norm", false);
  cfg.tied_embeddings = rc.get_bool("model.tied_embeddings", false);
  std::string oi = rc.get_string("model.output_inputs", "full");
  if (oi == "full")
    cfg.output_inputs = OutputInputs::Full;
  else if (oi == "state_only")
    cfg.output_inputs = OutputInputs::StateOnly;
  else
    throw ConfigError("model.output_inputs must be 'full' or 'state_only'");
  cfg.seed = static_cast<uint64_t>(rc.get_int("seed", 1));

  EncoderConfig& e = cfg.encoder;
  e.kind = encoder_kind_from(rc.get_string("encoder.kind", "shallow"));
  e.hidden = static_cast<int>(rc.get_int("encoder.hidden", 32));
  e.embedding = static_cast<int>(rc.get_int("encoder.embedding", 16));
  e.alt_layers = static_cast<int>(rc.get_int("encoder.alt_layers", 0));
  e.uni_layers = static_cast<int>(rc.get_int("encoder.uni_layers", 0));
  std::vector<int> enc_depths = rc.get_int_list("encoder.transition_depth");
  if (enc_depths.empty()) enc_depths = {1};
  e.transition_depths = enc_depths;
  if (rc.has("encoder.depth"))
    e.stack_depth = static_cast<int>(rc.get_int("encoder.depth", 1));
  else if (e.kind == EncoderKind::Bideep && enc_depths.size() > 1)
    e.stack_depth = static_cast<int>(enc_depths.size());
  else if (e.kind == EncoderKind::Mixed)
    e.stack_depth = e.alt_layers + e.uni_layers;
  else
    e.stack_depth = 1;

  DecoderConfig& d = cfg.decoder;
  d.kind = decoder_kind_from(rc.get_string("decoder.kind", "baseline"));
  d.variant = cell_variant_from(rc.get_string("decoder.variant", "gru"));
  d.hidden = static_cast<int>(rc.get_int("decoder.hidden", 32));
  d.embedding = static_cast<int>(rc.get_int("decoder.embedding", 16));
  d.output_depth = static_cast<int>(rc.get_int("decoder.output_depth", 1));
  d.cgru_state_from_base = rc.get_bool("decoder.cgru_state_from_base", false);
  std::vector<int> depths = rc.get_int_list("decoder.depths");
  if (depths.empty()) {
    if (rc.has("decoder.transition_depth"))
      depths = {static_cast<int>(rc.get_int("decoder.transition_depth", 2))};
    else
      depths = {2};
  }
  d.transition_depths = depths;
  if (rc.has("decoder.depth"))
    d.stack_depth = static_cast<int>(rc.get_int("decoder.depth", 1));
  else if (d.kind == DecoderKind::Bideep)
    d.stack_depth = static_cast<int>(depths.size());
  else
    d.stack_depth = 1;
  if (d.kind == DecoderKind::Stacked && !rc.has("decoder.depths") &&
      !rc.has("decoder.transition_depth"))
    d.transition_depths = {2};  // validate expands per variant

  return validate(cfg);
}

// Canonical text form of a validated model config; embedded in checkpoints.
inline std::string model_config_text(const ModelConfig& cfg) {
  RunConfig rc;
  auto join = [](const std::vector<int>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(xs[i]);
    }
    return s;
  };
  rc.set("seed", std::to_string(cfg.seed));
  rc.set("model.source_vocab", std::to_string(cfg.source_vocab));
  rc.set("model.target_vocab", std::to_string(cfg.target_vocab));
  rc.set("model.layer_norm", cfg.layer_norm ? "true" : "false");
  rc.set("model.tied_embeddings", cfg.tied_embeddings ? "true" : "false");
  rc.set("model.output_inputs",
         cfg.output_inputs == OutputInputs::Full ? "full" : "state_only");
  rc.set("encoder.kind", to_string(cfg.encoder.kind));
  rc.set("encoder.depth", std::to_string(cfg.encoder.stack_depth));
  rc.set("encoder.alt_layers", std::to_string(cfg.encoder.alt_layers));
  rc.set("encoder.uni_layers", std::to_string(cfg.encoder.uni_layers));
  rc.set("encoder.transition_depth", join(cfg.encoder.transition_depths));
  rc.set("encoder.hidden", std::to_string(cfg.encoder.hidden));
  rc.set("encoder.embedding", std::to_string(cfg.encoder.embedding));
  rc.set("decoder.kind", to_string(cfg.decoder.kind));
  rc.set("decoder.variant", to_string(cfg.decoder.variant));
  rc.set("decoder.depth", std::to_string(cfg.decoder.stack_depth));
  rc.set("decoder.depths", join(cfg.decoder.transition_depths));
  rc.set("decoder.output_depth", std::to_string(cfg.decoder.output_depth));
  rc.set("decoder.hidden", std::to_string(cfg.decoder.hidden));
  rc.set("decoder.embedding", std::to_string(cfg.decoder.embedding));
  rc.set("decoder.cgru_state_from_base", cfg.decoder.cgru_state_from_base ? "true" : "false");
  return rc.serialize();
}

inline ModelConfig model_config_parse(const std::string& text) {
  return model_config_from(RunConfig::parse_text(text));
}

}  // namespace deeprnmt
