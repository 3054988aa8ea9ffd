#include "mce/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace mce {

namespace {

using nlohmann::json;

json to_json_tree(const RunConfig& c) {
  json j;
  j["dataset"] = {{"image_size", c.dataset.image_size},
                  {"samples_per_class", c.dataset.samples_per_class},
                  {"distractors_min", c.dataset.distractors_min},
                  {"distractors_max", c.dataset.distractors_max},
                  {"noise_level", c.dataset.noise_level},
                  {"scale_min", c.dataset.scale_min},
                  {"scale_max", c.dataset.scale_max},
                  {"seed", c.dataset.seed}};
  j["model"] = {{"widths", {c.model.widths[0], c.model.widths[1], c.model.widths[2]}},
                {"token_dim", c.model.token_dim},
                {"heads", c.model.heads},
                {"cross_channels", c.model.cross_channels},
                {"decoder_channels", c.model.decoder_channels},
                {"output", output_mode_name(c.model.output)},
                {"multi_level", c.model.multi_level},
                {"use_cross", c.model.use_cross},
                {"use_sim", c.model.use_sim},
                {"backbone_trainable", c.model.backbone_trainable}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"iterations", c.optimizer.iterations},
                    {"batch_episodes", c.optimizer.batch_episodes}};
  j["eval"] = {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}, {"jobs", c.eval.jobs}};
  j["run"] = {{"fold", c.run.fold}, {"k_shot", c.run.k_shot}, {"seed", c.run.seed}};
  j["ablate"] = {{"seeds", c.ablate.seeds}};
  return j;
}

template <typename T>
void read_field(const json& section, const std::string& path, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for " + path + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& section, const std::string& path,
                    const std::set<std::string>& known) {
  if (!section.is_object()) throw ConfigError("config: " + path + " must be an object");
  for (auto it = section.begin(); it != section.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown key " + path + "." + it.key());
    }
  }
}

void from_json_tree(const json& j, RunConfig& c) {
  reject_unknown(j, "<root>", {"dataset", "model", "optimizer", "eval", "run", "ablate"});
  if (j.contains("dataset")) {
    const auto& s = j.at("dataset");
    reject_unknown(s, "dataset",
                   {"image_size", "samples_per_class", "distractors_min", "distractors_max",
                    "noise_level", "scale_min", "scale_max", "seed"});
    read_field(s, "dataset", "image_size", c.dataset.image_size);
    read_field(s, "dataset", "samples_per_class", c.dataset.samples_per_class);
    read_field(s, "dataset", "distractors_min", c.dataset.distractors_min);
    read_field(s, "dataset", "distractors_max", c.dataset.distractors_max);
    read_field(s, "dataset", "noise_level", c.dataset.noise_level);
    read_field(s, "dataset", "scale_min", c.dataset.scale_min);
    read_field(s, "dataset", "scale_max", c.dataset.scale_max);
    read_field(s, "dataset", "seed", c.dataset.seed);
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    reject_unknown(s, "model",
                   {"widths", "token_dim", "heads", "cross_channels", "decoder_channels",
                    "output", "multi_level", "use_cross", "use_sim", "backbone_trainable"});
    if (s.contains("widths")) {
      std::vector<int> w;
      read_field(s, "model", "widths", w);
      if (w.size() != 3) throw ConfigError("config: model.widths must list 3 level widths");
      c.model.widths = {w[0], w[1], w[2]};
    }
    read_field(s, "model", "token_dim", c.model.token_dim);
    read_field(s, "model", "heads", c.model.heads);
    read_field(s, "model", "cross_channels", c.model.cross_channels);
    read_field(s, "model", "decoder_channels", c.model.decoder_channels);
    if (s.contains("output")) {
      std::string name;
      read_field(s, "model", "output", name);
      c.model.output = output_mode_from_name(name);
    }
    read_field(s, "model", "multi_level", c.model.multi_level);
    read_field(s, "model", "use_cross", c.model.use_cross);
    read_field(s, "model", "use_sim", c.model.use_sim);
    read_field(s, "model", "backbone_trainable", c.model.backbone_trainable);
  }
  if (j.contains("optimizer")) {
    const auto& s = j.at("optimizer");
    reject_unknown(s, "optimizer", {"lr", "momentum", "weight_decay", "iterations", "batch_episodes"});
    read_field(s, "optimizer", "lr", c.optimizer.lr);
    read_field(s, "optimizer", "momentum", c.optimizer.momentum);
    read_field(s, "optimizer", "weight_decay", c.optimizer.weight_decay);
    read_field(s, "optimizer", "iterations", c.optimizer.iterations);
    read_field(s, "optimizer", "batch_episodes", c.optimizer.batch_episodes);
  }
  if (j.contains("eval")) {
    const auto& s = j.at("eval");
    reject_unknown(s, "eval", {"episodes", "seed", "jobs"});
    read_field(s, "eval", "episodes", c.eval.episodes);
    read_field(s, "eval", "seed", c.eval.seed);
    read_field(s, "eval", "jobs", c.eval.jobs);
  }
  if (j.contains("run")) {
    const auto& s = j.at("run");
    reject_unknown(s, "run", {"fold", "k_shot", "seed"});
    read_field(s, "run", "fold", c.run.fold);
    read_field(s, "run", "k_shot", c.run.k_shot);
    read_field(s, "run", "seed", c.run.seed);
  }
  if (j.contains("ablate")) {
    const auto& s = j.at("ablate");
    reject_unknown(s, "ablate", {"seeds"});
    read_field(s, "ablate", "seeds", c.ablate.seeds);
  }
}

json parse_override_value(const std::string& text) {
  json v = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(text);  // bare strings like "fusion"
  return v;
}

}  // namespace

std::string output_mode_name(CrossOutput mode) {
  switch (mode) {
    case CrossOutput::kFusion:
      return "fusion";
    case CrossOutput::kQueryOnly:
      return "query_only";
    case CrossOutput::kSupportOnly:
      return "support_only";
  }
  return "fusion";
}

CrossOutput output_mode_from_name(const std::string& name) {
  if (name == "fusion") return CrossOutput::kFusion;
  if (name == "query_only") return CrossOutput::kQueryOnly;
  if (name == "support_only") return CrossOutput::kSupportOnly;
  throw ConfigError("config: model.output must be fusion, query_only, or support_only; got \"" +
                    name + "\"");
}

RunConfig load_run_config(const std::string& path_or_empty,
                          const std::vector<std::string>& overrides) {
  json tree = json::object();
  if (!path_or_empty.empty()) {
    std::ifstream in(path_or_empty);
    if (!in) throw IoError("cannot open config file " + path_or_empty);
    try {
      in >> tree;
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path_or_empty + " is not valid JSON: " + e.what());
    }
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config: override \"" + ov + "\" is not of the form key=value");
    }
    const std::string key = ov.substr(0, eq);
    json* node = &tree;
    size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot - start);
      if (part.empty()) throw ConfigError("config: override key \"" + key + "\" is malformed");
      if (dot == std::string::npos) {
        (*node)[part] = parse_override_value(ov.substr(eq + 1));
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  RunConfig cfg;
  from_json_tree(tree, cfg);
  validate(cfg);
  return cfg;
}

std::string canonical_json(const RunConfig& cfg) {
  // nlohmann objects keep keys sorted, so dump() is canonical
  return to_json_tree(cfg).dump();
}

std::uint64_t config_fingerprint(const RunConfig& cfg) { return fnv1a(canonical_json(cfg)); }

void validate(const RunConfig& cfg) {
  if (cfg.dataset.image_size % 4 != 0 || cfg.dataset.image_size < 16) {
    throw ConfigError("config: dataset.image_size must be >= 16 and divisible by 4");
  }
  if (cfg.dataset.samples_per_class < cfg.run.k_shot + 1) {
    throw ConfigError("config: dataset.samples_per_class must exceed run.k_shot");
  }
  for (int w : cfg.model.widths) {
    if (w < 8) throw ConfigError("config: model.widths entries must be >= 8");
  }
  if (cfg.model.heads < 1 || cfg.model.token_dim % cfg.model.heads != 0) {
    throw ConfigError("config: model.token_dim must be divisible by model.heads");
  }
  if (cfg.model.cross_channels < 1 || cfg.model.decoder_channels < 1) {
    throw ConfigError("config: channel counts must be positive");
  }
  if (cfg.optimizer.lr <= 0) throw ConfigError("config: optimizer.lr must be positive");
  if (cfg.optimizer.iterations < 0) throw ConfigError("config: optimizer.iterations must be >= 0");
  if (cfg.optimizer.batch_episodes < 1) {
    throw ConfigError("config: optimizer.batch_episodes must be >= 1");
  }
  if (cfg.eval.episodes < 1) throw ConfigError("config: eval.episodes must be >= 1");
  if (cfg.eval.jobs < 1) throw ConfigError("config: eval.jobs must be >= 1");
  if (cfg.run.fold < 0 || cfg.run.fold > 3) throw ConfigError("config: run.fold must be in [0,3]");
  if (cfg.run.k_shot < 1) throw ConfigError("config: run.k_shot must be >= 1");
  if (cfg.ablate.seeds.empty()) throw ConfigError("config: ablate.seeds must be non-empty");
}

}  // namespace mce
