#include "afford3d/config.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

#include "afford3d/error.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/hash.hpp"

namespace afford3d {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::Config, where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) fail(ErrorKind::Config, where + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (protocol.thresholds.empty()) fail(ErrorKind::Config, "eval thresholds must not be empty");
}

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  RunConfig c;
  try {
    const json root = json::parse(json_text);
    reject_unknown(root, {"seed", "manifest", "train", "loss", "model", "eval"}, origin);
    read(root, "seed", c.train.seed);
    read(root, "manifest", c.manifest);
    if (root.contains("train")) {
      const json& t = root["train"];
      reject_unknown(t, {"learning_rate", "weight_decay", "warmup_ratio", "epochs", "steps", "batch_size", "beta1",
                         "beta2", "adam_eps"},
                     origin + ": train");
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "weight_decay", c.train.weight_decay);
      read(t, "warmup_ratio", c.train.warmup_ratio);
      read(t, "epochs", c.train.epochs);
      read(t, "steps", c.train.steps);
      read(t, "batch_size", c.train.batch_size);
      read(t, "beta1", c.train.beta1);
      read(t, "beta2", c.train.beta2);
      read(t, "adam_eps", c.train.adam_eps);
    }
    if (root.contains("loss")) {
      const json& l = root["loss"];
      reject_unknown(l, {"radius", "sigma_ratio", "epsilon", "bce_clamp", "lambda_ce", "lambda_bce", "lambda_spatial",
                         "lambda_iou"},
                     origin + ": loss");
      auto& loss = c.train.loss;
      read(l, "radius", loss.radius);
      read(l, "sigma_ratio", loss.sigma_ratio);
      read(l, "epsilon", loss.epsilon);
      read(l, "bce_clamp", loss.bce_clamp);
      read(l, "lambda_ce", loss.weights.ce);
      read(l, "lambda_bce", loss.weights.bce);
      read(l, "lambda_spatial", loss.weights.spatial);
      read(l, "lambda_iou", loss.weights.iou);
    }
    if (root.contains("model")) {
      const json& m = root["model"];
      reject_unknown(m, {"width", "video_width", "action_width", "tokens", "patch_k", "frames", "embedding_noise"},
                     origin + ": model");
      auto& model = c.train.model;
      read(m, "width", model.width);
      read(m, "video_width", model.video_width);
      read(m, "action_width", model.action_width);
      read(m, "tokens", model.tokens);
      read(m, "patch_k", model.patch_k);
      read(m, "frames", model.frames);
      read(m, "embedding_noise", model.embedding_noise);
    }
    if (root.contains("eval")) {
      const json& e = root["eval"];
      reject_unknown(e, {"bin_threshold", "thresholds"}, origin + ": eval");
      read(e, "bin_threshold", c.protocol.bin_threshold);
      read(e, "thresholds", c.protocol.thresholds);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, origin + ": " + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text_file(path), path.string());
}

std::string to_json_text(const RunConfig& c) {
  const auto& t = c.train;
  json root;
  root["seed"] = t.seed;
  root["manifest"] = c.manifest;
  root["train"] = {{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay},
                   {"warmup_ratio", t.warmup_ratio},   {"epochs", t.epochs},
                   {"steps", t.steps},                 {"batch_size", t.batch_size},
                   {"beta1", t.beta1},                 {"beta2", t.beta2},
                   {"adam_eps", t.adam_eps}};
  root["loss"] = {{"radius", t.loss.radius},
                  {"sigma_ratio", t.loss.sigma_ratio},
                  {"epsilon", t.loss.epsilon},
                  {"bce_clamp", t.loss.bce_clamp},
                  {"lambda_ce", t.loss.weights.ce},
                  {"lambda_bce", t.loss.weights.bce},
                  {"lambda_spatial", t.loss.weights.spatial},
                  {"lambda_iou", t.loss.weights.iou}};
  root["model"] = {{"width", t.model.width},       {"video_width", t.model.video_width},
                   {"action_width", t.model.action_width}, {"tokens", t.model.tokens},
                   {"patch_k", t.model.patch_k},   {"frames", t.model.frames},
                   {"embedding_noise", t.model.embedding_noise}};
  root["eval"] = {{"bin_threshold", c.protocol.bin_threshold}, {"thresholds", c.protocol.thresholds}};
  return root.dump(2) + "\n";
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(to_json_text(config)); }

std::string hash_hex(std::uint64_t hash) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace afford3d
