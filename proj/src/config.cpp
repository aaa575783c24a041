#include "frozen_align/config.hpp"

#include <set>

#include "frozen_align/error.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw Error(ErrorCode::ParseError, std::string("unknown key '") + k + "' in " + what);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const ProjectionConfig& c) {
  return {{"input_dim", c.input_dim},     {"hidden_dim", c.hidden_dim}, {"output_dim", c.output_dim},
          {"num_layers", c.num_layers},   {"dropout", c.dropout_p},     {"seed", c.seed},
          {"bn_eps", c.bn_eps},           {"bn_momentum", c.bn_momentum}, {"batch_norm", c.batch_norm}};
}

json to_json(const AdamConfig& c) {
  return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}};
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"val_fraction", c.val_fraction},
          {"val_interval", c.val_interval},
          {"early_stop_patience", c.early_stop_patience},
          {"tau", c.tau},
          {"clip_norm", c.clip_norm},
          {"seed", c.seed},
          {"optimizer", to_json(c.optimizer)},
          {"projection", to_json(c.projection)}};
}

void update_from_json(ProjectionConfig& c, const json& j) {
  reject_unknown(j,
                 {"input_dim", "hidden_dim", "output_dim", "num_layers", "dropout", "seed", "bn_eps", "bn_momentum",
                  "batch_norm"},
                 "projection");
  read(j, "input_dim", c.input_dim);
  read(j, "hidden_dim", c.hidden_dim);
  read(j, "output_dim", c.output_dim);
  read(j, "num_layers", c.num_layers);
  read(j, "dropout", c.dropout_p);
  read(j, "seed", c.seed);
  read(j, "bn_eps", c.bn_eps);
  read(j, "bn_momentum", c.bn_momentum);
  read(j, "batch_norm", c.batch_norm);
}

void update_from_json(AdamConfig& c, const json& j) {
  reject_unknown(j, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
  read(j, "lr", c.lr);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "eps", c.eps);
  read(j, "weight_decay", c.weight_decay);
}

void update_from_json(TrainConfig& c, const json& j) {
  reject_unknown(j,
                 {"batch_size", "max_steps", "val_fraction", "val_interval", "early_stop_patience", "tau", "clip_norm",
                  "seed", "optimizer", "projection"},
                 "train");
  read(j, "batch_size", c.batch_size);
  read(j, "max_steps", c.max_steps);
  read(j, "val_fraction", c.val_fraction);
  read(j, "val_interval", c.val_interval);
  read(j, "early_stop_patience", c.early_stop_patience);
  read(j, "tau", c.tau);
  read(j, "clip_norm", c.clip_norm);
  read(j, "seed", c.seed);
  if (j.contains("optimizer")) update_from_json(c.optimizer, j.at("optimizer"));
  if (j.contains("projection")) update_from_json(c.projection, j.at("projection"));
}

std::string config_digest(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace frozen_align
