#pragma once

#include <json.hpp>

#include "oxygan/network.hpp"

namespace oxygan::detail {

inline nlohmann::json network_config_to_json(const NetworkConfig& c) {
  return nlohmann::json{
      {"image_size", c.image_size},
      {"in_channels", c.in_channels},
      {"out_channels", c.out_channels},
      {"base_filters", c.base_filters},
      {"g_levels", c.g_levels},
      {"d_layers", c.d_layers},
      {"norm", c.norm_kind == NormKind::batch ? "batch" : "instance"},
      {"dropout_p", c.dropout_p},
      {"unconditional_d", c.unconditional_d},
  };
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.base_filters = j.value("base_filters", c.base_filters);
  c.g_levels = j.value("g_levels", c.g_levels);
  c.d_layers = j.value("d_layers", c.d_layers);
  const std::string norm = j.value("norm", "batch");
  if (norm == "batch")
    c.norm_kind = NormKind::batch;
  else if (norm == "instance")
    c.norm_kind = NormKind::instance;
  else
    throw ConfigError("network.norm: expected \"batch\" or \"instance\", got \"" + norm + "\"");
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.unconditional_d = j.value("unconditional_d", c.unconditional_d);
  return c;
}

}  // namespace oxygan::detail
