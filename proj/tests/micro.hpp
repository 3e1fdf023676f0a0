#pragma once

// Tiny architectures for float64 finite-difference checks.

#include "slyk/pmn.hpp"

namespace slyk::testing {

inline net::PairConfig micro_pair_config() {
  net::PairConfig cfg;
  cfg.encoder.face_h = 8;
  cfg.encoder.face_w = 8;
  cfg.encoder.backbone.convs = {{4, 8}, 3, 2, 1};
  cfg.encoder.global_heads = 2;
  cfg.encoder.local.convs = {{4}, 3, 2, 1};
  cfg.encoder.local.heads = 2;
  cfg.encoder.local.out_dim = 4;
  cfg.encoder.local.patch_h = 6;
  cfg.encoder.local.patch_w = 10;
  cfg.heads.projection = {12, 12, 6};
  cfg.heads.prediction = {6, 12, 6};
  return cfg;
}

inline pmn::ModelConfig micro_model_config() {
  pmn::ModelConfig cfg;
  cfg.encoder = micro_pair_config().encoder;
  cfg.face_feature_dim = 6;
  cfg.bottleneck = {{4, 4, 4}, 3, 2, 1, 5, true};
  cfg.head.hidden = {8, 6};
  cfg.head.dropout = 0.0;
  return cfg;
}

}  // namespace slyk::testing
