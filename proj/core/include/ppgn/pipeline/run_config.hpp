#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"
#include "ppgn/model.hpp"

PPGN_NAMESPACE_BEGIN

enum class LossVariant { kKld, kSoftmax };

const char* loss_variant_name(LossVariant v);
LossVariant parse_loss_variant(const std::string& name);

/// Training and evaluation settings. Defaults are the reference recipe
/// where one exists (eta, gamma, K, batch size, learning rate, divisor).
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string output_dir;
  LossVariant loss = LossVariant::kKld;
  double eta = 0.7;
  double gamma = 1.0;
  int k = 7;
  int batch_size = 32;
  double base_lr = 1e-4;
  long max_steps = 5000;
  double backbone_lr_divisor = 10.0;
  std::vector<int> scales{4, 8, 16};
  int channels = 64;
  int embed_dim = 32;
  int image_size = 128;
  int anchors_per_cell = 3;
  /// Empty means "recompute from the training split".
  std::vector<AnchorWh> anchor_priors;
  std::uint64_t anchor_seed = 0;
  long eval_every = 500;
  /// Cap on validation phrases per periodic evaluation (0 = all).
  int eval_max_samples = 0;
  std::vector<int> eval_k_list{1, 4, 7, 10, 13, 16};

  /// Throws InvalidInputError on out-of-range values.
  void validate() const;
  ModelConfig model_config(int vocab_size) const;
};

/// Flat "key = value" text; '#' starts a comment. Unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical dump, re-parseable by parse_run_config. Anchor priors are
/// written as "w,h" pairs with six decimals.
std::string run_config_to_text(const RunConfig& config);
/// FNV-1a over the canonical dump.
std::uint64_t config_fingerprint(const RunConfig& config);

PPGN_NAMESPACE_END
