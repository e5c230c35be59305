#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/config.hpp"
#include "ppgn/data.hpp"
#include "ppgn/losses.hpp"
#include "ppgn/model.hpp"
#include "ppgn/pipeline/checkpoint.hpp"
#include "ppgn/pipeline/evaluate.hpp"
#include "ppgn/pipeline/run_config.hpp"

PPGN_NAMESPACE_BEGIN

/// Configured priors, or k-means over the training boxes when none are set.
std::vector<AnchorWh> resolve_anchors(const RunConfig& config, const World& world);

struct BatchLoss {
  nn::Tensor total;
  LossBreakdown breakdown;
};

/// Forward pass and loss for one batch. Must run under an active tape for
/// the result to be differentiable.
BatchLoss compute_batch_loss(PpgnModel& model, const Dataset& data,
                             std::span<const Sample> batch, const AnchorSet& anchors,
                             const RunConfig& config, bool training = true);

struct TrainResult {
  long steps = 0;
  long best_step = -1;
  EvalReport best;          // validation report of the best checkpoint
  EvalReport final_report;  // validation report after the last step
  LossBreakdown last_loss;
  std::vector<AnchorWh> priors;
};

struct TrainOptions {
  /// Human-readable progress; nullptr silences it.
  std::ostream* progress = nullptr;
  /// Write checkpoints, logs and the config to config.output_dir.
  bool write_outputs = true;
};

/// Trains from scratch. Files in output_dir: run_config.txt, metrics.jsonl
/// (one line per step), eval.jsonl, best.ckpt, final.ckpt. A non-finite loss
/// writes nan_dump.json and throws NumericError.
TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options = {});

/// Model, anchors and config rebuilt from a checkpoint.
struct LoadedModel {
  RunConfig config;
  Vocabulary vocabulary;
  AnchorSet anchors;
  PpgnModel model;
  long step = 0;
};

LoadedModel load_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

/// One metrics.jsonl line (no trailing newline).
std::string metrics_line(long step, double lr, const LossBreakdown& loss);

PPGN_NAMESPACE_END
