#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/config.hpp"
#include "ppgn/data.hpp"
#include "ppgn/model.hpp"
#include "ppgn/numerics/tensor.hpp"
#include "ppgn/pipeline/proposals.hpp"

PPGN_NAMESPACE_BEGIN

/// IoU threshold for a proposal to count as correct (inclusive).
inline constexpr double kHitIou = 0.5;

inline bool is_hit(const Box& predicted, const Box& gt) { return iou(predicted, gt) >= kHitIou; }

/// acc@0.5 ranks by top-1 confidence, standing in for a second-stage
/// proposal ranker.
struct EvalReport {
  std::string split;
  int primary_k = 7;
  double acc_at_05 = 0.0;
  std::map<int, double> recall_at_k;
  std::size_t num_samples = 0;
  /// Mean number of proposals left after filtering at primary_k.
  double mean_proposals = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalOptions {
  std::vector<int> k_list{1, 4, 7, 10, 13, 16};
  int primary_k = 7;
  int batch_size = 32;
  /// Evaluate only the first max_samples phrases (0 = all).
  std::size_t max_samples = 0;
};

/// Scores ranked proposal lists against ground truth.
EvalReport score_proposals(std::span<const std::vector<Proposal>> proposals,
                           std::span<const Box> ground_truth, const std::vector<int>& k_list,
                           int primary_k);

/// Letterboxed images of the given samples as a [B, S, S, 3] tensor.
nn::Tensor make_image_batch(const Dataset& data, std::span<const Sample> samples);
std::vector<std::vector<int>> make_token_batch(const Dataset& data, std::span<const Sample> samples);

/// Eval-mode forward pass and proposal selection for each sample.
std::vector<std::vector<Proposal>> propose(PpgnModel& model, const Dataset& data,
                                           std::span<const Sample> samples,
                                           const AnchorSet& anchors, int k, int batch_size = 32);

EvalReport evaluate(PpgnModel& model, const Dataset& data, Split split, const AnchorSet& anchors,
                    const EvalOptions& options = {});

std::string eval_report_json(const EvalReport& report);
/// Aligned-column summary for terminals.
std::string eval_report_table(const EvalReport& report);

struct PhraseDependence {
  std::size_t scenes_checked = 0;
  std::size_t changed = 0;
  double fraction() const {
    return scenes_checked == 0 ? 0.0 : static_cast<double>(changed) / scenes_checked;
  }
};

/// For every multi-object scene of the split, compares the top-1 proposals
/// of two phrases naming different objects. A change means the two boxes
/// overlap with IoU below 0.5.
PhraseDependence phrase_dependence(PpgnModel& model, const Dataset& data, Split split,
                                   const AnchorSet& anchors);

PPGN_NAMESPACE_END
