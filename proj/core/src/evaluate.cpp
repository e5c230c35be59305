#include "ppgn/pipeline/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN

using nn::Tensor;

EvalReport score_proposals(std::span<const std::vector<Proposal>> proposals,
                           std::span<const Box> ground_truth, const std::vector<int>& k_list,
                           int primary_k) {
  if (proposals.size() != ground_truth.size()) {
    throw ShapeError("score_proposals: " + std::to_string(proposals.size()) + " lists for " +
                     std::to_string(ground_truth.size()) + " boxes");
  }
  EvalReport r;
  r.primary_k = primary_k;
  r.num_samples = proposals.size();
  std::map<int, std::size_t> hits;
  for (int k : k_list) hits[k] = 0;
  std::size_t top1 = 0;
  double emitted = 0.0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto& list = proposals[i];
    // Rank of the first hit; npos when nothing hits.
    std::size_t first_hit = std::string::npos;
    for (std::size_t j = 0; j < list.size(); ++j) {
      if (is_hit(list[j].box, ground_truth[i])) {
        first_hit = j;
        break;
      }
    }
    if (first_hit == 0) ++top1;
    for (auto& [k, count] : hits) {
      if (first_hit != std::string::npos && first_hit < static_cast<std::size_t>(k)) ++count;
    }
    emitted += static_cast<double>(std::min(list.size(), static_cast<std::size_t>(primary_k)));
  }
  const double n = std::max<std::size_t>(proposals.size(), 1);
  r.acc_at_05 = static_cast<double>(top1) / n;
  for (const auto& [k, count] : hits) r.recall_at_k[k] = static_cast<double>(count) / n;
  r.mean_proposals = emitted / n;
  return r;
}

Tensor make_image_batch(const Dataset& data, std::span<const Sample> samples) {
  const auto s = static_cast<std::size_t>(data.input_size());
  const std::size_t per = s * s * 3;
  std::vector<Scalar> values(samples.size() * per);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto& px = data.image(samples[b].scene).pixels;
    std::copy(px.begin(), px.end(), values.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return Tensor::from({samples.size(), s, s, 3}, std::move(values));
}

std::vector<std::vector<int>> make_token_batch(const Dataset& data, std::span<const Sample> samples) {
  std::vector<std::vector<int>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(data.token_ids(s));
  return out;
}

std::vector<std::vector<Proposal>> propose(PpgnModel& model, const Dataset& data,
                                           std::span<const Sample> samples,
                                           const AnchorSet& anchors, int k, int batch_size) {
  std::vector<std::vector<Proposal>> out;
  out.reserve(samples.size());
  const std::size_t step = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += step) {
    const auto chunk = samples.subspan(start, std::min(step, samples.size() - start));
    const Tensor raw = model.forward(make_image_batch(data, chunk), make_token_batch(data, chunk),
                                     /*training=*/false);
    const std::size_t per = anchors.size() * 5;
    if (raw.numel() != chunk.size() * per) {
      throw ShapeError("model output does not match the anchor set");
    }
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      out.push_back(select_proposals(raw.data().subspan(b * per, per), anchors, k));
    }
  }
  return out;
}

EvalReport evaluate(PpgnModel& model, const Dataset& data, Split split, const AnchorSet& anchors,
                    const EvalOptions& options) {
  auto samples = data.samples(split);
  if (samples.empty()) {
    throw InvalidInputError(std::string("split '") + split_name(split) + "' has no samples");
  }
  if (options.max_samples > 0 && samples.size() > options.max_samples) {
    samples.resize(options.max_samples);
  }
  int max_k = options.primary_k;
  for (int k : options.k_list) max_k = std::max(max_k, k);
  const auto proposals = propose(model, data, samples, anchors, max_k, options.batch_size);
  std::vector<Box> gts;
  gts.reserve(samples.size());
  for (const auto& s : samples) gts.push_back(data.target_box(s));
  EvalReport r = score_proposals(proposals, gts, options.k_list, options.primary_k);
  r.split = split_name(split);
  return r;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  doc["split"] = report.split;
  doc["ranking"] = "top-1 confidence (surrogate for a second-stage ranker)";
  doc["num_samples"] = report.num_samples;
  doc["acc_at_05"] = report.acc_at_05;
  nlohmann::ordered_json recall = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.recall_at_k) recall[std::to_string(k)] = v;
  doc["recall_at_k"] = recall;
  doc["primary_k"] = report.primary_k;
  doc["mean_proposals"] = report.mean_proposals;
  return doc.dump(2) + "\n";
}

std::string eval_report_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  out << "split " << report.split << ", " << report.num_samples
      << " phrases; acc@0.5 ranks by top-1 confidence\n";
  std::snprintf(line, sizeof(line), "  %-12s %8.4f\n", "acc@0.5", report.acc_at_05);
  out << line;
  for (const auto& [k, v] : report.recall_at_k) {
    std::snprintf(line, sizeof(line), "  recall@%-5d %8.4f\n", k, v);
    out << line;
  }
  std::snprintf(line, sizeof(line), "  %-12s %8.4f (K=%d)\n", "mean props", report.mean_proposals,
                report.primary_k);
  out << line;
  return out.str();
}

PhraseDependence phrase_dependence(PpgnModel& model, const Dataset& data, Split split,
                                   const AnchorSet& anchors) {
  std::vector<Sample> pairs;
  const auto& scenes = data.world().scenes;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scenes[s].split != split || scenes[s].objects.size() < 2) continue;
    const auto& phrases = scenes[s].phrases;
    // First two phrases that name different objects.
    for (std::size_t a = 0; a < phrases.size(); ++a) {
      const auto b = std::find_if(phrases.begin() + static_cast<std::ptrdiff_t>(a) + 1, phrases.end(),
                                  [&](const Phrase& p) { return p.target != phrases[a].target; });
      if (b != phrases.end()) {
        pairs.push_back({s, a});
        pairs.push_back({s, static_cast<std::size_t>(b - phrases.begin())});
        break;
      }
    }
  }
  const auto tops = propose(model, data, pairs, anchors, 1);
  PhraseDependence out;
  for (std::size_t i = 0; i + 1 < tops.size(); i += 2) {
    ++out.scenes_checked;
    if (tops[i].empty() || tops[i + 1].empty() ||
        iou(tops[i].front().box, tops[i + 1].front().box) < kHitIou) {
      ++out.changed;
    }
  }
  return out;
}

PPGN_NAMESPACE_END
