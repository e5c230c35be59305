#include "ppgn/pipeline/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "ppgn/errors.hpp"
#include "ppgn/numerics/ops.hpp"
#include "ppgn/numerics/optim.hpp"
#include "ppgn/rng.hpp"

PPGN_NAMESPACE_BEGIN

using nn::Tensor;

std::vector<AnchorWh> resolve_anchors(const RunConfig& config, const World& world) {
  const std::size_t needed = config.scales.size() * static_cast<std::size_t>(config.anchors_per_cell);
  if (!config.anchor_priors.empty()) {
    if (config.anchor_priors.size() != needed) {
      throw InvalidInputError("config lists " + std::to_string(config.anchor_priors.size()) +
                              " anchor priors, expected " + std::to_string(needed));
    }
    return config.anchor_priors;
  }
  const auto sizes = training_box_sizes(world);
  return kmeans_anchors(sizes, static_cast<int>(needed), config.anchor_seed);
}

BatchLoss compute_batch_loss(PpgnModel& model, const Dataset& data, std::span<const Sample> batch,
                             const AnchorSet& anchors, const RunConfig& config, bool training) {
  const Tensor raw =
      model.forward(make_image_batch(data, batch), make_token_batch(data, batch), training);
  std::vector<AnchorMatch> matches;
  matches.reserve(batch.size());
  for (const auto& s : batch) matches.push_back(match_anchors(data.target_box(s), anchors, config.eta));

  const Tensor logits = confidence_logits(raw);
  Tensor conf;
  if (config.loss == LossVariant::kKld) {
    std::vector<SmoothLabel> labels;
    labels.reserve(matches.size());
    for (const auto& m : matches) labels.push_back(m.label);
    conf = kld_conf_loss(logits, labels);
  } else {
    std::vector<std::size_t> targets;
    targets.reserve(matches.size());
    for (const auto& m : matches) targets.push_back(m.best_anchor);
    conf = softmax_conf_loss(logits, targets);
  }
  const Tensor coord = coord_loss(raw, matches);
  BatchLoss out{total_loss(conf, coord, config.gamma), {}};
  out.breakdown.conf = conf.item();
  out.breakdown.coord = coord.item();
  out.breakdown.total = out.total.item();
  for (const auto& m : matches) out.breakdown.matched_anchor_count += m.matched.size();
  return out;
}

std::string metrics_line(long step, double lr, const LossBreakdown& loss) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["lr"] = lr;
  j["conf"] = loss.conf;
  j["coord"] = loss.coord;
  j["total"] = loss.total;
  j["matched_anchor_count"] = loss.matched_anchor_count;
  return j.dump();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void write_nan_dump(const std::filesystem::path& path, long step, double lr, const Dataset& data,
                    std::span<const Sample> batch, const LossBreakdown& loss) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["lr"] = lr;
  j["conf"] = std::isfinite(loss.conf) ? nlohmann::json(loss.conf) : nlohmann::json("non-finite");
  j["coord"] = std::isfinite(loss.coord) ? nlohmann::json(loss.coord) : nlohmann::json("non-finite");
  auto& samples = j["batch"] = nlohmann::ordered_json::array();
  for (const auto& s : batch) {
    const auto& scene = data.world().scenes[s.scene];
    const Box gt = data.target_box(s);
    nlohmann::ordered_json item;
    item["scene_id"] = scene.id;
    item["phrase"] = scene.phrases[s.phrase].tokens;
    item["target"] = std::vector<double>{gt.cx(), gt.cy(), gt.w(), gt.h()};
    samples.push_back(std::move(item));
  }
  std::ofstream f(path);
  if (f) f << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& options) {
  config.validate();
  if (data.input_size() != config.image_size) {
    throw InvalidInputError("dataset was prepared at " + std::to_string(data.input_size()) +
                            " px but the config asks for " + std::to_string(config.image_size));
  }
  TrainResult result;
  result.priors = resolve_anchors(config, data.world());
  const AnchorSet anchors = build_anchor_set(result.priors, config.scales, config.anchors_per_cell);

  // Where outputs land is not part of the model's identity.
  RunConfig resolved = config;
  resolved.anchor_priors = result.priors;
  resolved.output_dir.clear();
  const std::string config_text = run_config_to_text(resolved);
  const std::uint64_t fingerprint = config_fingerprint(resolved);
  const auto& vocab = data.vocabulary();

  const std::filesystem::path out_dir = config.output_dir;
  std::ofstream metrics, evals;
  if (options.write_outputs) {
    if (out_dir.empty()) throw InvalidInputError("output_dir is not set");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    open_out(out_dir / "run_config.txt") << config_text;
    metrics = open_out(out_dir / "metrics.jsonl");
    evals = open_out(out_dir / "eval.jsonl");
  }

  PpgnModel model(config.model_config(vocab.size()));
  nn::RmsProp optim(model.param_groups(config.backbone_lr_divisor));

  auto train_samples = data.samples(Split::kTrain);
  if (train_samples.empty()) throw InvalidInputError("training split is empty");
  const std::size_t bs = std::min<std::size_t>(config.batch_size, train_samples.size());
  Rng order_rng(config.seed);
  order_rng.shuffle(train_samples.begin(), train_samples.end());
  std::size_t cursor = 0;

  EvalOptions eval_opts;
  eval_opts.k_list = config.eval_k_list;
  eval_opts.primary_k = config.k;
  eval_opts.max_samples = static_cast<std::size_t>(config.eval_max_samples);
  const bool have_val = !data.samples(Split::kVal).empty();
  double best_recall = -1.0;

  auto save = [&](const std::string& file, long step) {
    if (!options.write_outputs) return;
    save_checkpoint(capture_checkpoint(model, fingerprint, step, config_text, result.priors,
                                       vocab.words()),
                    out_dir / file);
  };

  std::vector<Sample> batch;
  for (long step = 0; step < config.max_steps; ++step) {
    batch.clear();
    while (batch.size() < bs) {
      if (cursor == train_samples.size()) {
        order_rng.shuffle(train_samples.begin(), train_samples.end());
        cursor = 0;
      }
      batch.push_back(train_samples[cursor++]);
    }
    // Final step gets lr 0; the schedule runs over max_steps - 1 intervals.
    const double lr = nn::poly_lr(step, std::max<long>(config.max_steps - 1, 1), config.base_lr);

    LossBreakdown loss;
    {
      nn::Tape tape;
      nn::TapeScope scope(tape);
      const auto abort = [&](const std::string& what) {
        if (options.write_outputs) write_nan_dump(out_dir / "nan_dump.json", step, lr, data, batch, loss);
        throw NumericError(what + " at step " + std::to_string(step) +
                           (options.write_outputs ? "; batch written to nan_dump.json" : ""));
      };
      BatchLoss bl;
      try {
        bl = compute_batch_loss(model, data, batch, anchors, config, true);
      } catch (const NumericError& e) {
        loss.conf = loss.coord = loss.total = std::numeric_limits<double>::quiet_NaN();
        abort(e.what());
      }
      loss = bl.breakdown;
      if (!std::isfinite(loss.total)) abort("non-finite loss");
      optim.zero_grad();
      tape.backward(bl.total);
    }
    optim.step(lr);
    result.last_loss = loss;
    result.steps = step + 1;
    if (metrics) metrics << metrics_line(step, lr, loss) << "\n";

    const bool last = step + 1 == config.max_steps;
    const bool periodic = config.eval_every > 0 && (step + 1) % config.eval_every == 0;
    if (options.progress && (periodic || last || step % 50 == 0)) {
      *options.progress << "step " << step << " lr " << lr << " conf " << loss.conf << " coord "
                        << loss.coord << " total " << loss.total << "\n";
    }
    if (have_val && (periodic || last)) {
      EvalReport report = evaluate(model, data, Split::kVal, anchors, eval_opts);
      if (evals) {
        auto j = nlohmann::json::parse(eval_report_json(report));
        j["step"] = step;
        evals << j.dump() << "\n";
      }
      if (options.progress) {
        *options.progress << "  val recall@" << config.k << " " << report.recall_at_k[config.k]
                          << " acc@0.5 " << report.acc_at_05 << "\n";
      }
      const double recall = report.recall_at_k[config.k];
      if (recall > best_recall) {
        best_recall = recall;
        result.best = report;
        result.best_step = step;
        save("best.ckpt", step + 1);
      }
      if (last) result.final_report = report;
    }
  }
  save("final.ckpt", result.steps);
  if (!have_val) save("best.ckpt", result.steps);
  return result;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  RunConfig config = parse_run_config(ckpt.config_text);
  if (config_fingerprint(config) != ckpt.config_fingerprint) {
    throw ConsistencyError("checkpoint config does not match its fingerprint");
  }
  config.anchor_priors = ckpt.anchor_priors;
  Vocabulary vocab(ckpt.vocabulary);
  AnchorSet anchors = build_anchor_set(ckpt.anchor_priors, config.scales, config.anchors_per_cell);
  PpgnModel model(config.model_config(vocab.size()));
  restore_checkpoint(model, ckpt);
  return LoadedModel{std::move(config), std::move(vocab), std::move(anchors), std::move(model),
                     ckpt.step};
}

LoadedModel load_model(const std::filesystem::path& path) { return load_model(load_checkpoint(path)); }

PPGN_NAMESPACE_END
