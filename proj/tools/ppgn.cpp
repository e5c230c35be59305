// Command-line front end: data generation, anchors, training, evaluation and
// proposal dumps.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "ppgn/anchors.hpp"
#include "ppgn/data.hpp"
#include "ppgn/errors.hpp"
#include "ppgn/pipeline/evaluate.hpp"
#include "ppgn/pipeline/run_config.hpp"
#include "ppgn/pipeline/train.hpp"

namespace fs = std::filesystem;
using namespace ppgn;

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

Split split_arg(const std::string& s) { return parse_split(s); }

nlohmann::ordered_json proposal_json(const Proposal& p, int rank, const LetterboxTransform& tf) {
  nlohmann::ordered_json j;
  j["rank"] = rank;
  j["confidence"] = p.confidence;
  j["anchor"] = p.anchor;
  j["box"] = {p.box.cx(), p.box.cy(), p.box.w(), p.box.h()};
  const auto px = tf.to_source_pixels(p.box);
  j["pixels_xyxy"] = {px.x1, px.y1, px.x2, px.y2};
  return j;
}

int run_gen_data(int scenes, std::uint64_t seed, const std::string& out, int image_size) {
  WorldOptions opts;
  opts.image_size = image_size;
  const World world = generate_world(scenes, seed, opts);
  write_world(world, out);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : world.scenes) ++counts[static_cast<int>(s.split)];
  std::cout << "wrote " << world.scenes.size() << " scenes to " << out << " (train " << counts[0]
            << ", val " << counts[1] << ", test " << counts[2] << ")\n";
  return 0;
}

int run_anchors(const std::string& dir, int k, std::uint64_t seed) {
  const World world = read_world(dir);
  const auto sizes = training_box_sizes(world);
  const auto priors = kmeans_anchors(sizes, k, seed);
  std::cout << "# " << priors.size() << " priors from " << sizes.size() << " training boxes\n";
  std::cout << "anchor_priors = ";
  for (std::size_t i = 0; i < priors.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%.6f,%.6f", i ? "; " : "", priors[i].w, priors[i].h);
    std::cout << buf;
  }
  std::cout << "\nmean_iou = " << 1.0 - kmeans_objective(sizes, priors)
            << "\n";
  return 0;
}

RunConfig config_with_overrides(const std::string& path, const std::string& loss,
                                const std::string& data, const std::string& out, long steps) {
  RunConfig config = load_run_config(path);
  if (!loss.empty()) config.loss = parse_loss_variant(loss);
  if (!data.empty()) config.data_dir = data;
  if (!out.empty()) config.output_dir = out;
  if (steps > 0) config.max_steps = steps;
  config.validate();
  return config;
}

int run_train(const RunConfig& config, bool quiet) {
  const Dataset data = Dataset::load(config.data_dir, config.image_size);
  TrainOptions opts;
  opts.progress = quiet ? nullptr : &std::cerr;
  const TrainResult r = train(config, data, opts);
  std::cout << "trained " << r.steps << " steps; best step " << r.best_step << "\n"
            << eval_report_table(r.best);
  return 0;
}

int run_compare(RunConfig config, bool quiet) {
  const Dataset data = Dataset::load(config.data_dir, config.image_size);
  const fs::path base = config.output_dir;
  std::map<std::string, EvalReport> reports;
  for (LossVariant v : {LossVariant::kKld, LossVariant::kSoftmax}) {
    config.loss = v;
    config.output_dir = (base / loss_variant_name(v)).string();
    TrainOptions opts;
    opts.progress = quiet ? nullptr : &std::cerr;
    reports[loss_variant_name(v)] = train(config, data, opts).final_report;
  }
  const auto& kld = reports["kld"];
  const auto& sm = reports["softmax"];
  std::printf("%-10s %10s %10s\n", "metric", "kld", "softmax");
  std::printf("%-10s %10.4f %10.4f\n", "acc@0.5", kld.acc_at_05, sm.acc_at_05);
  for (const auto& [k, v] : kld.recall_at_k) {
    std::printf("recall@%-3d %10.4f %10.4f\n", k, v, sm.recall_at_k.at(k));
  }
  std::printf("recall@%d gap (kld - softmax): %+.2f points; reference gap 0.6 to 1.8 points\n",
              config.k, 100.0 * (kld.recall_at_k.at(config.k) - sm.recall_at_k.at(config.k)));
  return 0;
}

std::string resolve_data(const LoadedModel& m, const std::string& data) {
  const std::string dir = data.empty() ? m.config.data_dir : data;
  if (dir.empty()) throw InvalidInputError("no dataset directory: pass --data");
  return dir;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split, int k,
             std::vector<int> k_list, bool json) {
  LoadedModel m = load_model(fs::path(ckpt));
  const Dataset data = Dataset::load(resolve_data(m, data_dir), m.config.image_size);
  EvalOptions opts;
  opts.primary_k = k;
  if (!k_list.empty()) opts.k_list = std::move(k_list);
  if (std::find(opts.k_list.begin(), opts.k_list.end(), k) == opts.k_list.end()) {
    opts.k_list.push_back(k);
    std::sort(opts.k_list.begin(), opts.k_list.end());
  }
  const EvalReport r = evaluate(m.model, data, split_arg(split), m.anchors, opts);
  std::cout << (json ? eval_report_json(r) : eval_report_table(r));
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& data_dir, int scene_id,
                const std::string& phrase, int k, const std::string& dump) {
  LoadedModel m = load_model(fs::path(ckpt));
  const auto tokens = split_words(phrase);
  if (tokens.empty()) throw InvalidInputError("empty phrase");
  m.vocabulary.tokenize(tokens);  // reports the first unknown word
  const Dataset data = Dataset::load(resolve_data(m, data_dir), m.config.image_size);
  const std::size_t si = data.scene_index(scene_id);

  // Run the phrase through the scene's first phrase slot with replaced tokens.
  World one;
  one.image_size = data.world().image_size;
  one.mean_pixel = data.world().mean_pixel;
  Scene scene = data.world().scenes[si];
  scene.phrases = {Phrase{tokens, 0}};
  one.scenes = {scene};
  Dataset single(std::move(one), m.config.image_size);
  const std::vector<Sample> sample{{0, 0}};
  const auto props = propose(m.model, single, sample, m.anchors, k, 1).front();

  nlohmann::ordered_json doc;
  doc["scene"] = scene_id;
  doc["phrase"] = phrase;
  auto& rows = doc["proposals"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < props.size(); ++i) {
    rows.push_back(proposal_json(props[i], static_cast<int>(i) + 1, single.transform(0)));
  }
  const std::string text = doc.dump(2) + "\n";
  if (!dump.empty()) {
    std::ofstream f(dump);
    if (!(f << text)) throw IoError("cannot write " + dump);
  }
  std::cout << text;
  return 0;
}

int run_ablate(const std::string& ckpt, const std::string& data_dir, const std::string& split,
               std::vector<int> k_list) {
  LoadedModel m = load_model(fs::path(ckpt));
  const Dataset data = Dataset::load(resolve_data(m, data_dir), m.config.image_size);
  EvalOptions opts;
  opts.k_list = std::move(k_list);
  opts.primary_k = m.config.k;
  const EvalReport r = evaluate(m.model, data, split_arg(split), m.anchors, opts);
  std::printf("# split %s, %zu phrases\n%-4s %10s\n", r.split.c_str(), r.num_samples, "K",
              "recall");
  for (const auto& [k, v] : r.recall_at_k) std::printf("%-4d %10.4f\n", k, v);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training churns through large short-lived buffers; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
  CLI::App app{"Phrase-guided proposal generation on a synthetic grounding world"};
  app.require_subcommand(1);

  int scenes = 1000, image_size = 128;
  std::uint64_t seed = 0;
  std::string out_dir;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic world");
  gen->add_option("--scenes", scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "World seed");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--image-size", image_size, "Source image side in pixels");

  std::string data_dir;
  int kmeans_k = 9;
  auto* anchors = app.add_subcommand("anchors", "Cluster training boxes into anchor priors");
  anchors->add_option("--data", data_dir, "Dataset directory")->required();
  anchors->add_option("--k", kmeans_k, "Number of priors")->check(CLI::PositiveNumber);
  anchors->add_option("--seed", seed, "Seeding RNG");

  std::string config_path, loss;
  long steps = 0;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  auto* compare = app.add_subcommand("compare-losses", "Train kld and softmax variants side by side");
  for (auto* cmd : {train_cmd, compare}) {
    cmd->add_option("--config", config_path, "Run config file")->required();
    cmd->add_option("--data", data_dir, "Override data_dir");
    cmd->add_option("--out", out_dir, "Override output_dir");
    cmd->add_option("--steps", steps, "Override max_steps");
    cmd->add_flag("--quiet", quiet, "No progress on stderr");
  }
  train_cmd->add_option("--loss", loss, "kld or softmax");

  std::string ckpt, split = "val", phrase, dump;
  int k = 7, scene_id = 0;
  bool json = false;
  std::vector<int> k_list;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory (default: from checkpoint)");
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--k", k, "Primary K")->check(CLI::PositiveNumber);
  eval->add_option("--k-list", k_list, "Recall cut-offs")->delimiter(',');
  eval->add_flag("--json", json, "Emit JSON instead of the table");

  auto* predict = app.add_subcommand("predict", "Ranked proposals for one scene and phrase");
  predict->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  predict->add_option("--data", data_dir, "Dataset directory (default: from checkpoint)");
  predict->add_option("--scene", scene_id, "Scene id")->required();
  predict->add_option("--phrase", phrase, "Referring phrase")->required();
  predict->add_option("--k", k, "Number of proposals")->check(CLI::PositiveNumber);
  predict->add_option("--dump-boxes", dump, "Also write the proposals to this file");

  auto* ablate = app.add_subcommand("ablate-k", "Recall at several K");
  ablate->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ablate->add_option("--data", data_dir, "Dataset directory (default: from checkpoint)");
  ablate->add_option("--split", split, "train, val or test");
  ablate->add_option("--k-list", k_list, "Cut-offs")->delimiter(',')->default_str("1,4,7,10,13,16");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kInvalidInput);
  }

  try {
    if (*gen) return run_gen_data(scenes, seed, out_dir, image_size);
    if (*anchors) return run_anchors(data_dir, kmeans_k, seed);
    if (*train_cmd) {
      return run_train(config_with_overrides(config_path, loss, data_dir, out_dir, steps), quiet);
    }
    if (*compare) return run_compare(config_with_overrides(config_path, "", data_dir, out_dir, steps), quiet);
    if (*eval) return run_eval(ckpt, data_dir, split, k, k_list, json);
    if (*predict) return run_predict(ckpt, data_dir, scene_id, phrase, k, dump);
    if (*ablate) {
      if (k_list.empty()) k_list = {1, 4, 7, 10, 13, 16};
      return run_ablate(ckpt, data_dir, split, k_list);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kIo);
  }
  return 0;
}
