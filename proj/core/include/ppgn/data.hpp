#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgn/anchors.hpp"
#include "ppgn/config.hpp"
#include "ppgn/geometry.hpp"

PPGN_NAMESPACE_BEGIN

inline constexpr const char* kAnnotationVersion = "ppgn-synth-1";
inline constexpr const char* kImageMagic = "PPGNIMG1";

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class SizeClass { kSmall, kLarge };
enum class Split { kTrain, kVal, kTest };

inline constexpr std::array<const char*, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<const char*, 2> kSizeNames{"small", "large"};
inline constexpr std::array<const char*, 8> kColorNames{
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"};
inline constexpr std::array<const char*, 4> kPositionNames{"left", "right", "top", "bottom"};

const char* split_name(Split split);
/// Parses "train" / "val" / "test"; throws InvalidInputError.
Split parse_split(const std::string& name);

struct ObjectAttrs {
  ShapeKind shape = ShapeKind::kCircle;
  int color = 0;  // index into kColorNames
  SizeClass size = SizeClass::kSmall;

  friend bool operator==(const ObjectAttrs&, const ObjectAttrs&) = default;
};

struct SceneObject {
  Box box;
  ObjectAttrs attrs;
};

struct Phrase {
  std::vector<std::string> tokens;
  int target = 0;
};

struct Scene {
  int id = 0;
  Split split = Split::kTrain;
  std::uint64_t render_seed = 0;
  int width = 0;
  int height = 0;
  std::vector<SceneObject> objects;
  std::vector<Phrase> phrases;
};

/// A synthetic grounding dataset. Images are regenerated from render seeds.
struct World {
  std::string version = kAnnotationVersion;
  int image_size = 128;
  std::uint64_t seed = 0;
  std::array<double, 3> mean_pixel{0.0, 0.0, 0.0};
  std::vector<Scene> scenes;
};

/// HWC float image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                   static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
};

/// Closed generator vocabulary with stable ids.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  /// Throws InvalidInputError naming the first unknown token.
  std::vector<int> tokenize(const std::vector<std::string>& tokens) const;
  const std::vector<std::string>& words() const noexcept { return words_; }
  int size() const noexcept { return static_cast<int>(words_.size()); }

 private:
  std::vector<std::string> words_;
};

struct WorldOptions {
  int image_size = 128;
  int min_objects = 2;
  int max_objects = 6;
  /// Object centers are placed on midpoints of this grid, plus jitter.
  int placement_grid = 16;
  double center_jitter_px = 1.5;
  double small_side_px[2] = {14.0, 20.0};
  double large_side_px[2] = {28.0, 40.0};
  double aspect_jitter = 0.12;
  /// Probability of naming the size when it is not needed to disambiguate.
  double optional_size_prob = 0.3;
};

/// Deterministic synthetic world. Throws InvalidInputError if num_scenes < 1.
World generate_world(int num_scenes, std::uint64_t seed, const WorldOptions& options = {});

/// Deterministic split from the scene id (80/10/10).
Split split_for_scene(int id);

Image render_scene(const Scene& scene);
/// Mean RGB over every pixel of the training scenes.
std::array<double, 3> compute_mean_pixel(const World& world);

std::string annotations_to_json(const World& world);
World annotations_from_json(const std::string& text);
/// Writes annotations.json under `dir`; throws IoError.
void write_world(const World& world, const std::filesystem::path& dir);
World read_world(const std::filesystem::path& dir);

void write_image(const Image& image, const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);

struct Preprocessed {
  Image image;  // target_size x target_size
  LetterboxTransform transform;
};

/// Aspect-preserving bilinear resize into a square canvas filled with the
/// mean pixel.
Preprocessed preprocess(const Image& image, const std::array<double, 3>& mean_pixel,
                        int target_size);

/// Ground-truth (w, h) of every object in the training split.
std::vector<AnchorWh> training_box_sizes(const World& world);

/// Number of ground-truth boxes whose best IoU with any located anchor is
/// below `min_iou`.
std::size_t count_uncovered_boxes(const World& world, const AnchorSet& anchors,
                                  double min_iou = 0.5);

/// One (scene, phrase) pair.
struct Sample {
  std::size_t scene = 0;
  std::size_t phrase = 0;
};

/// A loaded world with letterboxed images and ground truth mapped into the
/// padded network frame. Read-only after construction.
class Dataset {
 public:
  Dataset(World world, int input_size);
  static Dataset load(const std::filesystem::path& dir, int input_size);

  const World& world() const noexcept { return world_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  int input_size() const noexcept { return input_size_; }

  std::vector<Sample> samples(Split split) const;
  /// Index of the scene with the given id; throws InvalidInputError.
  std::size_t scene_index(int id) const;

  const Image& image(std::size_t scene) const { return images_.at(scene); }
  const LetterboxTransform& transform(std::size_t scene) const { return transforms_.at(scene); }
  /// Target box in network coordinates.
  Box target_box(const Sample& s) const;
  std::vector<int> token_ids(const Sample& s) const;

 private:
  World world_;
  Vocabulary vocab_;
  int input_size_;
  std::vector<Image> images_;
  std::vector<LetterboxTransform> transforms_;
};

PPGN_NAMESPACE_END
