#include "ppgn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ppgn/errors.hpp"
#include "ppgn/rng.hpp"

PPGN_NAMESPACE_BEGIN

using json = nlohmann::json;

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.80f, 0.20f},  // green
    {0.15f, 0.25f, 0.95f},  // blue
    {0.95f, 0.90f, 0.10f},  // yellow
    {0.10f, 0.85f, 0.90f},  // cyan
    {0.85f, 0.15f, 0.85f},  // magenta
    {0.97f, 0.97f, 0.97f},  // white
    {0.98f, 0.55f, 0.05f},  // orange
}};

template <std::size_t N>
int index_of(const std::array<const char*, N>& names, const std::string& word,
             const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (word == names[i]) return static_cast<int>(i);
  }
  throw InvalidInputError(std::string("unknown ") + what + " '" + word + "'");
}

struct PixelRect {
  double x0, y0, x1, y1;
};

// Whether the shape overlaps the pixel with positive area.
bool covers(const SceneObject& obj, const PixelRect& px, double img_w, double img_h) {
  const Corners c = obj.box.corners();
  const double bx0 = c.x1 * img_w, bx1 = c.x2 * img_w;
  const double by0 = c.y1 * img_h, by1 = c.y2 * img_h;
  if (px.x1 <= bx0 || px.x0 >= bx1 || px.y1 <= by0 || px.y0 >= by1) return false;
  switch (obj.attrs.shape) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kCircle: {
      const double cx = (bx0 + bx1) / 2, cy = (by0 + by1) / 2;
      const double rx = (bx1 - bx0) / 2, ry = (by1 - by0) / 2;
      // In ellipse-normalized coordinates the pixel stays a rectangle.
      const double nx = (std::clamp(cx, px.x0, px.x1) - cx) / rx;
      const double ny = (std::clamp(cy, px.y0, px.y1) - cy) / ry;
      return nx * nx + ny * ny < 1.0;
    }
    case ShapeKind::kTriangle: {
      // Apex at top center, base along the bottom edge.
      const double cx = (bx0 + bx1) / 2;
      const double y_hi = std::min(px.y1, by1);
      const double half = (bx1 - bx0) / 2 * (y_hi - by0) / (by1 - by0);
      return cx - half < px.x1 && cx + half > px.x0;
    }
  }
  return false;
}

std::vector<std::string> describe(const std::vector<SceneObject>& objects, std::size_t target,
                                  Rng& rng, double optional_size_prob, bool* ok) {
  const auto& t = objects[target].attrs;
  std::vector<std::size_t> same_kind;  // same color and shape, includes target
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& a = objects[i].attrs;
    if (a.color == t.color && a.shape == t.shape) same_kind.push_back(i);
  }
  std::vector<std::size_t> same_all;
  for (auto i : same_kind) {
    if (objects[i].attrs.size == t.size) same_all.push_back(i);
  }
  // Name the size when it separates the target from look-alikes.
  const bool size_helps = same_all.size() < same_kind.size();
  std::vector<std::string> tokens;
  if (size_helps || rng.uniform() < optional_size_prob) {
    tokens.emplace_back(kSizeNames[static_cast<std::size_t>(t.size)]);
  }
  tokens.emplace_back(kColorNames[static_cast<std::size_t>(t.color)]);
  tokens.emplace_back(kShapeNames[static_cast<std::size_t>(t.shape)]);
  *ok = true;
  if (same_all.size() > 1) {
    // Attributes alone are ambiguous; find a unique extreme position.
    const double margin = 1e-3;
    const Box& tb = objects[target].box;
    bool unique[4] = {true, true, true, true};
    for (auto i : same_all) {
      if (i == target) continue;
      const Box& o = objects[i].box;
      if (!(tb.cx() < o.cx() - margin)) unique[0] = false;
      if (!(tb.cx() > o.cx() + margin)) unique[1] = false;
      if (!(tb.cy() < o.cy() - margin)) unique[2] = false;
      if (!(tb.cy() > o.cy() + margin)) unique[3] = false;
    }
    const auto pos = std::find(std::begin(unique), std::end(unique), true);
    if (pos == std::end(unique)) {
      *ok = false;
    } else {
      tokens.emplace_back(kPositionNames[static_cast<std::size_t>(pos - std::begin(unique))]);
    }
  }
  return tokens;
}

bool try_make_scene(Scene& scene, Rng& rng, const WorldOptions& opt) {
  const double n = opt.image_size;
  const int count = opt.min_objects +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_objects - opt.min_objects + 1)));
  const double cell = n / opt.placement_grid;
  scene.objects.clear();
  scene.phrases.clear();
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      ObjectAttrs attrs;
      attrs.shape = static_cast<ShapeKind>(rng.below(3));
      attrs.color = static_cast<int>(rng.below(kPalette.size()));
      attrs.size = rng.uniform() < 0.5 ? SizeClass::kSmall : SizeClass::kLarge;
      const double* range = attrs.size == SizeClass::kSmall ? opt.small_side_px : opt.large_side_px;
      const double side = rng.uniform(range[0], range[1]);
      const double aspect = 1.0 + rng.uniform(-opt.aspect_jitter, opt.aspect_jitter);
      const double w = side * std::sqrt(aspect);
      const double h = side / std::sqrt(aspect);
      const auto col = static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.placement_grid)));
      const auto row = static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.placement_grid)));
      const double cx = (col + 0.5) * cell + rng.uniform(-opt.center_jitter_px, opt.center_jitter_px);
      const double cy = (row + 0.5) * cell + rng.uniform(-opt.center_jitter_px, opt.center_jitter_px);
      if (cx - w / 2 < 1.0 || cx + w / 2 > n - 1.0 || cy - h / 2 < 1.0 || cy + h / 2 > n - 1.0) {
        continue;
      }
      const Box box(cx / n, cy / n, w / n, h / n);
      // Keep a 2 px gap so footprints never touch.
      const double gap = 2.0 / n;
      const bool clear = std::none_of(scene.objects.begin(), scene.objects.end(),
                                      [&](const SceneObject& o) {
                                        const Corners a = box.corners();
                                        const Corners b = o.box.corners();
                                        return a.x1 < b.x2 + gap && b.x1 < a.x2 + gap &&
                                               a.y1 < b.y2 + gap && b.y1 < a.y2 + gap;
                                      });
      if (clear) {
        scene.objects.push_back({box, attrs});
        placed = true;
      }
    }
  }
  if (static_cast<int>(scene.objects.size()) < opt.min_objects) return false;
  for (std::size_t t = 0; t < scene.objects.size(); ++t) {
    bool ok = false;
    auto tokens = describe(scene.objects, t, rng, opt.optional_size_prob, &ok);
    if (!ok) return false;
    scene.phrases.push_back({std::move(tokens), static_cast<int>(t)});
  }
  return true;
}

json to_json(const Scene& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"box", {o.box.cx(), o.box.cy(), o.box.w(), o.box.h()}},
                       {"attrs",
                        {{"shape", kShapeNames[static_cast<std::size_t>(o.attrs.shape)]},
                         {"color", kColorNames[static_cast<std::size_t>(o.attrs.color)]},
                         {"size", kSizeNames[static_cast<std::size_t>(o.attrs.size)]}}}});
  }
  json phrases = json::array();
  for (const auto& p : s.phrases) phrases.push_back({{"tokens", p.tokens}, {"target", p.target}});
  return {{"id", s.id},
          {"split", split_name(s.split)},
          {"render_seed", s.render_seed},
          {"width", s.width},
          {"height", s.height},
          {"objects", std::move(objects)},
          {"phrases", std::move(phrases)}};
}

}  // namespace

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InvalidInputError("unknown split '" + name + "' (expected train, val or test)");
}

Vocabulary::Vocabulary() {
  for (auto w : kSizeNames) words_.emplace_back(w);
  for (auto w : kColorNames) words_.emplace_back(w);
  for (auto w : kShapeNames) words_.emplace_back(w);
  for (auto w : kPositionNames) words_.emplace_back(w);
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

std::vector<int> Vocabulary::tokenize(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw InvalidInputError("empty phrase");
  std::vector<int> ids;
  for (const auto& tok : tokens) {
    const auto it = std::find(words_.begin(), words_.end(), tok);
    if (it == words_.end()) throw InvalidInputError("unknown token '" + tok + "'");
    ids.push_back(static_cast<int>(it - words_.begin()));
  }
  return ids;
}

Split split_for_scene(int id) {
  const auto bucket = mix64(static_cast<std::uint64_t>(id)) % 10;
  if (bucket < 8) return Split::kTrain;
  return bucket == 8 ? Split::kVal : Split::kTest;
}

World generate_world(int num_scenes, std::uint64_t seed, const WorldOptions& options) {
  if (num_scenes < 1) throw InvalidInputError("num_scenes must be at least 1");
  World world;
  world.image_size = options.image_size;
  world.seed = seed;
  Rng rng(seed);
  for (int id = 0; id < num_scenes; ++id) {
    Scene scene;
    scene.id = id;
    scene.split = split_for_scene(id);
    scene.width = options.image_size;
    scene.height = options.image_size;
    while (!try_make_scene(scene, rng, options)) {
    }
    scene.render_seed = rng.next_u64();
    world.scenes.push_back(std::move(scene));
  }
  world.mean_pixel = compute_mean_pixel(world);
  return world;
}

Image render_scene(const Scene& scene) {
  Image img;
  img.width = scene.width;
  img.height = scene.height;
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  Rng rng(scene.render_seed);
  const double base = rng.uniform(0.05, 0.3);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = base + rng.uniform(-0.03, 0.03);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<float>(tint[static_cast<std::size_t>(c)] + rng.uniform(-0.04, 0.04));
      }
    }
  }
  for (const auto& obj : scene.objects) {
    const Corners c = obj.box.corners();
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x1 * img.width)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(c.x2 * img.width)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y1 * img.height)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(c.y2 * img.height)));
    const auto& color = kPalette[static_cast<std::size_t>(obj.attrs.color)];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const PixelRect px{static_cast<double>(x), static_cast<double>(y), x + 1.0, y + 1.0};
        if (!covers(obj, px, img.width, img.height)) continue;
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = color[static_cast<std::size_t>(ch)];
      }
    }
  }
  return img;
}

std::array<double, 3> compute_mean_pixel(const World& world) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  double count = 0.0;
  for (const auto& scene : world.scenes) {
    if (scene.split != Split::kTrain) continue;
    const Image img = render_scene(scene);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) sum[i % 3] += img.pixels[i];
    count += static_cast<double>(img.pixels.size() / 3);
  }
  if (count == 0.0) return {0.5, 0.5, 0.5};
  for (auto& s : sum) s /= count;
  return sum;
}

std::string annotations_to_json(const World& world) {
  json scenes = json::array();
  for (const auto& s : world.scenes) scenes.push_back(to_json(s));
  json doc = {{"version", world.version},
              {"image_size", world.image_size},
              {"seed", world.seed},
              {"mean_pixel", world.mean_pixel},
              {"scenes", std::move(scenes)}};
  return doc.dump(1) + "\n";
}

World annotations_from_json(const std::string& text) {
  World world;
  try {
    const json doc = json::parse(text);
    world.version = doc.at("version").get<std::string>();
    if (world.version != kAnnotationVersion) {
      throw InvalidInputError("unsupported annotation version '" + world.version + "'");
    }
    world.image_size = doc.at("image_size").get<int>();
    world.seed = doc.at("seed").get<std::uint64_t>();
    world.mean_pixel = doc.at("mean_pixel").get<std::array<double, 3>>();
    for (const auto& js : doc.at("scenes")) {
      Scene s;
      s.id = js.at("id").get<int>();
      s.split = parse_split(js.at("split").get<std::string>());
      s.render_seed = js.at("render_seed").get<std::uint64_t>();
      s.width = js.at("width").get<int>();
      s.height = js.at("height").get<int>();
      for (const auto& jo : js.at("objects")) {
        const auto b = jo.at("box").get<std::array<double, 4>>();
        const auto& ja = jo.at("attrs");
        ObjectAttrs a;
        a.shape = static_cast<ShapeKind>(index_of(kShapeNames, ja.at("shape").get<std::string>(), "shape"));
        a.color = index_of(kColorNames, ja.at("color").get<std::string>(), "color");
        a.size = static_cast<SizeClass>(index_of(kSizeNames, ja.at("size").get<std::string>(), "size"));
        s.objects.push_back({Box(b[0], b[1], b[2], b[3]), a});
      }
      for (const auto& jp : js.at("phrases")) {
        Phrase p{jp.at("tokens").get<std::vector<std::string>>(), jp.at("target").get<int>()};
        if (p.target < 0 || p.target >= static_cast<int>(s.objects.size())) {
          throw InvalidInputError("scene " + std::to_string(s.id) + ": phrase target out of range");
        }
        s.phrases.push_back(std::move(p));
      }
      world.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw InvalidInputError(std::string("malformed annotation file: ") + e.what());
  }
  return world;
}

void write_world(const World& world, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / "annotations.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << annotations_to_json(world);
  if (!out) throw IoError("failed writing " + path.string());
}

World read_world(const std::filesystem::path& dir) {
  const auto path = dir / "annotations.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return annotations_from_json(buf.str());
}

void write_image(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kImageMagic, 8);
  const auto h = static_cast<std::uint32_t>(image.height);
  const auto w = static_cast<std::uint32_t>(image.width);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  char magic[8];
  std::uint32_t h = 0, w = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || std::memcmp(magic, kImageMagic, 8) != 0) {
    throw IoError("not a PPGN image: " + path.string());
  }
  Image img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w);
  img.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  if (!in) throw IoError("truncated image " + path.string());
  return img;
}

Preprocessed preprocess(const Image& image, const std::array<double, 3>& mean_pixel,
                        int target_size) {
  Preprocessed out;
  out.transform = letterbox(image.width, image.height, target_size);
  const auto& t = out.transform;
  Image& dst = out.image;
  dst.width = target_size;
  dst.height = target_size;
  dst.pixels.resize(static_cast<std::size_t>(target_size) * static_cast<std::size_t>(target_size) * 3);
  for (int y = 0; y < target_size; ++y) {
    for (int x = 0; x < target_size; ++x) {
      // Source coordinate of this pixel's center.
      const double sx = (x + 0.5 - t.pad_x) / t.scale;
      const double sy = (y + 0.5 - t.pad_y) / t.scale;
      if (sx < 0.0 || sy < 0.0 || sx > image.width || sy > image.height) {
        for (int c = 0; c < 3; ++c) dst.at(y, x, c) = static_cast<float>(mean_pixel[static_cast<std::size_t>(c)]);
        continue;
      }
      const double fx = std::clamp(sx - 0.5, 0.0, image.width - 1.0);
      const double fy = std::clamp(sy - 0.5, 0.0, image.height - 1.0);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
      const double ax = fx - x0, ay = fy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(y0, x0, c) * (1 - ax) + image.at(y0, x1, c) * ax;
        const double bot = image.at(y1, x0, c) * (1 - ax) + image.at(y1, x1, c) * ax;
        dst.at(y, x, c) = static_cast<float>(top * (1 - ay) + bot * ay);
      }
    }
  }
  return out;
}

std::vector<AnchorWh> training_box_sizes(const World& world) {
  std::vector<AnchorWh> sizes;
  for (const auto& scene : world.scenes) {
    if (scene.split != Split::kTrain) continue;
    const auto t = letterbox(scene.width, scene.height, world.image_size);
    for (const auto& o : scene.objects) {
      const Box b = t.forward(o.box);
      sizes.push_back({b.w(), b.h()});
    }
  }
  return sizes;
}

std::size_t count_uncovered_boxes(const World& world, const AnchorSet& anchors, double min_iou) {
  std::size_t uncovered = 0;
  for (const auto& scene : world.scenes) {
    const auto t = letterbox(scene.width, scene.height, world.image_size);
    for (const auto& o : scene.objects) {
      const Box b = t.forward(o.box);
      double best = 0.0;
      for (const auto& a : anchors.located) best = std::max(best, iou(a, b));
      if (best < min_iou) ++uncovered;
    }
  }
  return uncovered;
}

Dataset::Dataset(World world, int input_size)
    : world_(std::move(world)), input_size_(input_size) {
  images_.reserve(world_.scenes.size());
  for (const auto& scene : world_.scenes) {
    Preprocessed p = preprocess(render_scene(scene), world_.mean_pixel, input_size_);
    images_.push_back(std::move(p.image));
    transforms_.push_back(p.transform);
  }
}

Dataset Dataset::load(const std::filesystem::path& dir, int input_size) {
  return Dataset(read_world(dir), input_size);
}

std::vector<Sample> Dataset::samples(Split split) const {
  std::vector<Sample> out;
  for (std::size_t s = 0; s < world_.scenes.size(); ++s) {
    if (world_.scenes[s].split != split) continue;
    for (std::size_t p = 0; p < world_.scenes[s].phrases.size(); ++p) out.push_back({s, p});
  }
  return out;
}

std::size_t Dataset::scene_index(int id) const {
  for (std::size_t s = 0; s < world_.scenes.size(); ++s) {
    if (world_.scenes[s].id == id) return s;
  }
  throw InvalidInputError("no scene with id " + std::to_string(id));
}

Box Dataset::target_box(const Sample& s) const {
  const Scene& scene = world_.scenes.at(s.scene);
  const Phrase& phrase = scene.phrases.at(s.phrase);
  return transforms_.at(s.scene).forward(scene.objects.at(static_cast<std::size_t>(phrase.target)).box);
}

std::vector<int> Dataset::token_ids(const Sample& s) const {
  return vocab_.tokenize(world_.scenes.at(s.scene).phrases.at(s.phrase).tokens);
}

PPGN_NAMESPACE_END
