#pragma once

// Synthetic colored-shape scenes on a grid, their renders, and templated
// questions whose answers are computed from the scene description.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "musc/tensor.hpp"

namespace musc::data {

enum class ShapeKind : std::uint8_t { kCircle, kSquare, kTriangle };
enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow, kGray, kCyan };
enum class SizeKind : std::uint8_t { kSmall, kLarge };

inline constexpr std::size_t kNumShapes = 3;
inline constexpr std::size_t kNumColors = 6;
inline constexpr std::size_t kNumSizes = 2;
inline constexpr std::size_t kMaxObjects = 6;

std::string_view shape_word(ShapeKind s);
std::string_view shape_plural(ShapeKind s);
std::string_view color_word(Color c);
std::string_view size_word(SizeKind s);

struct SceneObject {
  ShapeKind shape;
  Color color;
  SizeKind size;
  std::uint32_t row;
  std::uint32_t col;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneSpec {
  std::uint64_t id = 0;
  std::uint32_t grid = 4;
  std::vector<SceneObject> objects;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

// 1 <= n_objects <= min(6, grid^2); distinct cells; same seed -> same scene.
SceneSpec generate_scene(std::uint64_t rng_seed, std::size_t n_objects, std::uint32_t grid = 4,
                         std::uint64_t scene_id = 0);

// Background and palette are multiples of 1/255 so u8 storage is exact.
std::array<std::uint8_t, 3> background_rgb();
std::array<std::uint8_t, 3> color_rgb(Color c);

// Renders to 3 x R x R bytes (channel-major); R in {32, 64, 224}.
std::vector<std::uint8_t> render_scene_u8(const SceneSpec& scene, std::size_t resolution);
// Same render as floats in [0, 1].
template <class T>
Tensor<T> render_scene(const SceneSpec& scene, std::size_t resolution);

// --- questions ---

enum class Template : std::uint8_t { kCount, kExist, kQueryAttribute, kSpatial, kEquality };
inline constexpr std::size_t kNumTemplates = 5;
enum class Attribute : std::uint8_t { kColor, kShape, kSize };
enum class Relation : std::uint8_t { kLeft, kRight, kAbove, kBelow };

// Conjunction of optional attribute constraints.
struct Filter {
  std::optional<SizeKind> size;
  std::optional<Color> color;
  std::optional<ShapeKind> shape;
  bool matches(const SceneObject& o) const;
  bool empty() const { return !size && !color && !shape; }
  bool constrains(Attribute a) const;
};

struct QAPair {
  std::uint64_t scene_id = 0;
  std::string text;
  std::string answer;
  Template template_id = Template::kCount;
  // Filled once a vocabulary exists.
  std::vector<std::size_t> tokens;
  std::size_t length = 0;
  std::size_t answer_id = 0;
};

// Answer computed directly from the scene for a question text produced by
// the templates below. Returns nullopt for text outside the template grammar
// or a referring expression that is not unique.
std::optional<std::string> answer_from_scene(const SceneSpec& scene, std::string_view question);

// Draws one question of the given template. nullopt = template rejected for
// this scene (retry with another template or seed).
std::optional<QAPair> generate_question(const SceneSpec& scene, Template template_id, std::uint64_t rng_seed);

// All answers a template can produce, in canonical order.
std::vector<std::string> canonical_answers();

// --- vocabulary ---

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;

struct Vocabulary {
  std::vector<std::string> words;  // id -> word; 0 = <pad>, 1 = <unk>
  std::map<std::string, std::size_t> word_ids;
  std::vector<std::string> answers;  // id -> answer
  std::map<std::string, std::size_t> answer_ids;

  std::size_t size() const { return words.size(); }
  std::size_t word_id(const std::string& w) const;
  std::size_t answer_id(const std::string& a) const;
  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words == b.words && a.answers == b.answers;
  }
};

Vocabulary build_vocabulary(const std::vector<QAPair>& corpus);
// Rebuilds a vocabulary from stored word/answer lists (ids = positions).
Vocabulary vocabulary_from_lists(std::vector<std::string> words, std::vector<std::string> answers);

std::vector<std::string> tokenize(std::string_view text);

struct EncodedQuestion {
  std::vector<std::size_t> ids;  // padded to L_max
  std::size_t length = 0;
};

EncodedQuestion encode_question(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
std::string decode_question(const std::vector<std::size_t>& ids, std::size_t length, const Vocabulary& vocab);

// --- datasets ---

struct DatasetConfig {
  std::uint64_t seed = 1;
  std::size_t n_train_scenes = 2000;
  std::size_t n_test_scenes = 200;
  std::size_t questions_per_scene = 5;
  std::uint32_t grid = 4;
  std::size_t resolution = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 6;
  std::size_t max_len = 16;
};

struct Dataset {
  DatasetConfig config;
  std::vector<SceneSpec> scenes;  // train scenes first, then test scenes
  std::vector<std::uint8_t> images;  // [n_scenes, 3, R, R]
  std::vector<QAPair> train;
  std::vector<QAPair> test;
  Vocabulary vocab;

  std::size_t image_elems() const { return 3 * config.resolution * config.resolution; }
  const SceneSpec& scene(std::uint64_t id) const { return scenes.at(id); }
  bool is_test_scene(std::uint64_t id) const { return id >= config.n_train_scenes; }
  template <class T>
  Tensor<T> image(std::uint64_t scene_id) const;
};

std::string dataset_config_hash(const DatasetConfig& cfg);

// Answer-balanced generation: each question slot takes the globally least
// used answer the scene can produce, then the least used template offering it.
Dataset generate_dataset(const DatasetConfig& cfg);

// manifest.json, scenes.jsonl, questions.jsonl, images.bin
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& tool_version);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace musc::data
