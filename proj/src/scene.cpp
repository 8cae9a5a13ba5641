#include "musc/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "musc/container.hpp"
#include "musc/errors.hpp"
#include "musc/rng.hpp"

namespace musc::data {

namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeWords{"circle", "square", "triangle"};
constexpr std::array<std::string_view, kNumShapes> kShapePlurals{"circles", "squares", "triangles"};
constexpr std::array<std::string_view, kNumColors> kColorWords{"red", "green", "blue", "yellow", "gray", "cyan"};
constexpr std::array<std::string_view, kNumSizes> kSizeWords{"small", "large"};
constexpr std::array<std::string_view, 3> kAttributeWords{"color", "shape", "size"};

constexpr std::array<std::array<std::uint8_t, 3>, kNumColors> kPalette{{
    {220, 40, 40},
    {40, 175, 60},
    {40, 80, 220},
    {230, 210, 40},
    {128, 128, 128},
    {40, 200, 210},
}};

}  // namespace

std::string_view shape_word(ShapeKind s) { return kShapeWords[std::size_t(s)]; }
std::string_view shape_plural(ShapeKind s) { return kShapePlurals[std::size_t(s)]; }
std::string_view color_word(Color c) { return kColorWords[std::size_t(c)]; }
std::string_view size_word(SizeKind s) { return kSizeWords[std::size_t(s)]; }

std::array<std::uint8_t, 3> background_rgb() { return {235, 235, 235}; }
std::array<std::uint8_t, 3> color_rgb(Color c) { return kPalette[std::size_t(c)]; }

SceneSpec generate_scene(std::uint64_t rng_seed, std::size_t n_objects, std::uint32_t grid, std::uint64_t scene_id) {
  require(grid >= 2, "generate_scene: grid must be at least 2");
  require(n_objects >= 1 && n_objects <= kMaxObjects && n_objects <= std::size_t(grid) * grid,
          "generate_scene: n_objects " + std::to_string(n_objects) + " outside [1, " + std::to_string(kMaxObjects) + "]");
  Rng rng(rng_seed);
  std::vector<std::uint32_t> cells(std::size_t(grid) * grid);
  for (std::uint32_t i = 0; i < cells.size(); ++i) cells[i] = i;
  rng.shuffle(cells.begin(), cells.end());
  SceneSpec s;
  s.id = scene_id;
  s.grid = grid;
  for (std::size_t k = 0; k < n_objects; ++k) {
    SceneObject o;
    o.shape = ShapeKind(rng.below(kNumShapes));
    o.color = Color(rng.below(kNumColors));
    o.size = SizeKind(rng.below(kNumSizes));
    o.row = cells[k] / grid;
    o.col = cells[k] % grid;
    s.objects.push_back(o);
  }
  return s;
}

namespace {

bool covers(const SceneObject& o, double dx, double dy, double cell) {
  const double r = (o.size == SizeKind::kLarge ? 0.42 : 0.24) * cell;
  switch (o.shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare:
      return std::max(std::abs(dx), std::abs(dy)) <= 0.8 * r;
    case ShapeKind::kTriangle:
      if (dy < -r || dy > 0.8 * r) return false;
      return std::abs(dx) <= (dy + r) / 1.8;
  }
  return false;
}

}  // namespace

std::vector<std::uint8_t> render_scene_u8(const SceneSpec& scene, std::size_t resolution) {
  require(resolution == 32 || resolution == 64 || resolution == 224,
          "render_scene: resolution must be 32, 64 or 224, got " + std::to_string(resolution));
  require(resolution % scene.grid == 0, "render_scene: resolution not divisible by grid");
  const std::size_t r = resolution, plane = r * r;
  std::vector<std::uint8_t> img(3 * plane);
  const auto bg = background_rgb();
  for (std::size_t c = 0; c < 3; ++c) std::fill_n(img.begin() + c * plane, plane, bg[c]);
  const double cell = double(r) / scene.grid;
  for (const auto& o : scene.objects) {
    const auto rgb = color_rgb(o.color);
    const std::size_t y0 = o.row * r / scene.grid, x0 = o.col * r / scene.grid;
    const std::size_t span = r / scene.grid;
    for (std::size_t y = y0; y < y0 + span; ++y)
      for (std::size_t x = x0; x < x0 + span; ++x) {
        const double dx = (x + 0.5) - (o.col + 0.5) * cell;
        const double dy = (y + 0.5) - (o.row + 0.5) * cell;
        if (!covers(o, dx, dy, cell)) continue;
        for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * r + x] = rgb[c];
      }
  }
  return img;
}

template <class T>
Tensor<T> render_scene(const SceneSpec& scene, std::size_t resolution) {
  const auto bytes = render_scene_u8(scene, resolution);
  std::vector<T> v(bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(bytes[i]) / T(255);
  return Tensor<T>({3, resolution, resolution}, std::move(v));
}

template Tensor<float> render_scene(const SceneSpec&, std::size_t);
template Tensor<double> render_scene(const SceneSpec&, std::size_t);

// --- filters and phrases ----------------------------------------------------

bool Filter::matches(const SceneObject& o) const {
  return (!size || *size == o.size) && (!color || *color == o.color) && (!shape || *shape == o.shape);
}

bool Filter::constrains(Attribute a) const {
  switch (a) {
    case Attribute::kColor: return color.has_value();
    case Attribute::kShape: return shape.has_value();
    case Attribute::kSize: return size.has_value();
  }
  return false;
}

namespace {

std::vector<Filter> all_filters() {
  std::vector<Filter> out;
  for (int s = -1; s < int(kNumSizes); ++s)
    for (int c = -1; c < int(kNumColors); ++c)
      for (int h = -1; h < int(kNumShapes); ++h) {
        Filter f;
        if (s >= 0) f.size = SizeKind(s);
        if (c >= 0) f.color = Color(c);
        if (h >= 0) f.shape = ShapeKind(h);
        out.push_back(f);
      }
  return out;
}

std::string noun_phrase(const Filter& f, bool plural) {
  std::string s;
  if (f.size) s += std::string(size_word(*f.size)) + " ";
  if (f.color) s += std::string(color_word(*f.color)) + " ";
  if (f.shape)
    s += plural ? shape_plural(*f.shape) : shape_word(*f.shape);
  else
    s += plural ? "objects" : "object";
  return s;
}

std::size_t count_matches(const SceneSpec& s, const Filter& f) {
  return std::size_t(std::count_if(s.objects.begin(), s.objects.end(), [&](const auto& o) { return f.matches(o); }));
}

std::string attribute_value(const SceneObject& o, Attribute a) {
  switch (a) {
    case Attribute::kColor: return std::string(color_word(o.color));
    case Attribute::kShape: return std::string(shape_word(o.shape));
    case Attribute::kSize: return std::string(size_word(o.size));
  }
  return {};
}

bool relation_holds(const SceneObject& a, const SceneObject& b, Relation r) {
  switch (r) {
    case Relation::kLeft: return a.col < b.col;
    case Relation::kRight: return a.col > b.col;
    case Relation::kAbove: return a.row < b.row;
    case Relation::kBelow: return a.row > b.row;
  }
  return false;
}

constexpr std::array<std::string_view, 4> kRelationWords{"left of", "right of", "above", "below"};

// Unique referring expressions for each object, optionally avoiding one attribute.
std::vector<std::vector<Filter>> unique_refs(const SceneSpec& s, std::optional<Attribute> avoid) {
  std::vector<std::vector<Filter>> refs(s.objects.size());
  for (const auto& f : all_filters()) {
    if (f.empty() || (avoid && f.constrains(*avoid))) continue;
    if (count_matches(s, f) != 1) continue;
    for (std::size_t i = 0; i < s.objects.size(); ++i)
      if (f.matches(s.objects[i])) refs[i].push_back(f);
  }
  return refs;
}

// A question in structured form; text is produced only when realized.
struct Candidate {
  Template tmpl;
  std::string answer;
  Filter filter;  // count / exist
  Attribute attr = Attribute::kColor;
  std::size_t a = 0, b = 0;
  Relation rel = Relation::kLeft;
};

std::vector<Candidate> enumerate_candidates(const SceneSpec& s, Template t) {
  std::vector<Candidate> out;
  switch (t) {
    case Template::kCount:
      for (const auto& f : all_filters()) out.push_back({t, std::to_string(count_matches(s, f)), f});
      break;
    case Template::kExist:
      for (const auto& f : all_filters())
        if (!f.empty()) out.push_back({t, count_matches(s, f) > 0 ? "yes" : "no", f});
      break;
    case Template::kQueryAttribute:
      for (int a = 0; a < 3; ++a) {
        const auto refs = unique_refs(s, Attribute(a));
        for (std::size_t i = 0; i < s.objects.size(); ++i)
          if (!refs[i].empty()) out.push_back({t, attribute_value(s.objects[i], Attribute(a)), {}, Attribute(a), i});
      }
      break;
    case Template::kSpatial: {
      const auto refs = unique_refs(s, std::nullopt);
      for (std::size_t i = 0; i < s.objects.size(); ++i)
        for (std::size_t j = 0; j < s.objects.size(); ++j) {
          if (i == j || refs[i].empty() || refs[j].empty()) continue;
          for (int r = 0; r < 4; ++r) {
            const bool yes = relation_holds(s.objects[i], s.objects[j], Relation(r));
            out.push_back({t, yes ? "yes" : "no", {}, Attribute::kColor, i, j, Relation(r)});
          }
        }
      break;
    }
    case Template::kEquality:
      for (int a = 0; a < 3; ++a) {
        const auto refs = unique_refs(s, Attribute(a));
        for (std::size_t i = 0; i < s.objects.size(); ++i)
          for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
            if (refs[i].empty() || refs[j].empty()) continue;
            const bool same = attribute_value(s.objects[i], Attribute(a)) == attribute_value(s.objects[j], Attribute(a));
            out.push_back({t, same ? "yes" : "no", {}, Attribute(a), i, j});
          }
      }
      break;
  }
  return out;
}

QAPair realize(const SceneSpec& s, const Candidate& c, Rng& rng) {
  QAPair q;
  q.scene_id = s.id;
  q.template_id = c.tmpl;
  q.answer = c.answer;
  auto pick_ref = [&](std::size_t obj, std::optional<Attribute> avoid) {
    const auto refs = unique_refs(s, avoid);
    return refs[obj][rng.below(refs[obj].size())];
  };
  switch (c.tmpl) {
    case Template::kCount:
      q.text = "how many " + noun_phrase(c.filter, true) + " are there";
      break;
    case Template::kExist:
      q.text = "is there a " + noun_phrase(c.filter, false);
      break;
    case Template::kQueryAttribute:
      q.text = "what " + std::string(kAttributeWords[std::size_t(c.attr)]) + " is the " +
               noun_phrase(pick_ref(c.a, c.attr), false);
      break;
    case Template::kSpatial:
      q.text = "is the " + noun_phrase(pick_ref(c.a, std::nullopt), false) + " " +
               std::string(kRelationWords[std::size_t(c.rel)]) + " the " + noun_phrase(pick_ref(c.b, std::nullopt), false);
      break;
    case Template::kEquality: {
      const auto ra = pick_ref(c.a, c.attr), rb = pick_ref(c.b, c.attr);
      q.text = "does the " + noun_phrase(ra, false) + " have the same " +
               std::string(kAttributeWords[std::size_t(c.attr)]) + " as the " + noun_phrase(rb, false);
      break;
    }
  }
  return q;
}

// --- text parser used by the scene oracle ---

struct Parser {
  std::vector<std::string> toks;
  std::size_t pos = 0;

  bool eat(std::string_view w) {
    if (pos < toks.size() && toks[pos] == w) {
      ++pos;
      return true;
    }
    return false;
  }
  bool done() const { return pos == toks.size(); }

  std::optional<Filter> noun_phrase(bool plural) {
    Filter f;
    for (std::size_t i = 0; i < kNumSizes; ++i)
      if (eat(kSizeWords[i])) f.size = SizeKind(i);
    for (std::size_t i = 0; i < kNumColors; ++i)
      if (eat(kColorWords[i])) f.color = Color(i);
    if (eat(plural ? "objects" : "object")) return f;
    for (std::size_t i = 0; i < kNumShapes; ++i)
      if (eat(plural ? kShapePlurals[i] : kShapeWords[i])) {
        f.shape = ShapeKind(i);
        return f;
      }
    return std::nullopt;
  }

  std::optional<Attribute> attribute() {
    for (std::size_t i = 0; i < kAttributeWords.size(); ++i)
      if (eat(kAttributeWords[i])) return Attribute(i);
    return std::nullopt;
  }
};

std::optional<std::size_t> unique_match(const SceneSpec& s, const Filter& f) {
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (!f.matches(s.objects[i])) continue;
    if (hit) return std::nullopt;
    hit = i;
  }
  return hit;
}

}  // namespace

std::optional<std::string> answer_from_scene(const SceneSpec& scene, std::string_view question) {
  Parser p{tokenize(question)};
  if (p.eat("how")) {
    if (!p.eat("many")) return std::nullopt;
    auto f = p.noun_phrase(true);
    if (!f || !p.eat("are") || !p.eat("there") || !p.done()) return std::nullopt;
    return std::to_string(count_matches(scene, *f));
  }
  if (p.eat("what")) {
    auto a = p.attribute();
    if (!a || !p.eat("is") || !p.eat("the")) return std::nullopt;
    auto f = p.noun_phrase(false);
    if (!f || !p.done()) return std::nullopt;
    auto i = unique_match(scene, *f);
    if (!i) return std::nullopt;
    return attribute_value(scene.objects[*i], *a);
  }
  if (p.eat("does")) {
    if (!p.eat("the")) return std::nullopt;
    auto fa = p.noun_phrase(false);
    if (!fa || !p.eat("have") || !p.eat("the") || !p.eat("same")) return std::nullopt;
    auto a = p.attribute();
    if (!a || !p.eat("as") || !p.eat("the")) return std::nullopt;
    auto fb = p.noun_phrase(false);
    if (!fb || !p.done()) return std::nullopt;
    auto i = unique_match(scene, *fa), j = unique_match(scene, *fb);
    if (!i || !j) return std::nullopt;
    return attribute_value(scene.objects[*i], *a) == attribute_value(scene.objects[*j], *a) ? "yes" : "no";
  }
  if (p.eat("is")) {
    if (p.eat("there")) {
      if (!p.eat("a")) return std::nullopt;
      auto f = p.noun_phrase(false);
      if (!f || !p.done()) return std::nullopt;
      return count_matches(scene, *f) > 0 ? "yes" : "no";
    }
    if (!p.eat("the")) return std::nullopt;
    auto fa = p.noun_phrase(false);
    if (!fa) return std::nullopt;
    std::optional<Relation> rel;
    if (p.eat("left") && p.eat("of"))
      rel = Relation::kLeft;
    else if (p.eat("right") && p.eat("of"))
      rel = Relation::kRight;
    else if (p.eat("above"))
      rel = Relation::kAbove;
    else if (p.eat("below"))
      rel = Relation::kBelow;
    if (!rel || !p.eat("the")) return std::nullopt;
    auto fb = p.noun_phrase(false);
    if (!fb || !p.done()) return std::nullopt;
    auto i = unique_match(scene, *fa), j = unique_match(scene, *fb);
    if (!i || !j) return std::nullopt;
    return relation_holds(scene.objects[*i], scene.objects[*j], *rel) ? "yes" : "no";
  }
  return std::nullopt;
}

std::optional<QAPair> generate_question(const SceneSpec& scene, Template template_id, std::uint64_t rng_seed) {
  auto cands = enumerate_candidates(scene, template_id);
  if (cands.empty()) return std::nullopt;
  Rng rng(rng_seed);
  return realize(scene, cands[rng.below(cands.size())], rng);
}

std::vector<std::string> canonical_answers() {
  std::vector<std::string> a{"yes", "no"};
  for (std::size_t i = 0; i <= kMaxObjects; ++i) a.push_back(std::to_string(i));
  for (auto w : kColorWords) a.emplace_back(w);
  for (auto w : kShapeWords) a.emplace_back(w);
  for (auto w : kSizeWords) a.emplace_back(w);
  return a;
}

// --- vocabulary ---------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == '?' || ch == ',' || ch == '.') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t Vocabulary::word_id(const std::string& w) const {
  auto it = word_ids.find(w);
  return it == word_ids.end() ? kUnkId : it->second;
}

std::size_t Vocabulary::answer_id(const std::string& a) const {
  auto it = answer_ids.find(a);
  if (it == answer_ids.end()) throw ContractViolation("vocabulary: unknown answer '" + a + "'");
  return it->second;
}

Vocabulary vocabulary_from_lists(std::vector<std::string> words, std::vector<std::string> answers) {
  Vocabulary v;
  v.words = std::move(words);
  v.answers = std::move(answers);
  for (std::size_t i = 0; i < v.words.size(); ++i) v.word_ids[v.words[i]] = i;
  for (std::size_t i = 0; i < v.answers.size(); ++i) v.answer_ids[v.answers[i]] = i;
  return v;
}

Vocabulary build_vocabulary(const std::vector<QAPair>& corpus) {
  require(!corpus.empty(), "build_vocabulary: empty corpus");
  std::set<std::string> words, answers;
  for (const auto& q : corpus) {
    for (auto& w : tokenize(q.text)) words.insert(std::move(w));
    answers.insert(q.answer);
  }
  std::vector<std::string> wl{"<pad>", "<unk>"};
  wl.insert(wl.end(), words.begin(), words.end());
  std::vector<std::string> al;
  for (const auto& a : canonical_answers())
    if (answers.erase(a)) al.push_back(a);
  al.insert(al.end(), answers.begin(), answers.end());
  return vocabulary_from_lists(std::move(wl), std::move(al));
}

EncodedQuestion encode_question(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  const auto toks = tokenize(text);
  require(!toks.empty(), "encode_question: no tokens in question");
  require(toks.size() <= max_len, "encode_question: question has " + std::to_string(toks.size()) +
                                      " words, limit is " + std::to_string(max_len));
  EncodedQuestion e;
  e.ids.assign(max_len, kPadId);
  e.length = toks.size();
  for (std::size_t i = 0; i < toks.size(); ++i) e.ids[i] = vocab.word_id(toks[i]);
  return e;
}

std::string decode_question(const std::vector<std::size_t>& ids, std::size_t length, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < length && i < ids.size(); ++i) {
    if (i) out += ' ';
    out += ids[i] < vocab.words.size() ? vocab.words[ids[i]] : "<unk>";
  }
  return out;
}

// --- dataset ------------------------------------------------------------------

std::string dataset_config_hash(const DatasetConfig& c) {
  std::ostringstream s;
  s << "seed=" << c.seed << ";train=" << c.n_train_scenes << ";test=" << c.n_test_scenes
    << ";qps=" << c.questions_per_scene << ";grid=" << c.grid << ";res=" << c.resolution << ";objs=" << c.min_objects
    << "-" << c.max_objects << ";lmax=" << c.max_len;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s.str())));
  return buf;
}

namespace {

struct Balancer {
  std::map<std::string, std::size_t> answer_use;
  std::array<std::size_t, kNumTemplates> template_use{};

  std::vector<QAPair> questions_for(const SceneSpec& s, std::size_t n, Rng& rng) {
    std::array<std::vector<Candidate>, kNumTemplates> by_template;
    for (std::size_t t = 0; t < kNumTemplates; ++t) by_template[t] = enumerate_candidates(s, Template(t));
    std::set<std::string> seen;
    std::vector<QAPair> out;
    for (std::size_t attempt = 0; out.size() < n && attempt < 20 * n; ++attempt) {
      std::set<std::string> available;
      for (const auto& cs : by_template)
        for (const auto& c : cs) available.insert(c.answer);
      if (available.empty()) break;
      std::vector<std::string> best;
      std::size_t best_use = SIZE_MAX;
      for (const auto& a : available) {
        const std::size_t u = answer_use[a];
        if (u < best_use) best.clear(), best_use = u;
        if (u == best_use) best.push_back(a);
      }
      const std::string answer = best[rng.below(best.size())];
      std::vector<std::size_t> tmpls;
      std::size_t tbest = SIZE_MAX;
      for (std::size_t t = 0; t < kNumTemplates; ++t) {
        if (std::none_of(by_template[t].begin(), by_template[t].end(), [&](const auto& c) { return c.answer == answer; }))
          continue;
        if (template_use[t] < tbest) tmpls.clear(), tbest = template_use[t];
        if (template_use[t] == tbest) tmpls.push_back(t);
      }
      const std::size_t t = tmpls[rng.below(tmpls.size())];
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < by_template[t].size(); ++i)
        if (by_template[t][i].answer == answer) pool.push_back(i);
      const std::size_t pick = pool[rng.below(pool.size())];
      QAPair q = realize(s, by_template[t][pick], rng);
      // One use per structured candidate keeps questions within a scene distinct.
      by_template[t].erase(by_template[t].begin() + std::ptrdiff_t(pick));
      if (!seen.insert(q.text).second) continue;
      ++answer_use[answer];
      ++template_use[t];
      out.push_back(std::move(q));
    }
    return out;
  }
};

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg) {
  require(cfg.n_train_scenes >= 1, "generate_dataset: need at least one training scene");
  require(cfg.min_objects >= 1 && cfg.min_objects <= cfg.max_objects && cfg.max_objects <= kMaxObjects,
          "generate_dataset: object count range invalid");
  require(cfg.questions_per_scene >= 1, "generate_dataset: questions_per_scene must be >= 1");
  Dataset ds;
  ds.config = cfg;
  const std::size_t n_scenes = cfg.n_train_scenes + cfg.n_test_scenes;
  const std::size_t elems = 3 * cfg.resolution * cfg.resolution;
  ds.images.resize(n_scenes * elems);
  Balancer train_bal, test_bal;
  for (std::size_t id = 0; id < n_scenes; ++id) {
    Rng srng = Rng::substream(cfg.seed, "scene", id);
    const std::size_t n_obj = cfg.min_objects + srng.below(cfg.max_objects - cfg.min_objects + 1);
    SceneSpec scene = generate_scene(srng.next_u64(), n_obj, cfg.grid, id);
    const auto img = render_scene_u8(scene, cfg.resolution);
    std::copy(img.begin(), img.end(), ds.images.begin() + std::ptrdiff_t(id * elems));
    Rng qrng = Rng::substream(cfg.seed, "questions", id);
    const bool test = id >= cfg.n_train_scenes;
    auto qs = (test ? test_bal : train_bal).questions_for(scene, cfg.questions_per_scene, qrng);
    auto& dst = test ? ds.test : ds.train;
    for (auto& q : qs) dst.push_back(std::move(q));
    ds.scenes.push_back(std::move(scene));
  }
  std::vector<QAPair> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  ds.vocab = build_vocabulary(all);
  for (auto* split : {&ds.train, &ds.test})
    for (auto& q : *split) {
      auto enc = encode_question(q.text, ds.vocab, cfg.max_len);
      q.tokens = std::move(enc.ids);
      q.length = enc.length;
      q.answer_id = ds.vocab.answer_id(q.answer);
    }
  return ds;
}

template <class T>
Tensor<T> Dataset::image(std::uint64_t scene_id) const {
  require(scene_id < scenes.size(), "dataset: scene id out of range");
  const std::size_t n = image_elems();
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = T(images[scene_id * n + i]) / T(255);
  return Tensor<T>({3, config.resolution, config.resolution}, std::move(v));
}

template Tensor<float> Dataset::image(std::uint64_t) const;
template Tensor<double> Dataset::image(std::uint64_t) const;

namespace {

using nlohmann::json;

json scene_to_json(const SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"shape", shape_word(o.shape)},
                    {"color", color_word(o.color)},
                    {"size", size_word(o.size)},
                    {"row", o.row},
                    {"col", o.col}});
  return {{"scene_id", s.id}, {"grid", s.grid}, {"objects", objs}};
}

template <class Arr>
std::size_t index_of(const Arr& words, const std::string& w, const char* what) {
  for (std::size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return i;
  throw DataError(std::string("dataset: unknown ") + what + " '" + w + "'");
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.id = j.at("scene_id").get<std::uint64_t>();
  s.grid = j.at("grid").get<std::uint32_t>();
  for (const auto& o : j.at("objects")) {
    SceneObject so;
    so.shape = ShapeKind(index_of(kShapeWords, o.at("shape").get<std::string>(), "shape"));
    so.color = Color(index_of(kColorWords, o.at("color").get<std::string>(), "color"));
    so.size = SizeKind(index_of(kSizeWords, o.at("size").get<std::string>(), "size"));
    so.row = o.at("row").get<std::uint32_t>();
    so.col = o.at("col").get<std::uint32_t>();
    s.objects.push_back(so);
  }
  return s;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& tool_version) {
  std::filesystem::create_directories(dir);
  const auto& c = ds.config;
  const std::string hash = dataset_config_hash(c);
  json manifest = {
      {"tool", "musc"},
      {"tool_version", tool_version},
      {"config_hash", hash},
      {"seed", c.seed},
      {"config",
       {{"n_train_scenes", c.n_train_scenes},
        {"n_test_scenes", c.n_test_scenes},
        {"questions_per_scene", c.questions_per_scene},
        {"grid", c.grid},
        {"resolution", c.resolution},
        {"min_objects", c.min_objects},
        {"max_objects", c.max_objects},
        {"max_len", c.max_len}}},
      {"counts", {{"scenes", ds.scenes.size()}, {"train_questions", ds.train.size()}, {"test_questions", ds.test.size()}}},
      {"vocabulary", ds.vocab.words},
      {"answers", ds.vocab.answers},
  };
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "scenes.jsonl", std::ios::trunc);
    for (const auto& s : ds.scenes) {
      json j = scene_to_json(s);
      j["split"] = ds.is_test_scene(s.id) ? "test" : "train";
      out << j.dump() << '\n';
    }
  }
  {
    std::ofstream out(dir / "questions.jsonl", std::ios::trunc);
    for (const auto* split : {&ds.train, &ds.test})
      for (const auto& q : *split) {
        json j = {{"scene_id", q.scene_id},
                  {"split", split == &ds.train ? "train" : "test"},
                  {"tokens", q.tokens},
                  {"length", q.length},
                  {"answer_id", q.answer_id},
                  {"answer", q.answer},
                  {"template_id", int(q.template_id)},
                  {"text", q.text}};
        out << j.dump() << '\n';
      }
  }
  ContainerWriter w;
  w.set_meta({{"config_hash", hash}, {"tool_version", tool_version}, {"seed", c.seed}});
  w.add_u8("images", {ds.scenes.size(), 3, c.resolution, c.resolution}, ds.images);
  w.write(dir / "images.bin");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto read_text = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw DataError("dataset: cannot open '" + (dir / name).string() + "'");
    return in;
  };
  Dataset ds;
  json manifest;
  try {
    auto in = read_text("manifest.json");
    manifest = json::parse(in);
    const auto& c = manifest.at("config");
    ds.config.seed = manifest.at("seed").get<std::uint64_t>();
    ds.config.n_train_scenes = c.at("n_train_scenes");
    ds.config.n_test_scenes = c.at("n_test_scenes");
    ds.config.questions_per_scene = c.at("questions_per_scene");
    ds.config.grid = c.at("grid");
    ds.config.resolution = c.at("resolution");
    ds.config.min_objects = c.at("min_objects");
    ds.config.max_objects = c.at("max_objects");
    ds.config.max_len = c.at("max_len");
    ds.vocab = vocabulary_from_lists(manifest.at("vocabulary").get<std::vector<std::string>>(),
                                     manifest.at("answers").get<std::vector<std::string>>());
    auto sin = read_text("scenes.jsonl");
    for (std::string line; std::getline(sin, line);)
      if (!line.empty()) ds.scenes.push_back(scene_from_json(json::parse(line)));
    auto qin = read_text("questions.jsonl");
    for (std::string line; std::getline(qin, line);) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      QAPair q;
      q.scene_id = j.at("scene_id");
      q.tokens = j.at("tokens").get<std::vector<std::size_t>>();
      q.length = j.at("length");
      q.answer_id = j.at("answer_id");
      q.answer = j.at("answer");
      q.template_id = Template(j.at("template_id").get<int>());
      q.text = j.at("text");
      (j.at("split") == "test" ? ds.test : ds.train).push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset: malformed file: ") + e.what());
  }
  if (manifest.at("config_hash").get<std::string>() != dataset_config_hash(ds.config))
    throw DataError("dataset: manifest config hash does not match its config");
  for (std::size_t i = 0; i < ds.scenes.size(); ++i)
    if (ds.scenes[i].id != i) throw DataError("dataset: scene ids are not contiguous");
  ContainerReader r(dir / "images.bin");
  ds.images = r.read_u8("images");
  if (ds.images.size() != ds.scenes.size() * ds.image_elems()) throw DataError("dataset: image payload size mismatch");
  for (const auto& q : ds.train)
    if (q.scene_id >= ds.config.n_train_scenes) throw DataError("dataset: train question references a test scene");
  for (const auto& q : ds.test)
    if (q.scene_id < ds.config.n_train_scenes) throw DataError("dataset: test question references a train scene");
  return ds;
}

}  // namespace musc::data
