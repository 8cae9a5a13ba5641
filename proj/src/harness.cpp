#include "musc/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "musc/container.hpp"
#include "musc/errors.hpp"

namespace musc::harness {

using nlohmann::json;

// --- configuration ----------------------------------------------------------

const std::vector<std::pair<std::string, std::string>>& Config::schema() {
  // Empty model defaults mean "take the value of the chosen scale".
  static const std::vector<std::pair<std::string, std::string>> s = {
      {"seed", "1"},
      {"threads", "1"},
      {"data.n_train_scenes", "2000"},
      {"data.n_test_scenes", "200"},
      {"data.questions_per_scene", "5"},
      {"data.min_objects", "2"},
      {"data.max_objects", "6"},
      {"data.grid", "4"},
      {"scale", "toy"},
      {"C1", ""},
      {"C2", ""},
      {"K1", ""},
      {"K2", ""},
      {"L_max", ""},
      {"embed_dim", ""},
      {"lstm_hidden", ""},
      {"freeze_semantic_encoder", ""},
      {"mac.cells", ""},
      {"mac.dim", ""},
      {"train.arch", "mu_deepsc"},
      {"train.batch_scenes", "8"},
      {"train.epochs", "20"},
      {"train.max_steps", "0"},
      {"train.lr", "1e-4"},
      {"train.clip_norm", "0"},
      {"train.snr_lo", "0"},
      {"train.snr_hi", "18"},
      {"train.channel", "true"},
      {"train.noiseless_epochs", "0"},
      {"train.val_fraction", "0.1"},
      {"train.patience", "5"},
      {"train.init_from", ""},
      {"train.warm_start", "false"},
      {"train.freeze_after_init", "true"},
      {"channel.kind", "rician"},
      {"channel.M", "2"},
      {"channel.rician_k", "2"},
      {"channel.cond_max", "1e4"},
      {"snr_db", "-6,0,6,12,18"},
      {"eval.kinds", "awgn,rayleigh,rician"},
      {"eval.methods", "mu_deepsc,traditional,text_only,image_only,error_free"},
      {"eval.max_questions", "0"},
      {"baseline.jpeg_quality", "75"},
      {"baseline.ldpc_n", "1536"},
      {"baseline.ldpc_k", "512"},
      {"count.samples", "20"},
  };
  return s;
}

Config::Config() {
  for (const auto& [k, v] : schema()) values_[k] = v;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractViolation("unknown config key '" + key + "'");
  it->second = value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ContractViolation("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    try {
      apply_override(line);
    } catch (const ContractViolation& e) {
      throw ContractViolation(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ContractViolation("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ContractViolation("config key '" + key + "': '" + v + "' is not a number");
  }
}

std::size_t Config::get_size(const std::string& key) const {
  const auto& v = get(key);
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ContractViolation("config key '" + key + "': '" + v + "' is not a non-negative integer");
  return std::stoull(v);
}

bool Config::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractViolation("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractViolation("config key '" + key + "': '" + item + "' is not a number");
    }
  }
  return out;
}

std::string Config::hash() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

json Config::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

ModelConfig model_config(const Config& c) {
  ModelConfig mc;
  mc.tc = transceiver::config_for_scale(c.get("scale"));
  auto& t = mc.tc;
  const bool paper = t.scale == "paper";
  mc.mac.cells = paper ? 12 : 3;
  mc.mac.dim = paper ? 512 : 64;
  auto size_or = [&](const char* key, std::size_t& field) {
    if (!c.get(key).empty()) field = c.get_size(key);
  };
  size_or("C1", t.c1);
  size_or("C2", t.c2);
  size_or("K1", t.k1);
  size_or("K2", t.k2);
  size_or("L_max", t.max_len);
  size_or("embed_dim", t.embed_dim);
  size_or("lstm_hidden", t.lstm_hidden);
  size_or("mac.cells", mc.mac.cells);
  size_or("mac.dim", mc.mac.dim);
  if (!c.get("freeze_semantic_encoder").empty()) t.freeze_semantic_encoder = c.get_bool("freeze_semantic_encoder");
  t.validate();
  return mc;
}

ModelConfig model_config(const Config& c, const data::Vocabulary& vocab) {
  auto mc = model_config(c);
  mc.vocab_size = vocab.size();
  mc.mac.n_answers = vocab.answers.size();
  return mc;
}

data::DatasetConfig dataset_config(const Config& c) {
  const auto mc = model_config(c);
  data::DatasetConfig d;
  d.seed = c.get_size("seed");
  d.n_train_scenes = c.get_size("data.n_train_scenes");
  d.n_test_scenes = c.get_size("data.n_test_scenes");
  d.questions_per_scene = c.get_size("data.questions_per_scene");
  d.min_objects = c.get_size("data.min_objects");
  d.max_objects = c.get_size("data.max_objects");
  d.grid = std::uint32_t(c.get_size("data.grid"));
  d.resolution = mc.tc.resolution();
  d.max_len = mc.tc.max_len;
  return d;
}

channel::ChannelConfig channel_config(const Config& c) {
  channel::ChannelConfig ch;
  ch.kind = channel::parse_kind(c.get("channel.kind"));
  ch.antennas = c.get_size("channel.M");
  ch.rician_k = c.get_double("channel.rician_k");
  ch.cond_max = c.get_double("channel.cond_max");
  require(ch.antennas >= 2, "channel.M must be at least the number of users (2)");
  require(ch.rician_k >= 0, "channel.rician_k must be >= 0");
  require(ch.cond_max > 1, "channel.cond_max must exceed 1");
  return ch;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.arch = parse_arch(c.get("train.arch"));
  t.batch_scenes = c.get_size("train.batch_scenes");
  t.epochs = c.get_size("train.epochs");
  t.max_steps = c.get_size("train.max_steps");
  t.lr = c.get_double("train.lr");
  t.clip_norm = c.get_double("train.clip_norm");
  t.snr_lo = c.get_double("train.snr_lo");
  t.snr_hi = c.get_double("train.snr_hi");
  t.channel_enabled = c.get_bool("train.channel");
  t.noiseless_epochs = c.get_size("train.noiseless_epochs");
  t.channel = channel_config(c);
  t.val_fraction = c.get_double("train.val_fraction");
  t.patience = c.get_size("train.patience");
  t.seed = c.get_size("seed");
  t.threads = std::max<std::size_t>(1, c.get_size("threads"));
  require(t.lr > 0, "train.lr must be positive");
  require(t.snr_lo <= t.snr_hi, "train.snr_lo must not exceed train.snr_hi");
  return t;
}

// --- cost accounting --------------------------------------------------------

OpCount conv_ops(std::size_t h, std::size_t w, std::size_t c_in, std::size_t c_out, std::size_t k) {
  const std::uint64_t outputs = std::uint64_t(h) * w * c_out, taps = std::uint64_t(c_in) * k * k;
  return {outputs * taps, taps ? outputs * ((taps - 1) + 1) : 0};
}

OpCount dense_ops(std::size_t n_in, std::size_t n_out) {
  const std::uint64_t n = std::uint64_t(n_in) * n_out;
  return {n, n};
}

CostReport count_symbols_and_ops(const transceiver::TransceiverConfig& tc) {
  CostReport r;
  r.scale = tc.scale;
  r.image_symbols = tc.image_symbols();
  r.text_symbols_per_word = tc.text_symbols_per_word();
  r.text_symbols_per_question = tc.text_symbols();
  r.image_encoder += conv_ops(tc.h, tc.w, tc.c1, tc.image_ce_mid, 3);
  r.image_encoder += conv_ops(tc.h, tc.w, tc.image_ce_mid, tc.c2, 3);
  r.image_encoder_decoder = r.image_encoder;
  r.image_encoder_decoder += conv_ops(tc.h, tc.w, tc.c2, tc.image_cd_mid, 3);
  r.image_encoder_decoder += conv_ops(tc.h, tc.w, tc.image_cd_mid, tc.c1, 3);
  std::size_t in = tc.k1;
  for (std::size_t wdt : tc.text_ce_hidden) {
    r.text_encoder += dense_ops(in, wdt);
    in = wdt;
  }
  r.text_encoder += dense_ops(in, tc.k2);
  r.text_encoder_decoder = r.text_encoder;
  in = tc.k2;
  for (std::size_t wdt : tc.text_cd_hidden) {
    r.text_encoder_decoder += dense_ops(in, wdt);
    in = wdt;
  }
  r.text_encoder_decoder += dense_ops(in, tc.k1);
  return r;
}

void measure_traditional(CostReport& r, const transceiver::TransceiverConfig& tc, std::size_t n, int jpeg_quality,
                         std::uint64_t seed) {
  if (n == 0) return;
  const std::size_t res = tc.resolution();
  std::vector<std::vector<std::string>> corpus;
  std::vector<data::SceneSpec> scenes;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, "count-scene", i);
    scenes.push_back(data::generate_scene(rng.next_u64(), 2 + rng.below(5), 4, i));
    for (std::size_t t = 0; t < data::kNumTemplates; ++t)
      if (auto q = data::generate_question(scenes.back(), data::Template(t), rng.next_u64()))
        corpus.push_back(data::tokenize(q->text));
  }
  const auto table = classical::HuffmanTable::build(corpus);
  double img_bits = 0, img_sym = 0, txt_bits = 0, words = 0;
  for (const auto& s : scenes) {
    const auto enc = classical::dct_image_encode(data::render_scene_u8(s, res), 3, res, res, jpeg_quality);
    img_bits += double(enc.bits.size());
    img_sym += double(classical::traditional_symbols(enc.bits.size()));
  }
  for (const auto& q : corpus) {
    txt_bits += double(classical::huffman_encode(q, table).size());
    words += double(q.size());
  }
  r.trad_samples = n;
  r.trad_image_bits = img_bits / double(n);
  r.trad_image_symbols = img_sym / double(n);
  r.trad_text_bits_per_word = txt_bits / words;
  r.trad_text_symbols_per_word = double(classical::traditional_symbols(std::size_t(std::lround(txt_bits)))) / words;
}

json cost_report_json(const CostReport& r, const json& provenance) {
  auto ops = [](const OpCount& o) { return json{{"mults", o.mults}, {"adds", o.adds}}; };
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {
      {"provenance", provenance},
      {"scale", r.scale},
      {"convention",
       {{"conv", "mults = H*W*Cout*Cin*k^2; adds = H*W*Cout*((Cin*k^2 - 1) + 1), bias add counted"},
        {"dense", "mults = adds = n_in*n_out, bias add counted"},
        {"scope", "channel encoder/decoder layers only; text counts are per word"},
        {"note", "the published image addition count (2.6e8) is not reproducible under a convention that also "
                 "reproduces the multiplication count"}}},
      {"semantic",
       {{"image",
         {{"symbols", r.image_symbols},
          {"encoder", ops(r.image_encoder)},
          {"encoder_decoder", ops(r.image_encoder_decoder)}}},
        {"text",
         {{"symbols_per_word", r.text_symbols_per_word},
          {"symbols_per_question", r.text_symbols_per_question},
          {"encoder", ops(r.text_encoder)},
          {"encoder_decoder", ops(r.text_encoder_decoder)}}}}},
      {"traditional",
       {{"samples", r.trad_samples},
        {"symbol_rule", "ceil(3 * source_bits / 4): rate-1/3 coding, 4 bits per 16-QAM symbol"},
        {"image", {{"source_bits", opt(r.trad_image_bits)}, {"symbols", opt(r.trad_image_symbols)}}},
        {"text",
         {{"bits_per_word", opt(r.trad_text_bits_per_word)},
          {"symbols_per_word", opt(r.trad_text_symbols_per_word)}}}}},
  };
}

// --- checkpoints -------------------------------------------------------------

std::size_t warm_start(Model<float>& dst, const Model<float>& src) {
  static const std::set<std::string> groups = {transceiver::kAlphaI, transceiver::kAlphaT, fusion::kPhi};
  auto& to = dst.params();
  const auto& from = src.params();
  std::size_t copied = 0;
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (!groups.contains(to.group(i))) continue;
    const auto j = from.find(to.name(i));
    if (!j || from.group(*j) != to.group(i) || from.tensor(*j).shape() != to.tensor(i).shape()) continue;
    to.tensor(i) = from.tensor(*j);
    ++copied;
  }
  return copied;
}

json epoch_log_json(const std::vector<EpochLog>& log) {
  json a = json::array();
  for (const auto& e : log)
    a.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
                 {"val_accuracy", e.val_accuracy}});
  return a;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& dataset_hash,
                     const json& extra) {
  json meta = extra.is_object() ? extra : json::object();
  meta["format"] = "musc-checkpoint";
  meta["tool_version"] = kToolVersion;
  meta["arch"] = arch_name(model.arch());
  meta["model_config"] = model_config_to_json(model.config());
  meta["dataset_hash"] = dataset_hash;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_params(path, model.params(), meta);
}

Model<float> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  ContainerReader reader(path);
  const auto& meta = reader.meta();
  if (meta.value("format", "") != "musc-checkpoint") throw DataError(path.string() + " is not a checkpoint");
  Arch arch;
  try {
    arch = parse_arch(meta.at("arch").get<std::string>());
  } catch (const std::exception& e) {
    throw DataError("checkpoint " + path.string() + ": bad architecture (" + e.what() + ")");
  }
  const auto mc = model_config_from_json(meta.at("model_config"));
  Model<float> model(arch, mc, 0);
  load_params(reader, model.params());
  if (info) {
    info->arch = arch;
    info->model = mc;
    info->dataset_hash = meta.value("dataset_hash", "");
    info->meta = meta;
  }
  return model;
}

// --- evaluation sweeps -------------------------------------------------------

classical::TraditionalCodec build_traditional_codec(const data::Dataset& ds, int jpeg_quality, std::size_t ldpc_n,
                                                    std::size_t ldpc_k, std::uint64_t seed) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& q : ds.train) corpus.push_back(data::tokenize(q.text));
  corpus.push_back({"<unk>"});  // words never seen in training
  return {classical::HuffmanTable::build(corpus), classical::LdpcCode::build(ldpc_n, ldpc_k, 3, seed), jpeg_quality};
}

EvalResult evaluate_traditional(const Model<float>& error_free, const data::Dataset& ds,
                                const std::vector<data::QAPair>& split, const std::vector<SceneGroup>& groups,
                                const classical::TraditionalCodec& codec, const channel::ChannelConfig& ch,
                                double snr_db, std::uint64_t seed, std::size_t threads) {
  require(error_free.arch() == Arch::kErrorFree, "evaluate_traditional: needs the error-free model");
  const std::size_t res = ds.config.resolution, n_img = ds.image_elems();
  const std::size_t max_len = error_free.config().tc.max_len;
  std::vector<std::vector<std::size_t>> preds(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t gi) {
    const auto& g = groups[gi];
    Rng rng = Rng::substream(seed, "traditional-channel", g.scene_id);
    const std::vector<std::uint8_t> image(ds.images.begin() + std::ptrdiff_t(g.scene_id * n_img),
                                          ds.images.begin() + std::ptrdiff_t((g.scene_id + 1) * n_img));
    for (std::size_t qi : g.questions) {
      const auto& q = split[qi];
      auto words = data::tokenize(q.text);
      for (auto& w : words)
        if (!codec.huffman.index(w)) w = "<unk>";
      const auto rx = classical::traditional_transmit(image, res, words, codec, ch, snr_db, rng);
      if (rx.failed) {
        preds[gi].push_back(SIZE_MAX);
        continue;
      }
      std::vector<float> pixels(rx.image.size());
      for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = float(rx.image[i]) / 255.0f;
      std::vector<std::size_t> ids(max_len, data::kPadId);
      for (std::size_t i = 0; i < rx.words.size() && i < max_len; ++i) ids[i] = ds.vocab.word_id(rx.words[i]);
      ad::Tape<float> tape(false);
      Binder<float> p(tape, error_free.params());
      ChannelSetting none;
      none.enabled = false;
      const auto logits = error_free.forward_scene(p, Tensor<float>({3, res, res}, std::move(pixels)),
                                                   {{&ids, q.length}}, none, rng);
      preds[gi].push_back(argmax(logits[0].value()));
    }
  });
  EvalResult r;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t k = 0; k < groups[gi].questions.size(); ++k) {
      const std::size_t pred = preds[gi][k];
      r.predictions.push_back(pred);
      r.correct += pred == split[groups[gi].questions[k]].answer_id;
      ++r.n;
    }
  return r;
}

ExperimentResult run_experiment(const data::Dataset& ds, const ExperimentSpec& spec) {
  std::vector<std::size_t> which;
  const std::size_t n_q = spec.max_test_questions ? std::min(spec.max_test_questions, ds.test.size()) : ds.test.size();
  for (std::size_t i = 0; i < n_q; ++i) which.push_back(i);
  const auto groups = group_by_scene(ds.test, which);
  std::vector<std::size_t> order;  // group order -> question index
  for (const auto& g : groups) order.insert(order.end(), g.questions.begin(), g.questions.end());

  ExperimentResult out;
  std::map<std::string, std::vector<std::size_t>> dumped;
  for (const auto& method : spec.methods) {
    auto cell = [&](channel::Kind kind, double snr) {
      channel::ChannelConfig ch = spec.channel;
      ch.kind = kind;
      if (method == "traditional") {
        require(spec.codec != nullptr, "traditional method needs a codec");
        auto it = spec.models.find("error_free");
        require(it != spec.models.end() && it->second, "traditional method needs the error_free model");
        return evaluate_traditional(*it->second, ds, ds.test, groups, *spec.codec, ch, snr, spec.seed, spec.threads);
      }
      auto it = spec.models.find(method);
      require(it != spec.models.end() && it->second, "no model for method '" + method + "'");
      require(arch_name(it->second->arch()) == method,
              "model for '" + method + "' has architecture " + arch_name(it->second->arch()));
      ChannelSetting setting;
      setting.cfg = ch;
      setting.snr_db = snr;
      return evaluate(*it->second, ds, ds.test, groups, setting, spec.seed, spec.threads);
    };
    std::vector<EvalRecord> rows;
    try {
      bool have_dump = false;
      for (auto kind : spec.kinds)
        for (double snr : spec.snrs) {
          const auto r = cell(kind, snr);
          rows.push_back({method, channel::kind_name(kind), snr, r.correct, r.n, spec.seed, false});
          if (kind == spec.dump_kind && snr == spec.dump_snr) {
            dumped[method] = r.predictions;
            have_dump = true;
          }
        }
      if (!have_dump) dumped[method] = cell(spec.dump_kind, spec.dump_snr).predictions;
    } catch (const std::exception& e) {
      std::cerr << "method " << method << " failed: " << e.what() << "\n";
      rows.clear();
      for (auto kind : spec.kinds)
        for (double snr : spec.snrs) rows.push_back({method, channel::kind_name(kind), snr, 0, 0, spec.seed, true});
      dumped.erase(method);
    }
    out.records.insert(out.records.end(), rows.begin(), rows.end());
  }

  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& q = ds.test[order[k]];
    json answers = json::object();
    for (const auto& [method, preds] : dumped)
      answers[method] = preds[k] < ds.vocab.answers.size() ? json(ds.vocab.answers[preds[k]]) : json(nullptr);
    out.predictions.push_back({{"scene_id", q.scene_id},
                               {"question", q.text},
                               {"truth", q.answer},
                               {"channel", channel::kind_name(spec.dump_kind)},
                               {"snr_db", spec.dump_snr},
                               {"answers", answers}});
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string records_csv(const std::vector<EvalRecord>& records, const std::string& config_hash, std::uint64_t seed) {
  std::string s = std::string("# tool=") + kToolVersion + " config_hash=" + config_hash +
                  " seed=" + std::to_string(seed) + "\n";
  s += "method,channel,snr_db,accuracy,n,seed\n";
  for (const auto& r : records)
    s += r.method + "," + r.channel + "," + fmt(r.snr_db) + "," + (r.failed ? "nan" : fmt(r.accuracy())) + "," +
         std::to_string(r.n) + "," + std::to_string(r.seed) + "\n";
  return s;
}

std::vector<EvalRecord> parse_records_csv(const std::string& text, std::string* config_hash) {
  std::vector<EvalRecord> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto at = line.find("config_hash=");
      if (at != std::string::npos && config_hash) *config_hash = line.substr(at + 12, line.find(' ', at) - at - 12);
      continue;
    }
    if (!header) {
      if (line != "method,channel,snr_db,accuracy,n,seed") throw DataError("results csv: unexpected header");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw DataError("results csv line " + std::to_string(lineno) + ": expected 6 fields");
    EvalRecord r;
    try {
      r.method = f[0];
      r.channel = f[1];
      r.snr_db = std::stod(f[2]);
      r.n = std::stoull(f[4]);
      r.seed = std::stoull(f[5]);
      r.failed = f[3] == "nan";
      if (!r.failed) r.correct = std::size_t(std::llround(std::stod(f[3]) * double(r.n)));
    } catch (const std::exception&) {
      throw DataError("results csv line " + std::to_string(lineno) + ": malformed field");
    }
    out.push_back(r);
  }
  if (!header) throw DataError("results csv: missing header");
  return out;
}

std::string jsonl(const json& array) {
  std::string s;
  for (const auto& item : array) s += item.dump() + "\n";
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace musc::harness
