#pragma once

// Config files, cost accounting, checkpoints and evaluation sweeps.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "musc/classical.hpp"
#include "musc/train.hpp"

namespace musc::harness {

inline constexpr const char* kToolVersion = MUSC_VERSION;

// --- configuration ----------------------------------------------------------

// Flat dotted key=value settings over a fixed schema. Files hold one
// `key = value` per line; `#` starts a comment. Unknown keys are rejected.
class Config {
 public:
  Config();  // every key at its default
  static const std::vector<std::pair<std::string, std::string>>& schema();  // key, default

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);  // "key=value"
  void load_file(const std::filesystem::path& path);
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma separated
  std::vector<std::string> get_list(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  // FNV-1a over the sorted key=value lines, 16 hex digits.
  std::string hash() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

data::DatasetConfig dataset_config(const Config& c);
ModelConfig model_config(const Config& c, const data::Vocabulary& vocab);
// Model config before a dataset exists (vocabulary size unknown).
ModelConfig model_config(const Config& c);
TrainConfig train_config(const Config& c);
channel::ChannelConfig channel_config(const Config& c);

// --- cost accounting --------------------------------------------------------

struct OpCount {
  std::uint64_t mults = 0, adds = 0;
  OpCount& operator+=(const OpCount& o) {
    mults += o.mults;
    adds += o.adds;
    return *this;
  }
};

// Conv: mults = H*W*Cout*Cin*k^2, adds = H*W*Cout*((Cin*k^2 - 1) + 1).
OpCount conv_ops(std::size_t h, std::size_t w, std::size_t c_in, std::size_t c_out, std::size_t k);
// Dense: mults = adds = n_in*n_out.
OpCount dense_ops(std::size_t n_in, std::size_t n_out);

struct CostReport {
  std::string scale;
  std::size_t image_symbols = 0;
  std::size_t text_symbols_per_word = 0;
  std::size_t text_symbols_per_question = 0;
  OpCount image_encoder, image_encoder_decoder;
  OpCount text_encoder, text_encoder_decoder;  // per word
  // Measured on generated samples; absent when no samples were measured.
  std::optional<double> trad_image_bits, trad_image_symbols;
  std::optional<double> trad_text_bits_per_word, trad_text_symbols_per_word;
  std::size_t trad_samples = 0;
};

// Pure config arithmetic.
CostReport count_symbols_and_ops(const transceiver::TransceiverConfig& tc);
// Adds the traditional chain's per-sample source sizes measured on `n`
// generated scenes at the config resolution (quality `jpeg_quality`).
void measure_traditional(CostReport& r, const transceiver::TransceiverConfig& tc, std::size_t n, int jpeg_quality,
                         std::uint64_t seed);
nlohmann::json cost_report_json(const CostReport& r, const nlohmann::json& provenance);

// --- checkpoints -------------------------------------------------------------

struct CheckpointInfo {
  Arch arch = Arch::kMuDeepSC;
  ModelConfig model;
  std::string dataset_hash;
  nlohmann::json meta;  // everything stored in the header
};

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const std::string& dataset_hash,
                     const nlohmann::json& extra);
// Throws DataError for missing or mismatched files.
Model<float> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

// Copies semantic encoder and MAC parameters (groups alpha_I, alpha_T, phi)
// from `src` wherever name and shape match; returns the number copied.
std::size_t warm_start(Model<float>& dst, const Model<float>& src);

nlohmann::json epoch_log_json(const std::vector<EpochLog>& log);  // without wall-clock times

// --- evaluation sweeps -------------------------------------------------------

struct EvalRecord {
  std::string method;
  std::string channel;
  double snr_db = 0;
  std::size_t correct = 0, n = 0;
  std::uint64_t seed = 0;
  bool failed = false;  // the method raised; accuracy reported as nan
  double accuracy() const { return n ? double(correct) / double(n) : 0.0; }
};

// Accuracy of the separate source/channel chain: both sources go through
// traditional_transmit and the reconstructions feed the error-free model.
EvalResult evaluate_traditional(const Model<float>& error_free, const data::Dataset& ds,
                                const std::vector<data::QAPair>& split, const std::vector<SceneGroup>& groups,
                                const classical::TraditionalCodec& codec, const channel::ChannelConfig& ch,
                                double snr_db, std::uint64_t seed, std::size_t threads = 1);

classical::TraditionalCodec build_traditional_codec(const data::Dataset& ds, int jpeg_quality, std::size_t ldpc_n,
                                                    std::size_t ldpc_k, std::uint64_t seed);

struct ExperimentSpec {
  // method -> model; "traditional" uses the "error_free" model.
  std::map<std::string, const Model<float>*> models;
  std::vector<std::string> methods;
  std::vector<channel::Kind> kinds;
  std::vector<double> snrs;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t max_test_questions = 0;  // 0 = whole test split
  channel::ChannelConfig channel;      // kind is overridden per cell
  const classical::TraditionalCodec* codec = nullptr;
  // Per-sample predictions are recorded at this cell.
  channel::Kind dump_kind = channel::Kind::kRician;
  double dump_snr = 18.0;
};

struct ExperimentResult {
  std::vector<EvalRecord> records;
  nlohmann::json predictions = nlohmann::json::array();  // one object per test question
};

ExperimentResult run_experiment(const data::Dataset& ds, const ExperimentSpec& spec);

// "# tool=<v> config_hash=<h> seed=<s>" then the header and one row per record.
std::string records_csv(const std::vector<EvalRecord>& records, const std::string& config_hash, std::uint64_t seed);
// Inverse of records_csv; provenance line is returned through `config_hash`.
std::vector<EvalRecord> parse_records_csv(const std::string& text, std::string* config_hash = nullptr);

std::string jsonl(const nlohmann::json& array);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace musc::harness
