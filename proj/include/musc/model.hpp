#pragma once

// End-to-end models: the two-user semantic system and its baselines, built
// from the transceiver, channel and fusion pieces.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "musc/channel.hpp"
#include "musc/mac.hpp"
#include "musc/transceiver.hpp"

namespace musc::harness {

// kMuDeepSC: encoders -> channel -> decoders -> MAC.
// kErrorFree: semantic encoders -> MAC, no channel coders or channel.
// kTextOnly / kImageOnly: one user's chain through the channel -> one-layer head.
enum class Arch { kMuDeepSC, kErrorFree, kTextOnly, kImageOnly };

const char* arch_name(Arch a);
Arch parse_arch(const std::string& s);

struct ModelConfig {
  transceiver::TransceiverConfig tc;
  fusion::MacConfig mac;
  std::size_t vocab_size = 0;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ChannelSetting {
  bool enabled = true;
  channel::ChannelConfig cfg;
  double snr_db = 18.0;  // +inf gives a noiseless channel
};

struct QuestionInput {
  const std::vector<std::size_t>* ids = nullptr;  // L_max token ids
  std::size_t length = 0;
};

template <class T>
struct ForwardDetail {
  std::vector<fusion::MacOutput<T>> mac;  // per question (MAC architectures only)
  channel::StageInfo channel;
};

template <class T>
class Model {
 public:
  Model(Arch arch, const ModelConfig& cfg, std::uint64_t seed);

  Arch arch() const { return arch_; }
  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  bool uses_channel() const { return arch_ != Arch::kErrorFree; }

  // Logits [n_answers] for every question about one image. The image-side
  // encoders run once; each question gets its own channel draw.
  std::vector<ad::Var<T>> forward_scene(Binder<T>& p, const Tensor<T>& image, const std::vector<QuestionInput>& qs,
                                        const ChannelSetting& ch, Rng& rng, ForwardDetail<T>* detail = nullptr) const;

  // Groups present in this architecture, in registration order.
  std::vector<std::string> groups() const;

 private:
  Arch arch_;
  ModelConfig cfg_;
  ParamStore<T> store_;
  std::optional<transceiver::ImageEncoderParams> image_enc_;
  std::optional<transceiver::TextEncoderParams> text_enc_;
  std::optional<fusion::DecoderParams> dec_;
  std::optional<fusion::MacParams> mac_;
  std::optional<fusion::ClassifierParams> head_;
};

// Index of the largest logit (first on ties).
template <class T>
std::size_t argmax(const Tensor<T>& logits);

}  // namespace musc::harness
