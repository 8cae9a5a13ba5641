#pragma once

// Transmitter side: semantic and channel encoders for the image user and the
// text user, and the conversion of encoder outputs to unit-power symbols.

#include <string>
#include <vector>

#include "musc/autodiff.hpp"
#include "musc/layers.hpp"

namespace musc::transceiver {

struct TransceiverConfig {
  std::string scale = "toy";
  std::size_t c1 = 64, c2 = 16, k1 = 64, k2 = 16;
  std::size_t h = 8, w = 8;
  std::size_t max_len = 16;
  std::size_t embed_dim = 32;
  std::size_t lstm_hidden = 32;
  std::vector<std::size_t> image_se_widths{16, 32};  // blocks before the last one, which outputs C1
  std::size_t image_ce_mid = 32;
  std::vector<std::size_t> text_ce_hidden{32};
  std::size_t image_cd_mid = 32;
  std::vector<std::size_t> text_cd_hidden{32, 32};
  bool freeze_semantic_encoder = false;

  // Input resolution implied by the stride-2 blocks.
  std::size_t resolution() const { return h << (image_se_widths.size() + 1); }
  std::size_t image_symbols() const { return c2 * h * w / 2; }
  std::size_t text_symbols() const { return k2 * max_len / 2; }
  std::size_t text_symbols_per_word() const { return k2 / 2; }
  void validate() const;
};

TransceiverConfig toy_config();
TransceiverConfig paper_config();
// "toy" or "paper"; anything else is a contract violation.
TransceiverConfig config_for_scale(const std::string& scale);

// Parameter groups in the store.
inline constexpr const char* kAlphaI = "alpha_I";
inline constexpr const char* kBetaI = "beta_I";
inline constexpr const char* kAlphaT = "alpha_T";
inline constexpr const char* kBetaT = "beta_T";

struct ImageEncoderParams {
  std::vector<ConvIdx> semantic;  // stride-2 blocks
  std::vector<ConvIdx> channel;   // two convs, C1 -> mid -> C2
};

struct LstmIdx {
  std::size_t wx = 0, wh = 0, b = 0;
};

struct TextEncoderParams {
  std::size_t embedding = 0;
  LstmIdx fwd, bwd;
  DenseIdx project;               // 2H -> K1
  std::vector<DenseIdx> channel;  // K1 -> ... -> K2
};

template <class T>
ImageEncoderParams register_image_encoder(ParamStore<T>& s, const TransceiverConfig& c, Rng& rng);
template <class T>
TextEncoderParams register_text_encoder(ParamStore<T>& s, const TransceiverConfig& c, std::size_t vocab_size,
                                        Rng& rng);

// image [3, R, R] -> M_I [C1, h, w]
template <class T>
ad::Var<T> image_semantic_encode(Binder<T>& p, const ImageEncoderParams& e, const TransceiverConfig& c,
                                 ad::Var<T> image);
// M_I [C1, h, w] -> [C2, h, w]
template <class T>
ad::Var<T> image_channel_encode(Binder<T>& p, const ImageEncoderParams& e, const TransceiverConfig& c,
                                ad::Var<T> m);
// ids (length L_max, true length `length`) -> M_T [L_max, K1]
template <class T>
ad::Var<T> text_semantic_encode(Binder<T>& p, const TextEncoderParams& e, const TransceiverConfig& c,
                                const std::vector<std::size_t>& ids, std::size_t length, std::size_t vocab_size);
// M_T [L_max, K1] -> [L_max, K2]
template <class T>
ad::Var<T> text_channel_encode(Binder<T>& p, const TextEncoderParams& e, const TransceiverConfig& c, ad::Var<T> m);

// Flattens and scales so the complex symbols formed from consecutive pairs
// have unit mean power.
template <class T>
ad::Var<T> normalize_symbols(ad::Var<T> x);

}  // namespace musc::transceiver
