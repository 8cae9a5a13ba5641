#pragma once

// Receiver side: channel decoders for both users and a reduced MAC network
// (control / read / write cells) that fuses them into answer logits.

#include <vector>

#include "musc/autodiff.hpp"
#include "musc/layers.hpp"
#include "musc/transceiver.hpp"

namespace musc::fusion {

using transceiver::TransceiverConfig;

inline constexpr const char* kGammaI = "gamma_I";
inline constexpr const char* kGammaT = "gamma_T";
inline constexpr const char* kPhi = "phi";

struct MacConfig {
  std::size_t cells = 3;  // p
  std::size_t dim = 64;   // d
  std::size_t n_answers = 20;
};

struct DecoderParams {
  std::vector<ConvIdx> image;   // C2 -> mid -> C1
  std::vector<DenseIdx> text;   // K2 -> ... -> K1
  std::size_t ln_gain = 0, ln_bias = 0;
};

struct MacParams {
  DenseIdx kb_project;                 // C1 -> d
  DenseIdx word_project;               // K1 -> d
  DenseIdx question;                   // 2 K1 -> d
  std::vector<DenseIdx> cell_question;  // per cell, d -> d
  DenseIdx control_merge;              // 2d -> d
  DenseIdx control_score;              // d -> 1
  DenseIdx read_memory;                // d -> d
  DenseIdx read_merge;                 // 2d -> d
  DenseIdx read_score;                 // d -> 1
  DenseIdx write;                      // 2d -> d
  std::size_t c0 = 0, m0 = 0;          // initial control / memory [d]
  DenseIdx out_hidden;                 // 2d -> d
  DenseIdx out_logits;                 // d -> n_answers
};

enum class Modality { kImage, kText };

struct ClassifierParams {
  Modality modality = Modality::kText;
  DenseIdx head;  // C1 or K1 -> n_answers
};

template <class T>
DecoderParams register_decoders(ParamStore<T>& s, const TransceiverConfig& c, Rng& rng);
template <class T>
MacParams register_mac(ParamStore<T>& s, const TransceiverConfig& c, const MacConfig& m, Rng& rng);
template <class T>
ClassifierParams register_classifier(ParamStore<T>& s, const TransceiverConfig& c, Modality modality,
                                     std::size_t n_answers, Rng& rng);

// X_I [C2*h*w] (any shape with that many elements) -> M_I-hat [C1, h, w]
template <class T>
ad::Var<T> image_channel_decode(Binder<T>& p, const DecoderParams& d, const TransceiverConfig& c, ad::Var<T> x);
// X_T [K2*L_max] -> M_T-hat [L_max, K1]
template <class T>
ad::Var<T> text_channel_decode(Binder<T>& p, const DecoderParams& d, const TransceiverConfig& c, ad::Var<T> x);

template <class T>
struct MacState {
  ad::Var<T> control;  // c_i [d]
  ad::Var<T> memory;   // m_i [d]
  std::size_t index = 0;
};

template <class T>
struct MacOutput {
  ad::Var<T> logits;
  std::vector<ad::Var<T>> control_attention;  // per cell, [L_max]; pads exactly 0
  std::vector<ad::Var<T>> read_attention;     // per cell, [h*w]
  MacState<T> final_state;
};

template <class T>
struct CellResult {
  MacState<T> state;
  ad::Var<T> control_attention, read_attention;
};

// Advances state.index -> state.index + 1. `question` is q [d], `words` the
// projected contextual words [L_max, d], `kb` the projected knowledge base
// [h*w, d]. word_mask[s] = 0 marks a pad position.
template <class T>
CellResult<T> mac_cell_step(Binder<T>& p, const MacParams& mp, const MacConfig& m, const MacState<T>& state,
                            ad::Var<T> question, ad::Var<T> words, const std::vector<std::uint8_t>& word_mask,
                            ad::Var<T> kb);

template <class T>
MacOutput<T> mac_answer(Binder<T>& p, const MacParams& mp, const MacConfig& m, const TransceiverConfig& c,
                        ad::Var<T> image_features, ad::Var<T> text_features, std::size_t length);

// One-layer classifier over a single modality: global average pooling for
// M_I-hat [C1,h,w], mean over the first `length` positions for M_T-hat.
template <class T>
ad::Var<T> classifier_only(Binder<T>& p, const ClassifierParams& cp, const TransceiverConfig& c,
                           ad::Var<T> image_features, ad::Var<T> text_features, std::size_t length);

}  // namespace musc::fusion
