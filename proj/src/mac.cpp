#include "musc/mac.hpp"

#include "musc/errors.hpp"

namespace musc::fusion {

template <class T>
DecoderParams register_decoders(ParamStore<T>& s, const TransceiverConfig& c, Rng& rng) {
  DecoderParams d;
  d.image.push_back(add_conv(s, "image_cd.0", c.c2, c.image_cd_mid, 3, kGammaI, rng));
  d.image.push_back(add_conv(s, "image_cd.1", c.image_cd_mid, c.c1, 3, kGammaI, rng));
  std::size_t in = c.k2;
  std::vector<std::size_t> widths = c.text_cd_hidden;
  widths.push_back(c.k1);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    d.text.push_back(add_dense(s, "text_cd." + std::to_string(i), in, widths[i], kGammaT, rng));
    in = widths[i];
  }
  d.ln_gain = s.add("text_cd.ln.gain", Tensor<T>({c.k1}, T(1)), kGammaT);
  d.ln_bias = s.add("text_cd.ln.bias", Tensor<T>({c.k1}), kGammaT);
  return d;
}

template <class T>
MacParams register_mac(ParamStore<T>& s, const TransceiverConfig& c, const MacConfig& m, Rng& rng) {
  require(m.cells >= 1 && m.dim >= 1 && m.n_answers >= 2, "mac config: need cells >= 1, dim >= 1, answers >= 2");
  const std::size_t d = m.dim;
  MacParams p;
  p.kb_project = add_dense(s, "mac.kb_project", c.c1, d, kPhi, rng);
  p.word_project = add_dense(s, "mac.word_project", c.k1, d, kPhi, rng);
  p.question = add_dense(s, "mac.question", 2 * c.k1, d, kPhi, rng);
  for (std::size_t i = 0; i < m.cells; ++i)
    p.cell_question.push_back(add_dense(s, "mac.cell" + std::to_string(i) + ".question", d, d, kPhi, rng));
  p.control_merge = add_dense(s, "mac.control_merge", 2 * d, d, kPhi, rng);
  p.control_score = add_dense(s, "mac.control_score", d, 1, kPhi, rng);
  p.read_memory = add_dense(s, "mac.read_memory", d, d, kPhi, rng);
  p.read_merge = add_dense(s, "mac.read_merge", 2 * d, d, kPhi, rng);
  p.read_score = add_dense(s, "mac.read_score", d, 1, kPhi, rng);
  p.write = add_dense(s, "mac.write", 2 * d, d, kPhi, rng);
  p.c0 = s.add("mac.c0", Tensor<T>({d}), kPhi);
  p.m0 = s.add("mac.m0", Tensor<T>({d}), kPhi);
  p.out_hidden = add_dense(s, "mac.out_hidden", 2 * d, d, kPhi, rng);
  p.out_logits = add_dense(s, "mac.out_logits", d, m.n_answers, kPhi, rng);
  return p;
}

template <class T>
ClassifierParams register_classifier(ParamStore<T>& s, const TransceiverConfig& c, Modality modality,
                                     std::size_t n_answers, Rng& rng) {
  ClassifierParams p;
  p.modality = modality;
  const std::size_t in = modality == Modality::kImage ? c.c1 : c.k1;
  p.head = add_dense(s, modality == Modality::kImage ? "head.image" : "head.text", in, n_answers, kPhi, rng);
  return p;
}

template <class T>
ad::Var<T> image_channel_decode(Binder<T>& p, const DecoderParams& d, const TransceiverConfig& c, ad::Var<T> x) {
  require(x.size() == c.c2 * c.h * c.w, "image_channel_decode: expected " + std::to_string(c.c2 * c.h * c.w) +
                                            " values, got " + shape_str(x.shape()));
  ad::Var<T> y = ad::reshape(x, {c.c2, c.h, c.w});
  for (const auto& conv : d.image) y = ad::elu(apply(p, conv, y));
  return y;
}

template <class T>
ad::Var<T> text_channel_decode(Binder<T>& p, const DecoderParams& d, const TransceiverConfig& c, ad::Var<T> x) {
  require(x.size() == c.k2 * c.max_len, "text_channel_decode: expected " + std::to_string(c.k2 * c.max_len) +
                                            " values, got " + shape_str(x.shape()));
  ad::Var<T> y = ad::reshape(x, {c.max_len, c.k2});
  for (std::size_t i = 0; i < d.text.size(); ++i) {
    y = apply(p, d.text[i], y);
    if (i + 1 < d.text.size()) y = ad::relu(y);
  }
  return ad::layer_norm(y, p(d.ln_gain), p(d.ln_bias));
}

template <class T>
CellResult<T> mac_cell_step(Binder<T>& p, const MacParams& mp, const MacConfig& m, const MacState<T>& state,
                            ad::Var<T> question, ad::Var<T> words, const std::vector<std::uint8_t>& word_mask,
                            ad::Var<T> kb) {
  require(state.index < m.cells, "mac_cell_step: cell index " + std::to_string(state.index) + " >= " +
                                     std::to_string(m.cells) + " cells");
  const std::size_t d = m.dim, n_words = words.shape()[0], n_kb = kb.shape()[0];

  // control
  auto qi = apply(p, mp.cell_question[state.index], question);
  auto cq = apply(p, mp.control_merge, ad::concat<T>({state.control, qi}, 0));
  auto cscore = ad::reshape(apply(p, mp.control_score, ad::mul(words, cq)), {n_words});
  auto cattn = ad::softmax(cscore, 0, word_mask);
  auto control = ad::reshape(ad::matmul(ad::reshape(cattn, {1, n_words}), words), {d});

  // read
  auto mem = apply(p, mp.read_memory, state.memory);
  auto inter = apply(p, mp.read_merge, ad::concat<T>({ad::mul(kb, mem), kb}, 1));
  auto rscore = ad::reshape(apply(p, mp.read_score, ad::mul(inter, control)), {n_kb});
  auto rattn = ad::softmax(rscore, 0);
  auto read = ad::reshape(ad::matmul(ad::reshape(rattn, {1, n_kb}), kb), {d});

  // write
  auto memory = apply(p, mp.write, ad::concat<T>({read, state.memory}, 0));
  return {{control, memory, state.index + 1}, cattn, rattn};
}

template <class T>
MacOutput<T> mac_answer(Binder<T>& p, const MacParams& mp, const MacConfig& m, const TransceiverConfig& c,
                        ad::Var<T> image_features, ad::Var<T> text_features, std::size_t length) {
  require(image_features.shape() == Shape{c.c1, c.h, c.w},
          "mac_answer: image features " + shape_str(image_features.shape()) + ", expected " +
              shape_str({c.c1, c.h, c.w}));
  require(text_features.shape() == Shape{c.max_len, c.k1},
          "mac_answer: text features " + shape_str(text_features.shape()) + ", expected " +
              shape_str({c.max_len, c.k1}));
  require(length >= 1 && length <= c.max_len, "mac_answer: length out of range");
  const std::size_t hw = c.h * c.w;
  auto kb = apply(p, mp.kb_project, ad::transpose(ad::reshape(image_features, {c.c1, hw})));
  auto words = apply(p, mp.word_project, text_features);
  auto last = ad::reshape(ad::slice(text_features, 0, length - 1, 1), {c.k1});
  auto first = ad::reshape(ad::slice(text_features, 0, 0, 1), {c.k1});
  auto q = ad::tanh(apply(p, mp.question, ad::concat<T>({last, first}, 0)));
  std::vector<std::uint8_t> mask(c.max_len, 0);
  for (std::size_t s = 0; s < length; ++s) mask[s] = 1;

  MacOutput<T> out;
  MacState<T> state{p(mp.c0), p(mp.m0), 0};
  for (std::size_t i = 0; i < m.cells; ++i) {
    auto r = mac_cell_step(p, mp, m, state, q, words, mask, kb);
    state = r.state;
    out.control_attention.push_back(r.control_attention);
    out.read_attention.push_back(r.read_attention);
  }
  out.final_state = state;
  auto hidden = ad::elu(apply(p, mp.out_hidden, ad::concat<T>({state.memory, q}, 0)));
  out.logits = apply(p, mp.out_logits, hidden);
  return out;
}

template <class T>
ad::Var<T> classifier_only(Binder<T>& p, const ClassifierParams& cp, const TransceiverConfig& c,
                           ad::Var<T> image_features, ad::Var<T> text_features, std::size_t length) {
  require(image_features.valid() != text_features.valid(), "classifier_only: supply exactly one modality");
  auto& tape = p.tape();
  if (image_features.valid()) {
    require(cp.modality == Modality::kImage, "classifier_only: head was built for text");
    require(image_features.shape() == Shape{c.c1, c.h, c.w}, "classifier_only: image features have shape " +
                                                                  shape_str(image_features.shape()));
    const std::size_t hw = c.h * c.w;
    auto pool = tape.constant(Tensor<T>({hw, 1}, T(1) / T(hw)));
    auto pooled = ad::reshape(ad::matmul(ad::reshape(image_features, {c.c1, hw}), pool), {c.c1});
    return apply(p, cp.head, pooled);
  }
  require(cp.modality == Modality::kText, "classifier_only: head was built for images");
  require(text_features.shape() == Shape{c.max_len, c.k1}, "classifier_only: text features have shape " +
                                                                shape_str(text_features.shape()));
  require(length >= 1 && length <= c.max_len, "classifier_only: length out of range");
  Tensor<T> weights({1, c.max_len});
  for (std::size_t s = 0; s < length; ++s) weights[s] = T(1) / T(length);
  auto pooled = ad::reshape(ad::matmul(tape.constant(std::move(weights)), text_features), {c.k1});
  return apply(p, cp.head, pooled);
}

#define MUSC_INSTANTIATE(T)                                                                                          \
  template DecoderParams register_decoders(ParamStore<T>&, const TransceiverConfig&, Rng&);                          \
  template MacParams register_mac(ParamStore<T>&, const TransceiverConfig&, const MacConfig&, Rng&);                 \
  template ClassifierParams register_classifier(ParamStore<T>&, const TransceiverConfig&, Modality, std::size_t,     \
                                                Rng&);                                                               \
  template ad::Var<T> image_channel_decode(Binder<T>&, const DecoderParams&, const TransceiverConfig&, ad::Var<T>);  \
  template ad::Var<T> text_channel_decode(Binder<T>&, const DecoderParams&, const TransceiverConfig&, ad::Var<T>);   \
  template CellResult<T> mac_cell_step(Binder<T>&, const MacParams&, const MacConfig&, const MacState<T>&,           \
                                       ad::Var<T>, ad::Var<T>, const std::vector<std::uint8_t>&, ad::Var<T>);        \
  template MacOutput<T> mac_answer(Binder<T>&, const MacParams&, const MacConfig&, const TransceiverConfig&,         \
                                   ad::Var<T>, ad::Var<T>, std::size_t);                                             \
  template ad::Var<T> classifier_only(Binder<T>&, const ClassifierParams&, const TransceiverConfig&, ad::Var<T>,     \
                                      ad::Var<T>, std::size_t);

MUSC_INSTANTIATE(float)
MUSC_INSTANTIATE(double)

#undef MUSC_INSTANTIATE

}  // namespace musc::fusion
