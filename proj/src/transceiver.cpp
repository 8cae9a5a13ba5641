#include "musc/transceiver.hpp"

#include <cmath>

#include "musc/errors.hpp"

namespace musc::transceiver {

void TransceiverConfig::validate() const {
  require(c2 < c1, "transceiver config: C2 must be smaller than C1");
  require(k2 < k1, "transceiver config: K2 must be smaller than K1");
  require(h >= 1 && w >= 1 && h == w, "transceiver config: feature grid must be square and nonempty");
  require(max_len >= 1 && embed_dim >= 1 && lstm_hidden >= 1, "transceiver config: zero-sized text dimension");
  require((c2 * h * w) % 2 == 0 && k2 % 2 == 0, "transceiver config: encoder outputs must have even size");
  require(scale == "toy" || scale == "paper", "transceiver config: scale must be toy or paper");
}

TransceiverConfig toy_config() { return TransceiverConfig{}; }

TransceiverConfig paper_config() {
  TransceiverConfig c;
  c.scale = "paper";
  c.c1 = 512;
  c.c2 = 128;
  c.k1 = 512;
  c.k2 = 256;
  c.h = c.w = 14;
  c.embed_dim = 300;
  c.lstm_hidden = 256;
  c.image_se_widths = {64, 128, 256};
  c.image_ce_mid = 256;
  c.text_ce_hidden = {256};
  c.image_cd_mid = 256;
  c.text_cd_hidden = {256, 256};
  c.freeze_semantic_encoder = true;
  return c;
}

TransceiverConfig config_for_scale(const std::string& scale) {
  if (scale == "toy") return toy_config();
  if (scale == "paper") return paper_config();
  throw ContractViolation("unknown scale '" + scale + "' (expected toy or paper)");
}

template <class T>
ImageEncoderParams register_image_encoder(ParamStore<T>& s, const TransceiverConfig& c, Rng& rng) {
  ImageEncoderParams e;
  std::size_t in = 3;
  std::vector<std::size_t> widths = c.image_se_widths;
  widths.push_back(c.c1);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    e.semantic.push_back(add_conv(s, "image_se." + std::to_string(i), in, widths[i], 3, kAlphaI, rng));
    in = widths[i];
  }
  e.channel.push_back(add_conv(s, "image_ce.0", c.c1, c.image_ce_mid, 3, kBetaI, rng));
  e.channel.push_back(add_conv(s, "image_ce.1", c.image_ce_mid, c.c2, 3, kBetaI, rng));
  if (c.freeze_semantic_encoder) s.freeze_group(kAlphaI);
  return e;
}

template <class T>
TextEncoderParams register_text_encoder(ParamStore<T>& s, const TransceiverConfig& c, std::size_t vocab_size,
                                        Rng& rng) {
  TextEncoderParams e;
  Tensor<T> table({vocab_size, c.embed_dim});
  for (auto& v : table.data()) v = T(rng.normal());
  e.embedding = s.add("text_se.embedding", std::move(table), kAlphaT);
  const std::size_t hd = c.lstm_hidden;
  const double bound = 1.0 / std::sqrt(double(hd));
  auto lstm = [&](const std::string& name) {
    LstmIdx l;
    l.wx = s.add(name + ".wx", uniform_tensor<T>({c.embed_dim, 4 * hd}, bound, rng), kAlphaT);
    l.wh = s.add(name + ".wh", uniform_tensor<T>({hd, 4 * hd}, bound, rng), kAlphaT);
    Tensor<T> b({4 * hd});
    for (std::size_t j = hd; j < 2 * hd; ++j) b[j] = T(1);
    l.b = s.add(name + ".b", std::move(b), kAlphaT);
    return l;
  };
  e.fwd = lstm("text_se.lstm_fwd");
  e.bwd = lstm("text_se.lstm_bwd");
  e.project = add_dense(s, "text_se.project", 2 * hd, c.k1, kAlphaT, rng);
  std::size_t in = c.k1;
  std::vector<std::size_t> widths = c.text_ce_hidden;
  widths.push_back(c.k2);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    e.channel.push_back(add_dense(s, "text_ce." + std::to_string(i), in, widths[i], kBetaT, rng));
    in = widths[i];
  }
  return e;
}

template <class T>
ad::Var<T> image_semantic_encode(Binder<T>& p, const ImageEncoderParams& e, const TransceiverConfig& c,
                                 ad::Var<T> image) {
  const std::size_t r = c.resolution();
  require(image.shape() == Shape{3, r, r},
          "image_semantic_encode: expected image " + shape_str({3, r, r}) + ", got " + shape_str(image.shape()));
  ad::Var<T> x = image;
  for (const auto& conv : e.semantic) x = ad::elu(apply(p, conv, x, 2));
  return x;
}

template <class T>
ad::Var<T> image_channel_encode(Binder<T>& p, const ImageEncoderParams& e, const TransceiverConfig& c,
                                ad::Var<T> m) {
  require(m.shape() == Shape{c.c1, c.h, c.w},
          "image_channel_encode: expected " + shape_str({c.c1, c.h, c.w}) + ", got " + shape_str(m.shape()));
  ad::Var<T> x = m;
  for (const auto& conv : e.channel) x = ad::elu(apply(p, conv, x));
  return x;
}

template <class T>
ad::Var<T> text_semantic_encode(Binder<T>& p, const TextEncoderParams& e, const TransceiverConfig& c,
                                const std::vector<std::size_t>& ids, std::size_t length, std::size_t vocab_size) {
  require(ids.size() == c.max_len, "text_semantic_encode: expected " + std::to_string(c.max_len) + " ids, got " +
                                       std::to_string(ids.size()));
  require(length >= 1 && length <= c.max_len, "text_semantic_encode: length out of range");
  for (std::size_t id : ids)
    require(id < vocab_size, "text_semantic_encode: token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(vocab_size));
  auto emb = ad::embedding(ids, p(e.embedding));
  ad::LstmWeights<T> f{p(e.fwd.wx), p(e.fwd.wh), p(e.fwd.b)};
  ad::LstmWeights<T> b{p(e.bwd.wx), p(e.bwd.wh), p(e.bwd.b)};
  auto states = ad::bilstm(emb, length, f, b);
  return apply(p, e.project, states);
}

template <class T>
ad::Var<T> text_channel_encode(Binder<T>& p, const TextEncoderParams& e, const TransceiverConfig& c, ad::Var<T> m) {
  require(m.shape() == Shape{c.max_len, c.k1},
          "text_channel_encode: expected " + shape_str({c.max_len, c.k1}) + ", got " + shape_str(m.shape()));
  ad::Var<T> x = m;
  for (std::size_t i = 0; i < e.channel.size(); ++i) {
    x = apply(p, e.channel[i], x);
    if (i + 1 < e.channel.size()) x = ad::relu(x);
  }
  return x;
}

template <class T>
ad::Var<T> normalize_symbols(ad::Var<T> x) {
  auto flat = ad::reshape(x, {x.size()});
  return ad::scale(ad::rms_normalize(flat), T(1 / std::sqrt(2.0)));
}

#define MUSC_INSTANTIATE(T)                                                                                          \
  template ImageEncoderParams register_image_encoder(ParamStore<T>&, const TransceiverConfig&, Rng&);                \
  template TextEncoderParams register_text_encoder(ParamStore<T>&, const TransceiverConfig&, std::size_t, Rng&);     \
  template ad::Var<T> image_semantic_encode(Binder<T>&, const ImageEncoderParams&, const TransceiverConfig&,         \
                                            ad::Var<T>);                                                             \
  template ad::Var<T> image_channel_encode(Binder<T>&, const ImageEncoderParams&, const TransceiverConfig&,          \
                                           ad::Var<T>);                                                              \
  template ad::Var<T> text_semantic_encode(Binder<T>&, const TextEncoderParams&, const TransceiverConfig&,           \
                                           const std::vector<std::size_t>&, std::size_t, std::size_t);               \
  template ad::Var<T> text_channel_encode(Binder<T>&, const TextEncoderParams&, const TransceiverConfig&,            \
                                          ad::Var<T>);                                                               \
  template ad::Var<T> normalize_symbols(ad::Var<T>);

MUSC_INSTANTIATE(float)
MUSC_INSTANTIATE(double)

#undef MUSC_INSTANTIATE

}  // namespace musc::transceiver
