#include "musc/model.hpp"

#include <cmath>
#include <set>

#include "musc/errors.hpp"

namespace musc::harness {

using nlohmann::json;
namespace tx = musc::transceiver;
namespace fu = musc::fusion;

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kMuDeepSC: return "mu_deepsc";
    case Arch::kErrorFree: return "error_free";
    case Arch::kTextOnly: return "text_only";
    case Arch::kImageOnly: return "image_only";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  for (Arch a : {Arch::kMuDeepSC, Arch::kErrorFree, Arch::kTextOnly, Arch::kImageOnly})
    if (s == arch_name(a)) return a;
  throw ContractViolation("unknown model architecture '" + s + "'");
}

json model_config_to_json(const ModelConfig& c) {
  const auto& t = c.tc;
  return {{"scale", t.scale},
          {"C1", t.c1},
          {"C2", t.c2},
          {"K1", t.k1},
          {"K2", t.k2},
          {"h", t.h},
          {"w", t.w},
          {"L_max", t.max_len},
          {"embed_dim", t.embed_dim},
          {"lstm_hidden", t.lstm_hidden},
          {"image_se_widths", t.image_se_widths},
          {"image_ce_mid", t.image_ce_mid},
          {"text_ce_hidden", t.text_ce_hidden},
          {"image_cd_mid", t.image_cd_mid},
          {"text_cd_hidden", t.text_cd_hidden},
          {"freeze_semantic_encoder", t.freeze_semantic_encoder},
          {"mac_cells", c.mac.cells},
          {"mac_dim", c.mac.dim},
          {"n_answers", c.mac.n_answers},
          {"vocab_size", c.vocab_size}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  auto& t = c.tc;
  try {
    t.scale = j.at("scale");
    t.c1 = j.at("C1");
    t.c2 = j.at("C2");
    t.k1 = j.at("K1");
    t.k2 = j.at("K2");
    t.h = j.at("h");
    t.w = j.at("w");
    t.max_len = j.at("L_max");
    t.embed_dim = j.at("embed_dim");
    t.lstm_hidden = j.at("lstm_hidden");
    t.image_se_widths = j.at("image_se_widths").get<std::vector<std::size_t>>();
    t.image_ce_mid = j.at("image_ce_mid");
    t.text_ce_hidden = j.at("text_ce_hidden").get<std::vector<std::size_t>>();
    t.image_cd_mid = j.at("image_cd_mid");
    t.text_cd_hidden = j.at("text_cd_hidden").get<std::vector<std::size_t>>();
    t.freeze_semantic_encoder = j.at("freeze_semantic_encoder");
    c.mac.cells = j.at("mac_cells");
    c.mac.dim = j.at("mac_dim");
    c.mac.n_answers = j.at("n_answers");
    c.vocab_size = j.at("vocab_size");
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return c;
}

template <class T>
Model<T>::Model(Arch arch, const ModelConfig& cfg, std::uint64_t seed) : arch_(arch), cfg_(cfg) {
  cfg_.tc.validate();
  require(cfg_.vocab_size >= 3, "Model: vocabulary must contain at least one word besides pad/unk");
  Rng rng = Rng::substream(seed, "init");
  const bool image = arch != Arch::kTextOnly, text = arch != Arch::kImageOnly;
  if (image) image_enc_ = tx::register_image_encoder(store_, cfg_.tc, rng);
  if (text) text_enc_ = tx::register_text_encoder(store_, cfg_.tc, cfg_.vocab_size, rng);
  if (arch != Arch::kErrorFree) dec_ = fu::register_decoders(store_, cfg_.tc, rng);
  if (arch == Arch::kMuDeepSC || arch == Arch::kErrorFree)
    mac_ = fu::register_mac(store_, cfg_.tc, cfg_.mac, rng);
  else
    head_ = fu::register_classifier(store_, cfg_.tc, image ? fu::Modality::kImage : fu::Modality::kText,
                                    cfg_.mac.n_answers, rng);
}

template <class T>
std::vector<std::string> Model<T>::groups() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < store_.size(); ++i)
    if (seen.insert(store_.group(i)).second) out.push_back(store_.group(i));
  return out;
}

template <class T>
std::vector<ad::Var<T>> Model<T>::forward_scene(Binder<T>& p, const Tensor<T>& image,
                                                const std::vector<QuestionInput>& qs, const ChannelSetting& ch,
                                                Rng& rng, ForwardDetail<T>* detail) const {
  const auto& c = cfg_.tc;
  auto& tape = p.tape();
  const bool channel_on = uses_channel() && ch.enabled;

  ad::Var<T> m_img, s_img;
  if (image_enc_) {
    m_img = tx::image_semantic_encode(p, *image_enc_, c, tape.constant(image));
    if (arch_ != Arch::kErrorFree) s_img = tx::normalize_symbols(tx::image_channel_encode(p, *image_enc_, c, m_img));
  }

  std::vector<ad::Var<T>> logits;
  for (const auto& q : qs) {
    require(q.ids != nullptr, "forward_scene: question without token ids");
    ad::Var<T> m_txt, s_txt;
    if (text_enc_) {
      m_txt = tx::text_semantic_encode(p, *text_enc_, c, *q.ids, q.length, cfg_.vocab_size);
      if (arch_ != Arch::kErrorFree) s_txt = tx::normalize_symbols(tx::text_channel_encode(p, *text_enc_, c, m_txt));
    }
    if (arch_ == Arch::kErrorFree) {
      auto out = fu::mac_answer(p, *mac_, cfg_.mac, c, m_img, m_txt, q.length);
      logits.push_back(out.logits);
      if (detail) detail->mac.push_back(std::move(out));
      continue;
    }
    // The absent user of a single-modality model sends zeros; ZF separates
    // the users exactly, so its content does not affect the other stream.
    ad::Var<T> tx_img = s_img.valid() ? s_img : tape.constant(Tensor<T>({2 * c.image_symbols()}));
    ad::Var<T> tx_txt = s_txt.valid() ? s_txt : tape.constant(Tensor<T>({2 * c.text_symbols()}));
    if (channel_on) {
      auto rx = channel::channel_stage<T>({tx_img, tx_txt}, ch.cfg, ch.snr_db, rng,
                                          detail ? &detail->channel : nullptr);
      tx_img = rx[0];
      tx_txt = rx[1];
    }
    ad::Var<T> mh_img, mh_txt;
    if (s_img.valid()) mh_img = fu::image_channel_decode(p, *dec_, c, tx_img);
    if (s_txt.valid()) mh_txt = fu::text_channel_decode(p, *dec_, c, tx_txt);
    if (mac_) {
      auto out = fu::mac_answer(p, *mac_, cfg_.mac, c, mh_img, mh_txt, q.length);
      logits.push_back(out.logits);
      if (detail) detail->mac.push_back(std::move(out));
    } else {
      logits.push_back(fu::classifier_only(p, *head_, c, mh_img, mh_txt, q.length));
    }
  }
  return logits;
}

template <class T>
std::size_t argmax(const Tensor<T>& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

template class Model<float>;
template class Model<double>;
template std::size_t argmax(const Tensor<float>&);
template std::size_t argmax(const Tensor<double>&);

}  // namespace musc::harness
