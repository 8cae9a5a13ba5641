#include <algorithm>
#include <cmath>
#include <limits>

#include "musc/classical.hpp"
#include "musc/errors.hpp"

namespace musc::classical {

namespace {

const double kScale = 1.0 / std::sqrt(10.0);

// Gray level of a bit pair (first bit, second bit).
double level(std::uint8_t a, std::uint8_t b) {
  static constexpr double kLevels[4] = {-3, -1, 3, 1};  // index 2a + b
  return kLevels[2 * a + b];
}

double log_sum_exp(const double* v, std::size_t n) {
  double mx = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace

std::vector<Complex> qam16_constellation() {
  std::vector<Complex> c(16);
  for (std::uint8_t l = 0; l < 16; ++l)
    c[l] = Complex(level((l >> 3) & 1, (l >> 2) & 1), level((l >> 1) & 1, l & 1)) * kScale;
  return c;
}

std::vector<Complex> qam16_modulate(const Bits& bits) {
  require(bits.size() % 4 == 0, "qam16_modulate: bit count must be a multiple of 4");
  std::vector<Complex> out(bits.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* b = &bits[4 * i];
    out[i] = Complex(level(b[0] & 1, b[1] & 1), level(b[2] & 1, b[3] & 1)) * kScale;
  }
  return out;
}

std::vector<double> qam16_llr(const std::vector<Complex>& y, double noise_var) {
  require(noise_var >= 0 && std::isfinite(noise_var), "qam16_llr: noise variance must be finite and >= 0");
  const auto cons = qam16_constellation();
  std::vector<double> out(4 * y.size());
  double metric[16];
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t nearest = 0;
    for (std::size_t l = 0; l < 16; ++l) {
      metric[l] = -std::norm(y[i] - cons[l]);
      if (metric[l] > metric[nearest]) nearest = l;
    }
    for (int bit = 0; bit < 4; ++bit) {
      const int shift = 3 - bit;
      if (noise_var == 0) {
        out[4 * i + std::size_t(bit)] = (nearest >> shift) & 1 ? -INFINITY : INFINITY;
        continue;
      }
      double zero[8], one[8];
      std::size_t nz = 0, no = 0;
      for (std::size_t l = 0; l < 16; ++l) ((l >> shift) & 1 ? one[no++] : zero[nz++]) = metric[l] / noise_var;
      out[4 * i + std::size_t(bit)] = log_sum_exp(zero, 8) - log_sum_exp(one, 8);
    }
  }
  return out;
}

Bits hard_decision(const std::vector<double>& llr) {
  Bits out(llr.size());
  for (std::size_t i = 0; i < llr.size(); ++i) out[i] = llr[i] < 0;
  return out;
}

std::vector<Complex> channel_encode_bits(const Bits& bits, const LdpcCode& code) {
  require(code.k() > 0, "channel_encode_bits: LDPC code not loaded");
  require(code.n() % 4 == 0, "channel_encode_bits: codeword length must be a multiple of 4");
  const std::size_t blocks = (bits.size() + code.k() - 1) / code.k();
  std::vector<Complex> out;
  out.reserve(blocks * code.n() / 4);
  Bits info(code.k());
  for (std::size_t b = 0; b < blocks; ++b) {
    std::fill(info.begin(), info.end(), 0);
    const std::size_t start = b * code.k(), end = std::min(bits.size(), start + code.k());
    std::copy(bits.begin() + std::ptrdiff_t(start), bits.begin() + std::ptrdiff_t(end), info.begin());
    const auto syms = qam16_modulate(code.encode(info));
    out.insert(out.end(), syms.begin(), syms.end());
  }
  return out;
}

Bits channel_decode_bits(const std::vector<Complex>& symbols, double noise_var, std::size_t n_bits,
                         const LdpcCode& code, std::size_t* uncorrected) {
  const std::size_t blocks = (n_bits + code.k() - 1) / code.k();
  const std::size_t per_block = code.n() / 4;
  require(symbols.size() >= blocks * per_block, "channel_decode_bits: fewer symbols than the framing requires");
  Bits out;
  out.reserve(blocks * code.k());
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::vector<Complex> chunk(symbols.begin() + std::ptrdiff_t(b * per_block),
                                     symbols.begin() + std::ptrdiff_t((b + 1) * per_block));
    const auto res = code.decode(qam16_llr(chunk, noise_var));
    if (!res.corrected && uncorrected) ++*uncorrected;
    out.insert(out.end(), res.info.begin(), res.info.end());
  }
  out.resize(n_bits);
  return out;
}

std::size_t traditional_symbols(std::size_t source_bits) { return (3 * source_bits + 3) / 4; }

TraditionalResult traditional_transmit(const std::vector<std::uint8_t>& image, std::size_t resolution,
                                       const std::vector<std::string>& words, const TraditionalCodec& codec,
                                       const channel::ChannelConfig& ch, double snr_db, Rng& rng) {
  require(image.size() == 3 * resolution * resolution, "traditional_transmit: image is not [3, R, R]");
  require(!words.empty(), "traditional_transmit: empty question");
  TraditionalResult res;
  auto img = dct_image_encode(image, 3, resolution, resolution, codec.jpeg_quality);
  const Bits txt = huffman_encode(words, codec.huffman);
  res.image_source_bits = img.bits.size();
  res.text_source_bits = txt.size();

  std::vector<channel::SymbolFrame> users(2);
  users[0] = {0, channel_encode_bits(img.bits, codec.ldpc)};
  users[1] = {1, channel_encode_bits(txt, codec.ldpc)};
  res.image_symbols = users[0].symbols.size();
  res.text_symbols = users[1].symbols.size();

  const auto plan = channel::plan_single_frame({res.image_symbols, res.text_symbols});
  channel::StageInfo info;
  const auto rx = channel::pass_frames(users, plan, ch, snr_db, rng, &info);
  // Post-ZF noise on user u is sigma^2 [(H^H H)^{-1}]_uu.
  const double sigma2 = channel::snr_to_noise_variance(snr_db);
  const auto& h = info.h.front();
  const channel::CMatrix gram_inv = (h.adjoint() * h).inverse();
  const double nv_img = sigma2 * gram_inv(0, 0).real(), nv_txt = sigma2 * gram_inv(1, 1).real();

  img.bits = channel_decode_bits(rx[0].symbols, nv_img, res.image_source_bits, codec.ldpc, &res.uncorrected_blocks);
  const Bits txt_rx = channel_decode_bits(rx[1].symbols, nv_txt, res.text_source_bits, codec.ldpc,
                                          &res.uncorrected_blocks);
  res.image = dct_image_decode(img, false);
  res.words = huffman_decode_lenient(txt_rx, codec.huffman, words.size());
  return res;
}

}  // namespace musc::classical
