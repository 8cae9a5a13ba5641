#pragma once

// Separate source/channel coding baseline: Huffman text coding, block-DCT
// image coding, rate-1/3 LDPC, Gray-mapped 16-QAM.

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "musc/channel.hpp"
#include "musc/rng.hpp"

namespace musc::classical {

using Bits = std::vector<std::uint8_t>;  // one bit per byte, values 0/1

// --- Huffman -------------------------------------------------------------

// Canonical prefix code over symbols 0..n-1. Symbols with zero frequency get
// no codeword (length 0).
class HuffmanCode {
 public:
  HuffmanCode() = default;
  static HuffmanCode from_frequencies(const std::vector<double>& freq);
  static HuffmanCode from_lengths(std::vector<std::uint32_t> lengths);

  std::size_t size() const { return lengths_.size(); }
  std::uint32_t length(std::size_t sym) const { return lengths_.at(sym); }
  const std::vector<std::uint32_t>& lengths() const { return lengths_; }
  std::string codeword(std::size_t sym) const;
  double kraft_sum() const;

  void encode(std::size_t sym, Bits& out) const;
  // Reads one symbol at `pos`; nullopt when the bits run out or match no codeword.
  std::optional<std::uint32_t> decode(const Bits& in, std::size_t& pos) const;

 private:
  void build_canonical();
  std::vector<std::uint32_t> lengths_;
  std::vector<std::uint64_t> codes_;
  // canonical decoding tables, indexed by length
  std::vector<std::uint64_t> first_code_;
  std::vector<std::uint32_t> first_index_;
  std::vector<std::uint32_t> count_;
  std::vector<std::uint32_t> sorted_;  // symbols ordered by (length, index)
};

// Word-level table built from corpus frequencies.
struct HuffmanTable {
  std::vector<std::string> words;
  HuffmanCode code;

  static HuffmanTable build(const std::vector<std::vector<std::string>>& corpus);
  std::optional<std::size_t> index(const std::string& w) const;
  nlohmann::json to_json() const;  // [{"symbol": w, "codeword": "0110"}, ...]
  static HuffmanTable from_json(const nlohmann::json& j);
};

Bits huffman_encode(const std::vector<std::string>& words, const HuffmanTable& table);
// Strict decode: every bit must be consumed by whole codewords.
std::vector<std::string> huffman_decode(const Bits& bits, const HuffmanTable& table);
// Lenient decode of exactly `count` words; positions that cannot be decoded become "<unk>".
std::vector<std::string> huffman_decode_lenient(const Bits& bits, const HuffmanTable& table, std::size_t count);

// --- block-DCT image codec -------------------------------------------------

struct DctImage {
  std::size_t channels = 3, height = 0, width = 0;
  int quality = 75;
  Bits bits;  // dimensions and quality travel as error-free side information
};

// Standard luminance table scaled by quality (1..100); quality 100 = all ones.
std::array<int, 64> quantization_table(int quality);

// image: [C, H, W] bytes, channel-major. C = 3 uses YCbCr, C = 1 grayscale.
DctImage dct_image_encode(const std::vector<std::uint8_t>& image, std::size_t channels, std::size_t height,
                          std::size_t width, int quality);
// strict: malformed or truncated bitstreams raise DataError. Lenient decoding
// keeps whatever the bits give and fills missing blocks with mid-gray.
std::vector<std::uint8_t> dct_image_decode(const DctImage& enc, bool strict = true);

double psnr(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// --- LDPC ------------------------------------------------------------------

struct LdpcDecodeResult {
  Bits info;
  std::size_t iterations = 0;
  bool corrected = true;  // false = parity checks still failing after max_iters
};

// Systematic code with H = [H_info | H_parity]; H_parity is dual-diagonal so
// encoding is an accumulation and H has full rank n - k.
class LdpcCode {
 public:
  LdpcCode() = default;
  // Progressive-edge-growth style construction of the info part (no 4-cycles).
  static LdpcCode build(std::size_t n = 1536, std::size_t k = 512, std::size_t info_col_weight = 3,
                        std::uint64_t seed = 1);

  std::size_t n() const { return n_; }
  std::size_t k() const { return k_; }
  std::size_t m() const { return n_ - k_; }
  const std::vector<std::vector<std::uint32_t>>& check_rows() const { return rows_; }
  const std::vector<std::vector<std::uint32_t>>& var_cols() const { return cols_; }

  Bits encode(const Bits& info) const;
  bool parity_ok(const Bits& codeword) const;
  // llr > 0 favours bit 0. Infinite values are clamped.
  LdpcDecodeResult decode(const std::vector<double>& llr, std::size_t max_iters = 50, double alpha = 0.8) const;

  // MacKay alist text format.
  void write_alist(const std::filesystem::path& path) const;
  static LdpcCode read_alist(const std::filesystem::path& path);
  std::string to_alist() const;
  static LdpcCode from_alist(const std::string& text);

  // GF(2) rank of H (dense elimination; for tests).
  std::size_t rank() const;

 private:
  void finish();  // builds column lists and checks the systematic structure
  std::size_t n_ = 0, k_ = 0;
  std::vector<std::vector<std::uint32_t>> rows_;  // per check: variable indices
  std::vector<std::vector<std::uint32_t>> cols_;  // per variable: check indices
};

// --- 16-QAM ----------------------------------------------------------------

using Complex = std::complex<double>;

// Gray mapping per axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, scaled by 1/sqrt(10).
// Bits b0 b1 pick the in-phase level, b2 b3 the quadrature level.
std::vector<Complex> qam16_modulate(const Bits& bits);
std::vector<Complex> qam16_constellation();  // index = 4-bit label b0b1b2b3
// Exact per-bit LLRs (log-sum-exp over the constellation); noise_var is the
// total complex noise variance. noise_var = 0 gives +/-infinity by hard decision.
std::vector<double> qam16_llr(const std::vector<Complex>& y, double noise_var);
Bits hard_decision(const std::vector<double>& llr);

// --- traditional chain ------------------------------------------------------

struct TraditionalCodec {
  HuffmanTable huffman;
  LdpcCode ldpc;
  int jpeg_quality = 75;
};

struct TraditionalResult {
  std::vector<std::uint8_t> image;  // [3, R, R]
  std::vector<std::string> words;
  std::size_t image_source_bits = 0, text_source_bits = 0;
  std::size_t image_symbols = 0, text_symbols = 0;  // after LDPC and framing padding
  std::size_t uncorrected_blocks = 0;
  bool failed = false;
};

// Source bits -> LDPC blocks -> 16-QAM symbols (zero padding recorded implicitly
// by the error-free lengths).
std::vector<Complex> channel_encode_bits(const Bits& bits, const LdpcCode& code);
Bits channel_decode_bits(const std::vector<Complex>& symbols, double noise_var, std::size_t n_bits,
                         const LdpcCode& code, std::size_t* uncorrected = nullptr);

// Both users share one frame and one H draw per transmission.
TraditionalResult traditional_transmit(const std::vector<std::uint8_t>& image, std::size_t resolution,
                                       const std::vector<std::string>& words, const TraditionalCodec& codec,
                                       const channel::ChannelConfig& ch, double snr_db, Rng& rng);

// Symbols a source of `bits` bits needs after rate-1/3 coding and 16-QAM.
std::size_t traditional_symbols(std::size_t source_bits);

}  // namespace musc::classical
