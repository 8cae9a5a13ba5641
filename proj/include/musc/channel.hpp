#pragma once

// Two-user uplink with an M-antenna receiver: Y = H X + N, zero-forcing
// detection with perfect CSI, block fading per frame.

#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "musc/autodiff.hpp"
#include "musc/rng.hpp"

namespace musc::channel {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;

enum class Kind { kAwgn, kRayleigh, kRician };

const char* kind_name(Kind k);
// "awgn", "rayleigh", "rician"; anything else is a contract violation.
Kind parse_kind(const std::string& s);

struct ChannelConfig {
  Kind kind = Kind::kRician;
  std::size_t antennas = 2;  // M
  double rician_k = 2.0;
  double cond_max = 1e4;
};

struct Realization {
  CMatrix h;  // M x U
  Kind kind = Kind::kAwgn;
  double noise_var = 0.0;
};

double snr_to_noise_variance(double snr_db);

// H only; noise_var is left at 0.
Realization sample_channel(Kind kind, std::size_t m, std::size_t u, Rng& rng, double rician_k = 2.0);

// Ratio of extreme singular values; infinity when rank deficient.
double condition_number(const CMatrix& h);

// Circular Gaussian entries with total variance `var` (var/2 per component).
CMatrix complex_noise(std::size_t rows, std::size_t cols, double var, Rng& rng);

CMatrix transmit(const CMatrix& x, const Realization& ch, Rng& rng);
// Y = H X + N with a caller-supplied noise matrix.
CMatrix transmit_with_noise(const CMatrix& x, const CMatrix& h, const CMatrix& noise);

// (H^H H)^{-1} H^H Y. Throws IllConditionedChannel when cond(H) > cond_max.
CMatrix zf_detect(const CMatrix& y, const CMatrix& h, double cond_max = 1e4);

// --- symbol frames ---

struct SymbolFrame {
  std::size_t user_id = 0;
  std::vector<Complex> symbols;
  double mean_power() const;
};

// Consecutive real pairs become (re, im). Odd counts are rejected.
template <class T>
SymbolFrame to_complex_frame(std::span<const T> reals, std::size_t user_id = 0);
template <class T>
std::vector<T> from_complex_frame(const SymbolFrame& f);

// Scales to unit mean per-symbol power. All-zero frames raise DegenerateInput.
SymbolFrame power_normalize(const SymbolFrame& f);

struct FramePlan {
  std::size_t v = 0;                 // frame length
  std::size_t n_frames = 0;
  std::vector<std::size_t> lengths;  // symbols per user before padding
  std::vector<std::size_t> padding;  // zeros appended per user (to n_frames * v)
};

// V = lcm of the stream lengths; every stream is padded to a multiple of V.
FramePlan plan_frames(std::size_t n_img_symbols, std::size_t n_txt_symbols);
FramePlan plan_frames(const std::vector<std::size_t>& lengths);
// One frame whose length is the longest stream.
FramePlan plan_single_frame(const std::vector<std::size_t>& lengths);

// Stacks users into U x V matrices, one per frame (zero padded).
std::vector<CMatrix> stack_frames(const std::vector<SymbolFrame>& users, const FramePlan& plan);
// Inverse of stack_frames; padding is dropped.
std::vector<SymbolFrame> unstack_frames(const std::vector<CMatrix>& frames, const FramePlan& plan);

// --- differentiable stage ---

struct StageInfo {
  std::vector<CMatrix> h;   // one per frame
  std::size_t resamples = 0;  // ill-conditioned draws discarded
};

// Sends every user's real vector (already power normalized, even length)
// through the channel with ZF detection and returns the detected values as
// tape nodes whose Jacobian w.r.t. the inputs is the identity. Ill-conditioned
// H draws are resampled; with `fixed_h` set that H is used and ill
// conditioning raises IllConditionedChannel instead.
template <class T>
std::vector<ad::Var<T>> channel_stage(const std::vector<ad::Var<T>>& users, const ChannelConfig& cfg, double snr_db,
                                      Rng& rng, StageInfo* info = nullptr, const CMatrix* fixed_h = nullptr);

// Same pipeline on plain vectors (used by evaluation and the classical chain).
std::vector<SymbolFrame> pass_frames(const std::vector<SymbolFrame>& users, const FramePlan& plan,
                                     const ChannelConfig& cfg, double snr_db, Rng& rng, StageInfo* info = nullptr);

}  // namespace musc::channel
