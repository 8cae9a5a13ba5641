#include "musc/channel.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "musc/errors.hpp"

namespace musc::channel {

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kAwgn: return "awgn";
    case Kind::kRayleigh: return "rayleigh";
    case Kind::kRician: return "rician";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  if (s == "awgn") return Kind::kAwgn;
  if (s == "rayleigh") return Kind::kRayleigh;
  if (s == "rician") return Kind::kRician;
  throw ContractViolation("unknown channel kind '" + s + "' (expected awgn, rayleigh or rician)");
}

double snr_to_noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

Realization sample_channel(Kind kind, std::size_t m, std::size_t u, Rng& rng, double rician_k) {
  require(m >= u, "sample_channel: need at least as many antennas (" + std::to_string(m) + ") as users (" +
                      std::to_string(u) + ")");
  require(u >= 1, "sample_channel: need at least one user");
  Realization r;
  r.kind = kind;
  r.h = CMatrix::Zero(Eigen::Index(m), Eigen::Index(u));
  if (kind == Kind::kAwgn) {
    for (std::size_t i = 0; i < u; ++i) r.h(Eigen::Index(i), Eigen::Index(i)) = 1.0;
    return r;
  }
  require(rician_k >= 0, "sample_channel: rician K must be non-negative");
  const double s = std::sqrt(0.5);
  for (Eigen::Index j = 0; j < r.h.cols(); ++j)
    for (Eigen::Index i = 0; i < r.h.rows(); ++i) {
      const double re = rng.normal() * s, im = rng.normal() * s;
      r.h(i, j) = Complex(re, im);
    }
  if (kind == Kind::kRician) {
    if (std::isinf(rician_k)) {
      r.h.setOnes();
    } else {
      const double los = std::sqrt(rician_k / (rician_k + 1)), nlos = std::sqrt(1 / (rician_k + 1));
      r.h = (r.h * nlos).array() + los;
    }
  }
  return r;
}

double condition_number(const CMatrix& h) {
  Eigen::JacobiSVD<CMatrix> svd(h);
  const auto& s = svd.singularValues();
  const double lo = s.minCoeff(), hi = s.maxCoeff();
  if (lo <= hi * 1e-14) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

CMatrix complex_noise(std::size_t rows, std::size_t cols, double var, Rng& rng) {
  CMatrix n(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const double s = std::sqrt(var / 2);
  for (Eigen::Index j = 0; j < n.cols(); ++j)
    for (Eigen::Index i = 0; i < n.rows(); ++i) {
      const double re = rng.normal() * s, im = rng.normal() * s;
      n(i, j) = Complex(re, im);
    }
  return n;
}

CMatrix transmit_with_noise(const CMatrix& x, const CMatrix& h, const CMatrix& noise) {
  require(h.cols() == x.rows(), "transmit: X has " + std::to_string(x.rows()) + " rows but H has " +
                                    std::to_string(h.cols()) + " columns");
  require(noise.rows() == h.rows() && noise.cols() == x.cols(), "transmit: noise shape mismatch");
  return h * x + noise;
}

CMatrix transmit(const CMatrix& x, const Realization& ch, Rng& rng) {
  require(ch.h.cols() == x.rows(), "transmit: X has " + std::to_string(x.rows()) + " rows but H has " +
                                       std::to_string(ch.h.cols()) + " columns");
  if (ch.noise_var == 0) return ch.h * x;
  return transmit_with_noise(x, ch.h, complex_noise(std::size_t(ch.h.rows()), std::size_t(x.cols()), ch.noise_var, rng));
}

CMatrix zf_detect(const CMatrix& y, const CMatrix& h, double cond_max) {
  require(y.rows() == h.rows(), "zf_detect: Y has " + std::to_string(y.rows()) + " rows but H has " +
                                    std::to_string(h.rows()));
  const double c = condition_number(h);
  if (!(c <= cond_max))
    throw IllConditionedChannel("zf_detect: cond(H) = " + std::to_string(c) + " exceeds " + std::to_string(cond_max));
  const CMatrix hh = h.adjoint();
  return (hh * h).inverse() * (hh * y);
}

double SymbolFrame::mean_power() const {
  if (symbols.empty()) return 0.0;
  double s = 0;
  for (const auto& z : symbols) s += std::norm(z);
  return s / double(symbols.size());
}

template <class T>
SymbolFrame to_complex_frame(std::span<const T> reals, std::size_t user_id) {
  require(reals.size() % 2 == 0, "to_complex_frame: odd element count " + std::to_string(reals.size()));
  SymbolFrame f;
  f.user_id = user_id;
  f.symbols.resize(reals.size() / 2);
  for (std::size_t i = 0; i < f.symbols.size(); ++i) f.symbols[i] = Complex(double(reals[2 * i]), double(reals[2 * i + 1]));
  return f;
}

template <class T>
std::vector<T> from_complex_frame(const SymbolFrame& f) {
  std::vector<T> out(2 * f.symbols.size());
  for (std::size_t i = 0; i < f.symbols.size(); ++i) {
    out[2 * i] = T(f.symbols[i].real());
    out[2 * i + 1] = T(f.symbols[i].imag());
  }
  return out;
}

template SymbolFrame to_complex_frame(std::span<const float>, std::size_t);
template SymbolFrame to_complex_frame(std::span<const double>, std::size_t);
template std::vector<float> from_complex_frame(const SymbolFrame&);
template std::vector<double> from_complex_frame(const SymbolFrame&);

SymbolFrame power_normalize(const SymbolFrame& f) {
  const double p = f.mean_power();
  if (!(p > 0)) throw DegenerateInput("power_normalize: frame has no nonzero symbol");
  SymbolFrame out = f;
  const double k = 1 / std::sqrt(p);
  for (auto& z : out.symbols) z *= k;
  return out;
}

FramePlan plan_frames(std::size_t n_img_symbols, std::size_t n_txt_symbols) {
  return plan_frames(std::vector<std::size_t>{n_img_symbols, n_txt_symbols});
}

FramePlan plan_frames(const std::vector<std::size_t>& lengths) {
  require(!lengths.empty(), "plan_frames: no streams");
  FramePlan p;
  p.v = 1;
  for (std::size_t n : lengths) {
    require(n >= 1, "plan_frames: stream lengths must be at least 1");
    p.v = std::lcm(p.v, n);
  }
  p.lengths = lengths;
  p.n_frames = 1;
  for (std::size_t n : lengths) p.padding.push_back(p.v - n);
  return p;
}

FramePlan plan_single_frame(const std::vector<std::size_t>& lengths) {
  require(!lengths.empty(), "plan_single_frame: no streams");
  FramePlan p;
  for (std::size_t n : lengths) {
    require(n >= 1, "plan_single_frame: stream lengths must be at least 1");
    p.v = std::max(p.v, n);
  }
  p.lengths = lengths;
  p.n_frames = 1;
  for (std::size_t n : lengths) p.padding.push_back(p.v - n);
  return p;
}

std::vector<CMatrix> stack_frames(const std::vector<SymbolFrame>& users, const FramePlan& plan) {
  require(users.size() == plan.lengths.size(), "stack_frames: user count does not match plan");
  std::vector<CMatrix> frames(plan.n_frames, CMatrix::Zero(Eigen::Index(users.size()), Eigen::Index(plan.v)));
  for (std::size_t u = 0; u < users.size(); ++u) {
    require(users[u].symbols.size() == plan.lengths[u], "stack_frames: stream length does not match plan");
    for (std::size_t i = 0; i < users[u].symbols.size(); ++i)
      frames[i / plan.v](Eigen::Index(u), Eigen::Index(i % plan.v)) = users[u].symbols[i];
  }
  return frames;
}

std::vector<SymbolFrame> unstack_frames(const std::vector<CMatrix>& frames, const FramePlan& plan) {
  require(frames.size() == plan.n_frames, "unstack_frames: frame count does not match plan");
  std::vector<SymbolFrame> users(plan.lengths.size());
  for (std::size_t u = 0; u < users.size(); ++u) {
    users[u].user_id = u;
    users[u].symbols.resize(plan.lengths[u]);
    for (std::size_t i = 0; i < plan.lengths[u]; ++i)
      users[u].symbols[i] = frames[i / plan.v](Eigen::Index(u), Eigen::Index(i % plan.v));
  }
  return users;
}

namespace {

constexpr std::size_t kMaxResamples = 1000;

CMatrix draw_usable_h(const ChannelConfig& cfg, std::size_t users, Rng& rng, StageInfo* info) {
  for (std::size_t attempt = 0; attempt < kMaxResamples; ++attempt) {
    CMatrix h = sample_channel(cfg.kind, cfg.antennas, users, rng, cfg.rician_k).h;
    if (condition_number(h) <= cfg.cond_max) return h;
    if (info) ++info->resamples;
  }
  throw IllConditionedChannel("channel: no well-conditioned draw in " + std::to_string(kMaxResamples) + " attempts");
}

std::vector<CMatrix> detect_frames(const std::vector<CMatrix>& frames, std::size_t users, const ChannelConfig& cfg,
                                   double snr_db, Rng& rng, StageInfo* info, const CMatrix* fixed_h) {
  const double var = snr_to_noise_variance(snr_db);
  std::vector<CMatrix> out;
  out.reserve(frames.size());
  for (const auto& x : frames) {
    const CMatrix h = fixed_h ? *fixed_h : draw_usable_h(cfg, users, rng, info);
    CMatrix y = h * x;
    if (var > 0) y += complex_noise(std::size_t(h.rows()), std::size_t(x.cols()), var, rng);
    out.push_back(zf_detect(y, h, cfg.cond_max));
    if (info) info->h.push_back(h);
  }
  return out;
}

}  // namespace

std::vector<SymbolFrame> pass_frames(const std::vector<SymbolFrame>& users, const FramePlan& plan,
                                     const ChannelConfig& cfg, double snr_db, Rng& rng, StageInfo* info) {
  return unstack_frames(detect_frames(stack_frames(users, plan), users.size(), cfg, snr_db, rng, info, nullptr), plan);
}

template <class T>
std::vector<ad::Var<T>> channel_stage(const std::vector<ad::Var<T>>& users, const ChannelConfig& cfg, double snr_db,
                                      Rng& rng, StageInfo* info, const CMatrix* fixed_h) {
  std::vector<SymbolFrame> frames;
  std::vector<std::size_t> lengths;
  for (std::size_t u = 0; u < users.size(); ++u) {
    frames.push_back(to_complex_frame<T>(users[u].value().data(), u));
    lengths.push_back(frames.back().symbols.size());
  }
  const FramePlan plan = plan_frames(lengths);
  const auto detected =
      unstack_frames(detect_frames(stack_frames(frames, plan), users.size(), cfg, snr_db, rng, info, fixed_h), plan);
  std::vector<ad::Var<T>> out;
  for (std::size_t u = 0; u < users.size(); ++u)
    out.push_back(ad::substitute(users[u], Tensor<T>(users[u].shape(), from_complex_frame<T>(detected[u]))));
  return out;
}

template std::vector<ad::Var<float>> channel_stage(const std::vector<ad::Var<float>>&, const ChannelConfig&, double,
                                                   Rng&, StageInfo*, const CMatrix*);
template std::vector<ad::Var<double>> channel_stage(const std::vector<ad::Var<double>>&, const ChannelConfig&, double,
                                                    Rng&, StageInfo*, const CMatrix*);

}  // namespace musc::channel
