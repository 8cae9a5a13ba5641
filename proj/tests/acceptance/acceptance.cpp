// Acceptance run: one PASS/FAIL line per primary criterion.
//
//   musc_acceptance --cli <path to musc> --work <dir> [--only N ...] [--config <file>]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "musc/channel.hpp"
#include "musc/classical.hpp"
#include "musc/errors.hpp"
#include "musc/gradcheck.hpp"
#include "musc/harness.hpp"

using namespace musc;
using namespace musc::harness;
using nlohmann::json;
using V = ad::Var<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  std::string cli;
  fs::path work;
  std::string config;
  std::size_t threads = 1;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int run(const std::string& cmd, std::string* out = nullptr) {
  FILE* p = popen((cmd + " 2>/dev/null").c_str(), "r");
  if (!p) return -1;
  std::string s;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) s.append(buf, n);
  const int rc = pclose(p);
  if (out) *out = s;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Tensor<double> rand_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// --- 1, 2: symbol and operation counts ---------------------------------------

json count_paper(const Settings& s, double* seconds) {
  std::string out;
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run(s.cli + " count --scale paper", &out);
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (rc != 0) throw std::runtime_error("count exited with " + std::to_string(rc));
  return json::parse(out);
}

Outcome criterion1(const Settings& s) {
  double secs = 0;
  const auto j = count_paper(s, &secs);
  const auto img = j["semantic"]["image"]["symbols"].get<std::uint64_t>();
  const auto txt = j["semantic"]["text"]["symbols_per_word"].get<std::uint64_t>();
  const std::uint64_t img_oracle = 14 * 14 * 128 / 2, txt_oracle = 256 / 2;
  const bool ok = img == 12544 && img == img_oracle && txt == 128 && txt == txt_oracle && secs < 1.0;
  return {ok, "image symbols " + std::to_string(img) + " (want 12544 exact), text symbols/word " +
                  std::to_string(txt) + " (want 128 exact), " + fmt("%.3f", secs) + " s (< 1 s)"};
}

Outcome criterion2(const Settings& s) {
  double secs = 0;
  const auto j = count_paper(s, &secs);
  const auto& img = j["semantic"]["image"];
  const auto& txt = j["semantic"]["text"];
  const auto enc = img["encoder"]["mults"].get<std::uint64_t>();
  const auto txt_ed = txt["encoder_decoder"]["mults"].get<std::uint64_t>();
  // Layer list written out by hand: two 3x3 convs on 14x14, 512->256->128; dense 512-256-256 | 256-256-512.
  const std::uint64_t enc_oracle = 196ull * 256 * 512 * 9 + 196ull * 128 * 256 * 9;
  const std::uint64_t txt_oracle = 512ull * 256 + 256 * 256 + 256 * 256 + 256 * 256 + 256 * 512;
  const double rel_printed = std::abs(double(enc) / 2.9e8 - 1);
  const double rel_spec = std::abs(double(enc) / 288964608.0 - 1);
  const double rel_txt = std::abs(double(txt_ed) / 4.6e5 - 1);
  const bool adds_reported = img["encoder"].contains("adds") && j["convention"].contains("note");
  const bool ok = enc == enc_oracle && rel_printed < 0.01 && rel_spec < 0.01 && txt_ed == 458752 &&
                  txt_ed == txt_oracle && rel_txt < 0.01 && adds_reported && secs < 1.0;
  return {ok, "image encoder mults " + std::to_string(enc) + " (oracle " + std::to_string(enc_oracle) +
                  "; vs 2.9e8 " + fmt("%.3f%%", 100 * rel_printed) + ", vs 288,964,608 " +
                  fmt("%.3f%%", 100 * rel_spec) + ", tol 1%), text enc+dec mults " + std::to_string(txt_ed) +
                  " (want 458752; vs 4.6e5 " + fmt("%.2f%%", 100 * rel_txt) + "), adds " +
                  std::to_string(img["encoder"]["adds"].get<std::uint64_t>()) + " under the stated convention, " +
                  fmt("%.3f", secs) + " s"};
}

// --- 3: gradients ------------------------------------------------------------

double primitive_worst() {
  Rng rng(17);
  double worst = 0;
  auto check = [&](const std::function<V(ad::Tape<double>&, V)>& op, const Tensor<double>& probe) {
    Rng probe_rng(rng.next_u64());
    const std::uint64_t wseed = rng.next_u64();
    auto graph = [&](ad::Tape<double>& t, V x) {
      auto y = op(t, x);
      Rng r(wseed);
      return ad::mean(ad::mul(y, t.constant(rand_tensor(y.shape(), r))));
    };
    worst = std::max(worst, grad_check(graph, probe, 1e-6, 24, probe_rng).max_rel_error);
  };
  const auto x23 = rand_tensor({2, 3}, rng), c23 = rand_tensor({2, 3}, rng), c3 = rand_tensor({3}, rng);
  const auto w34 = rand_tensor({3, 4}, rng), b4 = rand_tensor({4}, rng);
  check([&](auto& t, V x) { return ad::add(x, t.constant(c23)); }, x23);
  check([&](auto& t, V x) { return ad::sub(t.constant(c23), x); }, c3);
  check([&](auto& t, V x) { return ad::mul(t.constant(c23), x); }, c3);
  check([&](auto&, V x) { return ad::mul(x, x); }, x23);
  check([&](auto& t, V x) { return ad::matmul(x, t.constant(w34)); }, x23);
  check([&](auto& t, V w) { return ad::matmul(t.constant(x23), w); }, w34);
  check([&](auto& t, V x) { return ad::dense(x, t.constant(w34), t.constant(b4)); }, x23);
  check([&](auto& t, V w) { return ad::dense(t.constant(x23), w, t.constant(b4)); }, w34);
  check([&](auto& t, V b) { return ad::dense(t.constant(x23), t.constant(w34), b); }, b4);
  const auto img = rand_tensor({2, 5, 5}, rng), cw = rand_tensor({3, 2, 3, 3}, rng, 0.4), cb = rand_tensor({3}, rng);
  for (std::size_t stride : {1u, 2u}) {
    check([&](auto& t, V x) { return ad::conv2d(x, t.constant(cw), t.constant(cb), stride); }, img);
    check([&](auto& t, V w) { return ad::conv2d(t.constant(img), w, t.constant(cb), stride); }, cw);
    check([&](auto& t, V b) { return ad::conv2d(t.constant(img), t.constant(cw), b, stride); }, cb);
  }
  check([](auto&, V x) { return ad::relu(x); }, x23);
  check([](auto&, V x) { return ad::elu(x); }, x23);
  check([](auto&, V x) { return ad::tanh(x); }, x23);
  check([](auto&, V x) { return ad::sigmoid(x); }, x23);
  check([](auto&, V x) { return ad::scale(x, -2.5); }, x23);
  check([](auto&, V x) { return ad::softmax(x, 1); }, x23);
  check([](auto&, V x) { return ad::softmax(x, 0); }, x23);
  check([](auto&, V x) { return ad::softmax(x, 1, {1, 0, 1}); }, x23);
  const auto g3 = rand_tensor({3}, rng), bb3 = rand_tensor({3}, rng);
  check([&](auto& t, V x) { return ad::layer_norm(x, t.constant(g3), t.constant(bb3)); }, x23);
  check([&](auto& t, V g) { return ad::layer_norm(t.constant(x23), g, t.constant(bb3)); }, g3);
  check([&](auto& t, V b) { return ad::layer_norm(t.constant(x23), t.constant(g3), b); }, bb3);
  check([](auto&, V table) { return ad::embedding({2, 0, 2, 1}, table); }, rand_tensor({3, 4}, rng));
  check([&](auto& t, V x) { return ad::concat<double>({x, t.constant(c23), x}, 1); }, x23);
  check([](auto&, V x) { return ad::reshape(x, {3, 2}); }, x23);
  check([](auto&, V x) { return ad::transpose(x); }, x23);
  check([](auto&, V x) { return ad::slice(x, 1, 1, 2); }, x23);
  check([](auto&, V x) { return ad::mean(x); }, x23);
  check([](auto&, V x) { return ad::rms_normalize(x); }, x23);
  check(
      [&](auto&, V x) {
        Tensor<double> r = x.value();
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += c23[i];
        return ad::mul(ad::substitute(x, r), x);
      },
      x23);
  check([](auto&, V x) { return ad::cross_entropy(x, 4); }, x23);
  std::vector<Tensor<double>> ws;
  for (int d = 0; d < 2; ++d) {
    ws.push_back(rand_tensor({3, 16}, rng, 0.5));
    ws.push_back(rand_tensor({4, 16}, rng, 0.5));
    ws.push_back(rand_tensor({16}, rng, 0.5));
  }
  const auto xs = rand_tensor({5, 3}, rng);
  for (int slot = -1; slot < 6; ++slot)
    check(
        [&](auto& t, V probe) {
          std::vector<V> p;
          for (int i = 0; i < 6; ++i) p.push_back(i == slot ? probe : t.constant(ws[std::size_t(i)]));
          return ad::bilstm(slot < 0 ? probe : t.constant(xs), 4, {p[0], p[1], p[2]}, {p[3], p[4], p[5]});
        },
        slot < 0 ? xs : ws[std::size_t(slot)]);
  return worst;
}

double composed_worst(std::size_t* probes) {
  ModelConfig mc;
  auto& t = mc.tc;
  t.c1 = 6, t.c2 = 2, t.k1 = 6, t.k2 = 4, t.h = t.w = 2, t.max_len = 4, t.embed_dim = 3, t.lstm_hidden = 3;
  t.image_se_widths = {4};
  t.image_ce_mid = 4;
  t.text_ce_hidden = {5};
  t.image_cd_mid = 4;
  t.text_cd_hidden = {5, 5};
  mc.mac = {2, 5, 4};
  mc.vocab_size = 7;
  Rng data_rng(9);
  const auto image = rand_tensor({3, 8, 8}, data_rng, 0.5);
  const std::vector<std::size_t> ids = {2, 5, 3, 0};
  ChannelSetting ch;
  ch.cfg.kind = channel::Kind::kRayleigh;
  ch.snr_db = 10;
  double worst = 0;
  for (Arch arch : {Arch::kMuDeepSC, Arch::kErrorFree, Arch::kTextOnly, Arch::kImageOnly}) {
    Model<double> m(arch, mc, 3);
    Rng bias_rng(5);
    for (std::size_t i = 0; i < m.params().size(); ++i)
      if (m.params().name(i).ends_with(".b"))
        for (auto& v : m.params().tensor(i).data()) v = 0.1 * bias_rng.normal();
    auto loss = [&](ad::Tape<double>& tape) {
      Binder<double> p(tape, m.params());
      Rng rng(4);
      return ad::cross_entropy(m.forward_scene(p, image, {{&ids, 3}}, ch, rng)[0], 1);
    };
    ad::Tape<double> tape;
    tape.backward(loss(tape));
    GradBuffer<double> g(m.params());
    tape.accumulate_param_grads(g);
    Rng probe_rng(10);
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      auto& value = m.params().tensor(i);
      for (std::size_t k = 0; k < std::min<std::size_t>(3, value.size()); ++k) {
        const std::size_t c = probe_rng.below(value.size());
        const double saved = value[c];
        auto eval = [&](double v) {
          value[c] = v;
          ad::Tape<double> tp(false);
          return loss(tp).value()[0];
        };
        const double numeric = (eval(saved + 1e-6) - eval(saved - 1e-6)) / 2e-6;
        value[c] = saved;
        worst = std::max(worst, std::abs(g[i][c] - numeric) / std::max(std::abs(g[i][c]) + std::abs(numeric), 1e-5));
        ++*probes;
      }
    }
  }
  return worst;
}

Outcome criterion3(const Settings&) {
  const auto t0 = std::chrono::steady_clock::now();
  const double prim = primitive_worst();
  std::size_t probes = 0;
  const double comp = composed_worst(&probes);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {prim < 1e-4 && comp < 1e-4 && secs < 300,
          "primitives max rel err " + fmt("%.2e", prim) + ", composed graph (4 architectures, " +
              std::to_string(probes) + " probes) " + fmt("%.2e", comp) + " (tol 1e-4, float64, eps 1e-6), " +
              fmt("%.1f", secs) + " s"};
}

// --- 4: channel and detection -------------------------------------------------

Outcome criterion4(const Settings&) {
  using namespace channel;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(41);
  std::vector<std::string> fails;

  double worst_power = 0;
  for (int i = 0; i < 20; ++i) {
    SymbolFrame f;
    for (int k = 0; k < 512; ++k) f.symbols.emplace_back(3 * rng.normal() + 1, 0.2 * rng.normal());
    worst_power = std::max(worst_power, std::abs(power_normalize(f).mean_power() - 1));
    ad::Tape<double> tape(false);
    auto s = transceiver::normalize_symbols(tape.constant(rand_tensor({16, 8, 8}, rng, 5.0)));
    const auto frame = to_complex_frame<double>(std::span<const double>(s.value().data()));
    worst_power = std::max(worst_power, std::abs(frame.mean_power() - 1));
  }
  if (worst_power > 1e-6) fails.push_back("power");

  double worst_zf = 0;
  for (int i = 0; i < 200; ++i) {
    const CMatrix h = sample_channel(i % 2 ? Kind::kRayleigh : Kind::kRician, 2, 2, rng).h;
    if (condition_number(h) > 1e4) continue;
    const CMatrix x = complex_noise(2, 64, 1.0, rng);
    worst_zf = std::max(worst_zf, (zf_detect(h * x, h) - x).cwiseAbs().maxCoeff());
  }
  if (worst_zf > 1e-9) fails.push_back("zf");

  // Post-detection noise covariance against sigma^2 (H^H H)^{-1}.
  CMatrix h(2, 2);
  h << Complex(0.9, 0.2), Complex(-0.3, 0.5), Complex(0.4, -0.7), Complex(1.1, 0.1);
  const double var = snr_to_noise_variance(3.0);
  const int n = 100000;
  const CMatrix err = zf_detect(transmit_with_noise(CMatrix::Zero(2, n), h, complex_noise(2, n, var, rng)), h);
  const CMatrix cov = err * err.adjoint() / double(n);
  const CMatrix want = var * (h.adjoint() * h).inverse();
  double worst_cov = 0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      worst_cov = std::max(worst_cov, std::abs(cov(r, c) - want(r, c)) / std::abs(want(r, c)));
  if (worst_cov > 0.05) fails.push_back("noise covariance");

  // Fading moments over 1e5 entries each.
  double p_ray = 0, re2_ray = 0, p_ric = 0;
  Complex m_ray = 0, m_ric = 0;
  const int draws = 25000;
  for (int i = 0; i < draws; ++i) {
    const CMatrix a = sample_channel(Kind::kRayleigh, 2, 2, rng).h;
    const CMatrix b = sample_channel(Kind::kRician, 2, 2, rng, 2.0).h;
    p_ray += a.squaredNorm();
    re2_ray += a.real().array().square().sum();
    m_ray += a.sum();
    p_ric += b.squaredNorm();
    m_ric += b.sum();
  }
  const double ne = 4.0 * draws, los = std::sqrt(2.0 / 3.0);
  const double e_pray = std::abs(p_ray / ne - 1), e_re = std::abs(re2_ray / ne / 0.5 - 1);
  const double e_mray = std::abs(m_ray / ne), e_pric = std::abs(p_ric / ne - 1);
  const double e_mric = std::abs(m_ric.real() / ne / los - 1), e_mric_im = std::abs(m_ric.imag() / ne);
  const double worst_mom = std::max({e_pray, e_re, e_mray, e_pric, e_mric, e_mric_im});
  if (worst_mom > 0.02) fails.push_back("fading moments");

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > 120) fails.push_back("runtime");
  return {fails.empty(), "power |P-1| " + fmt("%.1e", worst_power) + " (tol 1e-6), noiseless ZF " +
                             fmt("%.1e", worst_zf) + " (tol 1e-9), ZF noise covariance " +
                             fmt("%.2f%%", 100 * worst_cov) + " (tol 5%, 1e5 draws), fading moments " +
                             fmt("%.2f%%", 100 * worst_mom) + " (tol 2%, 1e5 draws), " + fmt("%.1f", secs) + " s"};
}

// --- 5: classical chain -------------------------------------------------------

Outcome criterion5(const Settings&) {
  using namespace classical;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(51);
  std::vector<std::string> fails;

  // Huffman: random alphabets and a generated corpus.
  double worst_kraft = 0;
  bool huff_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> freq(2 + rng.below(60));
    for (auto& f : freq) f = 1 + double(rng.below(1000));
    const auto code = HuffmanCode::from_frequencies(freq);
    worst_kraft = std::max(worst_kraft, code.kraft_sum());
    Bits bits;
    std::vector<std::size_t> msg(300);
    for (auto& m : msg) {
      m = rng.below(freq.size());
      code.encode(m, bits);
    }
    std::size_t pos = 0;
    for (auto m : msg) huff_ok &= code.decode(bits, pos) == std::optional<std::uint32_t>(std::uint32_t(m));
    huff_ok &= pos == bits.size();
  }
  data::DatasetConfig dc;
  dc.n_train_scenes = 100;
  dc.n_test_scenes = 20;
  const auto ds = data::generate_dataset(dc);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& q : ds.train) corpus.push_back(data::tokenize(q.text));
  const auto table = HuffmanTable::build(corpus);
  for (const auto& words : corpus) huff_ok &= huffman_decode(huffman_encode(words, table), table) == words;
  worst_kraft = std::max(worst_kraft, table.code.kraft_sum());
  if (!huff_ok) fails.push_back("huffman round trip");
  if (worst_kraft > 1 + 1e-12) fails.push_back("kraft");

  // LDPC: codewords satisfy parity, noiseless decoding is exact.
  const auto code = LdpcCode::build();
  bool ldpc_ok = true;
  std::size_t cw = 0;
  for (int i = 0; i < 200; ++i, ++cw) {
    Bits info(code.k());
    for (auto& b : info) b = std::uint8_t(rng.below(2));
    const auto c = code.encode(info);
    ldpc_ok &= code.parity_ok(c);
    std::vector<double> llr(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) llr[j] = c[j] ? -INFINITY : INFINITY;
    const auto d = code.decode(llr);
    ldpc_ok &= d.corrected && d.info == info;
    const auto syms = channel_encode_bits(info, code);
    ldpc_ok &= channel_decode_bits(syms, 0.0, info.size(), code, nullptr) == info;
  }
  if (!ldpc_ok) fails.push_back("ldpc");

  // 16-QAM: unit energy and Gray adjacency over the whole constellation.
  const auto cons = qam16_constellation();
  double energy = 0;
  for (const auto& c : cons) energy += std::norm(c);
  energy /= 16;
  const double step = 2 / std::sqrt(10.0);
  std::size_t adjacent = 0, gray = 0;
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b)
      if (std::abs(std::abs(cons[a] - cons[b]) - step) < 1e-9) {
        ++adjacent;
        gray += std::popcount(a ^ b) == 1;
      }
  bool qam_ok = std::abs(energy - 1) < 1e-12 && adjacent == 24 && gray == 24;
  for (std::size_t l = 0; l < 16; ++l) {
    Bits bits = {std::uint8_t(l >> 3 & 1), std::uint8_t(l >> 2 & 1), std::uint8_t(l >> 1 & 1), std::uint8_t(l & 1)};
    qam_ok &= hard_decision(qam16_llr(qam16_modulate(bits), 0.1)) == bits;
  }
  if (!qam_ok) fails.push_back("qam");

  // DCT codec: PSNR and size do not decrease with quality on 50 renders.
  std::size_t monotone = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto img = data::render_scene_u8(ds.scenes[i], 64);
    double last_psnr = 0;
    std::size_t last_bits = 0;
    bool ok = true;
    for (int q : {25, 50, 75, 95}) {
      const auto enc = dct_image_encode(img, 3, 64, 64, q);
      const double p = psnr(img, dct_image_decode(enc));
      ok &= p >= last_psnr && enc.bits.size() >= last_bits;
      last_psnr = p;
      last_bits = enc.bits.size();
    }
    monotone += ok;
  }
  if (monotone != 50) fails.push_back("dct monotonicity");

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > 180) fails.push_back("runtime");
  std::string detail = "huffman round trips " + std::string(huff_ok ? "exact" : "BROKEN") + ", max Kraft sum " +
                       fmt("%.12f", worst_kraft) + " (<= 1), " + std::to_string(cw) +
                       " LDPC codewords parity/decode " + (ldpc_ok ? "exact" : "BROKEN") + ", 16-QAM energy " +
                       fmt("%.12f", energy) + " with " + std::to_string(gray) + "/" + std::to_string(adjacent) +
                       " Gray-adjacent pairs (want 24/24), DCT quality monotone on " + std::to_string(monotone) +
                       "/50 renders (q 25<50<75<95), " + fmt("%.1f", secs) + " s";
  if (!fails.empty()) detail += " [failed: " + fails.front() + "]";
  return {fails.empty(), detail};
}

// --- 6: learning sanity --------------------------------------------------------

Outcome criterion6(const Settings&) {
  const auto t0 = std::chrono::steady_clock::now();
  data::DatasetConfig dc;
  dc.seed = 6;
  dc.n_train_scenes = 13;
  dc.n_test_scenes = 200;
  const auto ds = data::generate_dataset(dc);
  ModelConfig mc;
  mc.vocab_size = ds.vocab.size();
  mc.mac.n_answers = ds.vocab.answers.size();

  // Untrained: chance over the closed answer set.
  Model<float> fresh(Arch::kMuDeepSC, mc, 61);
  const auto test_groups = group_by_scene(ds.test);
  const auto untrained = evaluate(fresh, ds, ds.test, test_groups, ChannelSetting{}, 6);
  const double chance = 1.0 / double(ds.vocab.answers.size());
  const double sigma = std::sqrt(chance * (1 - chance) / double(untrained.n));
  const bool chance_ok = std::abs(untrained.accuracy() - chance) <= 3 * sigma;

  // Overfit 64 questions through the full system with the channel switched off.
  std::vector<std::size_t> which(64);
  for (std::size_t i = 0; i < 64; ++i) which[i] = i;
  const auto groups = group_by_scene(ds.train, which);
  Model<float> m(Arch::kMuDeepSC, mc, 62);
  TrainConfig tc;
  tc.channel_enabled = false;
  tc.lr = 1e-3;
  Trainer trainer(m, tc);
  ChannelSetting off;
  off.enabled = false;
  std::size_t reached = 0;
  double acc = 0;
  for (std::size_t step = 1; step <= 500; ++step) {
    trainer.step(ds, ds.train, groups, step);
    if (step % 10 == 0) {
      acc = evaluate(m, ds, ds.train, groups, off, 6).accuracy();
      if (acc == 1.0) {
        reached = step;
        break;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {chance_ok && reached > 0 && secs < 300,
          "64-question noiseless overfit " +
              (reached ? "reached train accuracy 1.0 at step " + std::to_string(reached)
                       : "stopped at accuracy " + fmt("%.4f", acc)) +
              " (limit 500), untrained accuracy " + fmt("%.4f", untrained.accuracy()) + " over " +
              std::to_string(untrained.n) + " vs chance " + fmt("%.4f", chance) + " +- 3 sigma " +
              fmt("%.4f", 3 * sigma) + ", " + fmt("%.1f", secs) + " s"};
}

// --- 7: end-to-end toy reproduction -----------------------------------------------

Outcome criterion7(const Settings& s) {
  const auto t0 = std::chrono::steady_clock::now();
  Config cfg;
  if (!s.config.empty()) cfg.load_file(s.config);
  cfg.set("threads", std::to_string(s.threads));
  const auto ds = data::generate_dataset(dataset_config(cfg));
  const auto mc = model_config(cfg, ds.vocab);
  const std::string ds_hash = data::dataset_config_hash(ds.config);
  const fs::path dir = s.work / "toy";
  fs::create_directories(dir);

  auto train = [&](Arch arch, const Model<float>* init) {
    auto tc = train_config(cfg);
    tc.arch = arch;
    auto arch_mc = mc;
    if (init) arch_mc.tc.freeze_semantic_encoder = cfg.get_bool("train.freeze_after_init");
    Model<float> m(arch, arch_mc, tc.seed);
    if (init) warm_start(m, *init);
    const auto t = std::chrono::steady_clock::now();
    const auto r = train_model(m, ds, tc);
    std::fprintf(stderr, "  %s: best epoch %zu val %.4f (%.0f s)\n", arch_name(arch), r.best_epoch,
                 r.best_val_accuracy, std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count());
    save_checkpoint(dir / (std::string(arch_name(arch)) + ".ckpt"), m, ds_hash, {{"provenance", cfg.hash()}});
    return m;
  };
  const auto ef = train(Arch::kErrorFree, nullptr);
  const bool warm = cfg.get_bool("train.warm_start");
  const auto mu = train(Arch::kMuDeepSC, warm ? &ef : nullptr);
  const auto text = train(Arch::kTextOnly, warm ? &ef : nullptr);
  const auto image = train(Arch::kImageOnly, warm ? &ef : nullptr);

  const auto codec = build_traditional_codec(ds, int(cfg.get_size("baseline.jpeg_quality")),
                                             cfg.get_size("baseline.ldpc_n"), cfg.get_size("baseline.ldpc_k"),
                                             cfg.get_size("seed"));
  ExperimentSpec spec;
  spec.models = {{"mu_deepsc", &mu}, {"error_free", &ef}, {"text_only", &text}, {"image_only", &image}};
  spec.methods = cfg.get_list("eval.methods");
  for (const auto& k : cfg.get_list("eval.kinds")) spec.kinds.push_back(channel::parse_kind(k));
  spec.snrs = cfg.get_doubles("snr_db");
  spec.seed = cfg.get_size("seed");
  spec.threads = s.threads;
  spec.channel = channel_config(cfg);
  spec.codec = &codec;
  const auto res = run_experiment(ds, spec);
  write_text(dir / "results.csv", records_csv(res.records, cfg.hash(), spec.seed));
  write_text(dir / "predictions.jsonl", jsonl(res.predictions));
  auto cost = count_symbols_and_ops(mc.tc);
  measure_traditional(cost, mc.tc, cfg.get_size("count.samples"), int(cfg.get_size("baseline.jpeg_quality")),
                      spec.seed);
  write_text(dir / "cost.json",
             cost_report_json(cost, {{"tool_version", kToolVersion}, {"config_hash", cfg.hash()}, {"seed", spec.seed}})
                     .dump(2) +
                 "\n");

  auto acc = [&](const std::string& method, const std::string& kind, double snr) {
    for (const auto& r : res.records)
      if (r.method == method && r.channel == kind && r.snr_db == snr) return r.failed ? double(NAN) : r.accuracy();
    return double(NAN);
  };
  const double chance = 1.0 / double(ds.vocab.answers.size());
  const double mu18 = acc("mu_deepsc", "rician", 18), ef18 = acc("error_free", "rician", 18);
  const bool a = mu18 >= 0.75 && ef18 - mu18 <= 0.05;
  bool b = true;
  std::string worst_step;
  double worst_drop = -1;
  for (const auto& kind : cfg.get_list("eval.kinds")) {
    const auto snrs = spec.snrs;
    for (std::size_t i = 1; i < snrs.size(); ++i) {
      const double drop = acc("mu_deepsc", kind, snrs[i - 1]) - acc("mu_deepsc", kind, snrs[i]);
      if (drop > worst_drop) {
        worst_drop = drop;
        worst_step = kind + " " + fmt("%g", snrs[i - 1]) + "->" + fmt("%g", snrs[i]);
      }
      b &= drop <= 0.02;
    }
  }
  const double mu0 = acc("mu_deepsc", "rayleigh", 0), trad0 = acc("traditional", "rayleigh", 0);
  const bool c = mu0 - trad0 >= 0.10;
  const double t18 = acc("text_only", "rician", 18), i18 = acc("image_only", "rician", 18);
  const bool d = t18 > chance && t18 < mu18 && i18 > chance && i18 < mu18;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  const bool time_ok = secs <= 1800;
  std::string detail = "(a) MU " + fmt("%.4f", mu18) + " vs error-free " + fmt("%.4f", ef18) +
                       " at Rician 18 dB (want >= 0.75, gap <= 0.05) " + (a ? "ok" : "FAIL") +
                       "; (b) worst step drop " + fmt("%.4f", worst_drop) + " at " + worst_step + " (slack 0.02) " +
                       (b ? "ok" : "FAIL") + "; (c) Rayleigh 0 dB MU " + fmt("%.4f", mu0) + " vs traditional " +
                       fmt("%.4f", trad0) + " (want +0.10) " + (c ? "ok" : "FAIL") + "; (d) text-only " +
                       fmt("%.4f", t18) + ", image-only " + fmt("%.4f", i18) + " in (" + fmt("%.4f", chance) + ", " +
                       fmt("%.4f", mu18) + ") " + (d ? "ok" : "FAIL") + "; " + fmt("%.0f", secs) + " s on " +
                       std::to_string(cores) + " core(s) with " + std::to_string(s.threads) +
                       " thread(s) (budget 1800 s) " + (time_ok ? "ok" : "FAIL");
  return {a && b && c && d && time_ok, detail};
}

// --- 8: determinism -----------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a)) names.insert(fs::relative(e.path(), a).string());
  std::set<std::string> other;
  for (const auto& e : fs::recursive_directory_iterator(b)) other.insert(fs::relative(e.path(), b).string());
  if (names != other) return false;
  for (const auto& n : names)
    if (fs::is_regular_file(a / n) && slurp(a / n) != slurp(b / n)) return false;
  return true;
}

Outcome criterion8(const Settings& s) {
  const fs::path root = s.work / "determinism";
  fs::remove_all(root);
  const std::string common = " --seed 7 --threads 1 data.n_train_scenes=24 data.n_test_scenes=6 snr_db=0,18";
  const std::string train_opts = " train.epochs=2 train.lr=1e-3";
  std::vector<std::string> diverged;
  std::size_t commands = 0;
  auto both = [&](const std::string& name, const std::function<std::string(const fs::path&)>& cmd) {
    for (const char* rep : {"a", "b"}) {
      const fs::path d = root / rep;
      fs::create_directories(d);
      const int rc = run(cmd(d));
      if (rc != 0) diverged.push_back(name + " (exit " + std::to_string(rc) + ")");
    }
    ++commands;
  };
  both("gen-data", [&](const fs::path& d) { return s.cli + " gen-data --out " + (d / "data").string() + common; });
  for (const char* arch : {"error_free", "mu_deepsc"})
    both(std::string("train ") + arch, [&](const fs::path& d) {
      return s.cli + " train --data " + (d / "data").string() + " --arch " + arch + " --out " +
             (d / (std::string(arch) + ".ckpt")).string() + common + train_opts;
    });
  both("eval", [&](const fs::path& d) {
    return s.cli + " eval --data " + (d / "data").string() + " --ckpt " + (d / "mu_deepsc.ckpt").string() +
           " --ckpt " + (d / "error_free.ckpt").string() + " --methods mu_deepsc,error_free --out " +
           (d / "eval.csv").string() + " --predictions " + (d / "eval.jsonl").string() + common;
  });
  both("baseline", [&](const fs::path& d) {
    return s.cli + " baseline --data " + (d / "data").string() + " --ckpt " + (d / "error_free.ckpt").string() +
           " --out " + (d / "baseline.csv").string() + common + " eval.kinds=rayleigh";
  });
  both("count", [&](const fs::path& d) { return s.cli + " count --out " + (d / "cost.json").string() + common; });
  both("report", [&](const fs::path& d) {
    return s.cli + " report --results " + (d / "eval.csv").string() + " --cost " + (d / "cost.json").string() +
           " --out " + (d / "report").string() + common;
  });
  const bool same = same_tree(root / "a", root / "b");
  return {diverged.empty() && same, std::to_string(commands) +
                                        " commands run twice with seed 7 in single-thread mode; output trees " +
                                        (same ? "byte-identical" : "DIFFER") +
                                        (diverged.empty() ? "" : "; failed: " + diverged.front())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Settings s;
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "musc_acceptance").string();
  app.add_option("--cli", s.cli, "path to the musc executable")->required()->check(CLI::ExistingFile);
  app.add_option("--work", work, "scratch directory");
  app.add_option("--config", s.config, "config for criterion 7")->check(CLI::ExistingFile);
  app.add_option("--threads", s.threads, "threads for criterion 7");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  s.work = work;
  fs::create_directories(s.work);

  const std::vector<std::function<Outcome(const Settings&)>> criteria = {
      criterion1, criterion2, criterion3, criterion4, criterion5, criterion6, criterion7, criterion8};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i](s);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
