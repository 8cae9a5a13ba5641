#include <algorithm>
#include <cmath>
#include <limits>

#include "musc/classical.hpp"
#include "musc/errors.hpp"

namespace musc::classical {

namespace {

constexpr std::array<int, 64> kLuma = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                       14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                       18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                       49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kZigzag = {0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
                                         12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
                                         35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
                                         58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr int kMaxSize = 15;  // magnitude categories 0..15
constexpr std::size_t kEob = 0x00, kZrl = 0xF0;

struct Tables {
  HuffmanCode dc, ac;
};

// Static code tables from a geometric model of category and run frequencies.
const Tables& tables() {
  static const Tables t = [] {
    Tables t;
    std::vector<double> dc(kMaxSize + 1);
    for (int s = 0; s <= kMaxSize; ++s) dc[std::size_t(s)] = std::pow(0.6, std::abs(s - 2)) + 1e-6;
    t.dc = HuffmanCode::from_frequencies(dc);
    std::vector<double> ac(256, 0.0);
    for (int run = 0; run < 16; ++run)
      for (int s = 1; s <= kMaxSize; ++s) ac[std::size_t(run * 16 + s)] = std::pow(0.55, run) * std::pow(0.45, s - 1) + 1e-7;
    ac[kEob] = 1.5;
    ac[kZrl] = 0.01;
    t.ac = HuffmanCode::from_frequencies(ac);
    return t;
  }();
  return t;
}

int category(int v) {
  int a = std::abs(v), s = 0;
  while (a) {
    ++s;
    a >>= 1;
  }
  return s;
}

void put_bits(std::uint32_t value, int n, Bits& out) {
  for (int i = n - 1; i >= 0; --i) out.push_back(std::uint8_t((value >> i) & 1));
}

// Negative values use the ones' complement of |v| in s bits.
void put_amplitude(int v, int s, Bits& out) {
  const std::uint32_t raw = v >= 0 ? std::uint32_t(v) : std::uint32_t((1 << s) - 1 + v);
  put_bits(raw, s, out);
}

std::optional<int> get_amplitude(const Bits& in, std::size_t& pos, int s) {
  if (pos + std::size_t(s) > in.size()) return std::nullopt;
  std::uint32_t raw = 0;
  for (int i = 0; i < s; ++i) raw = (raw << 1) | in[pos++];
  if (s == 0) return 0;
  if (raw >> (s - 1)) return int(raw);
  return int(raw) - (1 << s) + 1;
}

const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> b = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        b[std::size_t(u * 8 + x)] = (u == 0 ? std::sqrt(0.125) : 0.5) * std::cos((2 * x + 1) * u * M_PI / 16.0);
    return b;
  }();
  return b;
}

void fdct(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int x = 0; x < 8; ++x) s += b[std::size_t(u * 8 + x)] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int y = 0; y < 8; ++y) s += b[std::size_t(v * 8 + y)] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
}

void idct(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[64];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int u = 0; u < 8; ++u) s += b[std::size_t(u * 8 + x)] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int v = 0; v < 8; ++v) s += b[std::size_t(v * 8 + y)] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
}

std::uint8_t to_byte(double v) { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

std::array<int, 64> quantization_table(int quality) {
  require(quality >= 1 && quality <= 100, "quantization_table: quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((kLuma[i] * scale + 50) / 100, 1, 255);
  return q;
}

DctImage dct_image_encode(const std::vector<std::uint8_t>& image, std::size_t channels, std::size_t height,
                          std::size_t width, int quality) {
  require(channels == 1 || channels == 3, "dct_image_encode: channels must be 1 or 3");
  require(height > 0 && width > 0, "dct_image_encode: empty image");
  require(image.size() == channels * height * width, "dct_image_encode: image size does not match dimensions");
  const auto q = quantization_table(quality);
  const auto& tb = tables();
  const std::size_t ph = (height + 7) / 8 * 8, pw = (width + 7) / 8 * 8;

  // Planes in YCbCr (or gray), edge padded to whole blocks.
  std::vector<std::vector<double>> planes(channels, std::vector<double>(ph * pw));
  for (std::size_t y = 0; y < ph; ++y)
    for (std::size_t x = 0; x < pw; ++x) {
      const std::size_t sy = std::min(y, height - 1), sx = std::min(x, width - 1);
      const std::size_t at = sy * width + sx;
      if (channels == 1) {
        planes[0][y * pw + x] = image[at];
        continue;
      }
      const double r = image[at], g = image[height * width + at], b = image[2 * height * width + at];
      planes[0][y * pw + x] = 0.299 * r + 0.587 * g + 0.114 * b;
      planes[1][y * pw + x] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
      planes[2][y * pw + x] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }

  DctImage out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.quality = quality;
  double block[64], coef[64];
  for (const auto& plane : planes) {
    int prev_dc = 0;
    for (std::size_t by = 0; by < ph; by += 8)
      for (std::size_t bx = 0; bx < pw; bx += 8) {
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) block[y * 8 + x] = plane[(by + y) * pw + bx + x] - 128.0;
        fdct(block, coef);
        int zz[64];
        for (std::size_t i = 0; i < 64; ++i)
          zz[i] = int(std::lround(coef[kZigzag[i]] / double(q[std::size_t(kZigzag[i])])));
        const int diff = zz[0] - prev_dc;
        prev_dc = zz[0];
        const int s = category(diff);
        tb.dc.encode(std::size_t(s), out.bits);
        put_amplitude(diff, s, out.bits);
        int run = 0;
        for (std::size_t i = 1; i < 64; ++i) {
          if (zz[i] == 0) {
            ++run;
            continue;
          }
          while (run > 15) {
            tb.ac.encode(kZrl, out.bits);
            run -= 16;
          }
          const int as = category(zz[i]);
          tb.ac.encode(std::size_t(run * 16 + as), out.bits);
          put_amplitude(zz[i], as, out.bits);
          run = 0;
        }
        if (run > 0) tb.ac.encode(kEob, out.bits);
      }
  }
  return out;
}

std::vector<std::uint8_t> dct_image_decode(const DctImage& enc, bool strict) {
  require(enc.channels == 1 || enc.channels == 3, "dct_image_decode: channels must be 1 or 3");
  require(enc.height > 0 && enc.width > 0, "dct_image_decode: empty image");
  const auto q = quantization_table(enc.quality);
  const auto& tb = tables();
  const std::size_t ph = (enc.height + 7) / 8 * 8, pw = (enc.width + 7) / 8 * 8;
  const auto fail = [&](std::size_t pos, const char* what) {
    throw DataError(std::string("dct_image_decode: ") + what + " at bit " + std::to_string(pos));
  };

  std::vector<std::vector<double>> planes(enc.channels, std::vector<double>(ph * pw, 128.0));
  std::size_t pos = 0;
  bool broken = false;
  double coef[64], block[64];
  for (auto& plane : planes) {
    int prev_dc = 0;
    for (std::size_t by = 0; by < ph && !broken; by += 8)
      for (std::size_t bx = 0; bx < pw && !broken; bx += 8) {
        int zz[64] = {};
        auto s = tb.dc.decode(enc.bits, pos);
        std::optional<int> diff;
        if (s) diff = get_amplitude(enc.bits, pos, int(*s));
        if (!diff) {
          if (strict) fail(pos, "truncated DC coefficient");
          broken = true;
          break;
        }
        zz[0] = prev_dc + *diff;
        prev_dc = zz[0];
        std::size_t i = 1;
        while (i < 64) {
          auto sym = tb.ac.decode(enc.bits, pos);
          if (!sym) {
            if (strict) fail(pos, "truncated AC coefficients");
            broken = true;
            break;
          }
          if (*sym == kEob) break;
          const std::size_t run = *sym >> 4;
          const int as = int(*sym & 15);
          if (*sym == kZrl) {
            i += 16;
            if (i > 64 && strict) fail(pos, "run past end of block");
            continue;
          }
          i += run;
          auto v = get_amplitude(enc.bits, pos, as);
          if (!v) {
            if (strict) fail(pos, "truncated AC amplitude");
            broken = true;
            break;
          }
          if (i >= 64) {
            if (strict) fail(pos, "run past end of block");
            break;
          }
          zz[i++] = *v;
        }
        for (std::size_t k = 0; k < 64; ++k) coef[kZigzag[k]] = double(zz[k]) * double(q[std::size_t(kZigzag[k])]);
        idct(coef, block);
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x) plane[(by + y) * pw + bx + x] = block[y * 8 + x] + 128.0;
      }
    if (broken) break;
  }
  if (strict && pos != enc.bits.size()) fail(pos, "trailing bits");

  const std::size_t hw = enc.height * enc.width;
  std::vector<std::uint8_t> out(enc.channels * hw);
  for (std::size_t y = 0; y < enc.height; ++y)
    for (std::size_t x = 0; x < enc.width; ++x) {
      const std::size_t p = y * pw + x, at = y * enc.width + x;
      if (enc.channels == 1) {
        out[at] = to_byte(planes[0][p]);
        continue;
      }
      const double yy = planes[0][p], cb = planes[1][p] - 128.0, cr = planes[2][p] - 128.0;
      out[at] = to_byte(yy + 1.402 * cr);
      out[hw + at] = to_byte(yy - 0.344136 * cb - 0.714136 * cr);
      out[2 * hw + at] = to_byte(yy + 1.772 * cb);
    }
  return out;
}

double psnr(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  require(a.size() == b.size() && !a.empty(), "psnr: images must be non-empty and the same size");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (se / double(a.size())));
}

}  // namespace musc::classical
