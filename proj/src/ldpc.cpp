#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "musc/classical.hpp"
#include "musc/errors.hpp"

namespace musc::classical {

LdpcCode LdpcCode::build(std::size_t n, std::size_t k, std::size_t info_col_weight, std::uint64_t seed) {
  require(k > 0 && n > k, "LdpcCode::build: need 0 < k < n");
  const std::size_t m = n - k;
  require(info_col_weight >= 2 && info_col_weight <= m / 2, "LdpcCode::build: info column weight out of range");
  Rng rng = Rng::substream(seed, "ldpc");
  LdpcCode c;
  c.n_ = n;
  c.k_ = k;
  c.rows_.assign(m, {});
  std::vector<std::vector<std::uint32_t>> info_cols(k);

  for (std::uint32_t j = 0; j < k; ++j) {
    auto& mine = info_cols[j];
    for (std::size_t e = 0; e < info_col_weight; ++e) {
      // Checks two hops from j (through info columns or the parity chain) would close a 4-cycle.
      std::set<std::uint32_t> blocked(mine.begin(), mine.end());
      for (auto s : mine) {
        if (s > 0) blocked.insert(s - 1);
        if (s + 1 < m) blocked.insert(s + 1);
        for (auto v : c.rows_[s])
          for (auto t : info_cols[v]) blocked.insert(t);
      }
      std::size_t best_deg = SIZE_MAX;
      std::vector<std::uint32_t> ties;
      for (std::uint32_t r = 0; r < m; ++r) {
        if (blocked.count(r)) continue;
        const auto d = c.rows_[r].size();
        if (d < best_deg) {
          best_deg = d;
          ties.clear();
        }
        if (d == best_deg) ties.push_back(r);
      }
      if (ties.empty()) throw ContractViolation("LdpcCode::build: cannot place edge without a 4-cycle");
      const auto r = ties[rng.below(ties.size())];
      mine.push_back(r);
      c.rows_[r].push_back(j);
    }
  }
  for (std::uint32_t i = 0; i < m; ++i) {
    c.rows_[i].push_back(std::uint32_t(k + i));
    if (i > 0) c.rows_[i].push_back(std::uint32_t(k + i - 1));
  }
  c.finish();
  return c;
}

void LdpcCode::finish() {
  const std::size_t m = n_ - k_;
  if (rows_.size() != m) throw DataError("ldpc: row count does not match n - k");
  cols_.assign(n_, {});
  for (std::uint32_t r = 0; r < m; ++r) {
    auto& row = rows_[r];
    std::sort(row.begin(), row.end());
    if (std::adjacent_find(row.begin(), row.end()) != row.end()) throw DataError("ldpc: repeated entry in a check");
    for (auto v : row) {
      if (v >= n_) throw DataError("ldpc: variable index out of range");
      cols_[v].push_back(r);
    }
  }
  // Parity part must be the dual-diagonal accumulator.
  for (std::size_t i = 0; i < m; ++i) {
    const auto& col = cols_[k_ + i];
    const bool ok = i + 1 < m ? col == std::vector<std::uint32_t>{std::uint32_t(i), std::uint32_t(i + 1)}
                              : col == std::vector<std::uint32_t>{std::uint32_t(i)};
    if (!ok) throw DataError("ldpc: parity columns are not dual-diagonal; systematic encoding unavailable");
  }
}

Bits LdpcCode::encode(const Bits& info) const {
  require(info.size() == k_, "ldpc encode: expected " + std::to_string(k_) + " info bits, got " +
                                 std::to_string(info.size()));
  Bits cw(n_, 0);
  std::copy(info.begin(), info.end(), cw.begin());
  std::uint8_t prev = 0;
  for (std::size_t r = 0; r < m(); ++r) {
    std::uint8_t s = 0;
    for (auto v : rows_[r])
      if (v < k_) s ^= info[v] & 1;
    prev ^= s;
    cw[k_ + r] = prev;
  }
  return cw;
}

bool LdpcCode::parity_ok(const Bits& cw) const {
  require(cw.size() == n_, "ldpc parity_ok: codeword length mismatch");
  for (const auto& row : rows_) {
    std::uint8_t s = 0;
    for (auto v : row) s ^= cw[v] & 1;
    if (s) return false;
  }
  return true;
}

LdpcDecodeResult LdpcCode::decode(const std::vector<double>& llr_in, std::size_t max_iters, double alpha) const {
  require(llr_in.size() == n_, "ldpc decode: expected " + std::to_string(n_) + " llrs");
  constexpr double kClamp = 1e3;
  std::vector<double> llr(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    require(!std::isnan(llr_in[i]), "ldpc decode: NaN llr");
    llr[i] = std::clamp(llr_in[i], -kClamp, kClamp);
  }
  // Edge e of check r sits at offset[r] + position in rows_[r].
  std::vector<std::size_t> offset(rows_.size() + 1, 0);
  for (std::size_t r = 0; r < rows_.size(); ++r) offset[r + 1] = offset[r] + rows_[r].size();
  std::vector<double> c2v(offset.back(), 0.0), total(llr);
  Bits hard(n_);
  auto decide = [&] {
    for (std::size_t i = 0; i < n_; ++i) hard[i] = total[i] < 0;
    return parity_ok(hard);
  };

  LdpcDecodeResult res;
  bool ok = decide();
  std::vector<double> v2c;
  while (!ok && res.iterations < max_iters) {
    ++res.iterations;
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const auto& row = rows_[r];
      const std::size_t d = row.size();
      v2c.resize(d);
      double min1 = INFINITY, min2 = INFINITY;
      std::size_t at = 0;
      int sign = 1;
      for (std::size_t e = 0; e < d; ++e) {
        v2c[e] = total[row[e]] - c2v[offset[r] + e];
        const double a = std::fabs(v2c[e]);
        if (v2c[e] < 0) sign = -sign;
        if (a < min1) {
          min2 = min1;
          min1 = a;
          at = e;
        } else if (a < min2) {
          min2 = a;
        }
      }
      for (std::size_t e = 0; e < d; ++e) {
        const int s = v2c[e] < 0 ? -sign : sign;
        const double msg = alpha * s * (e == at ? min2 : min1);
        total[row[e]] += msg - c2v[offset[r] + e];
        c2v[offset[r] + e] = msg;
      }
    }
    ok = decide();
  }
  res.corrected = ok;
  res.info.assign(hard.begin(), hard.begin() + std::ptrdiff_t(k_));
  return res;
}

std::string LdpcCode::to_alist() const {
  std::ostringstream os;
  std::size_t max_col = 0, max_row = 0;
  for (const auto& c : cols_) max_col = std::max(max_col, c.size());
  for (const auto& r : rows_) max_row = std::max(max_row, r.size());
  os << n_ << ' ' << rows_.size() << '\n' << max_col << ' ' << max_row << '\n';
  auto degrees = [&](const std::vector<std::vector<std::uint32_t>>& lists) {
    for (std::size_t i = 0; i < lists.size(); ++i) os << (i ? " " : "") << lists[i].size();
    os << '\n';
  };
  degrees(cols_);
  degrees(rows_);
  auto entries = [&](const std::vector<std::vector<std::uint32_t>>& lists, std::size_t width) {
    for (const auto& l : lists) {
      for (std::size_t i = 0; i < width; ++i) os << (i ? " " : "") << (i < l.size() ? l[i] + 1 : 0);
      os << '\n';
    }
  };
  entries(cols_, max_col);
  entries(rows_, max_row);
  return os.str();
}

LdpcCode LdpcCode::from_alist(const std::string& text) {
  std::istringstream is(text);
  auto next = [&]() -> std::size_t {
    long long v;
    if (!(is >> v) || v < 0) throw DataError("alist: truncated or negative entry");
    return std::size_t(v);
  };
  LdpcCode c;
  c.n_ = next();
  const std::size_t m = next();
  if (c.n_ == 0 || m == 0 || m >= c.n_) throw DataError("alist: need 0 < m < n");
  c.k_ = c.n_ - m;
  const std::size_t max_col = next(), max_row = next();
  std::vector<std::size_t> col_deg(c.n_), row_deg(m);
  for (auto& d : col_deg) d = next();
  for (auto& d : row_deg) d = next();
  std::vector<std::vector<std::uint32_t>> cols(c.n_);
  for (std::size_t j = 0; j < c.n_; ++j)
    for (std::size_t i = 0; i < max_col; ++i) {
      const auto v = next();
      if (i < col_deg[j]) {
        if (v == 0 || v > m) throw DataError("alist: check index out of range");
        cols[j].push_back(std::uint32_t(v - 1));
      }
    }
  c.rows_.assign(m, {});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < max_row; ++i) {
      const auto v = next();
      if (i < row_deg[r]) {
        if (v == 0 || v > c.n_) throw DataError("alist: variable index out of range");
        c.rows_[r].push_back(std::uint32_t(v - 1));
      }
    }
  c.finish();
  for (std::size_t j = 0; j < c.n_; ++j) {
    std::sort(cols[j].begin(), cols[j].end());
    if (cols[j] != c.cols_[j]) throw DataError("alist: column and row lists disagree");
  }
  return c;
}

void LdpcCode::write_alist(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << to_alist();
}

LdpcCode LdpcCode::read_alist(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_alist(ss.str());
}

std::size_t LdpcCode::rank() const {
  const std::size_t words = (n_ + 63) / 64;
  std::vector<std::vector<std::uint64_t>> rows(rows_.size(), std::vector<std::uint64_t>(words, 0));
  for (std::size_t r = 0; r < rows_.size(); ++r)
    for (auto v : rows_[r]) rows[r][v / 64] |= std::uint64_t(1) << (v % 64);
  std::size_t rank = 0;
  for (std::size_t col = 0; col < n_ && rank < rows.size(); ++col) {
    const std::size_t w = col / 64;
    const std::uint64_t bit = std::uint64_t(1) << (col % 64);
    std::size_t piv = rank;
    while (piv < rows.size() && !(rows[piv][w] & bit)) ++piv;
    if (piv == rows.size()) continue;
    std::swap(rows[piv], rows[rank]);
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (r != rank && (rows[r][w] & bit))
        for (std::size_t x = 0; x < words; ++x) rows[r][x] ^= rows[rank][x];
    ++rank;
  }
  return rank;
}

}  // namespace musc::classical
