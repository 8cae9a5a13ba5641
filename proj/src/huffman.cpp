#include <algorithm>
#include <map>
#include <queue>

#include "musc/classical.hpp"
#include "musc/errors.hpp"

namespace musc::classical {

HuffmanCode HuffmanCode::from_frequencies(const std::vector<double>& freq) {
  HuffmanCode c;
  c.lengths_.assign(freq.size(), 0);
  std::vector<std::uint32_t> used;
  for (std::uint32_t i = 0; i < freq.size(); ++i) {
    require(freq[i] >= 0 && std::isfinite(freq[i]), "huffman: frequencies must be finite and non-negative");
    if (freq[i] > 0) used.push_back(i);
  }
  require(!used.empty(), "huffman: no symbol has positive frequency");
  if (used.size() == 1) {
    c.lengths_[used[0]] = 1;
    c.build_canonical();
    return c;
  }
  // Node weights, children; leaves first. Ties break on creation order.
  struct Node {
    double w;
    int left, right;
  };
  std::vector<Node> nodes;
  using Item = std::pair<double, std::uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (auto s : used) {
    heap.push({freq[s], std::uint32_t(nodes.size())});
    nodes.push_back({freq[s], -1, -1});
  }
  while (heap.size() > 1) {
    auto a = heap.top();
    heap.pop();
    auto b = heap.top();
    heap.pop();
    heap.push({a.first + b.first, std::uint32_t(nodes.size())});
    nodes.push_back({a.first + b.first, int(a.second), int(b.second)});
  }
  std::vector<std::uint32_t> depth(nodes.size(), 0);
  for (std::size_t i = nodes.size(); i-- > used.size();) {
    depth[std::size_t(nodes[i].left)] = depth[i] + 1;
    depth[std::size_t(nodes[i].right)] = depth[i] + 1;
  }
  for (std::size_t j = 0; j < used.size(); ++j) c.lengths_[used[j]] = depth[j];
  c.build_canonical();
  return c;
}

HuffmanCode HuffmanCode::from_lengths(std::vector<std::uint32_t> lengths) {
  HuffmanCode c;
  c.lengths_ = std::move(lengths);
  c.build_canonical();
  require(c.kraft_sum() <= 1.0 + 1e-12, "huffman: code lengths violate the Kraft inequality");
  return c;
}

void HuffmanCode::build_canonical() {
  std::uint32_t max_len = 0;
  for (auto l : lengths_) max_len = std::max(max_len, l);
  require(max_len <= 63, "huffman: code length exceeds 63 bits");
  count_.assign(max_len + 1, 0);
  for (auto l : lengths_)
    if (l) ++count_[l];
  first_code_.assign(max_len + 1, 0);
  first_index_.assign(max_len + 1, 0);
  std::uint64_t code = 0;
  std::uint32_t index = 0;
  for (std::uint32_t len = 1; len <= max_len; ++len) {
    code = (code + count_[len - 1]) << 1;
    first_code_[len] = code;
    first_index_[len] = index;
    index += count_[len];
  }
  // With count_[0] forced to 0 the recurrence above starts at code 0 for length 1.
  sorted_.clear();
  for (std::uint32_t len = 1; len <= max_len; ++len)
    for (std::uint32_t s = 0; s < lengths_.size(); ++s)
      if (lengths_[s] == len) sorted_.push_back(s);
  codes_.assign(lengths_.size(), 0);
  std::vector<std::uint64_t> next(first_code_);
  for (auto s : sorted_) codes_[s] = next[lengths_[s]]++;
}

std::string HuffmanCode::codeword(std::size_t sym) const {
  const auto len = lengths_.at(sym);
  std::string out(len, '0');
  for (std::uint32_t i = 0; i < len; ++i)
    if ((codes_[sym] >> (len - 1 - i)) & 1) out[i] = '1';
  return out;
}

double HuffmanCode::kraft_sum() const {
  double s = 0;
  for (auto l : lengths_)
    if (l) s += std::ldexp(1.0, -int(l));
  return s;
}

void HuffmanCode::encode(std::size_t sym, Bits& out) const {
  require(sym < lengths_.size() && lengths_[sym] > 0, "huffman: symbol " + std::to_string(sym) + " has no codeword");
  const auto len = lengths_[sym];
  for (std::uint32_t i = 0; i < len; ++i) out.push_back(std::uint8_t((codes_[sym] >> (len - 1 - i)) & 1));
}

std::optional<std::uint32_t> HuffmanCode::decode(const Bits& in, std::size_t& pos) const {
  std::uint64_t code = 0;
  std::size_t p = pos;
  for (std::uint32_t len = 1; len < count_.size(); ++len) {
    if (p >= in.size()) return std::nullopt;
    code = (code << 1) | (in[p++] & 1);
    if (count_[len] && code >= first_code_[len] && code - first_code_[len] < count_[len]) {
      pos = p;
      return sorted_[first_index_[len] + std::uint32_t(code - first_code_[len])];
    }
  }
  return std::nullopt;
}

HuffmanTable HuffmanTable::build(const std::vector<std::vector<std::string>>& corpus) {
  std::map<std::string, double> counts;
  for (const auto& sentence : corpus)
    for (const auto& w : sentence) counts[w] += 1;
  require(!counts.empty(), "huffman: empty corpus");
  HuffmanTable t;
  std::vector<double> freq;
  for (const auto& [w, c] : counts) {
    t.words.push_back(w);
    freq.push_back(c);
  }
  t.code = HuffmanCode::from_frequencies(freq);
  return t;
}

std::optional<std::size_t> HuffmanTable::index(const std::string& w) const {
  auto it = std::lower_bound(words.begin(), words.end(), w);
  if (it == words.end() || *it != w) return std::nullopt;
  return std::size_t(it - words.begin());
}

nlohmann::json HuffmanTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < words.size(); ++i) arr.push_back({{"symbol", words[i]}, {"codeword", code.codeword(i)}});
  return arr;
}

HuffmanTable HuffmanTable::from_json(const nlohmann::json& j) {
  HuffmanTable t;
  std::vector<std::pair<std::string, std::string>> entries;
  try {
    for (const auto& e : j) entries.emplace_back(e.at("symbol").get<std::string>(), e.at("codeword").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("huffman table: ") + e.what());
  }
  std::sort(entries.begin(), entries.end());
  std::vector<std::uint32_t> lengths;
  for (const auto& [w, cw] : entries) {
    t.words.push_back(w);
    lengths.push_back(std::uint32_t(cw.size()));
  }
  t.code = HuffmanCode::from_lengths(lengths);
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (t.code.codeword(i) != entries[i].second)
      throw DataError("huffman table: codeword for '" + entries[i].first + "' is not canonical");
  return t;
}

Bits huffman_encode(const std::vector<std::string>& words, const HuffmanTable& table) {
  Bits out;
  for (const auto& w : words) {
    auto i = table.index(w);
    require(i.has_value(), "huffman_encode: word '" + w + "' is not in the table");
    table.code.encode(*i, out);
  }
  return out;
}

std::vector<std::string> huffman_decode(const Bits& bits, const HuffmanTable& table) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < bits.size()) {
    auto s = table.code.decode(bits, pos);
    if (!s) throw DataError("huffman_decode: truncated or invalid bitstream at bit " + std::to_string(pos));
    out.push_back(table.words[*s]);
  }
  return out;
}

std::vector<std::string> huffman_decode_lenient(const Bits& bits, const HuffmanTable& table, std::size_t count) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (out.size() < count) {
    auto s = table.code.decode(bits, pos);
    if (!s) break;
    out.push_back(table.words[*s]);
  }
  out.resize(count, "<unk>");
  return out;
}

}  // namespace musc::classical
