#include "augdr/dense_encoder.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "augdr/hashing.hpp"
#include "augdr/rng.hpp"

namespace augdr {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'U', 'G', 'D', 'R', 'C', 'K', '1'};

void put_u64(std::array<std::byte, 8>& buf, std::uint64_t v) {
  for (std::size_t i = 0; i < 8; ++i) buf[i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
}

std::uint64_t get_u64(const std::array<std::byte, 8>& buf) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

// Streams the checkpoint byte layout into sink(std::span<const std::byte>).
template <typename Sink>
void serialize(const DualEncoderParams& params, Sink&& sink) {
  sink(std::as_bytes(std::span(kMagic)));
  std::array<std::byte, 8> buf{};
  for (std::uint64_t v : {static_cast<std::uint64_t>(params.buckets()),
                          static_cast<std::uint64_t>(params.dim()), params.seed()}) {
    put_u64(buf, v);
    sink(std::span<const std::byte>(buf));
  }
  constexpr std::size_t kChunk = 4096;
  std::vector<std::byte> chunk;
  chunk.reserve(kChunk * 8);
  for (auto side : {EncoderSide::query, EncoderSide::passage}) {
    for (double x : params.table(side)) {
      put_u64(buf, std::bit_cast<std::uint64_t>(x));
      chunk.insert(chunk.end(), buf.begin(), buf.end());
      if (chunk.size() == kChunk * 8) {
        sink(std::span<const std::byte>(chunk));
        chunk.clear();
      }
    }
  }
  if (!chunk.empty()) sink(std::span<const std::byte>(chunk));
}

}  // namespace

DualEncoderParams::DualEncoderParams(std::size_t buckets, std::size_t dim, std::uint64_t seed)
    : buckets_(buckets),
      dim_(dim),
      seed_(seed),
      query_table_(buckets * dim, 0.0),
      passage_table_(buckets * dim, 0.0) {
  if (buckets == 0 || dim == 0) throw std::invalid_argument("encoder shape must be positive");
}

DualEncoderParams DualEncoderParams::random(std::size_t buckets, std::size_t dim,
                                            std::uint64_t seed) {
  DualEncoderParams params(buckets, dim, seed);
  const double half_width = 0.5 / std::sqrt(static_cast<double>(dim));
  Rng rng(derive_seed(seed, {"encoder-init"}));
  for (auto side : {EncoderSide::query, EncoderSide::passage}) {
    for (double& x : params.table(side)) x = (2.0 * rng.uniform_real() - 1.0) * half_width;
  }
  return params;
}

bool DualEncoderParams::all_finite() const {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(query_table_.begin(), query_table_.end(), finite) &&
         std::all_of(passage_table_.begin(), passage_table_.end(), finite);
}

std::uint64_t DualEncoderParams::checksum() const {
  std::uint64_t h = kFnvOffset;
  serialize(*this, [&](std::span<const std::byte> bytes) { h = fnv1a64(bytes, h); });
  return h;
}

std::size_t token_bucket(std::string_view token, std::size_t buckets) {
  return static_cast<std::size_t>(fnv1a64(token) % buckets);
}

std::vector<std::size_t> hash_tokens(const TokenSequence& tokens, std::size_t buckets) {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens.tokens) out.push_back(token_bucket(t, buckets));
  return out;
}

std::size_t max_tokens(EncoderSide side) {
  return side == EncoderSide::query ? kMaxQueryTokens : kMaxPassageTokens;
}

std::vector<double> encode_buckets(const DualEncoderParams& params, EncoderSide side,
                                   std::span<const std::size_t> buckets) {
  std::vector<double> v(params.dim(), 0.0);
  if (buckets.empty()) return v;
  for (auto b : buckets) {
    auto row = params.row(side, b);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(buckets.size());
  for (double& x : v) x *= inv;
  return v;
}

std::vector<double> encode(const DualEncoderParams& params, EncoderSide side,
                           const TokenSequence& tokens) {
  if (tokens.size() > max_tokens(side)) {
    throw std::invalid_argument("token sequence of length " + std::to_string(tokens.size()) +
                                " exceeds the encoder limit " +
                                std::to_string(max_tokens(side)));
  }
  auto buckets = hash_tokens(tokens, params.buckets());
  return encode_buckets(params, side, buckets);
}

std::vector<double> encode_text(const DualEncoderParams& params, EncoderSide side,
                                std::string_view text) {
  return encode(params, side, tokenize(text, max_tokens(side)));
}

double score(std::span<const double> q, std::span<const double> d) {
  if (q.size() != d.size()) {
    throw std::invalid_argument("score: dimension mismatch " + std::to_string(q.size()) +
                                " vs " + std::to_string(d.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * d[i];
  return s;
}

ScoreLoss infonce_from_scores(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("infonce: no positive score");
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("infonce: non-finite score");
  }
  ScoreLoss out;
  out.grad_scores.resize(scores.size());
  const double max_score = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.grad_scores[i] = std::exp(scores[i] - max_score);
    sum += out.grad_scores[i];
  }
  out.loss = max_score + std::log(sum) - scores[0];
  // Rounding can leave a tiny negative value when the positive dominates.
  out.loss = std::max(out.loss, 0.0);
  for (double& g : out.grad_scores) g /= sum;
  out.grad_scores[0] -= 1.0;
  return out;
}

InfoNceResult infonce_loss(std::span<const double> q, std::span<const double> positive,
                           std::span<const std::vector<double>> negatives) {
  auto check = [&](std::span<const double> v) {
    if (v.size() != q.size()) throw std::invalid_argument("infonce: dimension mismatch");
    for (double x : v) {
      if (!std::isfinite(x)) throw std::invalid_argument("infonce: non-finite input");
    }
  };
  check(q);
  check(positive);
  for (const auto& n : negatives) check(n);

  std::vector<double> scores;
  scores.reserve(negatives.size() + 1);
  scores.push_back(score(q, positive));
  for (const auto& n : negatives) scores.push_back(score(q, n));
  auto sl = infonce_from_scores(scores);

  InfoNceResult out;
  out.loss = sl.loss;
  const std::size_t dim = q.size();
  out.grad_query.assign(dim, 0.0);
  out.grad_positive.assign(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    out.grad_query[i] = sl.grad_scores[0] * positive[i];
    out.grad_positive[i] = sl.grad_scores[0] * q[i];
  }
  out.grad_negatives.reserve(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const double g = sl.grad_scores[j + 1];
    std::vector<double> gn(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      out.grad_query[i] += g * negatives[j][i];
      gn[i] = g * q[i];
    }
    out.grad_negatives.push_back(std::move(gn));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const DualEncoderParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  serialize(params, [&](std::span<const std::byte> bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  });
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

DualEncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + ": not a checkpoint");
  std::array<std::byte, 8> buf{};
  auto read_u64 = [&] {
    in.read(reinterpret_cast<char*>(buf.data()), 8);
    if (!in) throw std::runtime_error(path.string() + ": truncated checkpoint");
    return get_u64(buf);
  };
  const auto buckets = static_cast<std::size_t>(read_u64());
  const auto dim = static_cast<std::size_t>(read_u64());
  const auto seed = read_u64();
  if (buckets == 0 || dim == 0 || buckets > (std::size_t{1} << 32) || dim > 65536) {
    throw std::runtime_error(path.string() + ": implausible checkpoint shape");
  }
  DualEncoderParams params(buckets, dim, seed);
  for (auto side : {EncoderSide::query, EncoderSide::passage}) {
    for (double& x : params.table(side)) x = std::bit_cast<double>(read_u64());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": trailing bytes after checkpoint");
  }
  return params;
}

}  // namespace augdr
