#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "augdr/corpus.hpp"

namespace augdr {

enum class EncoderSide { query, passage };

/// Two independent feature-hashed embedding tables, one per side. A text is
/// encoded as the mean of the rows its tokens hash to.
class DualEncoderParams {
 public:
  static constexpr std::size_t kDefaultBuckets = std::size_t{1} << 15;
  static constexpr std::size_t kDefaultDim = 64;

  DualEncoderParams() = default;
  /// Zero-initialized tables.
  DualEncoderParams(std::size_t buckets, std::size_t dim, std::uint64_t seed = 0);

  /// Entries uniform in [-0.5/sqrt(D), 0.5/sqrt(D)], drawn from seed.
  static DualEncoderParams random(std::size_t buckets, std::size_t dim, std::uint64_t seed);

  std::size_t buckets() const { return buckets_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::span<double> table(EncoderSide side) {
    return side == EncoderSide::query ? std::span<double>(query_table_)
                                      : std::span<double>(passage_table_);
  }
  std::span<const double> table(EncoderSide side) const {
    return side == EncoderSide::query ? std::span<const double>(query_table_)
                                      : std::span<const double>(passage_table_);
  }
  std::span<double> row(EncoderSide side, std::size_t bucket) {
    return table(side).subspan(bucket * dim_, dim_);
  }
  std::span<const double> row(EncoderSide side, std::size_t bucket) const {
    return table(side).subspan(bucket * dim_, dim_);
  }

  bool all_finite() const;

  /// FNV-1a 64 over the serialized checkpoint bytes.
  std::uint64_t checksum() const;

  bool operator==(const DualEncoderParams&) const = default;

 private:
  std::size_t buckets_ = 0;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> query_table_;
  std::vector<double> passage_table_;
};

/// Bucket of a token: FNV-1a 64 of its bytes modulo the bucket count.
std::size_t token_bucket(std::string_view token, std::size_t buckets);
std::vector<std::size_t> hash_tokens(const TokenSequence& tokens, std::size_t buckets);

std::size_t max_tokens(EncoderSide side);

/// Mean of table rows over the token buckets; empty input gives the zero
/// vector. Throws std::invalid_argument when tokens exceed the side's limit.
std::vector<double> encode(const DualEncoderParams& params, EncoderSide side,
                           const TokenSequence& tokens);
std::vector<double> encode_buckets(const DualEncoderParams& params, EncoderSide side,
                                   std::span<const std::size_t> buckets);
std::vector<double> encode_text(const DualEncoderParams& params, EncoderSide side,
                                std::string_view text);

/// Unnormalized dot product. Throws std::invalid_argument on a dimension
/// mismatch.
double score(std::span<const double> q, std::span<const double> d);

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> grad_query;
  std::vector<double> grad_positive;
  std::vector<std::vector<double>> grad_negatives;
};

/// -log softmax of the positive score among {positive} u negatives, with
/// scores s = q . d. Evaluated with the max-shifted log-sum-exp. Gradients
/// are analytic: dL/ds_pos = p_pos - 1 and dL/ds_j = p_j.
InfoNceResult infonce_loss(std::span<const double> q, std::span<const double> positive,
                           std::span<const std::vector<double>> negatives);

struct ScoreLoss {
  double loss = 0.0;
  std::vector<double> grad_scores;  // index 0 is the positive
};

/// The same loss over raw scores, scores[0] being the positive.
ScoreLoss infonce_from_scores(std::span<const double> scores);

void save_checkpoint(const std::filesystem::path& path, const DualEncoderParams& params);
DualEncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace augdr
