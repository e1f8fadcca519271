#pragma once

// Truncated path signatures and log-signatures.
//
// A TruncatedTensor of depth N over c letters stores levels 0..N of the
// tensor algebra contiguously: one scalar, then c, c^2, ..., c^N entries, each
// level row-major in its word index. Public transform outputs drop level 0,
// so a signature occupies sig_channels(c, N) = c + c^2 + ... + c^N slots.
//
// Log-signature coordinates are the coefficients of the truncated tensor
// logarithm read at Lyndon-word positions, with Lyndon words ordered by
// (length, lexicographic).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "signet/tensor.hpp"

namespace signet::sig {

std::size_t sig_channels(std::size_t channels, std::size_t depth);
std::size_t logsig_channels(std::size_t channels, std::size_t depth);

struct SignatureSpec {
  std::size_t channels = 1;
  std::size_t depth = 1;
  bool log_mode = false;

  void validate() const;
  /// Width of one transform output for this spec.
  std::size_t out_channels() const;
};

/// Word over the alphabet {0, .., c-1}. Rendering adds 1 to every letter.
using Word = std::vector<std::uint32_t>;

bool is_lyndon(const Word& word);

class LyndonBasis {
 public:
  LyndonBasis(std::size_t channels, std::size_t depth);

  std::size_t channels() const { return channels_; }
  std::size_t depth() const { return depth_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<Word>& words() const { return words_; }
  /// Position of each word in the level-1..N flattened signature layout.
  const std::vector<std::size_t>& positions() const { return positions_; }

 private:
  std::size_t channels_;
  std::size_t depth_;
  std::vector<Word> words_;
  std::vector<std::size_t> positions_;
};

/// Returns the shared basis for (c, N); bases are built once per process.
const LyndonBasis& lyndon_basis(std::size_t channels, std::size_t depth);

class TruncatedTensor {
 public:
  TruncatedTensor(std::size_t channels, std::size_t depth);

  static TruncatedTensor identity(std::size_t channels, std::size_t depth);
  /// Builds a tensor from levels 1..N; level 0 is set to `level0`.
  static TruncatedTensor from_levels(std::size_t channels, std::size_t depth,
                                     std::span<const double> levels, double level0 = 1.0);

  std::size_t channels() const { return channels_; }
  std::size_t depth() const { return depth_; }
  std::size_t size() const { return data_.size(); }
  std::size_t level_offset(std::size_t k) const { return offsets_[k]; }
  std::size_t level_size(std::size_t k) const { return offsets_[k + 1] - offsets_[k]; }

  std::span<double> level(std::size_t k) { return {data_.data() + offsets_[k], level_size(k)}; }
  std::span<const double> level(std::size_t k) const {
    return {data_.data() + offsets_[k], level_size(k)};
  }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  /// Levels 1..N flattened.
  std::span<const double> tail() const { return {data_.data() + 1, data_.size() - 1}; }

 private:
  std::size_t channels_;
  std::size_t depth_;
  std::vector<std::size_t> offsets_;
  std::vector<double> data_;
};

TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b);
/// Exponential of a level-1 element.
TruncatedTensor tensor_exp(std::span<const double> increment, std::size_t depth);
/// Logarithm series truncated at the tensor's depth; level 0 must be 1.
TruncatedTensor tensor_log(const TruncatedTensor& t);
/// Entries of tensor_log(t).tail() at `positions` only.
void tensor_log_at(const TruncatedTensor& t, std::span<const std::size_t> positions, double* out);
/// a (x) exp(increment) without forming the exponential (Horner form).
TruncatedTensor mul_exp(const TruncatedTensor& a, std::span<const double> increment);

// Reverse-mode rules for the algebra primitives. Each adds into its outputs.
void tensor_mul_backward(const TruncatedTensor& a, const TruncatedTensor& b,
                         std::span<const double> grad_out, std::span<double> grad_a,
                         std::span<double> grad_b);
void tensor_exp_backward(std::span<const double> increment, const TruncatedTensor& exp_value,
                         std::span<const double> grad_out, std::span<double> grad_increment);
void tensor_log_backward(const TruncatedTensor& t, std::span<const double> grad_out,
                         std::span<double> grad_t);
void tensor_log_at_backward(const TruncatedTensor& t, std::span<const std::size_t> positions,
                            const double* grad_out, std::span<double> grad_t);
void mul_exp_backward(const TruncatedTensor& a, std::span<const double> increment,
                      std::span<const double> grad_out, std::span<double> grad_a,
                      std::span<double> grad_increment);

/// Signature of the piecewise-linear path through the rows of `path`
/// ([m, c] or batched [b, m, c]). Output is [sig_channels] or [b, sig_channels].
Tensor signature(const Tensor& path, std::size_t depth);
/// Log-signature in Lyndon-word coordinates; output [logsig_channels] or batched.
Tensor log_signature(const Tensor& path, std::size_t depth);
/// Dispatches on spec.log_mode. spec.channels must match the path width.
Tensor transform(const Tensor& path, const SignatureSpec& spec);
/// Signatures (or log-signatures) of every prefix path[0..j], j = 1..m-1,
/// computed incrementally. Output [m-1, out] or [b, m-1, out].
Tensor expanding_signatures(const Tensor& stream, const SignatureSpec& spec);

}  // namespace signet::sig
