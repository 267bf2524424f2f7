#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "codemix/tensor.hpp"
#include "codemix/tokenizer.hpp"

namespace codemix {

/// Raised when activations, losses or gradients stop being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Head { Mlm, Classify, Span };

std::string_view to_string(Head head) noexcept;

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_len = 64;
  std::size_t num_labels = 2;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Post-norm encoder with learned positions, GELU feed-forward and three
/// heads. Every head's tensors are always present; a head that is not used
/// by a batch receives exactly zero gradient.
using Parameters = TensorSet;

Parameters init_parameters(const ModelConfig& config);

/// Re-draws the tensors of one head (shapes follow the current config).
void reset_head(Parameters& params, const ModelConfig& config, Head head, std::uint64_t seed);

/// Names of the tensors owned by a head.
std::vector<std::string> head_tensor_names(const ModelConfig& config, Head head);
bool is_head_tensor(std::string_view name, Head head);

struct ModelBatch {
  /// Every encoding has exactly config.max_len positions.
  std::vector<Encoding> inputs;
  /// Mlm: per example, per position target id or kIgnoreLabel.
  std::vector<std::vector<TokenId>> mlm_labels;
  /// Classify: one label per example.
  std::vector<std::size_t> class_labels;
  /// Span: token positions of the answer's first and last subword.
  std::vector<std::size_t> start_positions;
  std::vector<std::size_t> end_positions;

  std::size_t size() const noexcept { return inputs.size(); }
};

/// Mlm: rows = batch*max_len, cols = vocab_size.
/// Classify: rows = batch, cols = num_labels.
/// Span: rows = batch, cols = max_len; start logits in `values`, end
/// logits in `end_values`; padded positions hold -infinity.
struct Logits {
  Head head = Head::Mlm;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> end_values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

Logits forward(const ModelConfig& config, const Parameters& params, const ModelBatch& batch, Head head);

struct LossOutput {
  double loss = 0.0;
  Parameters gradients;
  /// Correct argmax predictions over counted targets (train accuracy).
  std::size_t correct = 0;
  std::size_t counted = 0;
};

/// Mean cross-entropy (Span: mean of start and end cross-entropies) and
/// its gradient with respect to every parameter tensor.
LossOutput loss_and_gradients(const ModelConfig& config, const Parameters& params, const ModelBatch& batch,
                              Head head);

/// Loss only; used by finite differences.
double compute_loss(const ModelConfig& config, const Parameters& params, const ModelBatch& batch, Head head);

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  /// Coordinates where both gradients lie below the finite-difference
  /// resolution (16 ulps of the loss over 2*epsilon). They count as agreeing;
  /// the span head's position-invariant directions land here.
  std::size_t below_resolution = 0;
};

/// Central finite differences on a deterministic subsample of at least
/// `per_tensor` coordinates of every tensor (all of them for small
/// tensors). Relative error is |g - g_fd| / max(|g|, |g_fd|, 1e-12).
GradientCheckResult gradient_check(const ModelConfig& config, const Parameters& params, const ModelBatch& batch,
                                   Head head, double epsilon, std::size_t per_tensor = 20);

/// Same comparison against caller-supplied analytic gradients.
GradientCheckResult gradient_check_against(const ModelConfig& config, const Parameters& params,
                                           const ModelBatch& batch, Head head, double epsilon,
                                           const Parameters& analytic, std::size_t per_tensor = 20);

/// Intermediate values for inspection in tests.
struct EncoderTrace {
  /// Per layer, [batch][heads][max_len][max_len]; rows of padded queries
  /// are included, columns of padded keys are zero.
  std::vector<std::vector<double>> attention;
  /// Per normalization site, normalized values before gain and bias,
  /// [batch*max_len][d_model] restricted to unpadded positions.
  std::vector<std::vector<double>> normalized;
  std::vector<double> hidden;
};

EncoderTrace trace_encoder(const ModelConfig& config, const Parameters& params, const ModelBatch& batch);

/// Predicted class per example.
std::vector<std::size_t> predict_classes(const Logits& logits);

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
};

/// Highest start+end logit pair with start <= end < start + max_answer_tokens,
/// both within segment 1 when the encoding has one.
std::vector<SpanPrediction> predict_spans(const Logits& logits, const ModelBatch& batch,
                                          std::size_t max_answer_tokens = 30);

}  // namespace codemix
