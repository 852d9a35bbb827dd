#pragma once

#include <span>

#include "ntta/model.hpp"
#include "ntta/tensor.hpp"

namespace ntta {

inline constexpr double kProbClamp = 1e-12;

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean over the batch of the Shannon entropy -sum_c p_c log p_c of softmax(logits).
/// Probabilities are clamped at 1e-12 inside the log, so 0 log 0 contributes 0.
template <typename T>
Tensor<T> prediction_entropy(const Tensor<T>& logits);

/// Batch-mean KL(teacher || student) between softmax(teacher/tau) and
/// softmax(student/tau). The teacher side is detached.
template <typename T>
Tensor<T> distillation_kl(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, T temperature);

/// tau^2 * mean over shallow layers of KL(final || aux_l). Needs a forward
/// result with aux logits (sd_enabled model, keep_layers = true).
template <typename T>
Tensor<T> self_distillation_loss(const ForwardResult<T>& out, T temperature);

struct SdOptions {
  bool enabled = true;
  double lambda = 0.1;
  double temperature = 4.0;
};

template <typename T>
struct LossBreakdown {
  Tensor<T> total;  // differentiable
  double ce = 0.0;
  double sd = 0.0;
  double lambda_sd = 0.0;
  double temperature = 0.0;
};

/// ce + lambda * sd on one batch in train mode. The sd term is 0 when the
/// model has no auxiliary heads or SD is disabled.
template <typename T>
LossBreakdown<T> training_loss(Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                               const SdOptions& sd, Mode mode = Mode::train);

}  // namespace ntta
