#include "ntta/objectives.hpp"

#include "ntta/errors.hpp"
#include "ntta/ops.hpp"

namespace ntta {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor<T> one_hot({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ConfigError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                        std::to_string(k) + ")");
    one_hot[i * k + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return scale(sum(mul(one_hot, log_softmax(logits, 1))), T(-1) / static_cast<T>(b));
}

template <typename T>
Tensor<T> prediction_entropy(const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw ShapeError("prediction_entropy: expected [B, K>=2], got " + shape_str(logits.shape()));
  const auto p = softmax(logits, 1);
  const auto logp = log(clamp_min(p, static_cast<T>(kProbClamp)));
  return scale(sum(mul(p, logp)), T(-1) / static_cast<T>(logits.dim(0)));
}

template <typename T>
Tensor<T> distillation_kl(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, T temperature) {
  if (teacher_logits.shape() != student_logits.shape() || teacher_logits.rank() != 2)
    throw ShapeError("distillation_kl: teacher " + shape_str(teacher_logits.shape()) + " vs student " +
                     shape_str(student_logits.shape()));
  const T inv_t = T(1) / temperature;
  Tensor<T> teacher, log_teacher;
  {
    NoGradGuard no_grad;
    teacher = softmax(scale(teacher_logits, inv_t), 1);
    log_teacher = log(clamp_min(teacher, static_cast<T>(kProbClamp)));
  }
  const auto log_student = log_softmax(scale(student_logits, inv_t), 1);
  return scale(sum(mul(teacher, sub(log_teacher, log_student))), T(1) / static_cast<T>(teacher_logits.dim(0)));
}

template <typename T>
Tensor<T> self_distillation_loss(const ForwardResult<T>& out, T temperature) {
  if (out.aux_logits.empty())
    throw ConfigError("self_distillation_loss: needs a model with at least 2 layers and auxiliary heads");
  Tensor<T> total;
  for (const auto& student : out.aux_logits) {
    auto kl = distillation_kl(out.logits, student, temperature);
    total = total.defined() ? add(total, kl) : kl;
  }
  return scale(total, temperature * temperature / static_cast<T>(out.aux_logits.size()));
}

template <typename T>
LossBreakdown<T> training_loss(Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                               const SdOptions& sd, Mode mode) {
  const bool use_sd = sd.enabled && model.config().sd_enabled;
  auto out = model.forward(x, mode, use_sd);
  LossBreakdown<T> br;
  br.lambda_sd = use_sd ? sd.lambda : 0.0;
  br.temperature = sd.temperature;
  auto ce = cross_entropy(out.logits, labels);
  br.ce = static_cast<double>(ce.item());
  if (!use_sd || sd.lambda == 0.0) {
    br.total = ce;
    if (use_sd) br.sd = static_cast<double>(self_distillation_loss(out, static_cast<T>(sd.temperature)).item());
    return br;
  }
  auto sd_term = self_distillation_loss(out, static_cast<T>(sd.temperature));
  br.sd = static_cast<double>(sd_term.item());
  br.total = add(ce, scale(sd_term, static_cast<T>(sd.lambda)));
  return br;
}

template Tensor<float> cross_entropy(const Tensor<float>&, std::span<const int>);
template Tensor<double> cross_entropy(const Tensor<double>&, std::span<const int>);
template Tensor<float> prediction_entropy(const Tensor<float>&);
template Tensor<double> prediction_entropy(const Tensor<double>&);
template Tensor<float> distillation_kl(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> distillation_kl(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> self_distillation_loss(const ForwardResult<float>&, float);
template Tensor<double> self_distillation_loss(const ForwardResult<double>&, double);
template LossBreakdown<float> training_loss(Model<float>&, const Tensor<float>&, std::span<const int>,
                                            const SdOptions&, Mode);
template LossBreakdown<double> training_loss(Model<double>&, const Tensor<double>&, std::span<const int>,
                                             const SdOptions&, Mode);

}  // namespace ntta
