#pragma once

// Least-squares adversarial objectives and the content term of the fusion
// generator. All losses take NCHW batches; discriminator score maps are
// reduced to one scalar per image by their arithmetic mean before the
// squared deviation from the label is taken.

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>

#include "firegan/ops.hpp"

namespace firegan {

enum class GradientOperator { laplacian, sobel };

inline GradientOperator parse_gradient_operator(const std::string& s) {
  if (s == "laplacian") return GradientOperator::laplacian;
  if (s == "sobel") return GradientOperator::sobel;
  throw ValidationError("gradient_operator must be 'laplacian' or 'sobel', got '" + s + "'");
}

inline const char* gradient_operator_name(GradientOperator g) {
  return g == GradientOperator::laplacian ? "laplacian" : "sobel";
}

struct LossWeights {
  double gamma = 1.0;     // multiplier on the D1 adversarial term of the G2 loss
  double lambda = 100.0;  // content weight
  double xi = 0.5;        // gradient-term weight inside the content term
  double c1_label = 1.0;  // target for D1(fused) in the G2 loss
  double c2_label = 1.0;  // target for D2(fused) in the G2 loss
  double a_label = 0.0;   // fake label for both discriminators
  double d1_real_label = 1.0;
  double d2_real_label = 1.0;
  double g1_adv_weight = 1.0;
  bool content_per_channel = true;  // divide content sums by H*W*C rather than H*W
  GradientOperator gradient_operator = GradientOperator::laplacian;

  void validate() const {
    if (!(gamma > 0)) throw ValidationError("gamma must be positive");
    if (!(lambda >= 0)) throw ValidationError("lambda must be non-negative");
    if (!(xi >= 0)) throw ValidationError("xi must be non-negative");
    if (!(g1_adv_weight >= 0)) throw ValidationError("g1_adv_weight must be non-negative");
    for (double l : {c1_label, c2_label, a_label, d1_real_label, d2_real_label})
      if (!std::isfinite(l)) throw ValidationError("loss labels must be finite");
  }
};

struct LossReport {
  double g1_total = 0, g2_total = 0, g2_adv_d1 = 0, g2_adv_d2 = 0, g2_content = 0;
  double d1_total = 0, d2_total = 0;

  static std::string csv_header() {
    return "step,g1_total,g2_total,g2_adv_d1,g2_adv_d2,g2_content,d1_total,d2_total";
  }
  std::string csv_row(std::size_t step) const {
    std::ostringstream os;
    os << step << std::setprecision(9);
    for (double v : values()) os << ',' << v;
    return os.str();
  }
  std::array<double, 7> values() const {
    return {g1_total, g2_total, g2_adv_d1, g2_adv_d2, g2_content, d1_total, d2_total};
  }
  static constexpr std::array<const char*, 7> names() {
    return {"g1_total", "g2_total", "g2_adv_d1", "g2_adv_d2", "g2_content", "d1_total", "d2_total"};
  }
  // Throws NumericError naming the first non-finite term.
  void check_finite(std::size_t step) const {
    const auto v = values();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i]))
        throw NumericError(std::string("non-finite loss term ") + names()[i] + " at step " +
                           std::to_string(step));
  }
};

namespace losses {

namespace detail {

template <typename T>
void require_finite(const Var<T>& v, const char* what) {
  if (!v.value().all_finite()) throw NumericError(std::string(what) + " contains non-finite values");
}

template <typename T>
void require_batch(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape().empty() || b.shape().empty() || a.shape()[0] != b.shape()[0])
    throw ShapeError(std::string(what) + ": batch size mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// Per-channel gradient response with edge replication. The Laplacian is the
// 4-neighbour stencil; the Sobel option is the gradient magnitude.
template <typename T>
Var<T> gradient_map(const Var<T>& x, GradientOperator op = GradientOperator::laplacian) {
  if (op == GradientOperator::laplacian)
    return ops::stencil3x3(x, std::array<T, 9>{0, 1, 0, 1, -4, 1, 0, 1, 0});
  const auto gx = ops::stencil3x3(x, std::array<T, 9>{-1, 0, 1, -2, 0, 2, -1, 0, 1});
  const auto gy = ops::stencil3x3(x, std::array<T, 9>{-1, -2, -1, 0, 0, 0, 1, 2, 1});
  return ops::sqrt_eps(ops::add(ops::square(gx), ops::square(gy)), T(1e-12));
}

// mean_n (mean(score map n) - label)^2
template <typename T>
Var<T> adversarial(const Var<T>& scores, double label) {
  return ops::mean(ops::square(ops::add_scalar(ops::per_sample_mean(scores), static_cast<T>(-label))));
}

// Per-image squared Frobenius norm of (a - b), normalized by H*W (times C
// when per_channel) and averaged over the batch.
template <typename T>
Var<T> pixel_term(const Var<T>& a, const Var<T>& b, bool per_channel) {
  detail::require_same(a, b, "content term");
  const auto& s = a.shape();
  double denom = static_cast<double>(s.at(0) * s.at(2) * s.at(3));
  if (per_channel) denom *= static_cast<double>(s.at(1));
  return ops::scale(ops::sum(ops::square(ops::sub(a, b))), static_cast<T>(1.0 / denom));
}

template <typename T>
struct G2Terms {
  Var<T> adv_d1, adv_d2, content, total;
};

// gamma * adv(D1(F), c1) + adv(D2(F), c2)
//   + lambda/(HW[C]) * (||F - R||^2 + xi * ||grad F - grad V||^2), batch-averaged.
template <typename T>
G2Terms<T> g2_loss(const Var<T>& fused_scores_d1, const Var<T>& fused_scores_d2, const Var<T>& fused,
                   const Var<T>& real_ir, const Var<T>& visible, const LossWeights& w) {
  detail::require_batch(fused_scores_d1, fused, "g2_loss");
  detail::require_batch(fused_scores_d2, fused, "g2_loss");
  detail::require_same(fused, real_ir, "g2_loss fused/real_ir");
  detail::require_same(fused, visible, "g2_loss fused/visible");
  for (const auto* v : {&fused_scores_d1, &fused_scores_d2, &fused, &real_ir, &visible})
    detail::require_finite(*v, "g2_loss input");

  G2Terms<T> t;
  t.adv_d1 = adversarial(fused_scores_d1, w.c1_label);
  t.adv_d2 = adversarial(fused_scores_d2, w.c2_label);
  Var<T> content = pixel_term(fused, real_ir, w.content_per_channel);
  if (w.xi != 0.0) {
    const auto grad_term = pixel_term(gradient_map(fused, w.gradient_operator),
                                      gradient_map(visible, w.gradient_operator),
                                      w.content_per_channel);
    content = ops::add(content, ops::scale(grad_term, static_cast<T>(w.xi)));
  }
  t.content = ops::scale(content, static_cast<T>(w.lambda));
  t.total = ops::add(ops::add(ops::scale(t.adv_d1, static_cast<T>(w.gamma)), t.adv_d2), t.content);
  return t;
}

template <typename T>
struct G1Terms {
  Var<T> adv, content, total;
};

// g1_adv_weight * adv(D2(gen_ir), d2_real_label) + lambda/(HW[C]) * ||gen_ir - R||^2
template <typename T>
G1Terms<T> g1_loss(const Var<T>& gen_ir_scores_d2, const Var<T>& gen_ir, const Var<T>& real_ir,
                   const LossWeights& w) {
  detail::require_batch(gen_ir_scores_d2, gen_ir, "g1_loss");
  detail::require_same(gen_ir, real_ir, "g1_loss gen_ir/real_ir");
  for (const auto* v : {&gen_ir_scores_d2, &gen_ir, &real_ir}) detail::require_finite(*v, "g1_loss input");
  G1Terms<T> t;
  t.adv = adversarial(gen_ir_scores_d2, w.d2_real_label);
  t.content = ops::scale(pixel_term(gen_ir, real_ir, w.content_per_channel), static_cast<T>(w.lambda));
  t.total = ops::add(ops::scale(t.adv, static_cast<T>(w.g1_adv_weight)), t.content);
  return t;
}

template <typename T>
Var<T> d1_loss(const Var<T>& real_visible_scores, const Var<T>& fused_scores, const LossWeights& w) {
  detail::require_same(real_visible_scores, fused_scores, "d1_loss");
  detail::require_finite(real_visible_scores, "d1_loss input");
  detail::require_finite(fused_scores, "d1_loss input");
  return ops::add(adversarial(real_visible_scores, w.d1_real_label), adversarial(fused_scores, w.a_label));
}

// The two fake classes (generated IR, fused) are weighted equally.
template <typename T>
Var<T> d2_loss(const Var<T>& real_ir_scores, const Var<T>& gen_ir_scores, const Var<T>& fused_scores,
               const LossWeights& w) {
  detail::require_same(real_ir_scores, gen_ir_scores, "d2_loss");
  detail::require_same(real_ir_scores, fused_scores, "d2_loss");
  for (const auto* v : {&real_ir_scores, &gen_ir_scores, &fused_scores})
    detail::require_finite(*v, "d2_loss input");
  const auto fake = ops::add(adversarial(gen_ir_scores, w.a_label), adversarial(fused_scores, w.a_label));
  return ops::add(adversarial(real_ir_scores, w.d2_real_label), ops::scale(fake, T(0.5)));
}

}  // namespace losses
}  // namespace firegan
