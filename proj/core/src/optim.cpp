#include "protoforge/optim.hpp"

#include <cmath>

#include "protoforge/error.hpp"

namespace protoforge {

AdamW::AdamW(std::size_t size, const AdamWConfig& config)
    : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grads,
                 std::span<const double> anchor) {
  if (params.size() != m_.size() || grads.size() != m_.size() ||
      (!anchor.empty() && anchor.size() != m_.size())) {
    fail(ErrorCode::kShapeMismatch, "AdamW buffer sizes differ");
  }
  ++t_;
  const auto& c = config_;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double origin = anchor.empty() ? 0.0 : anchor[i];
    params[i] -= c.learning_rate * c.weight_decay * (params[i] - origin);
    const double g = grads[i];
    m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * g;
    v_[i] = c.beta2 * v_[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m_[i] / bias1;
    const double vhat = v_[i] / bias2;
    params[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.eps);
  }
}

}  // namespace protoforge
