#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace protoforge {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adaptive-moment optimizer with decoupled weight decay.
///
/// Decay shrinks parameters toward `anchor` (zero when no anchor is given)
/// before the moment update, as p ← p − lr·wd·(p − anchor).
class AdamW {
 public:
  AdamW(std::size_t size, const AdamWConfig& config);

  void step(std::span<double> params, std::span<const double> grads,
            std::span<const double> anchor = {});

  std::size_t steps_taken() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace protoforge
