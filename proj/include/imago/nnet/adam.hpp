#pragma once

// Adam optimizer over a flat list of parameter/gradient buffers. Layers
// expose their parameters as slots (raw pointer + length); the optimizer
// owns the first/second-moment state per slot and performs the standard
// bias-corrected update. Non-finite gradients abort the step by throwing,
// so a training loop can abandon the epoch and report.

#include <imago/common.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

namespace imago::nnet {

struct ParamSlot {
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(std::isfinite(learning_rate) && learning_rate > 0.0,
            "adam: learning rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "adam: betas must be in [0, 1)");
    require(eps > 0.0, "adam: eps must be positive");
  }
};

class Adam {
 public:
  Adam(std::vector<ParamSlot> slots, const AdamConfig& config)
      : slots_(std::move(slots)), config_(config) {
    config_.validate();
    require(!slots_.empty(), "adam: no parameters");
    m_.resize(slots_.size());
    v_.resize(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      require(slots_[i].value != nullptr && slots_[i].grad != nullptr && slots_[i].size > 0,
              "adam: invalid parameter slot");
      m_[i].assign(slots_[i].size, 0.0);
      v_[i].assign(slots_[i].size, 0.0);
    }
  }

  int step_count() const { return step_; }

  /// One bias-corrected update from the gradients currently in the slots.
  void step() {
    for (const ParamSlot& slot : slots_)
      for (std::size_t j = 0; j < slot.size; ++j)
        require(std::isfinite(slot.grad[j]), "adam: non-finite gradient");

    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, step_);
    const double bc2 = 1.0 - std::pow(config_.beta2, step_);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const ParamSlot& slot = slots_[i];
      for (std::size_t j = 0; j < slot.size; ++j) {
        const double g = slot.grad[j];
        m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
        v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        slot.value[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

 private:
  std::vector<ParamSlot> slots_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  int step_ = 0;
};

}  // namespace imago::nnet
