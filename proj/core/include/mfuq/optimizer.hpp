#pragma once

#include <cstddef>

#include "mfuq/linalg.hpp"

namespace mfuq {

// Adam with the canonical constants (beta1 0.9, beta2 0.999, eps 1e-8).
// The learning rate may be rescheduled between steps.
class Adam {
  public:
    explicit Adam(std::size_t n, double learning_rate = 1e-3)
        : m_(n, 0.0), v_(n, 0.0), lr_(learning_rate) {}

    void set_learning_rate(double lr) { lr_ = lr; }

    void step(Vec& params, const Vec& grad);

  private:
    Vec m_;
    Vec v_;
    double lr_;
    long t_ = 0;
};

}  // namespace mfuq
