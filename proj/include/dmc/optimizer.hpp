#pragma once

#include "dmc/types.hpp"

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace dmc {

enum class OptimizerKind { Sgd, Adam };

inline std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw InvalidInput("unknown optimizer: " + std::string(name));
}

/// One training stage: step budget, step size and minibatch size.
struct Schedule {
  std::size_t steps = 100;
  double lr = 0.1;
  std::size_t batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::Sgd;

  bool operator==(const Schedule&) const = default;
};

/// First-order updater over independently addressed parameter blocks.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(int slot, Matrix& param, const Matrix& grad) {
    if (kind_ == OptimizerKind::Sgd) {
      param.noalias() -= lr_ * grad;
      return;
    }
    auto& m = moments_[slot];
    if (m.first.size() == 0) {
      m.first = Matrix::Zero(param.rows(), param.cols());
      m.second = Matrix::Zero(param.rows(), param.cols());
    }
    ++m.t;
    m.first = kBeta1 * m.first + (1.0 - kBeta1) * grad;
    m.second = kBeta2 * m.second + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(m.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(m.t));
    param.array() -= lr_ * (m.first.array() / c1) / ((m.second.array() / c2).sqrt() + kEps);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  struct Moments {
    Matrix first;
    Matrix second;
    std::size_t t = 0;
  };

  OptimizerKind kind_;
  double lr_;
  std::map<int, Moments> moments_;
};

}  // namespace dmc
