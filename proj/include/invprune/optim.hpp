#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "invprune/network.hpp"

namespace invprune {

enum class OptimizerKind { sgd_nesterov, adamw };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_nesterov;
  double lr = 0.001;
  double momentum = 0.9;       // sgd_nesterov
  double beta1 = 0.9;          // adamw
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // adamw, decoupled
};

// Update rules, applied per parameter element:
//   sgd_nesterov: v <- mu*v + g;  theta <- theta - lr*(g + mu*v)
//   adamw:        m,v exponential moments with bias correction;
//                 theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps)
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ModelState& model) : cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("Optimizer: lr must be positive");
    slot1_.resize(model.layers.size());
    slot2_.resize(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      for (const Tensor& p : model.layers[i].params) {
        slot1_[i].emplace_back(p.size(), 0.0);
        if (cfg_.kind == OptimizerKind::adamw) slot2_[i].emplace_back(p.size(), 0.0);
      }
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return step_; }

  // lr is the scheduled rate for this step; gradients are read from the
  // parameters' grad buffers and must be finite.
  void step(ModelState& model, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("Optimizer::step: lr must be positive");
    ++step_;
    double bc1 = 1.0, bc2 = 1.0;
    if (cfg_.kind == OptimizerKind::adamw) {
      bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
      bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      for (std::size_t p = 0; p < model.layers[i].params.size(); ++p) {
        Tensor& t = model.layers[i].params[p];
        const std::vector<double>& g = t.grad();
        std::vector<double>& th = t.values();
        for (std::size_t k = 0; k < g.size(); ++k)
          if (!std::isfinite(g[k]))
            throw std::runtime_error("Optimizer::step: non-finite gradient at " +
                                     param_name(model, i, p) + " element " +
                                     std::to_string(k));
        if (cfg_.kind == OptimizerKind::sgd_nesterov) {
          std::vector<double>& v = slot1_[i][p];
          for (std::size_t k = 0; k < g.size(); ++k) {
            v[k] = cfg_.momentum * v[k] + g[k];
            th[k] -= lr * (g[k] + cfg_.momentum * v[k]);
          }
        } else {
          std::vector<double>& m = slot1_[i][p];
          std::vector<double>& v = slot2_[i][p];
          for (std::size_t k = 0; k < g.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            double mhat = m[k] / bc1;
            double vhat = v[k] / bc2;
            th[k] -= lr * cfg_.weight_decay * th[k] +
                     lr * mhat / (std::sqrt(vhat) + cfg_.eps);
          }
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<std::vector<double>>> slot1_;  // velocity / first moment
  std::vector<std::vector<std::vector<double>>> slot2_;  // second moment
};

enum class ScheduleKind { constant, cosine_restarts };

// Cosine annealing with warm restarts: window i spans initial_budget *
// multiplier^i epochs; within a window, lr = base * (1 + cos(pi*t/L)) / 2.
// Every window opens at the full base rate.
struct LRSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_lr = 0.001;
  double initial_budget = 15.0;
  double budget_multiplier = 2.0;

  double lr_at(double epoch) const {
    if (epoch < 0.0) throw std::invalid_argument("LRSchedule: negative epoch");
    if (kind == ScheduleKind::constant) return base_lr;
    if (initial_budget <= 0.0)
      throw std::invalid_argument("LRSchedule: restart budget must be positive");
    if (budget_multiplier < 1.0)
      throw std::invalid_argument("LRSchedule: budget multiplier must be >= 1");
    double start = 0.0, len = initial_budget;
    while (epoch >= start + len) {
      start += len;
      len *= budget_multiplier;
    }
    double t = epoch - start;
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * t / len));
  }
};

inline double cosine_restart_lr(const LRSchedule& sched, double epoch) {
  return sched.lr_at(epoch);
}

}  // namespace invprune
