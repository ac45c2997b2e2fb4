#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "m3s/classifier.hpp"

// Largest relative error between the analytic gradient and central finite
// differences over every parameter of `model`. A difference quotient carries
// roundoff of about eps * |loss| / h, so a relative error of `tol` is only
// resolvable for gradients above that over `tol`; smaller ones are compared
// against that floor instead.
inline double max_gradient_error(m3s::Classifier model, std::span<const m3s::Example> batch, double h = 1e-6,
                                 double tol = 1e-4) {
  const m3s::Gradient g = m3s::loss_gradient(model, batch);
  const double roundoff = std::numeric_limits<double>::epsilon() * std::max(1.0, m3s::mean_loss(model, batch)) / h;
  const double floor = std::max(1e-7, roundoff / tol);
  double worst = 0.0;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = m3s::mean_loss(model, batch);
    param = saved - h;
    const double down = m3s::mean_loss(model, batch);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), floor);
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  };
  auto& layers = model.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (std::size_t k = 0; k < layers[li].w.size(); ++k) check(layers[li].w[k], g.layers[li].w[k]);
    for (std::size_t k = 0; k < layers[li].b.size(); ++k) check(layers[li].b[k], g.layers[li].b[k]);
  }
  return worst;
}

// Smallest |pre-activation| of any hidden unit over the batch. ReLU is not
// differentiable at 0, so finite differences are only meaningful when this
// is well above the step size.
inline double min_hidden_preactivation(const m3s::Classifier& model, std::span<const m3s::Example> batch) {
  double m = std::numeric_limits<double>::infinity();
  const auto& layers = model.layers();
  for (const auto& ex : batch) {
    m3s::Vec a = ex.x, pre;
    for (std::size_t i = 0; i < model.num_hidden(); ++i) {
      layers[i].apply(a, pre);
      for (double v : pre) m = std::min(m, std::abs(v));
      a = pre;
      for (auto& v : a) v = m3s::activate(model.activation(), v);
    }
  }
  return m;
}

// Random small biases, so that dead units upstream do not pin a
// pre-activation to exactly zero.
inline void randomize_biases(m3s::Classifier& model, m3s::Rng& rng) {
  for (auto& l : model.layers())
    for (auto& b : l.b) b = rng.uniform(-0.5, 0.5);
}
