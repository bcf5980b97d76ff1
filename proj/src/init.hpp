#pragma once

#include <cmath>
#include <random>

#include "stseq/numerics.hpp"
#include "stseq/random.hpp"

namespace stseq::detail {

// N(0, 1/fan_in) entries.
template <typename T>
Tensor<T> scaled_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(fan_in)));
  for (auto& v : t.data) v = T(dist(rng));
  return t;
}

}  // namespace stseq::detail
