#pragma once

#include <functional>

#include "attreval/scorer.hpp"

namespace attreval::testing {

// Scorer over an arbitrary scalar function s(x) reported as [s, 1 - s].
class FunctionScorer : public scorer::Scorer {
 public:
  FunctionScorer(std::size_t m, std::function<double(const double*)> f) : m_(m), f_(std::move(f)) {}
  scorer::Capabilities capabilities() const override { return {2, m_, 0}; }
  Tensor score_batch(const Tensor& batch) const override {
    const std::size_t b = batch.dim(0);
    const std::size_t per = batch.dim(1) * batch.dim(2);
    Tensor out({b, 2});
    for (std::size_t i = 0; i < b; ++i) {
      const double s = f_(batch.data() + i * per);
      out.at(i, 0) = s;
      out.at(i, 1) = 1.0 - s;
    }
    return out;
  }

 private:
  std::size_t m_;
  std::function<double(const double*)> f_;
};

}  // namespace attreval::testing
