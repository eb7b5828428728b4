#pragma once

#include <vector>

#include "imnav/common.hpp"

namespace imnav {

// Encodes a scalar as linear mass on the two bracketing bins of a fixed grid.
// The expectation of bin values under the encoding equals the clamped input.
class TwoHotCoder {
 public:
  explicit TwoHotCoder(std::vector<double> bin_values) : bins_(std::move(bin_values)) {
    if (bins_.size() < 2) throw Error("TwoHotCoder: need at least two bins");
    for (size_t i = 1; i < bins_.size(); ++i)
      if (bins_[i] <= bins_[i - 1]) throw Error("TwoHotCoder: bin values must strictly increase");
  }

  static TwoHotCoder uniform(int count, double lo, double hi) {
    if (count < 2 || hi <= lo) throw Error("TwoHotCoder: bad uniform bin spec");
    std::vector<double> bins(count);
    for (int i = 0; i < count; ++i) bins[i] = lo + (hi - lo) * i / (count - 1);
    return TwoHotCoder(std::move(bins));
  }

  int size() const { return static_cast<int>(bins_.size()); }
  const std::vector<double>& bins() const { return bins_; }

  double clamp(double r) const { return std::min(std::max(r, bins_.front()), bins_.back()); }

  // Writes size() probabilities with at most two adjacent nonzero entries.
  void encode(double r, double* out) const {
    const int n = size();
    for (int i = 0; i < n; ++i) out[i] = 0.0;
    r = clamp(r);
    int k = 0;
    while (k + 2 < n && bins_[k + 1] <= r) ++k;
    const double span = bins_[k + 1] - bins_[k];
    const double w_hi = (r - bins_[k]) / span;
    out[k] = 1.0 - w_hi;
    out[k + 1] = w_hi;
  }

  std::vector<double> encode(double r) const {
    std::vector<double> out(size());
    encode(r, out.data());
    return out;
  }

  double decode(const std::vector<double>& probs) const {
    double e = 0.0;
    for (int i = 0; i < size(); ++i) e += probs[i] * bins_[i];
    return e;
  }

 private:
  std::vector<double> bins_;
};

}  // namespace imnav
