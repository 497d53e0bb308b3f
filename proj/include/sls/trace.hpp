#pragma once
// Time-indexed signal records. Signals are zero before t = 0 and after the
// last recorded sample, which matches the zero-initial-condition convention
// used throughout the controller realizations.

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sls {

class Signal {
 public:
  Signal() = default;
  explicit Signal(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  long size() const { return static_cast<long>(samples_.size()); }

  void push(const Eigen::VectorXd& v) {
    if (dim_ == 0 && samples_.empty()) dim_ = static_cast<int>(v.size());
    if (v.size() != dim_) throw std::invalid_argument("Signal: sample dimension mismatch");
    samples_.push_back(v);
  }

  // Out-of-range reads are zero vectors.
  Eigen::VectorXd at(long t) const {
    if (t < 0 || t >= size()) return Eigen::VectorXd::Zero(dim_);
    return samples_[static_cast<size_t>(t)];
  }

  const std::vector<Eigen::VectorXd>& samples() const { return samples_; }

 private:
  int dim_ = 0;
  std::vector<Eigen::VectorXd> samples_;
};

struct Trace {
  std::map<std::string, Signal> signals;

  Signal& channel(const std::string& name, int dim) {
    auto it = signals.find(name);
    if (it == signals.end()) it = signals.emplace(name, Signal(dim)).first;
    return it->second;
  }

  const Signal& channel(const std::string& name) const {
    auto it = signals.find(name);
    if (it == signals.end()) throw std::invalid_argument("Trace: unknown signal " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return signals.count(name) != 0; }
};

// Largest |a - b| over two equally long signals, scaled by the peak magnitude
// of the reference (floored at 1 so all-zero references compare absolutely).
inline double max_relative_deviation(const Signal& test, const Signal& ref) {
  if (test.dim() != ref.dim()) throw std::invalid_argument("max_relative_deviation: dimension mismatch");
  const long n = std::max(test.size(), ref.size());
  if (test.dim() == 0 || n == 0) return 0.0;
  double peak = 0.0, dev = 0.0;
  for (long t = 0; t < n; ++t) peak = std::max(peak, ref.at(t).cwiseAbs().maxCoeff());
  for (long t = 0; t < n; ++t) dev = std::max(dev, (test.at(t) - ref.at(t)).cwiseAbs().maxCoeff());
  return dev / std::max(1.0, peak);
}

}  // namespace sls
