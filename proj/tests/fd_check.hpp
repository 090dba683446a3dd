#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hqsvc/common.hpp"
#include "hqsvc/tensor.hpp"

namespace fdtest {

using hqsvc::Rng;
using hqsvc::TensorD;

struct FdResult {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
};

// Central-difference check of d(loss)/d(element) for every element of every
// leaf. `loss` must rebuild the graph from the leaves' current values and
// must be deterministic across calls.
inline FdResult fd_check_leaves(std::vector<TensorD> leaves,
                                const std::function<TensorD()>& loss,
                                double h = 1e-5) {
  for (auto& l : leaves) l.clear_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad());

  FdResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& v = leaves[li].value();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double orig = v[j];
      v[j] = orig + h;
      const double fp = loss().item();
      v[j] = orig - h;
      const double fm = loss().item();
      v[j] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = analytic[li][j];
      const double rel =
          std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-4});
      ++res.checked;
      if (rel > res.max_rel) {
        res.max_rel = rel;
        std::ostringstream os;
        os << "leaf " << li << " elem " << j << ": analytic " << ad
           << " vs central-diff " << fd;
        res.worst = os.str();
      }
    }
  }
  return res;
}

// Subset variant: checks only the given (leaf index, element index) pairs.
inline FdResult fd_check_elements(
    std::vector<TensorD> leaves,
    const std::vector<std::pair<std::size_t, std::size_t>>& picks,
    const std::function<TensorD()>& loss, double h = 1e-5) {
  for (auto& l : leaves) l.clear_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(l.grad());

  FdResult res;
  for (const auto& [li, j] : picks) {
    auto& v = leaves[li].value();
    const double orig = v[j];
    v[j] = orig + h;
    const double fp = loss().item();
    v[j] = orig - h;
    const double fm = loss().item();
    v[j] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double ad = analytic[li][j];
    const double rel =
        std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-4});
    ++res.checked;
    if (rel > res.max_rel) {
      res.max_rel = rel;
      std::ostringstream os;
      os << "leaf " << li << " elem " << j << ": analytic " << ad
         << " vs central-diff " << fd;
      res.worst = os.str();
    }
  }
  return res;
}

inline TensorD rand_tensor(Rng& rng, int rows, int cols, double lo, double hi,
                           bool requires_grad = true) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from_vector(v, rows, cols, requires_grad);
}

}  // namespace fdtest
