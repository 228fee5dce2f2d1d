#pragma once

#include <cmath>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include "micshift/core/error.hpp"

namespace micshift::sec {

/// counts[true][pred]
inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<int>& pred, const std::vector<int>& label,
                                                              std::size_t n_classes) {
  require(pred.size() == label.size(), "ShapeMismatch", "predictions and labels differ in length");
  std::vector<std::vector<std::size_t>> c(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] >= 0 && label[i] >= 0 && static_cast<std::size_t>(pred[i]) < n_classes &&
                static_cast<std::size_t>(label[i]) < n_classes,
            "InvalidArgument", "class id out of range");
    ++c[static_cast<std::size_t>(label[i])][static_cast<std::size_t>(pred[i])];
  }
  return c;
}

namespace detail {

using BigInt = boost::multiprecision::cpp_int;

/// Correctly rounded (nearest, ties to even) double of n / d for n >= 0, d > 0.
inline double nearest_double(const BigInt& n, const BigInt& d) {
  if (n == 0) return 0.0;
  const long s = 54 + static_cast<long>(boost::multiprecision::msb(d)) - static_cast<long>(boost::multiprecision::msb(n));
  BigInt q, r;
  if (s >= 0) {
    divide_qr(BigInt(n << s), d, q, r);
  } else {
    divide_qr(n, BigInt(d << -s), q, r);
  }
  // q carries 54 or 55 significant bits; keep 53 and round on the rest
  const long drop = static_cast<long>(boost::multiprecision::msb(q)) - 52;
  BigInt mant = q >> drop;
  const BigInt rest = q - (mant << drop);
  const BigInt half = BigInt(1) << (drop - 1);
  if (rest > half || (rest == half && (r != 0 || boost::multiprecision::bit_test(mant, 0)))) ++mant;
  return std::ldexp(mant.convert_to<double>(), static_cast<int>(drop - s));
}

}  // namespace detail

/// Per-class F1 weighted by class support; classes absent from the labels
/// are excluded. A class with support but no correct prediction scores 0.
inline double weighted_f1(const std::vector<int>& pred, const std::vector<int>& label) {
  require(!pred.empty(), "EmptyInput", "weighted_f1 needs at least one sample");
  require(pred.size() == label.size(), "ShapeMismatch", "predictions and labels differ in length");
  int top = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) top = std::max({top, pred[i], label[i]});
  const auto c = confusion_matrix(pred, label, static_cast<std::size_t>(top) + 1);
  const std::size_t k = c.size();
  // exact rational sum of support * 2tp / (support + predicted), rounded once
  detail::BigInt num = 0, den = 1;
  for (std::size_t a = 0; a < k; ++a) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t b = 0; b < k; ++b) {
      support += c[a][b];
      predicted += c[b][a];
    }
    if (support == 0 || c[a][a] == 0) continue;
    const detail::BigInt tn = detail::BigInt(2 * c[a][a]) * support, td = support + predicted;
    num = num * td + tn * den;
    den *= td;
    const detail::BigInt g = gcd(num, den);
    num /= g;
    den /= g;
  }
  return detail::nearest_double(num, den * pred.size());
}

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

/// Mean with a Student-t 95% confidence half-width over the given scores.
inline MeanCi mean_ci95(const std::vector<double>& xs) {
  require(!xs.empty(), "EmptyInput", "mean_ci95 needs at least one score");
  const auto n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  return {mean, boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(n)};
}

}  // namespace micshift::sec
