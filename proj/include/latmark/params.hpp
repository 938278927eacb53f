#pragma once

// Unconstrained parameterisation. A model's natural parameters are described
// as a list of named blocks; each block maps to a slice of the flat working
// vector the optimiser sees.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gsl/gsl_cdf.h>

#include "latmark/errors.hpp"

namespace latmark {

enum class Transform {
  identity,
  log,      // (0, inf)
  atanh,    // (-1, 1)
  logit,    // (0, 1)
  simplex,  // rows of probabilities, multinomial logit against a reference entry
};

struct ParamBlock {
  std::string name;
  Transform transform = Transform::identity;
  std::vector<std::string> labels;  // one per natural value
  std::vector<double> values;       // natural values
  bool fixed = false;
  // simplex only: entries per row and the reference entry of each row
  std::size_t row_width = 0;
  std::vector<std::size_t> reference;

  std::size_t rows() const { return row_width == 0 ? 0 : values.size() / row_width; }
  std::size_t free_size() const {
    return transform == Transform::simplex ? rows() * (row_width - 1) : values.size();
  }
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {

inline double to_free_scalar(Transform t, double v, const std::string& label) {
  switch (t) {
    case Transform::identity:
      require(std::isfinite(v), "parameter must be finite");
      return v;
    case Transform::log:
      if (!(v > 0.0) || !std::isfinite(v)) invalid("parameter '" + label + "' must be > 0");
      return std::log(v);
    case Transform::atanh:
      if (!(v > -1.0 && v < 1.0)) invalid("parameter '" + label + "' must lie in (-1, 1)");
      return std::atanh(v);
    case Transform::logit:
      if (!(v > 0.0 && v < 1.0)) invalid("parameter '" + label + "' must lie in (0, 1)");
      return std::log(v) - std::log1p(-v);
    case Transform::simplex:
      break;
  }
  invalid("simplex blocks are transformed row-wise");
}

inline double to_natural_scalar(Transform t, double u) {
  switch (t) {
    case Transform::identity:
      return u;
    case Transform::log:
      return std::exp(u);
    case Transform::atanh:
      return std::tanh(u);
    case Transform::logit:
      return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    case Transform::simplex:
      break;
  }
  invalid("simplex blocks are transformed row-wise");
}

// p = softmax(eta) with eta_ref = 0.
inline std::vector<double> simplex_row(std::span<const double> eta, std::size_t width, std::size_t ref) {
  std::vector<double> full(width, 0.0);
  std::size_t k = 0;
  for (std::size_t j = 0; j < width; ++j) full[j] = j == ref ? 0.0 : eta[k++];
  double mx = full[0];
  for (double e : full) mx = std::max(mx, e);
  double s = 0.0;
  for (auto& e : full) s += (e = std::exp(e - mx));
  for (auto& e : full) e /= s;
  return full;
}

}  // namespace detail

// Natural values of every non-fixed block, mapped to the working scale.
inline Eigen::VectorXd pack(const std::vector<ParamBlock>& blocks) {
  std::vector<double> out;
  for (const auto& b : blocks) {
    if (b.fixed) continue;
    if (b.transform != Transform::simplex) {
      for (std::size_t k = 0; k < b.values.size(); ++k) out.push_back(detail::to_free_scalar(b.transform, b.values[k], b.labels[k]));
      continue;
    }
    detail::require(b.row_width >= 1 && b.values.size() % b.row_width == 0 && b.reference.size() == b.rows(),
                    "simplex block is malformed");
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const double* row = b.values.data() + r * b.row_width;
      const double ref = row[b.reference[r]];
      double total = 0.0;
      for (std::size_t j = 0; j < b.row_width; ++j) {
        if (!(row[j] > 0.0)) detail::invalid("parameter '" + b.labels[r * b.row_width + j] + "' must be > 0 to be estimated");
        total += row[j];
      }
      if (std::abs(total - 1.0) > 1e-8) detail::invalid("probabilities in block '" + b.name + "' must sum to 1");
      for (std::size_t j = 0; j < b.row_width; ++j) {
        if (j != b.reference[r]) out.push_back(std::log(row[j]) - std::log(ref));
      }
    }
  }
  return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline std::size_t free_size(const std::vector<ParamBlock>& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks)
    if (!b.fixed) n += b.free_size();
  return n;
}

// Inverse of pack: returns a copy of `blocks` with natural values taken from v.
inline std::vector<ParamBlock> unpack(const std::vector<ParamBlock>& blocks, const Eigen::VectorXd& v) {
  detail::require(static_cast<std::size_t>(v.size()) == free_size(blocks), "unpack: working vector has the wrong length");
  std::vector<ParamBlock> out = blocks;
  Eigen::Index pos = 0;
  for (auto& b : out) {
    if (b.fixed) continue;
    if (b.transform != Transform::simplex) {
      for (auto& x : b.values) x = detail::to_natural_scalar(b.transform, v(pos++));
      continue;
    }
    const std::size_t w = b.row_width;
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const auto row = detail::simplex_row(std::span<const double>(v.data() + pos, w - 1), w, b.reference[r]);
      pos += static_cast<Eigen::Index>(w - 1);
      std::copy(row.begin(), row.end(), b.values.begin() + static_cast<std::ptrdiff_t>(r * w));
    }
  }
  return out;
}

inline std::vector<std::string> free_labels(const std::vector<ParamBlock>& blocks) {
  std::vector<std::string> out;
  for (const auto& b : blocks) {
    if (b.fixed) continue;
    if (b.transform != Transform::simplex) {
      out.insert(out.end(), b.labels.begin(), b.labels.end());
      continue;
    }
    for (std::size_t r = 0; r < b.rows(); ++r)
      for (std::size_t j = 0; j < b.row_width; ++j)
        if (j != b.reference[r]) out.push_back("eta:" + b.labels[r * b.row_width + j]);
  }
  return out;
}

// z with P(|Z| <= z) = level.
inline double normal_quantile_upper(double level) { return gsl_cdf_ugaussian_Pinv(0.5 + 0.5 * level); }

// Wald intervals on the working scale, mapped to natural units: monotone
// transforms map the bounds, simplex rows use the delta method (clipped to
// [0, 1]). Fixed blocks get no interval. `cov` is the covariance of the free
// vector `v` (same ordering as pack).
inline std::vector<std::vector<std::optional<Interval>>> wald_intervals(const std::vector<ParamBlock>& blocks,
                                                                         const Eigen::VectorXd& v,
                                                                         const Eigen::MatrixXd& cov, double level) {
  detail::require(level > 0.0 && level < 1.0, "interval level must be in (0, 1)");
  detail::require(cov.rows() == v.size() && cov.cols() == v.size(), "covariance has the wrong shape");
  const double z = normal_quantile_upper(level);
  std::vector<std::vector<std::optional<Interval>>> out;
  Eigen::Index pos = 0;
  for (const auto& b : blocks) {
    std::vector<std::optional<Interval>> iv(b.values.size());
    if (b.fixed) {
      out.push_back(std::move(iv));
      continue;
    }
    if (b.transform != Transform::simplex) {
      for (std::size_t k = 0; k < b.values.size(); ++k, ++pos) {
        const double sd = std::sqrt(std::max(0.0, cov(pos, pos)));
        const double a = detail::to_natural_scalar(b.transform, v(pos) - z * sd);
        const double c = detail::to_natural_scalar(b.transform, v(pos) + z * sd);
        iv[k] = Interval{std::min(a, c), std::max(a, c)};
      }
      out.push_back(std::move(iv));
      continue;
    }
    const std::size_t w = b.row_width;
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const std::size_t ref = b.reference[r];
      const auto p = detail::simplex_row(std::span<const double>(v.data() + pos, w - 1), w, ref);
      // d p_j / d eta_k = p_j (1[j = k] - p_k) over the free entries k
      Eigen::MatrixXd jac(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(w - 1));
      for (std::size_t j = 0; j < w; ++j) {
        Eigen::Index col = 0;
        for (std::size_t k = 0; k < w; ++k) {
          if (k == ref) continue;
          jac(static_cast<Eigen::Index>(j), col++) = p[j] * ((j == k ? 1.0 : 0.0) - p[k]);
        }
      }
      const auto n_free = static_cast<Eigen::Index>(w - 1);
      const Eigen::MatrixXd sub = cov.block(pos, pos, n_free, n_free);
      const Eigen::MatrixXd pc = jac * sub * jac.transpose();
      for (std::size_t j = 0; j < w; ++j) {
        const double sd = std::sqrt(std::max(0.0, pc(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j))));
        iv[r * w + j] = Interval{std::max(0.0, p[j] - z * sd), std::min(1.0, p[j] + z * sd)};
      }
      pos += n_free;
    }
    out.push_back(std::move(iv));
  }
  return out;
}

}  // namespace latmark
