#ifndef CRK_QUANTILE_CORE_HPP
#define CRK_QUANTILE_CORE_HPP

// Empirical CDF / quantile primitives and an exact linear quantile
// regression solver (pinball-loss minimisation by basis pivoting).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crk/errors.hpp"

namespace crk {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// level * count products such as 0.7 * 10 land one ulp off the integer they
// represent; round them back before taking ceil/floor.
inline double snap_product(double x) {
  const double r = std::round(x);
  return std::abs(x - r) <= 1e-12 * std::max(1.0, std::abs(x)) ? r : x;
}

inline std::size_t ceil_count(double x) {
  return static_cast<std::size_t>(std::ceil(snap_product(x)));
}

inline std::size_t floor_count(double x) {
  return static_cast<std::size_t>(std::floor(snap_product(x)));
}

inline double check_function(double r, double u) { return r < 0.0 ? r * (u - 1.0) : r * u; }

}  // namespace detail

/// A nonempty sequence of finite observations. Keeps the original order and
/// a sorted copy so that CDF and quantile queries are O(log n).
class Sample {
 public:
  explicit Sample(std::vector<double> values) : values_(std::move(values)) {
    detail::require(!values_.empty(), "Sample: empty sample");
    detail::require(detail::all_finite(values_), "Sample: non-finite value");
    sorted_ = values_;
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<const double> sorted() const { return sorted_; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
  std::vector<double> sorted_;
};

/// n x p matrix of finite covariates, n >= p >= 1.
class DesignMatrix {
 public:
  explicit DesignMatrix(RowMatrix m) : m_(std::move(m)) {
    detail::require(m_.cols() >= 1, "DesignMatrix: need at least one column");
    detail::require(m_.rows() >= m_.cols(), "DesignMatrix: fewer rows than columns");
    detail::require(m_.allFinite(), "DesignMatrix: non-finite entry");
  }

  static DesignMatrix intercept(std::size_t n) {
    return DesignMatrix(RowMatrix::Ones(static_cast<Eigen::Index>(n), 1));
  }

  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index cols() const { return m_.cols(); }
  const RowMatrix& matrix() const { return m_; }

 private:
  RowMatrix m_;
};

/// Strictly increasing probability levels inside (0, 1).
class QuantileGrid {
 public:
  explicit QuantileGrid(std::vector<double> points) : points_(std::move(points)) {
    detail::require(!points_.empty(), "QuantileGrid: empty grid");
    for (std::size_t l = 0; l < points_.size(); ++l) {
      detail::require(points_[l] > 0.0 && points_[l] < 1.0,
                      "QuantileGrid: grid points must lie in (0,1)");
      detail::require(l == 0 || points_[l] > points_[l - 1],
                      "QuantileGrid: grid points must be strictly increasing");
    }
  }

  /// lo, lo+step, ... up to hi inclusive (hi is hit when it lies on the lattice).
  static QuantileGrid range(double lo, double hi, double step) {
    detail::require(step > 0.0, "QuantileGrid: step must be positive");
    detail::require(hi >= lo, "QuantileGrid: hi < lo");
    const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    std::vector<double> pts(count);
    for (std::size_t l = 0; l < count; ++l) {
      // Rounding to 12 decimals keeps 0.1:0.9:0.1 equal to the literals.
      pts[l] = std::round((lo + static_cast<double>(l) * step) * 1e12) / 1e12;
    }
    return QuantileGrid(std::move(pts));
  }

  static QuantileGrid deciles() { return range(0.1, 0.9, 0.1); }

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t l) const { return points_[l]; }
  std::span<const double> points() const { return points_; }

  bool operator==(const QuantileGrid&) const = default;

 private:
  std::vector<double> points_;
};

/// Fraction of sorted values <= y.
inline double empirical_cdf_sorted(std::span<const double> sorted, double y) {
  detail::require(!sorted.empty(), "empirical_cdf: empty sample");
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), y);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

/// Type-1 generalised inverse: the ceil(u*n)-th order statistic.
inline double empirical_quantile_sorted(std::span<const double> sorted, double u) {
  detail::require(!sorted.empty(), "empirical_quantile: empty sample");
  detail::require(u > 0.0 && u <= 1.0, "empirical_quantile: level must lie in (0,1]");
  const std::size_t k =
      std::clamp<std::size_t>(detail::ceil_count(u * static_cast<double>(sorted.size())), 1,
                              sorted.size());
  return sorted[k - 1];
}

inline double empirical_cdf(const Sample& s, double y) { return empirical_cdf_sorted(s.sorted(), y); }

inline double empirical_quantile(const Sample& s, double u) {
  return empirical_quantile_sorted(s.sorted(), u);
}

/// Sum of check-function losses rho_u(r) = r (u - 1{r < 0}).
inline double pinball_loss(std::span<const double> residuals, double u) {
  detail::require(u > 0.0 && u < 1.0, "pinball_loss: level must lie in (0,1)");
  double total = 0.0;
  for (double r : residuals) total += detail::check_function(r, u);
  return total;
}

inline double pinball_loss(const Eigen::VectorXd& residuals, double u) {
  return pinball_loss(std::span<const double>(residuals.data(), static_cast<std::size_t>(residuals.size())), u);
}

inline Eigen::VectorXd residuals(std::span<const double> y, const DesignMatrix& X,
                                 const Eigen::VectorXd& beta) {
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  return yv - X.matrix() * beta;
}

struct QrSolution {
  Eigen::VectorXd coef;
  double loss = 0.0;
  std::vector<Eigen::Index> basis;  // rows interpolated exactly by coef
  int pivots = 0;
};

/// Exact linear quantile regression for one (y, X) pair.
///
/// Every pinball-loss problem has an optimal vertex that interpolates p
/// observations. The solver walks between such vertices along edges of
/// steepest descent, taking an exact line search over all residual sign
/// changes on the edge, until no edge descends. When the final vertex has
/// extra zero residuals (ties), a tiny deterministic perturbation of y
/// selects a basis whose optimality certificate is then re-verified against
/// the original y.
///
/// Successive calls reuse the last optimal basis as a warm start, so sweeping
/// a quantile grid in increasing order is cheap.
class QuantileRegression {
 public:
  QuantileRegression(std::span<const double> y, const DesignMatrix& X)
      : y_(y.begin(), y.end()), X_(X.matrix()) {
    detail::require(static_cast<Eigen::Index>(y_.size()) == X_.rows(),
                    "fit_qr: response length does not match design rows");
    detail::require(detail::all_finite(y_), "fit_qr: non-finite response");
    n_ = X_.rows();
    p_ = X_.cols();

    // Full-pivot LU of X' ranks the columns of X' (= rows of X); the first p
    // pivots give an invertible starting basis.
    Eigen::FullPivLU<Eigen::MatrixXd> lu(X_.transpose());
    if (lu.rank() < p_) throw ValidationError("fit_qr: design matrix is rank deficient");
    const auto& perm = lu.permutationQ().indices();
    start_.resize(static_cast<std::size_t>(p_));
    for (Eigen::Index k = 0; k < p_; ++k) start_[static_cast<std::size_t>(k)] = perm[k];

    double ymax = 0.0;
    for (double v : y_) ymax = std::max(ymax, std::abs(v));
    scale_ = 1.0 + ymax;
    in_basis_.assign(static_cast<std::size_t>(n_), 0);
  }

  QrSolution solve(double u) {
    detail::require(u > 0.0 && u < 1.0, "fit_qr: level must lie in (0,1)");
    std::vector<Eigen::Index> basis = warm_.empty() ? start_ : warm_;
    int pivots = 0;
    basis = descend(y_, std::move(basis), u, pivots);

    if (!certify(y_, y_, basis, u)) {
      std::vector<double> yp(y_.size());
      std::mt19937_64 gen(0x5eedc0ffeeULL);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::vector<double> jitter(y_.size());
      for (double& j : jitter) j = unit(gen);
      bool done = false;
      for (double eps : {1e-7, 1e-10, 1e-13}) {
        for (std::size_t i = 0; i < y_.size(); ++i) yp[i] = y_[i] + eps * scale_ * jitter[i];
        auto candidate = descend(yp, basis, u, pivots);
        if (certify(y_, yp, candidate, u)) {
          basis = std::move(candidate);
          done = true;
          break;
        }
      }
      if (!done) throw NumericalError("fit_qr: could not certify an optimal basis");
    }

    warm_ = basis;
    QrSolution out;
    out.coef = solve_basis(y_, basis);
    Eigen::Map<const Eigen::VectorXd> yv(y_.data(), n_);
    out.loss = pinball_loss(Eigen::VectorXd(yv - X_ * out.coef), u);
    out.basis = std::move(basis);
    out.pivots = pivots;
    return out;
  }

 private:
  Eigen::VectorXd solve_basis(std::span<const double> y, const std::vector<Eigen::Index>& basis) const {
    Eigen::MatrixXd B(p_, p_);
    Eigen::VectorXd yb(p_);
    for (Eigen::Index k = 0; k < p_; ++k) {
      B.row(k) = X_.row(basis[static_cast<std::size_t>(k)]);
      yb[k] = y[static_cast<std::size_t>(basis[static_cast<std::size_t>(k)])];
    }
    return B.partialPivLu().solve(yb);
  }

  double zero_tol() const { return 1e-10 * scale_; }

  // Steepest-edge descent over interpolating bases. Returns an edge-optimal basis.
  std::vector<Eigen::Index> descend(std::span<const double> y, std::vector<Eigen::Index> basis,
                                    double u, int& pivots) {
    const auto n = static_cast<std::size_t>(n_);
    const auto p = static_cast<std::size_t>(p_);
    const double tol = zero_tol();
    const int max_pivots = 50 * static_cast<int>(n) + 1000;
    Eigen::MatrixXd B(p_, p_);
    Eigen::VectorXd yb(p_);
    Eigen::VectorXd grad(p_), zero_plus(p_), zero_minus(p_), abs_sum(p_);
    r_.resize(n_);

    for (int iter = 0;; ++iter) {
      if (iter > max_pivots) throw NumericalError("fit_qr: pivot limit exceeded");
      for (std::size_t k = 0; k < p; ++k) {
        B.row(static_cast<Eigen::Index>(k)) = X_.row(basis[k]);
        yb[static_cast<Eigen::Index>(k)] = y[static_cast<std::size_t>(basis[k])];
      }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
      const Eigen::MatrixXd Binv = lu.inverse();
      if (!Binv.allFinite()) throw NumericalError("fit_qr: singular basis");
      const Eigen::VectorXd beta = Binv * yb;
      Z_.noalias() = X_ * Binv;  // row i: change in fit of obs i per unit move along each edge
      Eigen::Map<const Eigen::VectorXd> yv(y.data(), n_);
      r_.noalias() = yv - X_ * beta;
      for (std::size_t k = 0; k < p; ++k) {
        r_[basis[k]] = 0.0;
        in_basis_[static_cast<std::size_t>(basis[k])] = 1;
      }

      grad.setZero();
      zero_plus.setZero();
      zero_minus.setZero();
      abs_sum.setZero();
      for (std::size_t i = 0; i < n; ++i) {
        if (in_basis_[i]) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        const double ri = r_[ii];
        if (ri > tol) {
          grad.noalias() -= u * Z_.row(ii).transpose();
        } else if (ri < -tol) {
          grad.noalias() -= (u - 1.0) * Z_.row(ii).transpose();
        } else {
          for (Eigen::Index k = 0; k < p_; ++k) {
            const double z = Z_(ii, k);
            zero_plus[k] += detail::check_function(-z, u);
            zero_minus[k] += detail::check_function(z, u);
          }
        }
        abs_sum.noalias() += Z_.row(ii).cwiseAbs().transpose();
      }

      // Directional derivative along +edge k is grad_k + (1-u), along -edge
      // it is u - grad_k, plus the (nonnegative) zero-residual terms.
      Eigen::Index best_k = -1;
      double best_s = 0.0, best_d = 0.0;
      for (Eigen::Index k = 0; k < p_; ++k) {
        const double thresh = -1e-12 * (1.0 + abs_sum[k]);
        const double d_plus = grad[k] + (1.0 - u) + zero_plus[k];
        const double d_minus = -grad[k] + u + zero_minus[k];
        if (d_plus < thresh && d_plus < best_d) { best_k = k; best_s = 1.0; best_d = d_plus; }
        if (d_minus < thresh && d_minus < best_d) { best_k = k; best_s = -1.0; best_d = d_minus; }
      }
      if (best_k < 0) {
        for (auto b : basis) in_basis_[static_cast<std::size_t>(b)] = 0;
        return basis;
      }

      // Exact line search: residual i hits zero at t_i = r_i / (s z_ik) and
      // each crossing raises the slope by |z_ik|.
      breaks_.clear();
      for (std::size_t i = 0; i < n; ++i) {
        if (in_basis_[i]) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        const double ri = r_[ii];
        if (std::abs(ri) <= tol) continue;
        const double v = best_s * Z_(ii, best_k);
        if (v == 0.0) continue;
        const double t = ri / v;
        if (t > 0.0) breaks_.push_back({t, std::abs(v), ii});
      }
      double slope = best_d;
      Eigen::Index entering = -1;
      // Usually only a few breakpoints are passed; sort lazily in chunks.
      auto first = breaks_.begin();
      const auto by_t = [](const Break& a, const Break& b) {
        return a.t < b.t || (a.t == b.t && a.row < b.row);
      };
      std::size_t chunk = 16;
      while (first != breaks_.end() && entering < 0) {
        auto last = first + static_cast<std::ptrdiff_t>(
                                std::min<std::size_t>(chunk, static_cast<std::size_t>(breaks_.end() - first)));
        std::partial_sort(first, last, breaks_.end(), by_t);
        for (auto it = first; it != last; ++it) {
          slope += it->weight;
          if (slope >= 0.0) {
            entering = it->row;
            break;
          }
        }
        first = last;
        chunk *= 4;
      }
      for (auto b : basis) in_basis_[static_cast<std::size_t>(b)] = 0;
      if (entering < 0) throw NumericalError("fit_qr: unbounded edge (design not full rank?)");
      basis[static_cast<std::size_t>(best_k)] = entering;
      ++pivots;
    }
  }

  // Subgradient optimality check of the basis against response y. Signs of
  // residuals that vanish under y are taken from the perturbed response yp.
  bool certify(std::span<const double> y, std::span<const double> yp,
               const std::vector<Eigen::Index>& basis, double u) const {
    const double tol = zero_tol();
    const Eigen::VectorXd beta = solve_basis(y, basis);
    const Eigen::VectorXd betap = solve_basis(yp, basis);
    std::vector<char> member(static_cast<std::size_t>(n_), 0);
    for (auto b : basis) member[static_cast<std::size_t>(b)] = 1;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (member[static_cast<std::size_t>(i)]) continue;
      const double r = y[static_cast<std::size_t>(i)] - X_.row(i).dot(beta);
      const double rp = yp[static_cast<std::size_t>(i)] - X_.row(i).dot(betap);
      double psi;
      if (std::abs(r) > tol) {
        if (std::abs(rp) > tol && (r < 0.0) != (rp < 0.0)) return false;
        psi = r < 0.0 ? u - 1.0 : u;
      } else {
        if (std::abs(rp) <= 1e-3 * tol) return false;
        psi = rp < 0.0 ? u - 1.0 : u;
      }
      rhs.noalias() -= psi * X_.row(i).transpose();
    }
    Eigen::MatrixXd B(p_, p_);
    for (Eigen::Index k = 0; k < p_; ++k) B.row(k) = X_.row(basis[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd a = B.transpose().partialPivLu().solve(rhs);
    const double slack = 1e-9;
    for (Eigen::Index k = 0; k < p_; ++k) {
      if (!(a[k] >= u - 1.0 - slack && a[k] <= u + slack)) return false;
    }
    return true;
  }

  struct Break {
    double t;
    double weight;
    Eigen::Index row;
  };

  std::vector<double> y_;
  RowMatrix X_;
  Eigen::Index n_ = 0, p_ = 0;
  double scale_ = 1.0;
  std::vector<Eigen::Index> start_, warm_;
  std::vector<char> in_basis_;
  Eigen::MatrixXd Z_;
  Eigen::VectorXd r_;
  std::vector<Break> breaks_;
};

inline QrSolution solve_qr(std::span<const double> y, const DesignMatrix& X, double u) {
  return QuantileRegression(y, X).solve(u);
}

/// Coefficients minimising the pinball loss of y - X beta at level u.
inline Eigen::VectorXd fit_qr(const Sample& y, const DesignMatrix& X, double u) {
  return solve_qr(y.values(), X, u).coef;
}

/// Brute-force reference: best interpolating fit over all p-subsets of rows.
/// Only for tiny problems (n <= 20, p <= 3).
inline Eigen::VectorXd qr_oracle_bruteforce(const Sample& y, const DesignMatrix& X, double u) {
  const auto n = X.rows();
  const auto p = X.cols();
  detail::require(n <= 20 && p <= 3, "qr_oracle_bruteforce: requires n <= 20 and p <= 3");
  detail::require(static_cast<Eigen::Index>(y.size()) == n,
                  "qr_oracle_bruteforce: response length does not match design rows");
  detail::require(u > 0.0 && u < 1.0, "qr_oracle_bruteforce: level must lie in (0,1)");

  std::vector<Eigen::Index> idx(static_cast<std::size_t>(p));
  std::iota(idx.begin(), idx.end(), 0);
  Eigen::VectorXd best;
  double best_loss = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd B(p, p);
  Eigen::VectorXd yb(p);
  for (;;) {
    for (Eigen::Index k = 0; k < p; ++k) {
      B.row(k) = X.matrix().row(idx[static_cast<std::size_t>(k)]);
      yb[k] = y[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (lu.isInvertible()) {
      const Eigen::VectorXd beta = lu.solve(yb);
      const double loss = pinball_loss(residuals(y.values(), X, beta), u);
      if (loss < best_loss) {
        best_loss = loss;
        best = beta;
      }
    }
    // next combination in lexicographic order
    Eigen::Index k = p - 1;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == n - p + k) --k;
    if (k < 0) break;
    ++idx[static_cast<std::size_t>(k)];
    for (Eigen::Index j = k + 1; j < p; ++j)
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (best.size() == 0) throw ValidationError("qr_oracle_bruteforce: design matrix is rank deficient");
  return best;
}

}  // namespace crk

#endif  // CRK_QUANTILE_CORE_HPP
