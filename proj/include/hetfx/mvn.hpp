#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hetfx/core.hpp"
#include "hetfx/normal.hpp"

namespace hetfx {

struct MvnOptions {
  std::size_t shifts = 8;     // independent random shifts of the lattice
  std::size_t points = 1024;  // lattice points per shift
  std::uint64_t seed = 0x5eed;
  double kappa_tol = 1e-6;
};

namespace detail {

// Pivoted Cholesky of a PSD matrix. Rows of `L` follow `perm`; columns past
// `rank` are zero.
struct PivotedCholesky {
  Eigen::MatrixXd L;
  std::vector<int> perm;
  int rank = 0;
  bool psd = true;
};

inline PivotedCholesky pivoted_cholesky(const Eigen::MatrixXd& a, double tol = 1e-10) {
  const int m = static_cast<int>(a.rows());
  PivotedCholesky f;
  f.L = Eigen::MatrixXd::Zero(m, m);
  f.perm.resize(m);
  for (int i = 0; i < m; ++i) f.perm[i] = i;
  Eigen::MatrixXd w = a;
  Eigen::VectorXd diag = a.diagonal();
  int k = 0;
  for (; k < m; ++k) {
    int piv = k;
    for (int j = k + 1; j < m; ++j)
      if (diag(j) > diag(piv)) piv = j;
    if (diag(piv) <= tol) break;
    if (piv != k) {
      std::swap(f.perm[k], f.perm[piv]);
      w.row(k).swap(w.row(piv));
      w.col(k).swap(w.col(piv));
      f.L.row(k).swap(f.L.row(piv));
      std::swap(diag(k), diag(piv));
    }
    const double lkk = std::sqrt(diag(k));
    f.L(k, k) = lkk;
    for (int i = k + 1; i < m; ++i) {
      double s = w(i, k);
      for (int t = 0; t < k; ++t) s -= f.L(i, t) * f.L(k, t);
      f.L(i, k) = s / lkk;
      diag(i) -= f.L(i, k) * f.L(i, k);
    }
  }
  f.rank = k;
  for (int i = k; i < m; ++i)
    if (diag(i) < -1e-8) f.psd = false;
  return f;
}

inline bool is_valid_correlation(const Eigen::MatrixXd& rho) {
  if (rho.rows() != rho.cols() || rho.rows() == 0) return false;
  for (Eigen::Index i = 0; i < rho.rows(); ++i) {
    if (std::abs(rho(i, i) - 1.0) > 1e-8) return false;
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(rho(i, j) - rho(j, i)) > 1e-10 || std::abs(rho(i, j)) > 1.0 + 1e-10)
        return false;
  }
  return true;
}

// Clip negative eigenvalues at zero and rescale back to unit diagonal.
inline Eigen::MatrixXd repair_correlation(const Eigen::MatrixXd& rho) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (rho + rho.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd r = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  Eigen::VectorXd s = r.diagonal().cwiseSqrt();
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index j = 0; j < r.cols(); ++j) r(i, j) /= (s(i) * s(j));
  return r;
}

}  // namespace detail

// Probability that every component of N(0, rho) lies in (-kappa, kappa),
// for a fixed correlation matrix. Uses the separation-of-variables transform
// generalised to singular matrices: constraints whose Cholesky row ends in
// column j bound the j-th conditioning variable. Integration runs over a
// randomly shifted rank-1 lattice with the tent transform.
class SymmetricRectangleIntegrator {
 public:
  SymmetricRectangleIntegrator(const Eigen::MatrixXd& rho, const MvnOptions& opt = {})
      : opt_(opt) {
    if (!detail::is_valid_correlation(rho))
      throw NumericError("correlation matrix must be symmetric with unit diagonal");
    auto f = detail::pivoted_cholesky(rho);
    if (!f.psd) {
      repaired_ = true;
      f = detail::pivoted_cholesky(detail::repair_correlation(rho));
      if (!f.psd) throw NumericError("correlation matrix is not positive semidefinite after repair");
    }
    m_ = static_cast<int>(rho.rows());
    rank_ = f.rank;
    if (rank_ == 0) throw NumericError("correlation matrix has rank zero");
    L_ = f.L;
    rows_by_col_.assign(rank_, {});
    for (int i = 0; i < m_; ++i) {
      int last = -1;
      for (int j = 0; j < rank_; ++j)
        if (std::abs(L_(i, j)) > 1e-9) last = j;
      if (last < 0) throw NumericError("correlation matrix has a zero-variance component");
      rows_by_col_[last].push_back(i);
    }
    build_points();
  }

  bool repaired() const { return repaired_; }
  int dimension() const { return m_; }
  int rank() const { return rank_; }

  struct Estimate {
    double value;
    double std_error;
  };

  Estimate probability(double kappa) const {
    if (!(kappa > 0.0)) return {0.0, 0.0};
    const std::size_t shifts = rank_ == 1 ? 1 : opt_.shifts;
    const std::size_t points = rank_ == 1 ? 1 : opt_.points;
    std::vector<double> y(rank_);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < shifts; ++s) {
      double acc = 0.0;
      for (std::size_t k = 0; k < points; ++k) {
        const double* w = rank_ == 1 ? nullptr : &u_[(s * points + k) * (rank_ - 1)];
        acc += sample(kappa, w, y);
      }
      const double mean = acc / static_cast<double>(points);
      sum += mean;
      sum_sq += mean * mean;
    }
    const double n = static_cast<double>(shifts);
    const double mean = sum / n;
    const double var = shifts > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n * (n - 1))) : 0.0;
    return {mean, std::sqrt(var)};
  }

  // Smallest kappa with Pr(max |X_k| < kappa) = level.
  double equicoordinate_quantile(double level) const {
    if (!(level > 0.0 && level < 1.0)) throw NumericError("quantile level must lie in (0, 1)");
    double lo = norm_quantile(0.5 + 0.5 * level);
    double hi = norm_quantile(1.0 - (1.0 - level) / (2.0 * m_));
    if (rank_ == 1 && rows_by_col_[0].size() == static_cast<std::size_t>(m_)) return lo;
    auto f = [&](double k) { return probability(k).value - level; };
    double flo = f(lo), fhi = f(hi);
    for (int i = 0; flo > 0.0 && i < 50; ++i) { lo -= 0.05; flo = f(lo); }
    for (int i = 0; fhi < 0.0 && i < 50; ++i) { hi += 0.05; fhi = f(hi); }
    if (flo > 0.0 || fhi < 0.0) throw NumericError("could not bracket the equicoordinate quantile");
    // Illinois regula falsi.
    int side = 0;
    double x = lo;
    for (int it = 0; it < 100 && hi - lo > opt_.kappa_tol; ++it) {
      x = (lo * fhi - hi * flo) / (fhi - flo);
      if (!(x > lo && x < hi)) x = 0.5 * (lo + hi);
      const double fx = f(x);
      if (fx == 0.0) return x;
      if (fx < 0.0) {
        lo = x;
        flo = fx;
        if (side == -1) fhi *= 0.5;
        side = -1;
      } else {
        hi = x;
        fhi = fx;
        if (side == 1) flo *= 0.5;
        side = 1;
      }
    }
    return 0.5 * (lo + hi);
  }

 private:
  double sample(double kappa, const double* w, std::vector<double>& y) const {
    double p = 1.0;
    for (int j = 0; j < rank_; ++j) {
      double lo = -std::numeric_limits<double>::infinity();
      double hi = std::numeric_limits<double>::infinity();
      for (int i : rows_by_col_[j]) {
        double s = 0.0;
        for (int t = 0; t < j; ++t) s += L_(i, t) * y[t];
        const double c = L_(i, j);
        double a = (-kappa - s) / c, b = (kappa - s) / c;
        if (c < 0) std::swap(a, b);
        lo = std::max(lo, a);
        hi = std::min(hi, b);
      }
      if (hi <= lo) return 0.0;
      const double dl = norm_cdf(lo), dh = norm_cdf(hi);
      const double e = dh - dl;
      if (e <= 0.0) return 0.0;
      p *= e;
      if (j + 1 < rank_) {
        double q = dl + w[j] * e;
        q = std::clamp(q, 1e-16, 1.0 - 1e-16);
        y[j] = norm_quantile(q);
      }
    }
    return p;
  }

  void build_points() {
    if (rank_ == 1) return;
    static const int primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                                 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113,
                                 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181,
                                 191, 193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251};
    const int dim = rank_ - 1;
    std::vector<double> gen(dim);
    for (int j = 0; j < dim; ++j) {
      const int p = primes[j % (sizeof primes / sizeof primes[0])];
      gen[j] = std::sqrt(static_cast<double>(p)) + (j / 54);
    }
    std::mt19937_64 rng(opt_.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    u_.resize(opt_.shifts * opt_.points * dim);
    for (std::size_t s = 0; s < opt_.shifts; ++s) {
      std::vector<double> shift(dim);
      for (auto& v : shift) v = unif(rng);
      for (std::size_t k = 0; k < opt_.points; ++k) {
        for (int j = 0; j < dim; ++j) {
          double v = static_cast<double>(k + 1) * gen[j] + shift[j];
          v -= std::floor(v);
          u_[(s * opt_.points + k) * dim + j] = std::abs(2.0 * v - 1.0);
        }
      }
    }
  }

  MvnOptions opt_;
  int m_ = 0;
  int rank_ = 0;
  bool repaired_ = false;
  Eigen::MatrixXd L_;
  std::vector<std::vector<int>> rows_by_col_;
  std::vector<double> u_;
};

inline double mvn_equicoordinate_quantile(const Eigen::MatrixXd& rho, double level,
                                          const MvnOptions& opt = {},
                                          std::vector<std::string>* diagnostics = nullptr) {
  SymmetricRectangleIntegrator integ(rho, opt);
  if (integ.repaired() && diagnostics)
    diagnostics->push_back("correlation matrix was not PSD; eigenvalues clipped at zero");
  return integ.equicoordinate_quantile(level);
}

}  // namespace hetfx
