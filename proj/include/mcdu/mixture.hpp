#pragma once

// Variational Bayesian Gaussian mixture with a truncated stick-breaking
// (Dirichlet-process) weight prior and Normal-Wishart component priors,
// fitted by coordinate-ascent variational inference.
//
// Model, for K components and D-dimensional points x_n:
//   v_k ~ Beta(1, alpha) for k < K - 1, v_{K-1} = 1,  pi_k = v_k prod_{j<k} (1 - v_j)
//   (mu_k, Lambda_k) ~ NormalWishart(m0, beta0, W0, nu0)
//   z_n ~ Cat(pi),  x_n ~ N(mu_{z_n}, Lambda_{z_n}^{-1})
// with m0 = data mean, W0^{-1} = data covariance + reg I, beta0 = 1, nu0 = D.
//
// Covariance regularization adds reg * I to every component scatter matrix in
// the M-step. The same term appears in the responsibilities and in the ELBO
// as -reg/2 * E[tr Lambda_k] per point, so both half-steps stay exact
// coordinate-ascent updates of one objective and the ELBO is non-decreasing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include "mcdu/error.hpp"

namespace mcdu {

enum class ClusterAlgorithm { Bgm, Agg };

struct ClusterConfig {
  ClusterAlgorithm algorithm = ClusterAlgorithm::Bgm;
  int max_iters = 500;
  double elbo_tol = 1e-4;
  // Stick-breaking concentration; 1 / K_max when unset.
  std::optional<double> weight_concentration_prior;
  double mean_precision_prior = 1.0;
  int split_threshold = 150;
  std::uint64_t seed = 0;
  int n_init = 3;
  // Greedy pairwise merge proposals after each restart converges. A merge is
  // kept only when the re-converged ELBO is higher.
  bool merge_moves = true;
  int max_split_depth = 3;

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("max_iters must be positive");
    if (!(elbo_tol > 0.0)) throw std::invalid_argument("elbo_tol must be positive");
    if (split_threshold < 1) throw std::invalid_argument("split_threshold must be >= 1");
    if (n_init < 1) throw std::invalid_argument("n_init must be positive");
    if (weight_concentration_prior && !(*weight_concentration_prior > 0.0)) {
      throw std::invalid_argument("weight_concentration_prior must be positive");
    }
    if (!(mean_precision_prior > 0.0)) throw std::invalid_argument("mean_precision_prior must be positive");
  }
};

template <int Dim>
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Dim>;

template <int Dim>
struct MixtureState {
  using Vec = Eigen::Matrix<double, Dim, 1>;
  using Mat = Eigen::Matrix<double, Dim, Dim>;

  int k_max = 0;
  std::vector<double> weights;     // expected stick-breaking proportions
  std::vector<Vec> means;          // posterior means m_k
  std::vector<Mat> covariances;    // (nu_k W_k)^{-1}, the inverse expected precision
  std::vector<double> mean_precision;  // beta_k
  std::vector<double> dof;             // nu_k
  Eigen::MatrixXd responsibilities;    // n x k_max, rows sum to 1
  std::vector<double> elbo_trace;      // one entry per CAVI iteration of the selected run
  double regularization = 0.0;
  int effective_components = 0;
  int iterations = 0;
  bool converged = false;
  // Largest single-step ELBO decrease seen in any run made during the fit
  // (restarts and merge trials included). Zero for a correct implementation.
  double max_elbo_drop = 0.0;
};

/// argmax of each responsibility row; ties go to the lower component index.
inline std::vector<int> assign_labels(const Eigen::MatrixXd& responsibilities) {
  std::vector<int> labels(static_cast<std::size_t>(responsibilities.rows()), 0);
  for (Eigen::Index i = 0; i < responsibilities.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < responsibilities.cols(); ++k) {
      if (responsibilities(i, k) > responsibilities(i, best)) best = static_cast<int>(k);
    }
    labels[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

template <int Dim>
std::vector<int> assign_labels(const MixtureState<Dim>& m) {
  return assign_labels(m.responsibilities);
}

namespace detail {

template <int Dim>
class VariationalGmm {
 public:
  using Vec = Eigen::Matrix<double, Dim, 1>;
  using Mat = Eigen::Matrix<double, Dim, Dim>;

  VariationalGmm(const PointMatrix<Dim>& x, int k, const ClusterConfig& cfg) : x_(x), k_(k) {
    const auto n = x.rows();
    d_ = static_cast<int>(x.cols());
    m0_ = x.colwise().mean().transpose();
    Mat cov = Mat::Zero(d_, d_);
    if (n > 1) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vec diff = x.row(i).transpose() - m0_;
        cov.noalias() += diff * diff.transpose();
      }
      cov /= static_cast<double>(n - 1);
    }
    reg_ = std::max(1e-6 * cov.trace() / d_, 1e-6);
    w0_inv_ = cov + reg_ * Mat::Identity(d_, d_);
    beta0_ = cfg.mean_precision_prior;
    nu0_ = static_cast<double>(d_);
    alpha_ = cfg.weight_concentration_prior.value_or(1.0 / k);

    Eigen::LLT<Mat> llt(w0_inv_);
    if (llt.info() != Eigen::Success) throw DataError("prior covariance is not positive definite");
    log_b0_ = log_wishart_norm(w0_logdet_inv(llt), nu0_);

    a_.assign(k_, 1.0);
    b_.assign(k_, alpha_);
    beta_.assign(k_, beta0_);
    nu_.assign(k_, nu0_);
    m_.assign(k_, m0_);
    w_inv_.assign(k_, w0_inv_);
    chol_.assign(k_, Mat::Zero(d_, d_));
    resp_ = Eigen::MatrixXd::Zero(n, k_);
    log_rho_ = Eigen::MatrixXd::Zero(n, k_);
  }

  double regularization() const { return reg_; }
  const Eigen::MatrixXd& responsibilities() const { return resp_; }

  // Runs CAVI from the given responsibilities. Returns the ELBO trace.
  std::vector<double> run(const Eigen::MatrixXd& init_resp, int max_iters, double tol, bool& converged,
                          int& iterations, double& max_drop) {
    resp_ = init_resp;
    std::vector<double> trace;
    m_step();
    trace.push_back(elbo());
    converged = false;
    iterations = 0;
    for (int it = 0; it < max_iters; ++it) {
      e_step();
      m_step();
      const double value = elbo();
      max_drop = std::max(max_drop, trace.back() - value);
      const double change = value - trace.back();
      trace.push_back(value);
      iterations = it + 1;
      if (std::abs(change) < tol) {
        converged = true;
        break;
      }
    }
    return trace;
  }

  MixtureState<Dim> state() const {
    MixtureState<Dim> s;
    s.k_max = k_;
    s.responsibilities = resp_;
    s.regularization = reg_;
    double remaining = 1.0;
    for (int k = 0; k < k_; ++k) {
      const double ev = (k == k_ - 1) ? 1.0 : a_[k] / (a_[k] + b_[k]);
      s.weights.push_back(remaining * ev);
      remaining *= (1.0 - ev);
      s.means.push_back(m_[k]);
      s.covariances.push_back(w_inv_[k] / nu_[k]);
      s.mean_precision.push_back(beta_[k]);
      s.dof.push_back(nu_[k]);
    }
    const auto labels = assign_labels(resp_);
    std::vector<bool> used(k_, false);
    for (int l : labels) used[l] = true;
    s.effective_components = static_cast<int>(std::count(used.begin(), used.end(), true));
    return s;
  }

  // Symmetric Mahalanobis-style separation between two fitted components.
  double separation(int i, int j) const {
    const Mat c = w_inv_[i] / nu_[i] + w_inv_[j] / nu_[j];
    const Vec diff = m_[i] - m_[j];
    return diff.dot(c.llt().solve(diff));
  }

 private:
  static double w0_logdet_inv(const Eigen::LLT<Mat>& llt) {
    // log |W| for W = (L L^T)^{-1}
    double s = 0.0;
    const Mat l = llt.matrixL();
    for (int i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return -2.0 * s;
  }

  // log B(W, nu) from the Wishart normalizer, given log |W|.
  double log_wishart_norm(double logdet_w, double nu) const {
    double s = -0.5 * nu * logdet_w - 0.5 * nu * d_ * std::numbers::ln2 -
               0.25 * d_ * (d_ - 1) * std::log(std::numbers::pi);
    for (int i = 1; i <= d_; ++i) s -= std::lgamma(0.5 * (nu + 1 - i));
    return s;
  }

  double expected_logdet(int k) const {
    double s = d_ * std::numbers::ln2 + logdet_w_[k];
    for (int i = 1; i <= d_; ++i) s += boost::math::digamma(0.5 * (nu_[k] + 1 - i));
    return s;
  }

  void m_step() {
    const auto n = x_.rows();
    const Mat eye = Mat::Identity(d_, d_);
    std::vector<double> nk(k_, 0.0);
    for (int k = 0; k < k_; ++k) {
      const double mass = resp_.col(k).sum();
      nk[k] = mass;
      Vec s1 = Vec::Zero(d_);
      for (Eigen::Index i = 0; i < n; ++i) s1.noalias() += resp_(i, k) * x_.row(i).transpose();
      Mat winv = w0_inv_;
      if (mass > 0.0) {
        const Vec xbar = s1 / mass;
        Mat scatter = Mat::Zero(d_, d_);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double r = resp_(i, k);
          if (r == 0.0) continue;
          const Vec diff = x_.row(i).transpose() - xbar;
          scatter.noalias() += r * diff * diff.transpose();
        }
        const Vec dm = xbar - m0_;
        winv += scatter + mass * reg_ * eye + (beta0_ * mass / (beta0_ + mass)) * dm * dm.transpose();
      }
      winv = 0.5 * (winv + winv.transpose());
      beta_[k] = beta0_ + mass;
      nu_[k] = nu0_ + mass;
      m_[k] = (beta0_ * m0_ + s1) / beta_[k];
      w_inv_[k] = winv;
    }
    double tail = 0.0;
    for (int k = k_ - 1; k >= 0; --k) {
      a_[k] = 1.0 + nk[k];
      b_[k] = alpha_ + tail;
      tail += nk[k];
    }
    refresh_derived();
  }

  void refresh_derived() {
    logdet_w_.assign(k_, 0.0);
    trace_w_.assign(k_, 0.0);
    elog_v_.assign(k_, 0.0);
    elog_1mv_.assign(k_, 0.0);
    elog_pi_.assign(k_, 0.0);
    elogdet_.assign(k_, 0.0);
    const Mat eye = Mat::Identity(d_, d_);
    for (int k = 0; k < k_; ++k) {
      Eigen::LLT<Mat> llt(w_inv_[k]);
      if (llt.info() != Eigen::Success) throw DataError("component covariance is not positive definite");
      chol_[k] = llt.matrixL();
      double s = 0.0;
      for (int i = 0; i < d_; ++i) s += std::log(chol_[k](i, i));
      logdet_w_[k] = -2.0 * s;
      const Mat linv = chol_[k].template triangularView<Eigen::Lower>().solve(eye);
      trace_w_[k] = linv.squaredNorm();
      elogdet_[k] = expected_logdet(k);
    }
    double acc = 0.0;
    for (int k = 0; k < k_; ++k) {
      if (k < k_ - 1) {
        const double dsum = boost::math::digamma(a_[k] + b_[k]);
        elog_v_[k] = boost::math::digamma(a_[k]) - dsum;
        elog_1mv_[k] = boost::math::digamma(b_[k]) - dsum;
      }
      elog_pi_[k] = elog_v_[k] + acc;
      acc += elog_1mv_[k];
    }
    compute_log_rho();
  }

  // (x - m)^T W (x - m) through the Cholesky factor of W^{-1}.
  double mahalanobis(int k, const Vec& x) const {
    const Vec diff = x - m_[k];
    const Vec y = chol_[k].template triangularView<Eigen::Lower>().solve(diff);
    return y.squaredNorm();
  }

  void compute_log_rho() {
    const auto n = x_.rows();
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (int k = 0; k < k_; ++k) {
      const double base = elog_pi_[k] + 0.5 * elogdet_[k] - 0.5 * d_ * log2pi - 0.5 * d_ / beta_[k] -
                          0.5 * reg_ * nu_[k] * trace_w_[k];
      for (Eigen::Index i = 0; i < n; ++i) {
        log_rho_(i, k) = base - 0.5 * nu_[k] * mahalanobis(k, x_.row(i).transpose());
      }
    }
  }

  void e_step() {
    for (Eigen::Index i = 0; i < resp_.rows(); ++i) {
      const double mx = log_rho_.row(i).maxCoeff();
      double total = 0.0;
      for (int k = 0; k < k_; ++k) {
        const double v = std::exp(log_rho_(i, k) - mx);
        resp_(i, k) = v;
        total += v;
      }
      resp_.row(i) /= total;
    }
  }

  double elbo() const {
    const double log2pi = std::log(2.0 * std::numbers::pi);
    // Data, assignment and assignment-entropy terms, accumulated in long
    // double to keep rounding well below the monotonicity check.
    long double data = 0.0L;
    for (Eigen::Index i = 0; i < resp_.rows(); ++i) {
      for (int k = 0; k < k_; ++k) {
        const double r = resp_(i, k);
        if (r > 0.0) data += static_cast<long double>(r) * (log_rho_(i, k) - std::log(r));
      }
    }
    long double sticks = 0.0L;
    for (int k = 0; k < k_ - 1; ++k) {
      sticks += std::log(alpha_) + (alpha_ - 1.0) * elog_1mv_[k];
      sticks -= std::lgamma(a_[k] + b_[k]) - std::lgamma(a_[k]) - std::lgamma(b_[k]) + (a_[k] - 1.0) * elog_v_[k] +
                (b_[k] - 1.0) * elog_1mv_[k];
    }
    long double params = 0.0L;
    for (int k = 0; k < k_; ++k) {
      const Vec dm = m_[k] - m0_;
      const Vec y = chol_[k].template triangularView<Eigen::Lower>().solve(dm);
      const Mat linv = chol_[k].template triangularView<Eigen::Lower>().solve(Mat::Identity(d_, d_));
      const double tr_w0inv_w = (linv * w0_inv_ * linv.transpose()).trace();
      // E[log p(mu_k, Lambda_k)]
      params += 0.5 * d_ * std::log(beta0_ / (2.0 * std::numbers::pi)) + 0.5 * elogdet_[k] -
                0.5 * d_ * beta0_ / beta_[k] - 0.5 * beta0_ * nu_[k] * y.squaredNorm() + log_b0_ +
                0.5 * (nu0_ - d_ - 1.0) * elogdet_[k] - 0.5 * nu_[k] * tr_w0inv_w;
      // -E[log q(mu_k, Lambda_k)]
      const double entropy_wishart =
          -log_wishart_norm(logdet_w_[k], nu_[k]) - 0.5 * (nu_[k] - d_ - 1.0) * elogdet_[k] + 0.5 * nu_[k] * d_;
      params -= 0.5 * elogdet_[k] + 0.5 * d_ * (std::log(beta_[k]) - log2pi) - 0.5 * d_ - entropy_wishart;
    }
    return static_cast<double>(data + sticks + params);
  }

  const PointMatrix<Dim>& x_;
  int k_;
  int d_ = Dim;
  Vec m0_;
  Mat w0_inv_;
  double reg_ = 0.0, beta0_ = 1.0, nu0_ = 1.0, alpha_ = 1.0, log_b0_ = 0.0;
  std::vector<double> a_, b_, beta_, nu_;
  std::vector<Vec> m_;
  std::vector<Mat> w_inv_, chol_;
  std::vector<double> logdet_w_, trace_w_, elog_v_, elog_1mv_, elog_pi_, elogdet_;
  Eigen::MatrixXd resp_, log_rho_;
};

// k-means++ seeding followed by Lloyd iterations; returns hard labels.
template <int Dim>
std::vector<int> kmeans_labels(const PointMatrix<Dim>& x, int k, std::mt19937_64& rng, int max_iters = 100) {
  const auto n = static_cast<int>(x.rows());
  k = std::min(k, n);
  std::vector<Eigen::Index> centers_idx;
  std::uniform_int_distribution<int> first(0, n - 1);
  centers_idx.push_back(first(rng));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers_idx.size()) < k) {
    const auto c = x.row(centers_idx.back());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (x.row(i) - c).squaredNorm());
      total += dist[i];
    }
    if (total <= 0.0) break;  // all remaining points coincide with a center
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= dist[i];
      if (target <= 0.0 && dist[i] > 0.0) {
        pick = i;
        break;
      }
    }
    centers_idx.push_back(pick);
  }
  const int kc = static_cast<int>(centers_idx.size());
  Eigen::MatrixXd centers(kc, x.cols());
  for (int c = 0; c < kc; ++c) centers.row(c) = x.row(centers_idx[c]);

  std::vector<int> labels(n, -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < kc; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kc, x.cols());
    std::vector<int> counts(kc, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(labels[i]) += x.row(i);
      ++counts[labels[i]];
    }
    for (int c = 0; c < kc; ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
  }
  return labels;
}

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based seed derivation: the stream-th child of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

template <int Dim>
MixtureState<Dim> fit_bgm(const PointMatrix<Dim>& points, int k_max, const ClusterConfig& cfg) {
  cfg.validate();
  if (points.rows() < 1) throw DataError("fit_bgm: no points");
  if (k_max < 1) throw std::invalid_argument("fit_bgm: k_max must be >= 1");
  if (!points.allFinite()) throw DataError("fit_bgm: non-finite input");

  const auto n = points.rows();
  detail::VariationalGmm<Dim> model(points, k_max, cfg);

  struct Best {
    double elbo = -std::numeric_limits<double>::infinity();
    MixtureState<Dim> state;
  } best;
  double max_drop = 0.0;

  auto run_from = [&](const Eigen::MatrixXd& init, MixtureState<Dim>& out) {
    bool converged = false;
    int iterations = 0;
    auto trace = model.run(init, cfg.max_iters, cfg.elbo_tol, converged, iterations, max_drop);
    out = model.state();
    out.elbo_trace = std::move(trace);
    out.converged = converged;
    out.iterations = iterations;
    return out.elbo_trace.back();
  };

  auto occupied_components = [&](const MixtureState<Dim>& st) {
    const auto labels = assign_labels(st.responsibilities);
    std::vector<int> count(static_cast<std::size_t>(k_max), 0);
    for (int l : labels) ++count[static_cast<std::size_t>(l)];
    return count;
  };

  // Merge the closest occupied pairs; returns true on the first accepted move.
  auto try_merge = [&](MixtureState<Dim>& current, double& value) {
    const auto count = occupied_components(current);
    std::vector<int> occupied;
    for (int k = 0; k < k_max; ++k) {
      if (count[static_cast<std::size_t>(k)] > 0) occupied.push_back(k);
    }
    if (occupied.size() < 2) return false;
    // The model holds the parameters of the last run; rebuild them for
    // `current` before measuring separations.
    bool c = false;
    int it = 0;
    double unused = 0.0;
    model.run(current.responsibilities, 0, cfg.elbo_tol, c, it, unused);
    std::vector<std::tuple<double, int, int>> pairs;
    for (std::size_t a = 0; a < occupied.size(); ++a) {
      for (std::size_t b = a + 1; b < occupied.size(); ++b) {
        pairs.emplace_back(model.separation(occupied[a], occupied[b]), occupied[a], occupied[b]);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    const std::size_t trials = std::min(pairs.size(), occupied.size());
    for (std::size_t t = 0; t < trials; ++t) {
      const auto [sep, keep, drop] = pairs[t];
      (void)sep;
      Eigen::MatrixXd merged = current.responsibilities;
      merged.col(keep) += merged.col(drop);
      merged.col(drop).setZero();
      MixtureState<Dim> candidate;
      const double cand_value = run_from(merged, candidate);
      if (cand_value > value + cfg.elbo_tol) {
        current = std::move(candidate);
        value = cand_value;
        return true;
      }
    }
    return false;
  };

  for (int restart = 0; restart < cfg.n_init; ++restart) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
    const auto init_labels = detail::kmeans_labels<Dim>(points, k_max, rng);
    Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k_max);
    for (Eigen::Index i = 0; i < n; ++i) resp(i, init_labels[static_cast<std::size_t>(i)]) = 1.0;

    MixtureState<Dim> current;
    double value = run_from(resp, current);
    if (cfg.merge_moves) {
      while (try_merge(current, value)) {
      }
    }
    if (value > best.elbo) {
      best.elbo = value;
      best.state = std::move(current);
    }
  }
  best.state.max_elbo_drop = max_drop;
  return best.state;
}

}  // namespace mcdu
