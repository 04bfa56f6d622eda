#ifndef MODALSURV_COXPH_HPP
#define MODALSURV_COXPH_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

#include "modalsurv/common.hpp"

namespace modalsurv {

struct CoxModel {
  Eigen::VectorXd beta;
  double log_likelihood = 0.0;
  int n_iterations = 0;
  bool converged = false;                // gradient max-norm < tol_grad at beta
  std::vector<double> ll_history;        // partial log-likelihood at each accepted step
};

struct CoxOptions {
  double ridge = 0.0;       // optional L2 rescue for separation on tiny cohorts
  int max_iterations = 100;
  double tol_ll = 1e-9;
  double tol_grad = 1e-6;
  double beta_bound = 15.0;  // |beta_j| beyond this flags monotone likelihood
};

namespace detail {

// Breslow-tie partial log-likelihood plus gradient and observed information.
// Walks the cohort in decreasing time order maintaining risk-set accumulators
// S0 = sum exp(eta), S1 = sum exp(eta) x, S2 = sum exp(eta) x x^T; every
// member of a tied time group enters the risk set before that group's events
// contribute.
struct CoxDerivatives {
  double ll = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd info;  // negative Hessian
};

inline CoxDerivatives cox_derivatives(const Eigen::MatrixXd& x, const std::vector<double>& times,
                                      const std::vector<char>& events, const Eigen::VectorXd& beta,
                                      double ridge, bool want_info) {
  const auto n = static_cast<std::size_t>(x.rows());
  const Eigen::Index d = x.cols();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] > times[b] || (times[a] == times[b] && a < b); });

  const Eigen::VectorXd eta = x * beta;
  CoxDerivatives out;
  out.grad = Eigen::VectorXd::Zero(d);
  if (want_info) out.info = Eigen::MatrixXd::Zero(d, d);

  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd s2;
  if (want_info) s2 = Eigen::MatrixXd::Zero(d, d);

  std::size_t pos = 0;
  while (pos < n) {
    const double t = times[order[pos]];
    std::size_t group_end = pos;
    while (group_end < n && times[order[group_end]] == t) ++group_end;

    for (std::size_t g = pos; g < group_end; ++g) {
      const std::size_t i = order[g];
      const double w = std::exp(eta[static_cast<Eigen::Index>(i)]);
      s0 += w;
      s1 += w * x.row(static_cast<Eigen::Index>(i)).transpose();
      if (want_info) {
        s2.noalias() += w * x.row(static_cast<Eigen::Index>(i)).transpose() * x.row(static_cast<Eigen::Index>(i));
      }
    }
    for (std::size_t g = pos; g < group_end; ++g) {
      const std::size_t i = order[g];
      if (!events[i]) continue;
      out.ll += eta[static_cast<Eigen::Index>(i)] - std::log(s0);
      const Eigen::VectorXd mean = s1 / s0;
      out.grad += x.row(static_cast<Eigen::Index>(i)).transpose() - mean;
      if (want_info) out.info += s2 / s0 - mean * mean.transpose();
    }
    pos = group_end;
  }

  if (ridge > 0.0) {
    out.ll -= 0.5 * ridge * beta.squaredNorm();
    out.grad -= ridge * beta;
    if (want_info) out.info += ridge * Eigen::MatrixXd::Identity(d, d);
  }
  return out;
}

}  // namespace detail

inline double cox_partial_loglik(const Eigen::MatrixXd& x, const std::vector<double>& times,
                                 const std::vector<char>& events, const Eigen::VectorXd& beta,
                                 double ridge = 0.0) {
  return detail::cox_derivatives(x, times, events, beta, ridge, false).ll;
}

inline Eigen::VectorXd cox_gradient(const Eigen::MatrixXd& x, const std::vector<double>& times,
                                    const std::vector<char>& events, const Eigen::VectorXd& beta,
                                    double ridge = 0.0) {
  return detail::cox_derivatives(x, times, events, beta, ridge, true).grad;
}

// Newton-Raphson with step-halving on the Breslow partial likelihood.
// Inputs are expected standardized (caller contract). Throws NumericError on
// monotone likelihood (a coefficient running away) or a singular information
// matrix.
inline CoxModel fit_coxph(const Eigen::MatrixXd& x, const std::vector<double>& times,
                          const std::vector<char>& events, const CoxOptions& opts = {}) {
  const auto n = static_cast<std::size_t>(x.rows());
  const Eigen::Index d = x.cols();
  if (times.size() != n || events.size() != n) {
    throw ValidationError("fit_coxph: X, times, events must have matching rows");
  }
  if (d < 1) throw ValidationError("fit_coxph: no covariates");
  if (std::count(events.begin(), events.end(), char(1)) == 0) {
    throw ValidationError("fit_coxph: need at least one event");
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    if (x.col(j).maxCoeff() - x.col(j).minCoeff() < 1e-12) {
      throw ValidationError("fit_coxph: covariate " + std::to_string(j) + " is constant");
    }
  }

  CoxModel model;
  model.beta = Eigen::VectorXd::Zero(d);

  auto deriv = detail::cox_derivatives(x, times, events, model.beta, opts.ridge, true);
  model.ll_history.push_back(deriv.ll);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (deriv.grad.lpNorm<Eigen::Infinity>() < opts.tol_grad) {
      model.converged = true;
      break;
    }

    const Eigen::LDLT<Eigen::MatrixXd> ldlt(deriv.info);
    Eigen::VectorXd delta = ldlt.solve(deriv.grad);
    const double residual = (deriv.info * delta - deriv.grad).norm();
    const double max_pivot = ldlt.vectorD().cwiseAbs().maxCoeff();
    const double min_pivot = ldlt.vectorD().minCoeff();
    if (ldlt.info() != Eigen::Success || !delta.allFinite() ||
        min_pivot < 1e-10 * std::max(max_pivot, 1.0) ||
        residual > 1e-8 * std::max(1.0, deriv.grad.norm())) {
      throw NumericError("fit_coxph: singular information matrix");
    }

    // step-halving keeps the partial log-likelihood non-decreasing
    double step = 1.0;
    detail::CoxDerivatives next;
    Eigen::VectorXd candidate;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      candidate = model.beta + step * delta;
      next = detail::cox_derivatives(x, times, events, candidate, opts.ridge, true);
      if (std::isfinite(next.ll) && next.ll >= deriv.ll) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // ascent exhausted at numerical precision

    const double delta_ll = next.ll - deriv.ll;
    model.beta = candidate;
    deriv = next;
    ++model.n_iterations;
    model.ll_history.push_back(deriv.ll);

    Eigen::Index worst = 0;
    model.beta.cwiseAbs().maxCoeff(&worst);
    if (std::abs(model.beta[worst]) > opts.beta_bound) {
      throw NumericError("fit_coxph: monotone likelihood / separation detected, coefficient " +
                         std::to_string(worst) + " diverged beyond |" + fmt_double(opts.beta_bound) +
                         "| (try a small ridge)");
    }

    if (delta_ll < opts.tol_ll) break;
  }

  model.converged = deriv.grad.lpNorm<Eigen::Infinity>() < opts.tol_grad;
  model.log_likelihood = deriv.ll;
  return model;
}

// Linear predictor X * beta; higher risk means earlier expected event.
inline Eigen::VectorXd cox_risk(const CoxModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.beta.size()) {
    throw ValidationError("cox_risk: column count mismatch (got " + std::to_string(x.cols()) +
                          ", fitted " + std::to_string(model.beta.size()) + ")");
  }
  return x * model.beta;
}

}  // namespace modalsurv

#endif  // MODALSURV_COXPH_HPP
