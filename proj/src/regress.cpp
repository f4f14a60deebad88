#include "twophase/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

namespace twophase {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// --- DesignSpec --------------------------------------------------------------

DesignSpec DesignSpec::intercept_only() { return DesignSpec{true, {}}; }

DesignSpec DesignSpec::linear(std::size_t dim) {
  DesignSpec s;
  for (std::size_t j = 0; j < dim; ++j) s.terms.push_back({j, 1});
  return s;
}

DesignSpec DesignSpec::with_squares(std::size_t dim) {
  DesignSpec s;
  for (std::size_t j = 0; j < dim; ++j) {
    s.terms.push_back({j, 1});
    s.terms.push_back({j, 2});
  }
  return s;
}

std::size_t DesignSpec::min_dim() const {
  std::size_t d = 0;
  for (const Term& t : terms) d = std::max(d, t.column + 1);
  return d;
}

std::vector<std::string> DesignSpec::names() const {
  std::vector<std::string> out;
  if (intercept) out.emplace_back("(intercept)");
  for (const Term& t : terms) {
    std::string name = "x" + std::to_string(t.column + 1);
    if (t.power != 1) name += "^" + std::to_string(t.power);
    out.push_back(std::move(name));
  }
  return out;
}

void DesignSpec::fill_row(std::span<const double> x, double* out) const {
  if (x.size() < min_dim())
    throw InputError("covariate vector has " + std::to_string(x.size()) +
                     " entries; the model needs " + std::to_string(min_dim()));
  std::size_t k = 0;
  if (intercept) out[k++] = 1.0;
  for (const Term& t : terms) {
    double v = 1.0;
    for (int p = 0; p < t.power; ++p) v *= x[t.column];
    out[k++] = v;
  }
}

VectorXd DesignSpec::row(std::span<const double> x) const {
  VectorXd r(n_coef());
  fill_row(x, r.data());
  return r;
}

MatrixXd DesignSpec::matrix(const MatrixXd& x) const {
  MatrixXd out(x.rows(), n_coef());
  std::vector<double> buf(x.cols()), row_buf(n_coef());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) buf[j] = x(i, j);
    fill_row(buf, row_buf.data());
    for (std::size_t j = 0; j < row_buf.size(); ++j) out(i, j) = row_buf[j];
  }
  return out;
}

MatrixXd stack_rows(std::span<const Covariates> rows) {
  if (rows.empty()) return MatrixXd(0, 0);
  MatrixXd x(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw InputError("ragged covariate rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j) x(i, j) = rows[i][j];
  }
  return x;
}

namespace {

void check_inputs(const MatrixXd& design, const VectorXd& y, const char* what) {
  if (design.rows() != y.size()) throw InputError(std::string(what) + ": row count mismatch");
  if (design.rows() < design.cols() + 1)
    throw InputError(std::string(what) + ": need at least " + std::to_string(design.cols() + 1) +
                     " rows, got " + std::to_string(design.rows()));
  if (!design.allFinite() || !y.allFinite())
    throw InputError(std::string(what) + ": non-finite input");
}

void check_rank(const MatrixXd& design, const DesignSpec& spec, const char* what) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() == design.cols()) return;
  const auto names = spec.names();
  std::string cols;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < design.cols(); ++k) {
    if (!cols.empty()) cols += ", ";
    cols += names[static_cast<std::size_t>(perm(k))];
  }
  throw InputError(std::string(what) + ": design matrix is rank deficient; collinear column(s): " +
                   cols);
}

bool small_step(const VectorXd& step, const VectorXd& params, double tol) {
  const double scale = std::max(1.0, params.cwiseAbs().maxCoeff());
  return step.cwiseAbs().maxCoeff() <= tol * scale;
}

double median_abs(const VectorXd& r) {
  std::vector<double> a(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) a[i] = std::abs(r(i));
  return quantile(std::move(a), 0.5);
}

constexpr double kEtaClip = 700.0;

}  // namespace

// --- mean models -------------------------------------------------------------

double MeanModelFit::predict(std::span<const double> x) const {
  return spec.row(x).dot(coefficients);
}

MeanModelFit fit_mean(const MatrixXd& x, const VectorXd& y, const DesignSpec& spec,
                      const MeanFitOptions& options) {
  const MatrixXd design = spec.matrix(x);
  check_inputs(design, y, "fit_mean");
  check_rank(design, spec, "fit_mean");

  MeanModelFit fit;
  fit.spec = spec;
  fit.method = options.method;
  const Eigen::Index n = design.rows(), p = design.cols();
  VectorXd w = VectorXd::Ones(n);
  VectorXd coef = design.colPivHouseholderQr().solve(y);

  if (options.method == MeanMethod::huber) {
    fit.converged = false;
    for (int it = 1; it <= options.max_iter; ++it) {
      fit.iterations = it;
      const VectorXd r = y - design * coef;
      const double scale = median_abs(r) / 0.6744897501960817;
      if (!(scale > 0.0)) {
        fit.converged = true;
        break;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = std::abs(r(i)) / scale;
        w(i) = u <= options.huber_k ? 1.0 : options.huber_k / u;
      }
      const VectorXd sw = w.cwiseSqrt();
      const VectorXd next =
          (sw.asDiagonal() * design).colPivHouseholderQr().solve(sw.cwiseProduct(y));
      const VectorXd step = next - coef;
      coef = next;
      if (small_step(step, coef, options.tol)) {
        fit.converged = true;
        break;
      }
    }
  }

  const VectorXd resid = y - design * coef;
  fit.coefficients = coef;
  fit.residual_variance =
      resid.cwiseProduct(w).dot(resid) / static_cast<double>(n - p);
  const MatrixXd xtwx = design.transpose() * w.asDiagonal() * design;
  fit.covariance = fit.residual_variance * xtwx.ldlt().solve(MatrixXd::Identity(p, p));
  return fit;
}

// --- variance model ----------------------------------------------------------

double VarianceModelFit::log_predict(std::span<const double> x) const {
  return std::clamp(spec.row(x).dot(coefficients), -kEtaClip, kEtaClip);
}

double VarianceModelFit::predict(std::span<const double> x) const {
  return std::exp(log_predict(x));
}

double variance_log_likelihood(const MatrixXd& design, const VectorXd& sq_resid,
                               const VectorXd& gamma) {
  const VectorXd eta = (design * gamma).cwiseMax(-kEtaClip).cwiseMin(kEtaClip);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll -= 0.5 * (eta(i) + sq_resid(i) * std::exp(-eta(i)));
  return ll;
}

VarianceModelFit fit_variance_residuals(const MatrixXd& x, const VectorXd& sq_resid_in,
                                        const DesignSpec& spec,
                                        const VarianceFitOptions& options) {
  const MatrixXd design = spec.matrix(x);
  check_inputs(design, sq_resid_in, "fit_variance");
  check_rank(design, spec, "fit_variance");
  if ((sq_resid_in.array() < 0.0).any()) throw InputError("fit_variance: negative squared residual");
  VectorXd sq_resid = sq_resid_in;
  const Eigen::Index m = design.rows(), p = design.cols();
  const double mean_sq = sq_resid.mean();
  if (!(mean_sq > 0.0)) throw InputError("fit_variance: all residuals are zero");

  VarianceModelFit fit;
  fit.spec = spec;
  VectorXd gamma = VectorXd::Zero(p);
  if (spec.intercept) gamma(0) = std::log(mean_sq);
  const Eigen::LDLT<MatrixXd> xtx(design.transpose() * design);

  fit.converged = false;
  double ll = variance_log_likelihood(design, sq_resid, gamma);
  for (int it = 1; it <= options.max_iter; ++it) {
    fit.iterations = it;
    VectorXd eta = design * gamma;
    if ((eta.array().abs() > kEtaClip).any()) fit.clipped = true;
    eta = eta.cwiseMax(-kEtaClip).cwiseMin(kEtaClip);
    VectorXd work(m);
    for (Eigen::Index i = 0; i < m; ++i) work(i) = sq_resid(i) * std::exp(-eta(i)) - 1.0;
    VectorXd step = xtx.solve(design.transpose() * work);
    double s = 1.0;
    VectorXd next = gamma + step;
    double ll_next = variance_log_likelihood(design, sq_resid, next);
    while (!(ll_next >= ll - 1e-12 * std::abs(ll)) && s > 1e-10) {
      s *= 0.5;
      next = gamma + s * step;
      ll_next = variance_log_likelihood(design, sq_resid, next);
    }
    gamma = next;
    ll = ll_next;
    if (small_step(s * step, gamma, options.tol)) {
      fit.converged = true;
      break;
    }
  }
  if ((design * gamma).cwiseAbs().maxCoeff() > kEtaClip) fit.clipped = true;
  fit.coefficients = gamma;
  fit.covariance = 2.0 * xtx.solve(MatrixXd::Identity(p, p));
  return fit;
}

VarianceModelFit fit_variance(const MatrixXd& x, const VectorXd& y, const MeanModelFit& mean_fit,
                              const DesignSpec& spec, const VarianceFitOptions& options) {
  if (x.rows() != y.size()) throw InputError("fit_variance: row count mismatch");
  VectorXd sq(y.size());
  std::vector<double> buf(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) buf[j] = x(i, j);
    const double r = y(i) - mean_fit.predict(buf);
    sq(i) = r * r;
  }
  if (options.reml) {
    const double m = static_cast<double>(y.size());
    const double p = static_cast<double>(mean_fit.coefficients.size());
    if (m <= p) throw InputError("fit_variance: too few rows for the REML correction");
    sq *= m / (m - p);
  }
  return fit_variance_residuals(x, sq, spec, options);
}

// --- GLMs --------------------------------------------------------------------

double GlmFit::linear_predictor(std::span<const double> x) const {
  return spec.row(x).dot(coefficients);
}

double GlmFit::predict(std::span<const double> x) const { return expit(linear_predictor(x)); }

double logistic_log_likelihood(const MatrixXd& design, const VectorXd& y, const VectorXd& b) {
  const VectorXd eta = design * b;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + e^eta) computed stably
    const double e = eta(i);
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += y(i) * e - log1pexp;
  }
  return ll;
}

GlmFit fit_logistic(const MatrixXd& x, const VectorXd& y, const DesignSpec& spec,
                    const GlmOptions& options) {
  const MatrixXd design = spec.matrix(x);
  check_inputs(design, y, "fit_logistic");
  std::size_t ones = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) throw InputError("fit_logistic: response must be 0 or 1");
    ones += y(i) == 1.0;
  }
  if (ones == 0 || ones == static_cast<std::size_t>(y.size()))
    throw InputError("fit_logistic: response has a single class; the model is degenerate");
  check_rank(design, spec, "fit_logistic");

  const Eigen::Index n = design.rows(), p = design.cols();
  GlmFit fit;
  fit.family = GlmFamily::logistic;
  fit.spec = spec;
  fit.converged = false;
  VectorXd b = VectorXd::Zero(p);
  double ll = logistic_log_likelihood(design, y, b);
  MatrixXd info(p, p);
  for (int it = 1; it <= options.max_iter; ++it) {
    fit.iterations = it;
    const VectorXd eta = design * b;
    VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = expit(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    info = design.transpose() * w.asDiagonal() * design;
    const VectorXd step = info.ldlt().solve(design.transpose() * (y - mu));
    if (!step.allFinite())
      throw SeparationError("fit_logistic: information matrix became singular (separation)");
    double s = 1.0;
    VectorXd next = b + step;
    double ll_next = logistic_log_likelihood(design, y, next);
    while (!(ll_next >= ll - 1e-12 * std::abs(ll)) && s > 1e-10) {
      s *= 0.5;
      next = b + s * step;
      ll_next = logistic_log_likelihood(design, y, next);
    }
    b = next;
    ll = ll_next;
    if (b.norm() > options.separation_norm)
      throw SeparationError("fit_logistic: coefficient norm exceeded " +
                            format_double(options.separation_norm) +
                            "; the classes are (quasi-)separated");
    if (small_step(s * step, b, options.tol)) {
      fit.converged = true;
      break;
    }
  }
  {
    const VectorXd eta = design * b;
    VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = expit(eta(i));
      w(i) = mu * (1.0 - mu);
    }
    info = design.transpose() * w.asDiagonal() * design;
  }
  fit.coefficients = b;
  fit.covariance = info.ldlt().solve(MatrixXd::Identity(p, p));
  return fit;
}

double beta_log_likelihood(const MatrixXd& design, const VectorXd& y, const VectorXd& b,
                           double phi) {
  const VectorXd eta = design * b;
  double ll = 0.0;
  const double lg_phi = std::lgamma(phi);
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double mu = expit(eta(i));
    const double a = mu * phi, c = (1.0 - mu) * phi;
    ll += lg_phi - std::lgamma(a) - std::lgamma(c) + (a - 1.0) * std::log(y(i)) +
          (c - 1.0) * std::log1p(-y(i));
  }
  return ll;
}

namespace {

struct BetaScore {
  VectorXd score;  // (b, phi)
  MatrixXd info;   // expected information
};

BetaScore beta_score(const MatrixXd& design, const VectorXd& y, const VectorXd& b, double phi) {
  using boost::math::digamma;
  using boost::math::trigamma;
  const Eigen::Index n = design.rows(), p = design.cols();
  const VectorXd eta = design * b;
  VectorXd ub = VectorXd::Zero(p);
  double uphi = 0.0;
  MatrixXd kbb = MatrixXd::Zero(p, p);
  VectorXd kbphi = VectorXd::Zero(p);
  double kphiphi = 0.0;
  const double psi_phi = digamma(phi), tri_phi = trigamma(phi);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = expit(eta(i));
    const double a = mu * phi, c = (1.0 - mu) * phi;
    const double dmu = mu * (1.0 - mu);  // 1 / g'(mu)
    const double ystar = std::log(y(i)) - std::log1p(-y(i));
    const double mustar = digamma(a) - digamma(c);
    const double ta = trigamma(a), tc = trigamma(c);
    const auto xi = design.row(i).transpose();
    ub += (phi * dmu * (ystar - mustar)) * xi;
    uphi += mu * (ystar - mustar) + std::log1p(-y(i)) - digamma(c) + psi_phi;
    const double w = phi * phi * (ta + tc) * dmu * dmu;
    kbb += w * xi * xi.transpose();
    kbphi += (phi * (ta * mu - tc * (1.0 - mu)) * dmu) * xi;
    kphiphi += ta * mu * mu + tc * (1.0 - mu) * (1.0 - mu) - tri_phi;
  }
  BetaScore s;
  s.score.resize(p + 1);
  s.score << ub, uphi;
  s.info.resize(p + 1, p + 1);
  s.info.topLeftCorner(p, p) = kbb;
  s.info.topRightCorner(p, 1) = kbphi;
  s.info.bottomLeftCorner(1, p) = kbphi.transpose();
  s.info(p, p) = kphiphi;
  return s;
}

}  // namespace

GlmFit fit_beta(const MatrixXd& x, const VectorXd& y_in, const DesignSpec& spec,
                const GlmOptions& options) {
  const MatrixXd design = spec.matrix(x);
  check_inputs(design, y_in, "fit_beta");
  VectorXd y = y_in;
  const double m = static_cast<double>(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) < 0.0 || y(i) > 1.0) throw InputError("fit_beta: response outside [0, 1]");
    if (y(i) == 0.0 || y(i) == 1.0) {
      if (!options.compress_boundary)
        throw InputError(
            "fit_beta: responses at 0 or 1; enable boundary compression "
            "(y (m - 1) + 0.5) / m to fit them");
    }
  }
  if (options.compress_boundary) y = ((y * (m - 1.0)).array() + 0.5).matrix() / m;
  check_rank(design, spec, "fit_beta");

  const Eigen::Index p = design.cols();
  GlmFit fit;
  fit.family = GlmFamily::beta;
  fit.spec = spec;
  fit.converged = false;

  VectorXd ystar(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) ystar(i) = std::log(y(i)) - std::log1p(-y(i));
  VectorXd b = design.colPivHouseholderQr().solve(ystar);

  const double var_y = (y.array() - y.mean()).square().sum() / std::max(1.0, m - 1.0);
  double phi;
  bool phi_fixed = false;
  if (var_y <= 1e-14 * std::max(1e-300, y.mean() * (1.0 - y.mean()))) {
    phi = options.max_precision;
    phi_fixed = true;
  } else {
    const VectorXd eta = design * b;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double mu = expit(eta(i));
      acc += mu * (1.0 - mu);
    }
    phi = std::clamp(acc / m / var_y - 1.0, 1.0, options.max_precision);
  }

  double ll = beta_log_likelihood(design, y, b, phi);
  for (int it = 1; it <= options.max_iter; ++it) {
    fit.iterations = it;
    const BetaScore s = beta_score(design, y, b, phi);
    VectorXd step;
    if (phi_fixed) {
      step = VectorXd::Zero(p + 1);
      step.head(p) = s.info.topLeftCorner(p, p).ldlt().solve(s.score.head(p));
    } else {
      step = s.info.ldlt().solve(s.score);
    }
    if (!step.allFinite()) throw ConvergenceError("fit_beta: singular information matrix");
    double t = 1.0;
    auto propose = [&](double scale, VectorXd& nb, double& nphi) {
      nb = b + scale * step.head(p);
      nphi = phi + scale * step(p);
    };
    VectorXd nb;
    double nphi;
    propose(t, nb, nphi);
    // keep phi positive and below the cap
    while (nphi <= 0.0 && t > 1e-10) {
      t *= 0.5;
      propose(t, nb, nphi);
    }
    bool hit_cap = false;
    if (nphi >= options.max_precision) {
      nphi = options.max_precision;
      hit_cap = true;
    }
    double ll_next = beta_log_likelihood(design, y, nb, nphi);
    while (!(ll_next >= ll - 1e-12 * std::abs(ll)) && t > 1e-10) {
      t *= 0.5;
      propose(t, nb, nphi);
      if (nphi >= options.max_precision) nphi = options.max_precision;
      ll_next = beta_log_likelihood(design, y, nb, nphi);
    }
    VectorXd delta(p + 1);
    delta << nb - b, nphi - phi;
    VectorXd params(p + 1);
    b = nb;
    phi = nphi;
    ll = ll_next;
    params << b, phi;
    if (hit_cap) phi_fixed = true;
    if (small_step(delta, params, options.tol)) {
      fit.converged = true;
      break;
    }
  }
  const BetaScore s = beta_score(design, y, b, phi);
  fit.coefficients = b;
  fit.dispersion = phi;
  fit.covariance = s.info.ldlt().solve(MatrixXd::Identity(p + 1, p + 1));
  return fit;
}

// --- PVE ---------------------------------------------------------------------

double compute_pve(const MeanModelFit& mean_w0, const PopulationFrame& frame,
                   std::optional<double> var_y) {
  if (frame.size() < 2) throw InputError("compute_pve: frame needs at least two rows");
  std::vector<double> pred;
  pred.reserve(frame.size());
  for (const auto& ind : frame.rows()) pred.push_back(mean_w0.predict(ind.w0));
  double vy;
  if (var_y) {
    vy = *var_y;
  } else {
    std::vector<double> ys;
    for (std::size_t i : frame.pilot_ids()) ys.push_back(*frame[i].y);
    if (ys.size() < 2) {
      ys.clear();
      for (const auto& ind : frame.rows())
        if (ind.y) ys.push_back(*ind.y);
    }
    if (ys.size() < 2) throw InputError("compute_pve: not enough observed outcomes");
    vy = sample_variance(ys);
  }
  if (!(vy > 0.0)) throw InputError("compute_pve: outcome variance is zero");
  return std::clamp(sample_variance(pred) / vy, 0.0, 1.0);
}

}  // namespace twophase
