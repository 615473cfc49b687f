#include "tofsense/tomomle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tofsense/errors.hpp"

namespace tofsense {

namespace {

constexpr double kProbabilityFloor = 1e-300;

struct Packed {
  int m, n;
};

std::vector<Packed> pack_order(int dim) {
  std::vector<Packed> out;
  out.reserve(static_cast<std::size_t>(dim) * (dim + 1) / 2);
  for (int m = 0; m < dim; ++m)
    for (int n = m; n < dim; ++n) out.push_back({m, n});
  return out;
}

long grid_index(double center, double delta) { return std::lround(center / delta); }

}  // namespace

void MleSettings::validate() const {
  if (!(epsilon > 0 && epsilon <= 1)) throw ParameterError("MLE epsilon must lie in (0, 1]");
  if (n_max < 0) throw ParameterError("MLE n_max must be >= 0");
  if (!(threshold_distance > 0) || !(threshold_loglik > 0)) throw ParameterError("MLE thresholds must be > 0");
  if (max_iterations < 1) throw ParameterError("MLE max_iterations must be >= 1");
}

MleSettings MleSettings::thermal() { return MleSettings{}; }

MleSettings MleSettings::squeezed() {
  MleSettings s;
  s.n_max = 70;
  s.threshold_distance = 9e-5;
  s.threshold_loglik = 8e-6;
  return s;
}

// ---------------------------------------------------------------------------

ProjectorCache::ProjectorCache(const Sinogram& sinogram, int n_max) : dim_(n_max + 1) {
  sinogram.validate();
  if (n_max < 0) throw ParameterError("n_max must be >= 0");
  delta_ = sinogram.delta;
  phases_ = sinogram.phases;
  kmin_ = std::numeric_limits<long>::max();
  kmax_ = std::numeric_limits<long>::min();
  for (const Histogram& h : sinogram.histograms) {
    kmin_ = std::min(kmin_, grid_index(h.centers.front(), delta_));
    kmax_ = std::max(kmax_, grid_index(h.centers.back(), delta_));
  }
  build();
}

ProjectorCache::ProjectorCache(const std::vector<double>& phases, double delta, long kmin, long kmax, int n_max)
    : dim_(n_max + 1), kmin_(kmin), kmax_(kmax), delta_(delta), phases_(phases) {
  if (n_max < 0) throw ParameterError("n_max must be >= 0");
  if (!(delta > 0) || kmax < kmin || phases.empty()) throw ParameterError("projector cache needs a non-empty grid");
  build();
}

void ProjectorCache::build() {
  // Oscillations are fastest near the origin; the outermost bins are checked
  // too because the grid may sit far off-centre for uncentred data.
  order_ = 16;
  for (long k : {0L, kmin_, kmax_}) {
    const double c = static_cast<double>(k) * delta_;
    order_ = std::max(order_, bin_quadrature_order(c - delta_ / 2, c + delta_ / 2, dim_));
  }

  const auto pk = pack_order(dim_);
  const long n_bins = kmax_ - kmin_ + 1;
  q_pack_.resize(n_bins, static_cast<Eigen::Index>(pk.size()));
  q_trace_.resize(n_bins, static_cast<Eigen::Index>(pk.size()));
  for (long b = 0; b < n_bins; ++b) {
    const double c = static_cast<double>(kmin_ + b) * delta_;
    const RMatrix q = bin_overlap(c - delta_ / 2, c + delta_ / 2, dim_, order_);
    for (std::size_t p = 0; p < pk.size(); ++p) {
      const double v = q(pk[p].m, pk[p].n);
      q_pack_(b, static_cast<Eigen::Index>(p)) = v;
      q_trace_(b, static_cast<Eigen::Index>(p)) = pk[p].m == pk[p].n ? v : 2 * v;
    }
  }

  const auto n_phase = static_cast<Eigen::Index>(phases_.size());
  cos_.resize(n_phase, dim_);
  sin_.resize(n_phase, dim_);
  for (Eigen::Index i = 0; i < n_phase; ++i) {
    const double psi = phases_[i] + pi / 2;
    for (int d = 0; d < dim_; ++d) {
      cos_(i, d) = std::cos(d * psi);
      sin_(i, d) = std::sin(d * psi);
    }
  }
}

Eigen::MatrixXd ProjectorCache::probabilities(const DensityMatrix& rho) const {
  if (rho.dim() != dim_) throw ParameterError("density matrix dimension does not match the projector cache");
  const auto pk = pack_order(dim_);
  const CMatrix& r = rho.matrix();
  // A(i, p) = Re(e^{i(m-n) psi_i} rho_nm) for the packed pair m <= n.
  Eigen::MatrixXd a(cos_.rows(), static_cast<Eigen::Index>(pk.size()));
  for (std::size_t p = 0; p < pk.size(); ++p) {
    const int d = pk[p].n - pk[p].m;
    const Complex v = r(pk[p].n, pk[p].m);
    a.col(static_cast<Eigen::Index>(p)) = cos_.col(d) * v.real() + sin_.col(d) * v.imag();
  }
  Eigen::MatrixXd out = a * q_trace_.transpose();
  return out;
}

long ProjectorCache::column(const Sinogram& counts, std::size_t phase, std::size_t bin) const {
  const long k = grid_index(counts.histograms[phase].centers[bin], delta_);
  if (k < kmin_ || k > kmax_) throw DataError("sinogram bin outside the projector cache grid");
  return k - kmin_;
}

CMatrix ProjectorCache::r_operator(const Sinogram& counts, const Eigen::MatrixXd& p) const {
  if (counts.size() != phases_.size() || std::abs(counts.delta - delta_) > 1e-12 * delta_)
    throw DataError("sinogram does not match the projector cache");
  const double total = counts.total_count();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p.rows(), p.cols());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const Histogram& h = counts.histograms[i];
    for (std::size_t j = 0; j < h.counts.size(); ++j) {
      if (h.counts[j] <= 0) continue;
      const long col = column(counts, i, j);
      const double prob = p(static_cast<Eigen::Index>(i), col);
      if (!(prob >= kProbabilityFloor))
        throw SupportError("populated bin (phase " + std::to_string(i) + ", bin " + std::to_string(j) +
                               ") has zero predicted probability",
                           i, j);
      w(static_cast<Eigen::Index>(i), col) = h.counts[j] / (total * prob);
    }
  }
  const Eigen::MatrixXd s = w * q_pack_;
  const auto pk = pack_order(dim_);
  CMatrix r(dim_, dim_);
  for (std::size_t q = 0; q < pk.size(); ++q) {
    const int d = pk[q].n - pk[q].m;
    const auto col = s.col(static_cast<Eigen::Index>(q));
    const Complex v(col.dot(cos_.col(d)), -col.dot(sin_.col(d)));
    r(pk[q].m, pk[q].n) = v;
    r(pk[q].n, pk[q].m) = std::conj(v);
  }
  return r;
}

double ProjectorCache::log_likelihood(const Sinogram& counts, const Eigen::MatrixXd& p) const {
  double sum = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const Histogram& h = counts.histograms[i];
    for (std::size_t j = 0; j < h.counts.size(); ++j) {
      if (h.counts[j] <= 0) continue;
      const double prob = p(static_cast<Eigen::Index>(i), column(counts, i, j));
      if (!(prob >= kProbabilityFloor)) return -std::numeric_limits<double>::infinity();
      sum += h.counts[j] * std::log(prob);
    }
  }
  return sum;
}

// ---------------------------------------------------------------------------

CMatrix r_bin(const DensityMatrix& rho, const Sinogram& sinogram) {
  const ProjectorCache cache(sinogram, rho.n_max());
  return cache.r_operator(sinogram, cache.probabilities(rho));
}

namespace {

DensityMatrix diluted_step(const DensityMatrix& rho, const CMatrix& r, double eps) {
  const int dim = rho.dim();
  const CMatrix rd = CMatrix::Identity(dim, dim) + eps * (r - CMatrix::Identity(dim, dim));
  return DensityMatrix::from_trusted(rd * rho.matrix() * rd);
}

}  // namespace

DensityMatrix mle_step(const DensityMatrix& rho, const Sinogram& sinogram, const MleSettings& settings) {
  settings.validate();
  return diluted_step(rho, r_bin(rho, sinogram), settings.epsilon);
}

std::size_t distinct_phases(const Sinogram& sinogram) {
  std::vector<double> reduced;
  for (double phi : sinogram.phases) {
    double r = std::fmod(phi, pi);
    if (r < 0) r += pi;
    if (pi - r < 1e-9) r = 0;
    reduced.push_back(r);
  }
  std::sort(reduced.begin(), reduced.end());
  std::size_t count = 0;
  for (std::size_t i = 0; i < reduced.size(); ++i)
    if (i == 0 || reduced[i] - reduced[i - 1] > 1e-9) ++count;
  return count;
}

MleResult reconstruct(const Sinogram& sinogram, const MleSettings& settings,
                      const std::optional<DensityMatrix>& warm_start) {
  settings.validate();
  const ProjectorCache cache(sinogram, settings.n_max);
  return reconstruct(sinogram, cache, settings, warm_start);
}

MleResult reconstruct(const Sinogram& sinogram, const ProjectorCache& cache, const MleSettings& settings,
                      const std::optional<DensityMatrix>& warm_start) {
  settings.validate();
  sinogram.validate();
  if (cache.dim() != settings.n_max + 1) throw ParameterError("projector cache built for a different n_max");
  MleResult res;
  res.identifiable = distinct_phases(sinogram) >= static_cast<std::size_t>(settings.n_max + 1);

  DensityMatrix rho = warm_start ? resize(*warm_start, cache.dim()) : DensityMatrix::maximally_mixed(cache.dim());
  Eigen::MatrixXd p = cache.probabilities(rho);
  double ll = cache.log_likelihood(sinogram, p);
  res.loglik_trace.push_back(ll);
  double eps = settings.epsilon;
  const double eps_floor = settings.epsilon * 1e-12;

  for (int it = 1; it <= settings.max_iterations; ++it) {
    const CMatrix r = cache.r_operator(sinogram, p);
    bool accepted = false;
    DensityMatrix next = rho;
    Eigen::MatrixXd p_next;
    double ll_next = ll;
    while (eps >= eps_floor) {
      next = diluted_step(rho, r, eps);
      p_next = cache.probabilities(next);
      ll_next = cache.log_likelihood(sinogram, p_next);
      if (ll_next >= ll) {
        accepted = true;
        break;
      }
      eps /= 2;
    }
    res.final_epsilon = eps;
    if (!accepted) {
      res.stalled = true;
      break;
    }
    res.final_distance = (next.matrix() - rho.matrix()).cwiseAbs().maxCoeff();
    res.final_loglik_change = std::abs(ll_next - ll) / std::abs(ll);
    rho = std::move(next);
    p = std::move(p_next);
    ll = ll_next;
    res.loglik_trace.push_back(ll);
    res.iterations = it;
    res.converged_distance = res.final_distance < settings.threshold_distance;
    res.converged_loglik = res.final_loglik_change < settings.threshold_loglik;
    if (res.converged_distance && res.converged_loglik) break;
  }

  res.log_likelihood = ll;
  res.truncation_tail = rho.tail();
  res.truncation_ok = rho.truncation_ok();
  res.rho = std::move(rho);
  return res;
}

double log_likelihood(const DensityMatrix& rho, const Sinogram& sinogram) {
  const ProjectorCache cache(sinogram, rho.n_max());
  return cache.log_likelihood(sinogram, cache.probabilities(rho));
}

std::optional<BinRef> unsupported_bin(const DensityMatrix& rho, const Sinogram& sinogram) {
  const ProjectorCache cache(sinogram, rho.n_max());
  const Eigen::MatrixXd p = cache.probabilities(rho);
  for (std::size_t i = 0; i < sinogram.size(); ++i) {
    const Histogram& h = sinogram.histograms[i];
    for (std::size_t j = 0; j < h.counts.size(); ++j)
      if (h.counts[j] > 0 && !(p(static_cast<Eigen::Index>(i), cache.column(sinogram, i, j)) >= kProbabilityFloor))
        return BinRef{i, j};
  }
  return std::nullopt;
}

}  // namespace tofsense
