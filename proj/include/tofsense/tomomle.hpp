#pragma once

// Maximum-likelihood reconstruction of a density matrix from a binned
// homodyne sinogram with the diluted iteration rho <- N[R_d rho R_d].

#include <optional>
#include <vector>

#include "tofsense/fockstate.hpp"
#include "tofsense/synthlab.hpp"

namespace tofsense {

struct MleSettings {
  double epsilon = 0.1;
  int n_max = 23;
  double threshold_distance = 3e-4;
  double threshold_loglik = 4e-5;
  int max_iterations = 5000;

  void validate() const;

  static MleSettings thermal();   // n_max 23, thresholds 3e-4 / 4e-5
  static MleSettings squeezed();  // n_max 70, thresholds 9e-5 / 8e-6
};

struct MleResult {
  DensityMatrix rho = DensityMatrix::maximally_mixed(1);
  int iterations = 0;
  double log_likelihood = 0.0;
  double final_distance = 0.0;
  double final_loglik_change = 0.0;
  double final_epsilon = 0.0;
  bool converged_distance = false;
  bool converged_loglik = false;
  bool stalled = false;          // step size halved to nothing without gain
  bool truncation_ok = false;
  double truncation_tail = 0.0;
  bool identifiable = false;     // enough distinct phases for n_max
  std::vector<double> loglik_trace;  // one entry per accepted iterate, starting with rho^(0)

  bool converged() const { return converged_distance && converged_loglik; }
};

/// Bin overlaps for a sinogram on its common grid, packed for the
/// probability and R-operator contractions. Bins depend only on their grid
/// index, so the cache can be reused for any counts on the same grid.
class ProjectorCache {
 public:
  ProjectorCache(const Sinogram& sinogram, int n_max);
  /// Cache for the grid indices kmin..kmax of width delta at the given phases.
  ProjectorCache(const std::vector<double>& phases, double delta, long kmin, long kmax, int n_max);

  int dim() const { return dim_; }
  int quadrature_order() const { return order_; }
  long kmin() const { return kmin_; }
  long kmax() const { return kmax_; }

  /// Tr(Pi_ij rho) for every phase i and every grid bin of the cache
  /// (rows: phases, columns: grid index - kmin).
  Eigen::MatrixXd probabilities(const DensityMatrix& rho) const;

  /// (1/N) sum_ij f_ij Pi_ij / p_ij, given p = probabilities(rho).
  CMatrix r_operator(const Sinogram& counts, const Eigen::MatrixXd& p) const;

  double log_likelihood(const Sinogram& counts, const Eigen::MatrixXd& p) const;

  /// Column of the probability matrix holding bin j of phase i.
  long column(const Sinogram& counts, std::size_t phase, std::size_t bin) const;

 private:
  void build();

  int dim_;
  int order_;
  long kmin_;
  long kmax_;
  double delta_;
  std::vector<double> phases_;
  Eigen::MatrixXd q_pack_;   // (bins) x (packed upper triangle)
  Eigen::MatrixXd q_trace_;  // same with off-diagonal entries doubled
  Eigen::MatrixXd cos_;      // cos(d psi_i), rows phases, cols d = 0..dim-1
  Eigen::MatrixXd sin_;
};

CMatrix r_bin(const DensityMatrix& rho, const Sinogram& sinogram);

/// One diluted step N[R_d rho R_d] with R_d = I + eps (R_bin - I).
DensityMatrix mle_step(const DensityMatrix& rho, const Sinogram& sinogram, const MleSettings& settings);

/// Iterates from N[I] (or `warm_start`) until both thresholds are met or
/// max_iterations; eps is halved whenever a step would lower the likelihood.
MleResult reconstruct(const Sinogram& sinogram, const MleSettings& settings,
                      const std::optional<DensityMatrix>& warm_start = std::nullopt);
MleResult reconstruct(const Sinogram& sinogram, const ProjectorCache& cache, const MleSettings& settings,
                      const std::optional<DensityMatrix>& warm_start = std::nullopt);

/// sum_ij f_ij ln Tr(Pi_ij rho); -infinity if a populated bin has zero probability.
double log_likelihood(const DensityMatrix& rho, const Sinogram& sinogram);

struct BinRef {
  std::size_t phase = 0;
  std::size_t bin = 0;
};

/// First populated bin whose predicted probability is below 1e-300.
std::optional<BinRef> unsupported_bin(const DensityMatrix& rho, const Sinogram& sinogram);

/// Number of phases distinct modulo pi.
std::size_t distinct_phases(const Sinogram& sinogram);

}  // namespace tofsense
