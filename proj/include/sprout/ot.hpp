#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace sprout::ot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SolverConfig {
    double epsilon = 0.05;     ///< entropic weight
    double lambda = 10.0;      ///< KL weight on prototype columns
    double iota = 1e9;         ///< finite stand-in for the infinite slack weight
    int max_iters = 2000;
    double marginal_tol = 1e-6;
    /// Bound on the l-inf change of log(b) between sweeps (relative change of b).
    double convergence_tol = 1e-9;

    void validate() const;
};

/// C = 1 - cos(features_i, prototypes_j). Norms are floored at 1e-12.
Matrix cosine_cost(const Matrix& features, const Matrix& prototypes);

/// Dual potentials carried between solves. Scaling vectors are
/// exp(row / epsilon) and exp(col / epsilon).
struct Potentials {
    Vector row;
    Vector col;
};

struct BalancedPlan {
    Matrix values;
    Vector a;  ///< row scaling, values = diag(a) exp(-C / eps) diag(b)
    Vector b;
    bool converged = false;
    int iterations = 0;
};

/// Entropic OT with equality marginals (generalized scaling with indicator
/// proximal operators on both sides).
BalancedPlan sinkhorn_balanced(const Matrix& cost, const Vector& mu, const Vector& nu, const SolverConfig& config);

/// N x (M + 1) coupling; the last column is the slack.
struct TransportPlan {
    Matrix values;
    double rho = 1.0;
    bool converged = false;
    int iterations = 0;
    Vector a;
    Vector b;
    Potentials potentials;

    Eigen::Index prototypes() const { return values.cols() - 1; }
    auto transported() const { return values.leftCols(values.cols() - 1); }
    auto slack() const { return values.col(values.cols() - 1); }
};

/// Partial OT through the slack-column extension: row sums fixed to 1/N,
/// prototype columns KL-relaxed toward rho/M, slack column pinned to 1 - rho.
TransportPlan solve_partial(const Matrix& cost, double rho, const SolverConfig& config,
                            const Potentials* warm_start = nullptr);

/// <T, C> + lambda * KL(T^T 1 || rho/M 1) for an N x M plan (generalized KL).
double partial_objective(const Matrix& plan, const Matrix& cost, double rho, double lambda);

using StopProbe = std::function<bool(const TransportPlan&)>;

struct ScanResult {
    TransportPlan plan;
    std::vector<double> rhos;      ///< every transport fraction that was solved
    bool stopped_at_first = false;  ///< probe fired on the initial fraction
    bool stopped = false;           ///< probe fired at some fraction
};

/// Solves rho0, rho0 + stride, ... (capped at 1) and returns the last plan
/// before the probe fires, or the rho = 1 plan.
ScanResult pot_scan(const Matrix& cost, double rho0, double stride, const StopProbe& stop, const SolverConfig& config);

}  // namespace sprout::ot
