#include "sprout/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sprout/grid.hpp"

namespace sprout::ot {

void SolverConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("ot.epsilon must be > 0");
    if (!(lambda > 0.0)) throw ConfigError("ot.lambda must be > 0");
    if (!(marginal_tol > 0.0)) throw ConfigError("ot.marginal_tol must be > 0");
    if (!(convergence_tol > 0.0)) throw ConfigError("ot.convergence_tol must be > 0");
    if (!(iota >= 1e6 * lambda)) throw ConfigError("ot.iota must be >= 1e6 * lambda");
    if (max_iters < 1) throw ConfigError("ot.max_iters must be >= 1");
}

Matrix cosine_cost(const Matrix& features, const Matrix& prototypes) {
    if (features.cols() != prototypes.cols())
        throw ConfigError("cosine cost: feature dimension " + std::to_string(features.cols()) +
                          " != prototype dimension " + std::to_string(prototypes.cols()));
    const Vector fn = features.rowwise().norm().cwiseMax(1e-12);
    const Vector pn = prototypes.rowwise().norm().cwiseMax(1e-12);
    Matrix cost = (features * prototypes.transpose()).array().colwise() / fn.array();
    cost = cost.array().rowwise() / pn.transpose().array();
    return (1.0 - cost.array()).cwiseMax(0.0).cwiseMin(2.0).matrix();
}

namespace {

constexpr double kAbsorbAbove = 1e30;
constexpr double kAbsorbBelow = 1e-30;

// Generalized scaling iterations with KL-type proximal operators:
//   a <- (alpha / (Q b))^fa,  b <- (beta / (Q^T a))^fb,  Q = exp(-C / eps).
// fa = 1 (fb = 1) is an equality constraint; f < 1 a KL relaxation. Scaling
// vectors are stabilized by absorbing them into dual potentials whenever they
// leave [1e-30, 1e30], so the kernel is K = exp((u + v - C) / eps).
// Rows are equality constrained; column j carries KL weight weight(j)
// (infinity = equality). When the sweeps stall, Newton steps on the dual
// finish the solve.
class ScalingSolver {
public:
    ScalingSolver(const Matrix& cost, Vector alpha, Vector beta, Vector weight, const SolverConfig& cfg)
        : C_(cost), alpha_(std::move(alpha)), beta_(std::move(beta)), weight_(std::move(weight)),
          eps_(cfg.epsilon), cfg_(cfg) {
        const auto n = C_.rows();
        const auto m = C_.cols();
        fa_ = Vector::Ones(n);
        fb_ = Vector::Ones(m);
        for (Eigen::Index j = 0; j < m; ++j)
            if (std::isfinite(weight_(j))) fb_(j) = weight_(j) / (weight_(j) + eps_);
        u_ = Vector::Zero(n);
        v_ = Vector::Zero(m);
        a_ = Vector::Ones(n);
        b_ = Vector::Ones(m);
        row_active_ = (alpha_.array() > 0.0);
        col_active_ = (beta_.array() > 0.0);
        detect_translation();
    }

    void warm_start(const Potentials& p) {
        if (p.row.size() == u_.size() && p.col.size() == v_.size() && p.row.allFinite() && p.col.allFinite()) {
            u_ = p.row;
            v_ = p.col;
            warm_ = true;
        }
    }

    void run() {
        if (!warm_) {
            // Row minima make the largest kernel entry of each row equal to 1.
            for (Eigen::Index i = 0; i < u_.size(); ++i) {
                double mn = std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < C_.cols(); ++j)
                    if (col_active_(j)) mn = std::min(mn, C_(i, j));
                u_(i) = std::isfinite(mn) ? mn : 0.0;
            }
        }
        for (Eigen::Index j = 0; j < b_.size(); ++j) {
            if (!col_active_(j)) {
                b_(j) = 0.0;
                v_(j) = 0.0;
            }
        }
        rebuild();

        Vector log_b_prev = log_true_b();
        bool newton_tried = false;
        iterations_ = 0;
        while (iterations_ < cfg_.max_iters) {
            ++iterations_;
            update_a();
            update_b();
            translate();
            const Vector log_b = log_true_b();
            double change = 0.0;
            for (Eigen::Index j = 0; j < log_b.size(); ++j)
                if (col_active_(j)) change = std::max(change, std::abs(log_b(j) - log_b_prev(j)));
            log_b_prev = log_b;
            if (change < cfg_.convergence_tol) {
                change_converged_ = true;
                break;
            }
            if (!newton_tried && iterations_ >= kSweepsBeforeNewton) {
                newton_tried = true;
                if (newton()) {
                    change_converged_ = true;
                    break;
                }
                log_b_prev = log_true_b();
            }
        }
        iterations_ = std::min(iterations_, cfg_.max_iters);
    }

    Matrix plan() const { return a_.asDiagonal() * K_ * b_.asDiagonal(); }

    bool change_converged() const { return change_converged_; }
    int iterations() const { return iterations_; }

    Vector true_a() const { return (u_.array() / eps_).exp() * a_.array(); }
    Vector true_b() const { return (v_.array() / eps_).exp() * b_.array(); }

    Potentials potentials() const {
        Potentials p{u_, v_};
        for (Eigen::Index i = 0; i < u_.size(); ++i)
            if (row_active_(i)) p.row(i) += eps_ * std::log(a_(i));
        for (Eigen::Index j = 0; j < v_.size(); ++j)
            if (col_active_(j)) p.col(j) += eps_ * std::log(b_(j));
        return p;
    }

private:
    Vector log_true_b() const {
        Vector lb(b_.size());
        for (Eigen::Index j = 0; j < b_.size(); ++j)
            lb(j) = col_active_(j) ? v_(j) / eps_ + std::log(b_(j)) : 0.0;
        return lb;
    }

    void rebuild() {
        K_ = ((-C_).colwise() + u_).rowwise() + v_.transpose();
        K_ = (K_.array() / eps_).exp();
        for (Eigen::Index j = 0; j < K_.cols(); ++j)
            if (!col_active_(j)) K_.col(j).setZero();
    }

    // log of sum_j K_ij b_j evaluated directly in log space.
    double log_row_sum(Eigen::Index i) const {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < C_.cols(); ++j)
            if (col_active_(j)) mx = std::max(mx, (u_(i) + v_(j) - C_(i, j)) / eps_ + std::log(b_(j)));
        double s = 0.0;
        for (Eigen::Index j = 0; j < C_.cols(); ++j)
            if (col_active_(j)) s += std::exp((u_(i) + v_(j) - C_(i, j)) / eps_ + std::log(b_(j)) - mx);
        return mx + std::log(s);
    }

    double log_col_sum(Eigen::Index j) const {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < C_.rows(); ++i)
            if (row_active_(i)) mx = std::max(mx, (u_(i) + v_(j) - C_(i, j)) / eps_ + std::log(a_(i)));
        double s = 0.0;
        for (Eigen::Index i = 0; i < C_.rows(); ++i)
            if (row_active_(i)) s += std::exp((u_(i) + v_(j) - C_(i, j)) / eps_ + std::log(a_(i)) - mx);
        return mx + std::log(s);
    }

    void update_a() {
        const Vector kb = K_ * b_;
        bool absorb = false;
        for (Eigen::Index i = 0; i < a_.size(); ++i) {
            if (!row_active_(i)) {
                a_(i) = 0.0;
                continue;
            }
            const double lkb = (kb(i) > 0.0 && std::isfinite(kb(i))) ? std::log(kb(i)) : log_row_sum(i);
            const double la = fa_(i) * (std::log(alpha_(i)) - lkb) + (fa_(i) - 1.0) * u_(i) / eps_;
            a_(i) = std::exp(la);
            if (!(a_(i) < kAbsorbAbove && a_(i) > kAbsorbBelow)) {
                absorb = true;
                log_a_pending_.emplace_back(i, la);
            }
        }
        if (absorb) absorb_all();
    }

    void update_b() {
        const Vector kta = K_.transpose() * a_;
        bool absorb = false;
        for (Eigen::Index j = 0; j < b_.size(); ++j) {
            if (!col_active_(j)) {
                b_(j) = 0.0;
                continue;
            }
            const double lka = (kta(j) > 0.0 && std::isfinite(kta(j))) ? std::log(kta(j)) : log_col_sum(j);
            const double lb = fb_(j) * (std::log(beta_(j)) - lka) + (fb_(j) - 1.0) * v_(j) / eps_;
            b_(j) = std::exp(lb);
            if (!(b_(j) < kAbsorbAbove && b_(j) > kAbsorbBelow)) {
                absorb = true;
                log_b_pending_.emplace_back(j, lb);
            }
        }
        if (absorb) absorb_all();
    }

    // With equality rows, equality columns and KL columns sharing one weight,
    // the dual is concave in a common shift (f + t, g - t) and the best shift
    // has a closed form. Applying it each sweep removes the slow mode of the
    // plain scaling iterations without moving the fixed point.
    void detect_translation() {
        if ((fa_.array() != 1.0).any()) return;
        double eq_mass = 0.0, f = -1.0;
        for (Eigen::Index j = 0; j < fb_.size(); ++j) {
            if (!col_active_(j)) continue;
            if (fb_(j) >= 1.0 - 1e-9) {
                eq_mass += beta_(j);
                continue;
            }
            if (f >= 0.0 && std::abs(fb_(j) - f) > 1e-15) return;
            f = fb_(j);
        }
        if (f <= 0.0) return;
        translate_mass_ = alpha_.sum() - eq_mass;
        if (!(translate_mass_ > 0.0)) return;
        translate_lambda_ = eps_ * f / (1.0 - f);
        translate_ = true;
    }

    void translate() {
        if (!translate_) return;
        // t = lambda * (log(mass) - log sum_j beta_j exp(-g_j / lambda)) over KL columns.
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> terms;
        for (Eigen::Index j = 0; j < fb_.size(); ++j) {
            if (!col_active_(j) || fb_(j) >= 1.0 - 1e-9) continue;
            const double g = v_(j) + eps_ * std::log(b_(j));
            terms.push_back(std::log(beta_(j)) - g / translate_lambda_);
            mx = std::max(mx, terms.back());
        }
        double s = 0.0;
        for (double x : terms) s += std::exp(x - mx);
        const double t = translate_lambda_ * (std::log(translate_mass_) - (mx + std::log(s)));
        if (!std::isfinite(t) || t == 0.0) return;
        u_.array() += t;
        for (Eigen::Index j = 0; j < v_.size(); ++j)
            if (col_active_(j)) v_(j) -= t;
    }

    // Dual of the regularized problem in the full potentials (f, g):
    //   sum alpha f + sum_eq beta g - sum_kl w beta expm1(-g / w) - eps sum exp((f + g - C) / eps).
    double dual(const Vector& f, const Vector& g) const {
        double val = alpha_.dot(f);
        for (Eigen::Index j = 0; j < g.size(); ++j) {
            if (!col_active_(j)) continue;
            val += std::isfinite(weight_(j)) ? -weight_(j) * beta_(j) * std::expm1(-g(j) / weight_(j)) : beta_(j) * g(j);
            for (Eigen::Index i = 0; i < f.size(); ++i) val -= eps_ * std::exp((f(i) + g(j) - C_(i, j)) / eps_);
        }
        return std::isfinite(val) ? val : -std::numeric_limits<double>::infinity();
    }

    // Newton ascent on the dual with backtracking. The Hessian is an arrow
    // matrix (diagonal row block), so each step solves a system in the
    // columns only.
    bool newton() {
        const auto n = C_.rows();
        std::vector<Eigen::Index> cols;
        for (Eigen::Index j = 0; j < C_.cols(); ++j)
            if (col_active_(j)) cols.push_back(j);
        const auto m = static_cast<Eigen::Index>(cols.size());
        if (m == 0) return false;

        Potentials p = potentials();
        Vector f = p.row;
        Vector g = p.col;
        Matrix T(n, m);
        Vector grad_f(n), grad_g(m), curv(m);
        auto evaluate = [&] {
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto j = cols[k];
                for (Eigen::Index i = 0; i < n; ++i) T(i, k) = std::exp((f(i) + g(j) - C_(i, j)) / eps_);
            }
            grad_f = alpha_ - T.rowwise().sum();
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto j = cols[k];
                const double w = weight_(j);
                const double target = std::isfinite(w) ? beta_(j) * std::exp(-g(j) / w) : beta_(j);
                grad_g(k) = target - T.col(k).sum();
                curv(k) = std::isfinite(w) ? target / w : 0.0;
            }
        };
        evaluate();
        double value = dual(f, g);

        for (int step = 0; step < kMaxNewtonSteps && iterations_ < cfg_.max_iters; ++step) {
            ++iterations_;
            const Vector r = T.rowwise().sum().cwiseMax(std::numeric_limits<double>::min());
            const Vector c = T.colwise().sum().transpose();
            // -H = [diag(r) T; T^T diag(c) + eps diag(curv)] / eps
            Matrix schur = (c + eps_ * curv).asDiagonal();
            schur -= T.transpose() * r.cwiseInverse().asDiagonal() * T;
            schur /= eps_;
            const double ridge = 1e-13 * std::max(1e-300, schur.diagonal().cwiseAbs().maxCoeff());
            schur.diagonal().array() += ridge;
            const Vector scaled_f = (grad_f.array() / r.array()).matrix();  // A^-1 grad_f, A = diag(r) / eps
            const Vector rhs = grad_g - T.transpose() * scaled_f;
            const Vector dg = schur.ldlt().solve(rhs);
            if (!dg.allFinite()) return false;
            const Vector df = (eps_ * scaled_f.array() - (T * dg).array() / r.array()).matrix();
            if (!df.allFinite()) return false;

            const double slope = grad_f.dot(df) + grad_g.dot(dg);
            if (!(slope > 0.0)) return newton_done(f, g, cols, grad_f, grad_g);
            double s = 1.0;
            Vector g_full = g;
            for (;; s *= 0.5) {
                if (s < 1e-12) return newton_done(f, g, cols, grad_f, grad_g);
                g_full = g;
                for (Eigen::Index k = 0; k < m; ++k) g_full(cols[k]) += s * dg(k);
                const double trial = dual(f + s * df, g_full);
                if (trial >= value + 1e-4 * s * slope) {
                    value = trial;
                    break;
                }
                // Rounding floor of the dual; accept a full step that
                // does not lose value.
                if (s == 1.0 && trial >= value - 1e-15 * std::abs(value)) {
                    value = trial;
                    break;
                }
            }
            f += s * df;
            g = g_full;
            evaluate();
            const double move = std::max((s * df).cwiseAbs().maxCoeff(), (s * dg).cwiseAbs().maxCoeff()) / eps_;
            if (move < cfg_.convergence_tol) return newton_done(f, g, cols, grad_f, grad_g);
        }
        return false;
    }

    bool newton_done(const Vector& f, const Vector& g, const std::vector<Eigen::Index>& cols, const Vector& grad_f,
                     const Vector& grad_g) {
        const double residual = std::max(grad_f.cwiseAbs().maxCoeff(), grad_g.cwiseAbs().maxCoeff());
        if (!(residual < cfg_.marginal_tol)) return false;
        u_ = f;
        v_.setZero();
        for (auto j : cols) v_(j) = g(j);
        for (Eigen::Index i = 0; i < a_.size(); ++i) a_(i) = row_active_(i) ? 1.0 : 0.0;
        for (Eigen::Index j = 0; j < b_.size(); ++j) b_(j) = col_active_(j) ? 1.0 : 0.0;
        rebuild();
        return true;
    }

    void absorb_all() {
        // Entries that over/underflowed keep their exact log values.
        for (Eigen::Index i = 0; i < a_.size(); ++i)
            if (row_active_(i) && a_(i) > 0.0 && std::isfinite(a_(i))) u_(i) += eps_ * std::log(a_(i));
        for (auto [i, la] : log_a_pending_)
            if (!(a_(i) > 0.0 && std::isfinite(a_(i)))) u_(i) += eps_ * la;
        for (Eigen::Index j = 0; j < b_.size(); ++j)
            if (col_active_(j) && b_(j) > 0.0 && std::isfinite(b_(j))) v_(j) += eps_ * std::log(b_(j));
        for (auto [j, lb] : log_b_pending_)
            if (!(b_(j) > 0.0 && std::isfinite(b_(j)))) v_(j) += eps_ * lb;
        log_a_pending_.clear();
        log_b_pending_.clear();
        for (Eigen::Index i = 0; i < a_.size(); ++i) a_(i) = row_active_(i) ? 1.0 : 0.0;
        for (Eigen::Index j = 0; j < b_.size(); ++j) b_(j) = col_active_(j) ? 1.0 : 0.0;
        rebuild();
    }

    static constexpr int kSweepsBeforeNewton = 200;
    static constexpr int kMaxNewtonSteps = 100;

    const Matrix& C_;
    Vector alpha_, beta_, weight_, fa_, fb_;
    double eps_;
    const SolverConfig& cfg_;
    Vector u_, v_, a_, b_;
    Matrix K_;
    Eigen::Array<bool, Eigen::Dynamic, 1> row_active_, col_active_;
    std::vector<std::pair<Eigen::Index, double>> log_a_pending_, log_b_pending_;
    bool warm_ = false;
    bool translate_ = false;
    double translate_mass_ = 0.0;
    double translate_lambda_ = 0.0;
    bool change_converged_ = false;
    int iterations_ = 0;
};

void check_cost(const Matrix& cost) {
    if (cost.rows() < 1 || cost.cols() < 1) throw ConfigError("cost matrix must be non-empty");
    if (!cost.allFinite() || (cost.array() < 0.0).any())
        throw ConfigError("cost entries must be finite and non-negative");
}

}  // namespace

BalancedPlan sinkhorn_balanced(const Matrix& cost, const Vector& mu, const Vector& nu, const SolverConfig& config) {
    config.validate();
    check_cost(cost);
    if (mu.size() != cost.rows() || nu.size() != cost.cols()) throw ConfigError("marginal sizes do not match cost");
    if ((mu.array() < 0).any() || (nu.array() < 0).any()) throw ConfigError("marginals must be non-negative");
    if (std::abs(mu.sum() - 1.0) > 1e-9 || std::abs(nu.sum() - 1.0) > 1e-9)
        throw ConfigError("marginals must each sum to 1");

    ScalingSolver solver(cost, mu, nu, Vector::Constant(nu.size(), std::numeric_limits<double>::infinity()), config);
    solver.run();

    BalancedPlan out;
    out.values = solver.plan();
    out.a = solver.true_a();
    out.b = solver.true_b();
    out.iterations = solver.iterations();
    const double row_err = (out.values.rowwise().sum() - mu).cwiseAbs().maxCoeff();
    const double col_err = (out.values.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff();
    out.converged = solver.change_converged() && row_err < config.marginal_tol && col_err < config.marginal_tol;
    return out;
}

TransportPlan solve_partial(const Matrix& cost, double rho, const SolverConfig& config, const Potentials* warm) {
    config.validate();
    check_cost(cost);
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("transport fraction rho must lie in (0, 1]");

    const auto n = cost.rows();
    const auto m = cost.cols();
    Matrix extended(n, m + 1);
    extended.leftCols(m) = cost;
    extended.col(m).setZero();

    Vector beta(m + 1);
    beta.head(m).setConstant(rho / static_cast<double>(m));
    beta(m) = std::max(0.0, 1.0 - rho);
    Vector weight(m + 1);
    weight.head(m).setConstant(config.lambda);
    weight(m) = config.iota;

    ScalingSolver solver(extended, Vector::Constant(n, 1.0 / static_cast<double>(n)), beta, weight, config);
    if (warm) solver.warm_start(*warm);
    solver.run();

    TransportPlan plan;
    plan.values = solver.plan();
    plan.rho = rho;
    plan.iterations = solver.iterations();
    plan.a = solver.true_a();
    plan.b = solver.true_b();
    plan.potentials = solver.potentials();

    const double row_err = (plan.values.rowwise().sum().array() - 1.0 / static_cast<double>(n)).abs().maxCoeff();
    const double mass_err = std::abs(plan.transported().sum() - rho);
    const double slack_err = std::abs(plan.slack().sum() - (1.0 - rho));
    plan.converged = solver.change_converged() && row_err < config.marginal_tol && mass_err < config.marginal_tol &&
                     slack_err < config.marginal_tol;
    return plan;
}

double partial_objective(const Matrix& plan, const Matrix& cost, double rho, double lambda) {
    if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) throw ConfigError("plan/cost shape mismatch");
    const double target = rho / static_cast<double>(cost.cols());
    double kl = 0.0;
    for (Eigen::Index j = 0; j < plan.cols(); ++j) {
        const double x = plan.col(j).sum();
        kl += (x > 0.0 ? x * std::log(x / target) : 0.0) - x + target;
    }
    return (plan.array() * cost.array()).sum() + lambda * kl;
}

ScanResult pot_scan(const Matrix& cost, double rho0, double stride, const StopProbe& stop,
                    const SolverConfig& config) {
    if (!(rho0 > 0.0 && rho0 < 1.0)) throw ConfigError("pot_scan: rho0 must lie in (0, 1)");
    if (!(stride > 0.0)) throw ConfigError("pot_scan: stride must be > 0");

    ScanResult result;
    std::optional<TransportPlan> previous;
    for (int step = 0;; ++step) {
        double rho = rho0 + step * stride;
        const bool last = rho >= 1.0 - 1e-12;
        if (last) rho = 1.0;

        TransportPlan plan = solve_partial(cost, rho, config, previous ? &previous->potentials : nullptr);
        result.rhos.push_back(rho);
        if (stop && stop(plan)) {
            result.stopped = true;
            if (!previous) {
                result.stopped_at_first = true;
                result.plan = std::move(plan);
            } else {
                result.plan = std::move(*previous);
            }
            return result;
        }
        if (last) {
            result.plan = std::move(plan);
            return result;
        }
        previous = std::move(plan);
    }
}

}  // namespace sprout::ot
