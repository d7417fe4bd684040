#include "mspp/solver.hpp"

#include "mspp/likelihood.hpp"
#include "mspp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mspp {

void SolverOptions::validate() const {
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw ConfigError("ridge multiplier nu must be >= 0");
    if (!(objective_tolerance > 0.0) || !(gradient_tolerance > 0.0))
        throw ConfigError("solver tolerances must be > 0");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (max_step_halvings < 0) throw ConfigError("max_step_halvings must be >= 0");
}

namespace {

using Index = Eigen::Index;

/// Cholesky with an LDLT fallback for nearly singular positive semi-definite
/// blocks.
class SpdFactor {
public:
    bool compute(const Matrix& a) {
        llt_.compute(a);
        use_llt_ = llt_.info() == Eigen::Success;
        if (use_llt_) return true;
        ldlt_.compute(a);
        if (ldlt_.info() != Eigen::Success || !ldlt_.isPositive()) return false;
        const Vector d = ldlt_.vectorD();
        const double largest = d.cwiseAbs().maxCoeff();
        return d.size() == 0 || d.cwiseAbs().minCoeff() > 1e-14 * std::max(largest, 1e-300);
    }
    template <class Rhs>
    Matrix solve(const Rhs& b) const {
        return use_llt_ ? Matrix(llt_.solve(b)) : Matrix(ldlt_.solve(b));
    }

private:
    Eigen::LLT<Matrix> llt_;
    Eigen::LDLT<Matrix> ldlt_;
    bool use_llt_ = true;
};

std::uint64_t cube_third(std::uint64_t n) { return n * n * n / 3 + 1; }

/// Penalized blocks with fixed coefficients replaced by identity rows.
struct PreparedBlocks {
    std::vector<Matrix> a;
    std::vector<Matrix> b;
    std::vector<Vector> g;
    Matrix c;
    Vector h;
};

PreparedBlocks prepare(const NormalEquationBlocks& blocks, double nu) {
    PreparedBlocks out;
    const std::size_t m = blocks.species.size();
    const Index r = blocks.bias.rows();
    out.a = blocks.species;
    out.b = blocks.species_bias;
    out.g = blocks.species_gradient;
    out.c = blocks.bias;
    out.h = blocks.bias_gradient;
    for (Index j = 0; j < r; ++j) {
        if (blocks.bias_free[static_cast<std::size_t>(j)]) {
            out.c(j, j) += nu;
            continue;
        }
        out.c.row(j).setZero();
        out.c.col(j).setZero();
        out.c(j, j) = 1.0;
        out.h[j] = 0.0;
        for (auto& bk : out.b) bk.col(j).setZero();
    }
    for (std::size_t k = 0; k < m; ++k) {
        Matrix& a = out.a[k];
        for (Index j = 0; j < a.rows(); ++j) {
            const auto jj = static_cast<std::size_t>(j);
            if (blocks.species_free[k][jj]) {
                if (blocks.species_penalized[k][jj]) a(j, j) += nu;
                continue;
            }
            a.row(j).setZero();
            a.col(j).setZero();
            a(j, j) = 1.0;
            out.b[k].row(j).setZero();
            out.g[k][j] = 0.0;
        }
    }
    return out;
}

struct Elimination {
    std::vector<SpdFactor> factors;
    std::vector<Matrix> regression;  // A_k^{-1} B_k
    SpdFactor schur;
    Matrix schur_matrix;
};

Elimination eliminate(const PreparedBlocks& pb, OperationCount* ops) {
    const std::size_t m = pb.a.size();
    const Index r = pb.c.rows();
    const auto ru = static_cast<std::uint64_t>(r);
    Elimination e;
    e.factors.resize(m);
    e.regression.resize(m);
    e.schur_matrix = pb.c;
    for (std::size_t k = 0; k < m; ++k) {
        const auto d = static_cast<std::uint64_t>(pb.a[k].rows());
        if (!e.factors[k].compute(pb.a[k]))
            throw SingularSystemError("species block " + std::to_string(k + 1) +
                                      " of the normal equations is singular");
        e.regression[k] = e.factors[k].solve(pb.b[k]);
        if (r > 0) e.schur_matrix.noalias() -= pb.b[k].transpose() * e.regression[k];
        if (ops) {
            ops->factorization += cube_third(d) + 2 * d * d * ru;
            ops->schur += d * ru * ru;
        }
    }
    if (r > 0 && !e.schur.compute(e.schur_matrix))
        throw SingularSystemError("shared bias block (Schur complement) is singular");
    if (ops) ops->schur += cube_third(ru);
    return e;
}

} // namespace

BlockStep newton_step(const NormalEquationBlocks& blocks, double nu, OperationCount* ops) {
    const PreparedBlocks pb = prepare(blocks, nu);
    const Elimination e = eliminate(pb, ops);
    const std::size_t m = pb.a.size();
    const Index r = pb.c.rows();

    std::vector<Vector> reduced(m);  // A_k^{-1} g_k
    Vector rhs = pb.h;
    for (std::size_t k = 0; k < m; ++k) {
        reduced[k] = e.factors[k].solve(pb.g[k]);
        if (r > 0) rhs.noalias() -= pb.b[k].transpose() * reduced[k];
        if (ops) {
            const auto d = static_cast<std::uint64_t>(pb.a[k].rows());
            ops->schur += 2 * d * d + d * static_cast<std::uint64_t>(r);
        }
    }
    BlockStep step;
    step.bias = r > 0 ? Vector(e.schur.solve(rhs)) : Vector();
    step.species.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        step.species[k] = reduced[k];
        if (r > 0) step.species[k].noalias() -= e.regression[k] * step.bias;
    }
    return step;
}

InformationBlocks invert_information(const NormalEquationBlocks& blocks, double nu,
                                     const ParameterLayout& layout) {
    const PreparedBlocks pb = prepare(blocks, nu);
    const Elimination e = eliminate(pb, nullptr);
    InformationBlocks info;
    const std::size_t m = pb.a.size();
    for (std::size_t k = 0; k < m; ++k) {
        info.species_indices.push_back(layout.species_block(k));
        const auto d = pb.a[k].rows();
        info.species_inverse.push_back(e.factors[k].solve(Matrix::Identity(d, d)));
    }
    info.bias_indices = layout.bias_block();
    info.species = pb.a;
    info.species_bias = pb.b;
    info.bias = pb.c;
    info.regression = e.regression;
    const Index r = pb.c.rows();
    info.schur_inverse = r > 0 ? e.schur.solve(Matrix::Identity(r, r)) : Matrix(0, 0);
    return info;
}

FreeParameters free_parameters(const BlockDesign& design, const std::vector<std::string>& species,
                               const ModelOptions& model) {
    const ParameterLayout& layout = design.layout();
    FreeParameters free;
    free.coefficient.assign(layout.size(), false);
    free.anchored.assign(layout.m(), false);
    bool any_po = false;
    for (SpeciesId k = 0; k < layout.m(); ++k) {
        const bool pa = design.has_pa(k);
        const bool po = design.po_active(k);
        if (!pa && !po) {
            const std::string name = k < species.size() ? species[k] : std::to_string(k + 1);
            throw UnidentifiableError("species " + name +
                                      " has neither survey responses nor presence records");
        }
        free.anchored[k] = pa;
        any_po = any_po || po;
        free.coefficient[layout.alpha(k)] = true;
        for (std::size_t j = 0; j < layout.p(); ++j) free.coefficient[layout.beta(k, j)] = true;
        // alpha_k + gamma_k is all presence-only data can identify.
        free.coefficient[layout.gamma(k)] = pa && po && model.bias_terms;
        for (std::size_t n : layout.interactions_of(k))
            free.coefficient[layout.interaction(n)] = po && model.bias_terms;
    }
    for (std::size_t j = 0; j < layout.r(); ++j)
        free.coefficient[layout.delta(j)] = any_po && model.bias_terms;
    return free;
}

NormalEquationBlocks assemble_blocks(const BlockDesign& design, const CoefficientSet& theta,
                                     const FreeParameters& free, double nu, unsigned threads,
                                     OperationCount* ops) {
    const ParameterLayout& layout = design.layout();
    const std::size_t m = layout.m();
    const Index p = static_cast<Index>(layout.p());
    const Index r = static_cast<Index>(layout.r());
    const Vector flat = theta.flatten();
    const Vector& M = design.linear_term();
    const bool binary = design.pa_kind() == ResponseKind::binary;

    NormalEquationBlocks blocks;
    blocks.species.resize(m);
    blocks.species_bias.resize(m);
    blocks.species_gradient.resize(m);
    blocks.species_penalized.resize(m);
    blocks.species_free.resize(m);
    std::vector<Matrix> bias_parts(m);
    std::vector<Vector> bias_grad_parts(m);
    std::vector<std::uint64_t> assembly_ops(m, 0);

    parallel_for(m, threads, [&](std::size_t k) {
        const auto kk = static_cast<Index>(k);
        const std::vector<std::size_t> idx = layout.species_block(k);
        const Index d = static_cast<Index>(idx.size());
        Matrix a = Matrix::Zero(d, d);
        Matrix b = Matrix::Zero(d, r);
        Matrix c = Matrix::Zero(r, r);
        Vector g = Vector::Zero(d);
        Vector h = Vector::Zero(r);
        std::uint64_t count = 0;

        if (design.has_pa(k)) {
            const Vector eta = pa_predictor(design, theta, k);
            const Index n = eta.size();
            Vector d1(n), w(n);
            for (Index i = 0; i < n; ++i) {
                if (design.pa_observed()(i, kk) == 0.0) {
                    d1[i] = w[i] = 0.0;
                    continue;
                }
                checked_exp(eta[i], "survey site", static_cast<std::size_t>(i));
                const double y = design.pa_response()(i, kk);
                const RowTerms t = binary ? family::cloglog_bernoulli(eta[i], y)
                                          : family::poisson_log(eta[i], y);
                d1[i] = t.d1;
                w[i] = -t.d2;
            }
            const Matrix& x1 = design.pa_features();
            const Matrix wx = x1.array().colwise() * w.array();
            a.topLeftCorner(p + 1, p + 1).noalias() += x1.transpose() * wx;
            g.head(p + 1).noalias() += x1.transpose() * d1;
            const auto q = static_cast<std::uint64_t>(p + 1);
            count += static_cast<std::uint64_t>(n) * (q * (q + 1) / 2 + q);
        }
        if (design.po_active(k)) {
            const Vector eta = bg_predictor(design, theta, k);
            for (Index i = 0; i < eta.size(); ++i)
                checked_exp(eta[i], "background point", static_cast<std::size_t>(i));
            const Vector wmu = (design.bg_weight().array() * eta.array().exp()).matrix();
            const Matrix features = design.species_bg_features(k);
            const Matrix& z = design.bg_bias();
            const Matrix wf = features.array().colwise() * wmu.array();
            a.noalias() += features.transpose() * wf;
            g.noalias() -= features.transpose() * wmu;
            if (r > 0) {
                b.noalias() += wf.transpose() * z;
                const Matrix wz = z.array().colwise() * wmu.array();
                c.noalias() += z.transpose() * wz;
                h.noalias() -= z.transpose() * wmu;
            }
            const auto du = static_cast<std::uint64_t>(d);
            const auto ru = static_cast<std::uint64_t>(r);
            count += static_cast<std::uint64_t>(eta.size()) *
                     (du * (du + 1) / 2 + du * ru + ru * (ru + 1) / 2 + du + ru);
        }

        std::vector<std::uint8_t> penalized(idx.size()), is_free(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto jj = static_cast<Index>(j);
            const auto gi = static_cast<Index>(idx[j]);
            g[jj] += M[gi];
            penalized[j] = layout.penalized(idx[j]) ? 1 : 0;
            is_free[j] = free.coefficient[idx[j]] ? 1 : 0;
            if (penalized[j]) g[jj] -= nu * flat[gi];
        }
        blocks.species[k] = std::move(a);
        blocks.species_bias[k] = std::move(b);
        blocks.species_gradient[k] = std::move(g);
        blocks.species_penalized[k] = std::move(penalized);
        blocks.species_free[k] = std::move(is_free);
        bias_parts[k] = std::move(c);
        bias_grad_parts[k] = std::move(h);
        assembly_ops[k] = count;
    });

    // Fixed-order reduction keeps results independent of the thread count.
    blocks.bias = Matrix::Zero(r, r);
    blocks.bias_gradient = Vector::Zero(r);
    for (std::size_t k = 0; k < m; ++k) {
        blocks.bias += bias_parts[k];
        blocks.bias_gradient += bias_grad_parts[k];
        if (ops) ops->assembly += assembly_ops[k];
    }
    blocks.bias_free.resize(static_cast<std::size_t>(r));
    for (Index j = 0; j < r; ++j) {
        const auto gi = static_cast<Index>(layout.delta(static_cast<std::size_t>(j)));
        blocks.bias_gradient[j] += M[gi] - nu * flat[gi];
        blocks.bias_free[static_cast<std::size_t>(j)] = free.coefficient[static_cast<std::size_t>(gi)] ? 1 : 0;
    }
    return blocks;
}

namespace {

double free_gradient_max(const NormalEquationBlocks& blocks) {
    double gmax = 0.0;
    for (std::size_t k = 0; k < blocks.species_gradient.size(); ++k)
        for (Index j = 0; j < blocks.species_gradient[k].size(); ++j)
            if (blocks.species_free[k][static_cast<std::size_t>(j)])
                gmax = std::max(gmax, std::abs(blocks.species_gradient[k][j]));
    for (Index j = 0; j < blocks.bias_gradient.size(); ++j)
        if (blocks.bias_free[static_cast<std::size_t>(j)])
            gmax = std::max(gmax, std::abs(blocks.bias_gradient[j]));
    return gmax;
}

Vector flatten_step(const BlockStep& step, const ParameterLayout& layout) {
    Vector flat = Vector::Zero(static_cast<Index>(layout.size()));
    for (SpeciesId k = 0; k < layout.m(); ++k) {
        const auto idx = layout.species_block(k);
        for (std::size_t j = 0; j < idx.size(); ++j)
            flat[static_cast<Index>(idx[j])] = step.species[k][static_cast<Index>(j)];
    }
    for (std::size_t j = 0; j < layout.r(); ++j)
        flat[static_cast<Index>(layout.delta(j))] = step.bias[static_cast<Index>(j)];
    return flat;
}

CoefficientSet initial_coefficients(const BlockDesign& design, const FreeParameters& free) {
    const ParameterLayout& layout = design.layout();
    CoefficientSet theta = CoefficientSet::zeros(layout);
    const double bg_weight = design.bg_weight().sum();
    for (SpeciesId k = 0; k < layout.m(); ++k) {
        const auto kk = static_cast<Index>(k);
        const double po_rate =
            design.po_active(k) ? std::log(static_cast<double>(design.n_presence(k)) / bg_weight) : 0.0;
        if (design.has_pa(k)) {
            const Vector obs = design.pa_observed().col(kk);
            const double n = obs.sum();
            const double total_y = obs.dot(design.pa_response().col(kk));
            const double total_area = obs.dot(design.pa_offset().array().exp().matrix());
            double mean_count;
            if (design.pa_kind() == ResponseKind::binary) {
                const double rate = (total_y + 0.5) / (n + 1.0);
                mean_count = -std::log1p(-rate) * n;
            } else {
                mean_count = total_y + 0.5;
            }
            theta.alpha[kk] = std::log(mean_count / total_area);
            if (free.coefficient[layout.gamma(k)]) theta.gamma[kk] = po_rate - theta.alpha[kk];
        } else {
            theta.alpha[kk] = po_rate;
        }
    }
    return theta;
}

Vector standard_errors(const InformationBlocks& info, const FreeParameters& free,
                       const ParameterLayout& layout) {
    Vector se = Vector::Constant(static_cast<Index>(layout.size()),
                                 std::numeric_limits<double>::quiet_NaN());
    const bool has_bias = info.schur_inverse.size() > 0;
    for (std::size_t k = 0; k < info.species_indices.size(); ++k) {
        Vector var = info.species_inverse[k].diagonal();
        if (has_bias) {
            const Matrix gs = info.regression[k] * info.schur_inverse;
            var += (gs.array() * info.regression[k].array()).rowwise().sum().matrix();
        }
        const auto& idx = info.species_indices[k];
        for (std::size_t j = 0; j < idx.size(); ++j)
            if (free.coefficient[idx[j]])
                se[static_cast<Index>(idx[j])] = std::sqrt(std::max(var[static_cast<Index>(j)], 0.0));
    }
    for (std::size_t j = 0; j < info.bias_indices.size(); ++j)
        if (free.coefficient[info.bias_indices[j]])
            se[static_cast<Index>(info.bias_indices[j])] =
                std::sqrt(std::max(info.schur_inverse(static_cast<Index>(j), static_cast<Index>(j)), 0.0));
    return se;
}

FitResult run_newton(const BlockDesign& design, const SolverOptions& options,
                     const FreeParameters& free, CoefficientSet theta) {
    const ParameterLayout& layout = design.layout();
    const double nu = options.nu;
    const unsigned threads = resolve_threads(options.threads);

    // Fixed coefficients stay at zero.
    Vector flat = theta.flatten();
    for (std::size_t i = 0; i < layout.size(); ++i)
        if (!free.coefficient[i]) flat[static_cast<Index>(i)] = 0.0;
    theta = CoefficientSet::unflatten(layout, flat);

    FitResult result;
    double objective = design_objective(design, theta, nu);
    result.deviance_trace.push_back(-2.0 * objective);
    OperationCount iteration_ops;
    NormalEquationBlocks blocks = assemble_blocks(design, theta, free, nu, threads, &iteration_ops);
    double relative_change = std::numeric_limits<double>::infinity();
    int iteration = 0;
    for (;;) {
        const double gmax = free_gradient_max(blocks);
        result.gradient_max_norm = gmax;
        if (iteration > 0 && relative_change < options.objective_tolerance &&
            gmax < options.gradient_tolerance) {
            result.converged = true;
            break;
        }
        if (iteration >= options.max_iterations) {
            result.message = "maximum iterations reached";
            break;
        }
        const BlockStep block_step = newton_step(blocks, nu, &iteration_ops);
        double predicted_gain = block_step.bias.size() > 0 ? blocks.bias_gradient.dot(block_step.bias) : 0.0;
        for (std::size_t k = 0; k < block_step.species.size(); ++k)
            predicted_gain += blocks.species_gradient[k].dot(block_step.species[k]);
        predicted_gain *= 0.5;
        const Vector step = flatten_step(block_step, layout);
        result.operations_per_iteration = iteration_ops;
        result.operations_total += iteration_ops;
        iteration_ops = {};

        double scale = 1.0;
        bool accepted = false;
        CoefficientSet trial;
        double trial_objective = objective;
        for (int halving = 0; halving <= options.max_step_halvings; ++halving, scale *= 0.5) {
            trial = CoefficientSet::unflatten(layout, flat + scale * step);
            try {
                trial_objective = design_objective(design, trial, nu);
            } catch (const OverflowError&) {
                continue;
            }
            // A gain below the rounding level of F cannot be seen by comparing
            // objectives; the full Newton step is taken as is.
            const bool invisible = halving == 0 && predicted_gain < 1e-12 * std::max(std::abs(objective), 1.0);
            if (trial_objective >= objective || invisible) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (gmax < options.gradient_tolerance) {
                result.converged = true;
                result.message = "objective cannot be improved further";
            } else {
                result.message = "step halving failed to improve the objective";
            }
            break;
        }
        ++iteration;
        relative_change = std::abs(trial_objective - objective) / std::max(std::abs(trial_objective), 1.0);
        theta = std::move(trial);
        flat = theta.flatten();
        objective = trial_objective;
        result.deviance_trace.push_back(-2.0 * objective);
        blocks = assemble_blocks(design, theta, free, nu, threads, &iteration_ops);
    }

    result.iterations = iteration;
    result.theta = theta;
    result.objective = objective;
    result.penalty = ridge_penalty(theta, nu);
    result.loglik = objective + result.penalty;
    result.negloglik = -result.loglik;
    result.estimated = free.coefficient;
    result.anchored = free.anchored;
    result.information = invert_information(blocks, nu, layout);
    result.standard_errors = standard_errors(result.information, free, layout);
    return result;
}

} // namespace

FitResult fit_from(const DataBundle& data, const SolverOptions& options, const ModelOptions& model,
                   const CoefficientSet& start) {
    options.validate();
    const BlockDesign design = build_design(data, model.interactions);
    if (!(start.layout == design.layout()))
        throw DimensionError("starting coefficients do not match the model layout");
    const FreeParameters free = free_parameters(design, data.species, model);
    return run_newton(design, options, free, start);
}

FitResult fit(const DataBundle& data, const SolverOptions& options, const ModelOptions& model) {
    options.validate();
    const BlockDesign design = build_design(data, model.interactions);
    const FreeParameters free = free_parameters(design, data.species, model);
    return run_newton(design, options, free, initial_coefficients(design, free));
}

double WaldRegion::radius_squared() const { return -2.0 * std::log1p(-level); }

double WaldRegion::area() const {
    return std::numbers::pi * radius_squared() * std::sqrt(covariance.determinant());
}

bool WaldRegion::contains(const Eigen::Vector2d& point) const {
    const Eigen::Vector2d diff = point - center;
    return diff.dot(covariance.ldlt().solve(diff)) <= radius_squared();
}

WaldRegion wald_region(const FitResult& fit, std::size_t first, std::size_t second, double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    for (std::size_t i : {first, second})
        if (i >= fit.estimated.size() || !fit.estimated[i])
            throw NumericalError("coefficient " + std::to_string(i) + " was not estimated");
    const std::array<std::size_t, 2> idx = {first, second};
    WaldRegion region;
    region.coefficients = idx;
    const Vector flat = fit.theta.flatten();
    region.center = {flat[static_cast<Index>(first)], flat[static_cast<Index>(second)]};
    region.covariance = fit.information.covariance(std::span<const std::size_t>(idx));
    region.level = level;
    Eigen::LLT<Eigen::Matrix2d> check(region.covariance);
    if (check.info() != Eigen::Success)
        throw NumericalError("information is singular for the requested coefficients");
    return region;
}

} // namespace mspp
