// Latent-Gaussian point-process and mark models.
//
// The landslide intensity surface is modelled as a log-linear combination of
// covariate effects: fixed slopes, i.i.d. categorical effects, and
// second-order random-walk (RW2) smooths over binned covariates. The Poisson
// point-process likelihood is discretized with Berman-Turner quadrature
// (observed points contribute log lambda, quadrature points contribute
// -w*lambda); log sizes use a Gaussian likelihood with a shared noise
// precision. Inference is an empirical-Bayes Laplace approximation: an inner
// Newton solve for the latent mode at fixed hyperparameters, an outer
// coordinate golden-section search over block log-precisions, and sum-to-zero
// constraints on each random-effect block enforced by conditioning by
// kriging.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "incise/csv.hpp"
#include "incise/errors.hpp"
#include "incise/mesh.hpp"
#include "incise/raster.hpp"
#include "incise/util.hpp"

namespace incise {

enum class Transform { identity, log, log1p, sqrt, exp_neg };
enum class EffectKind { linear, iid, rw2 };
enum class Response { centroids, log_sizes };

struct TermSpec {
    std::string covariate;
    Transform transform = Transform::identity;
    EffectKind kind = EffectKind::linear;
    int n_bins = 25;  // rw2 only
};

struct ModelSpec {
    std::string name = "custom";
    Response response = Response::centroids;
    bool intercept = true;
    std::vector<TermSpec> terms;
};

// Point locations in meters with optional marks (log sizes).
struct PointData {
    std::vector<double> x, y;
    std::vector<double> marks;
    std::size_t size() const { return x.size(); }
    bool has_marks() const { return !marks.empty(); }
};

inline double apply_transform(Transform t, double v) {
    switch (t) {
        case Transform::identity: return v;
        case Transform::log: return std::log(v);
        case Transform::log1p: return std::log1p(v);
        case Transform::sqrt: return std::sqrt(v);
        case Transform::exp_neg: return std::exp(-v);
    }
    return v;
}

inline const char* transform_name(Transform t) {
    switch (t) {
        case Transform::identity: return "identity";
        case Transform::log: return "log";
        case Transform::log1p: return "log1p";
        case Transform::sqrt: return "sqrt";
        case Transform::exp_neg: return "exp_neg";
    }
    return "identity";
}

// Named covariate rasters; lookups sample the nearest cell so layers needn't
// share one grid.
class CovariateStack {
  public:
    void add(const std::string& name, Raster<double> layer) {
        for (auto& kv : layers_)
            if (kv.first == name) {
                kv.second = std::move(layer);
                return;
            }
        layers_.emplace_back(name, std::move(layer));
    }

    const Raster<double>* find(const std::string& name) const {
        for (const auto& kv : layers_)
            if (kv.first == name) return &kv.second;
        return nullptr;
    }

    // nearest-cell sample; NaN for nodata or out-of-grid locations
    double sample(const std::string& name, double x, double y) const {
        const Raster<double>* r = find(name);
        if (!r) throw ConfigError("unknown covariate '" + name + "'");
        const double v = r->sample_at(x, y);
        return r->value_is_nodata(v) ? std::numeric_limits<double>::quiet_NaN() : v;
    }

    const std::vector<std::pair<std::string, Raster<double>>>& layers() const { return layers_; }

  private:
    std::vector<std::pair<std::string, Raster<double>>> layers_;
};

inline std::vector<std::string> preset_names() {
    return {"fit1a", "fit2a", "fit3a", "fit4a", "fit5a", "fit6a",
            "fit1b", "fit2b", "fit3b", "fit4b", "fit5b", "fit6b"};
}

// Model formula presets. Every preset carries an intercept plus i.i.d.
// land-cover and geology effects; the 'a' family models centroid intensity
// with an RW2 smooth on PGA, the 'b' family models log sizes with log(PGA)
// as a fixed effect.
inline ModelSpec preset_model(const std::string& name) {
    ModelSpec spec;
    spec.name = name;
    spec.intercept = true;
    const bool size_family = !name.empty() && name.back() == 'b';
    spec.response = size_family ? Response::log_sizes : Response::centroids;
    if (size_family)
        spec.terms.push_back({"pga", Transform::log, EffectKind::linear, 0});
    else
        spec.terms.push_back({"pga", Transform::identity, EffectKind::rw2, 25});

    if (name == "fit1a" || name == "fit1b")
        spec.terms.push_back({"ksn", Transform::log1p, EffectKind::linear, 0});
    else if (name == "fit2a" || name == "fit2b")
        spec.terms.push_back({"ksn", Transform::sqrt, EffectKind::rw2, 25});
    else if (name == "fit3a" || name == "fit3b")
        spec.terms.push_back({"ksn", Transform::log1p, EffectKind::rw2, 25});
    else if (name == "fit4a" || name == "fit4b")
        spec.terms.push_back({"dem", Transform::identity, EffectKind::linear, 0});
    else if (name == "fit5a") {
        spec.terms.push_back({"ksn", Transform::log1p, EffectKind::rw2, 25});
        spec.terms.push_back({"rf2ch", Transform::exp_neg, EffectKind::linear, 0});
    } else if (name == "fit6a") {
        spec.terms.push_back({"ksn", Transform::log1p, EffectKind::rw2, 25});
        spec.terms.push_back({"fd2ch", Transform::exp_neg, EffectKind::linear, 0});
    } else if (name == "fit5b")
        spec.terms.push_back({"rf2ch", Transform::identity, EffectKind::linear, 0});
    else if (name == "fit6b")
        spec.terms.push_back({"fd2ch", Transform::identity, EffectKind::linear, 0});
    else if (name != "fit1a" && name != "fit1b") {
        std::string valid;
        for (const auto& p : preset_names()) valid += (valid.empty() ? "" : ", ") + p;
        throw ConfigError("unknown model preset '" + name + "' (valid: " + valid + ")");
    }

    spec.terms.push_back({"landcover", Transform::identity, EffectKind::iid, 0});
    spec.terms.push_back({"geology", Transform::identity, EffectKind::iid, 0});
    return spec;
}

// Q = D2' D2 for the (n-2) x n second-difference operator D2. Null space is
// exactly the constant and linear vectors.
inline Eigen::MatrixXd rw2_structure(int n_bins) {
    if (n_bins < 5) throw ConfigError("rw2 smooth needs at least 5 bins, got " + std::to_string(n_bins));
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_bins - 2, n_bins);
    for (int r = 0; r < n_bins - 2; ++r) {
        d(r, r) = 1.0;
        d(r, r + 1) = -2.0;
        d(r, r + 2) = 1.0;
    }
    return d.transpose() * d;
}

struct LatentBlock {
    enum class Type { fixed, iid, rw2 };
    Type type = Type::fixed;
    std::string label;
    std::string covariate;  // empty for the intercept
    Transform transform = Transform::identity;
    int offset = 0;
    int size = 1;
    double fixed_prec = 0.0;       // fixed blocks only
    std::vector<double> levels;    // iid: category codes seen in training
    double bin_lo = 0.0, bin_w = 0.0;  // rw2 binning on the transformed scale
    int hyper_index = -1;          // log-precision slot; -1 for fixed blocks
};

struct LatentModel {
    ModelSpec spec;
    std::vector<LatentBlock> blocks;
    int n_latent = 0;
    int n_hyper = 0;  // block log-precisions, plus one noise precision for gaussian
    Eigen::SparseMatrix<double, Eigen::RowMajor> design;
    std::vector<char> is_point;   // centroid rows vs quadrature rows
    std::vector<double> weight;   // quadrature weights in km^2 (0 for point rows)
    std::vector<double> gauss_y;  // response for gaussian rows
    Eigen::MatrixXd constraints;  // one sum-to-zero row per iid/rw2 block
    long dropped_points = 0;      // points lost to nodata or invalid transforms
    double dropped_weight = 0.0;  // quadrature weight lost, m^2
};

namespace detail {

// entries of one design row for a location; false when any covariate is
// nodata or its transform is undefined there
inline bool design_row(const std::vector<LatentBlock>& blocks, const CovariateStack& cov,
                       double x, double y, std::vector<std::pair<int, double>>& out,
                       std::map<std::string, long>* unseen) {
    out.clear();
    for (const auto& b : blocks) {
        if (b.covariate.empty()) {
            out.emplace_back(b.offset, 1.0);
            continue;
        }
        const double raw = cov.sample(b.covariate, x, y);
        const double t = apply_transform(b.transform, raw);
        if (!std::isfinite(t)) return false;
        switch (b.type) {
            case LatentBlock::Type::fixed:
                out.emplace_back(b.offset, t);
                break;
            case LatentBlock::Type::iid: {
                auto it = std::lower_bound(b.levels.begin(), b.levels.end(), t);
                if (it != b.levels.end() && *it == t) {
                    out.emplace_back(b.offset + static_cast<int>(it - b.levels.begin()), 1.0);
                } else if (unseen) {
                    ++(*unseen)[b.label];  // unseen level: effect 0
                } else {
                    return false;
                }
                break;
            }
            case LatentBlock::Type::rw2: {
                int k = b.bin_w > 0.0 ? static_cast<int>(std::floor((t - b.bin_lo) / b.bin_w)) : 0;
                k = std::clamp(k, 0, b.size - 1);
                out.emplace_back(b.offset + k, 1.0);
                break;
            }
        }
    }
    return true;
}

}  // namespace detail

// Assemble the observation-by-latent design, the latent block layout, and the
// sum-to-zero constraints from training data. Centroid models get one row per
// observed point and one per quadrature point; log-size models one row per
// marked point. Rows with nodata covariates are dropped and counted.
inline LatentModel build_design(const ModelSpec& spec, const PointData& pts, const Quadrature& quad,
                                const CovariateStack& cov) {
    const bool gaussian = spec.response == Response::log_sizes;
    if (gaussian && pts.size() > 0 && !pts.has_marks())
        throw DataError("log-size response requires marks on every point");

    struct Loc { double x, y; bool is_point; double w; double mark; };
    std::vector<Loc> locs;
    for (std::size_t i = 0; i < pts.size(); ++i)
        locs.push_back({pts.x[i], pts.y[i], true, 0.0, gaussian ? pts.marks[i] : 0.0});
    if (!gaussian)
        for (std::size_t k = 0; k < quad.x.size(); ++k)
            locs.push_back({quad.x[k], quad.y[k], false, quad.w[k], 0.0});

    // transformed covariate values per term at every training location
    const std::size_t n_terms = spec.terms.size();
    std::vector<std::vector<double>> tv(n_terms, std::vector<double>(locs.size()));
    std::vector<char> valid(locs.size(), 1);
    for (std::size_t t = 0; t < n_terms; ++t) {
        bool any = false;
        for (std::size_t r = 0; r < locs.size(); ++r) {
            const double v = apply_transform(spec.terms[t].transform,
                                             cov.sample(spec.terms[t].covariate, locs[r].x, locs[r].y));
            tv[t][r] = v;
            if (std::isfinite(v))
                any = true;
            else
                valid[r] = 0;
        }
        if (!locs.empty() && !any)
            throw ConfigError("covariate '" + spec.terms[t].covariate + "' has no valid values over the data");
    }

    LatentModel lm;
    lm.spec = spec;

    // latent layout
    auto unique_label = [&lm](const std::string& base) {
        std::string label = base;
        int k = 2;
        for (const auto& b : lm.blocks)
            if (b.label == label) label = base + "_" + std::to_string(k++);
        return label;
    };
    if (spec.intercept) {
        LatentBlock b;
        b.type = LatentBlock::Type::fixed;
        b.label = "intercept";
        b.offset = lm.n_latent;
        b.size = 1;
        b.fixed_prec = 0.0;
        lm.blocks.push_back(b);
        lm.n_latent += 1;
    }
    for (std::size_t t = 0; t < n_terms; ++t) {
        const TermSpec& term = spec.terms[t];
        LatentBlock b;
        b.covariate = term.covariate;
        b.transform = term.transform;
        b.label = unique_label(term.covariate);
        b.offset = lm.n_latent;
        switch (term.kind) {
            case EffectKind::linear:
                b.type = LatentBlock::Type::fixed;
                b.size = 1;
                b.fixed_prec = 0.001;
                break;
            case EffectKind::iid: {
                b.type = LatentBlock::Type::iid;
                for (std::size_t r = 0; r < locs.size(); ++r)
                    if (valid[r]) b.levels.push_back(tv[t][r]);
                std::sort(b.levels.begin(), b.levels.end());
                b.levels.erase(std::unique(b.levels.begin(), b.levels.end()), b.levels.end());
                if (b.levels.empty()) throw DataError("categorical covariate '" + term.covariate + "' has no levels");
                b.size = static_cast<int>(b.levels.size());
                b.hyper_index = lm.n_hyper++;
                break;
            }
            case EffectKind::rw2: {
                b.type = LatentBlock::Type::rw2;
                if (term.n_bins < 5)
                    throw ConfigError("rw2 smooth needs at least 5 bins, got " + std::to_string(term.n_bins));
                double lo = std::numeric_limits<double>::infinity(), hi = -lo;
                for (std::size_t r = 0; r < locs.size(); ++r)
                    if (valid[r]) {
                        lo = std::min(lo, tv[t][r]);
                        hi = std::max(hi, tv[t][r]);
                    }
                if (!std::isfinite(lo)) throw DataError("covariate '" + term.covariate + "' has no valid values");
                if (hi <= lo)
                    throw DataError("covariate '" + term.covariate + "' is constant; cannot bin a smooth effect");
                b.size = term.n_bins;
                b.bin_lo = lo;
                b.bin_w = (hi - lo) / term.n_bins;
                b.hyper_index = lm.n_hyper++;
                break;
            }
        }
        lm.blocks.push_back(b);
        lm.n_latent += b.size;
    }
    if (gaussian) lm.n_hyper += 1;  // shared noise precision, last slot

    // design rows over valid locations
    std::vector<Eigen::Triplet<double>> trips;
    int row = 0;
    for (std::size_t r = 0; r < locs.size(); ++r) {
        if (!valid[r]) {
            if (locs[r].is_point)
                ++lm.dropped_points;
            else
                lm.dropped_weight += locs[r].w;
            continue;
        }
        for (const auto& b : lm.blocks) {
            if (b.covariate.empty()) {
                trips.emplace_back(row, b.offset, 1.0);
                continue;
            }
            // term index for this block: blocks after the optional intercept
            // parallel spec.terms order
            const std::size_t t = static_cast<std::size_t>(&b - lm.blocks.data()) - (spec.intercept ? 1u : 0u);
            const double v = tv[t][r];
            if (b.type == LatentBlock::Type::fixed) {
                trips.emplace_back(row, b.offset, v);
            } else if (b.type == LatentBlock::Type::iid) {
                auto it = std::lower_bound(b.levels.begin(), b.levels.end(), v);
                trips.emplace_back(row, b.offset + static_cast<int>(it - b.levels.begin()), 1.0);
            } else {
                int k = static_cast<int>(std::floor((v - b.bin_lo) / b.bin_w));
                k = std::clamp(k, 0, b.size - 1);
                trips.emplace_back(row, b.offset + k, 1.0);
            }
        }
        lm.is_point.push_back(locs[r].is_point ? 1 : 0);
        lm.weight.push_back(locs[r].is_point ? 0.0 : locs[r].w * 1e-6);  // m^2 -> km^2
        if (gaussian) lm.gauss_y.push_back(locs[r].mark);
        ++row;
    }
    lm.design.resize(row, lm.n_latent);
    lm.design.setFromTriplets(trips.begin(), trips.end());

    // one sum-to-zero constraint per random-effect block
    int n_con = 0;
    for (const auto& b : lm.blocks)
        if (b.type != LatentBlock::Type::fixed) ++n_con;
    lm.constraints = Eigen::MatrixXd::Zero(n_con, lm.n_latent);
    int c = 0;
    for (const auto& b : lm.blocks)
        if (b.type != LatentBlock::Type::fixed) {
            for (int k = 0; k < b.size; ++k) lm.constraints(c, b.offset + k) = 1.0;
            ++c;
        }
    return lm;
}

enum class Likelihood { poisson_pp, gaussian };

// Log-likelihood of the latent vector (no prior). For the gaussian case the
// noise log-precision enters through the normal density.
inline double model_loglik(const LatentModel& lm, Likelihood lik, const Eigen::VectorXd& u,
                           double log_prec_noise = 0.0) {
    Eigen::VectorXd eta = lm.design * u;
    double ll = 0.0;
    if (lik == Likelihood::poisson_pp) {
        for (int r = 0; r < eta.size(); ++r) {
            const std::size_t i = static_cast<std::size_t>(r);
            if (lm.is_point[i])
                ll += eta[r];
            else
                ll -= lm.weight[i] * std::exp(eta[r]);
        }
    } else {
        const double tau = std::exp(log_prec_noise);
        for (int r = 0; r < eta.size(); ++r) {
            const double d = lm.gauss_y[static_cast<std::size_t>(r)] - eta[r];
            ll += 0.5 * (log_prec_noise - std::log(2.0 * M_PI)) - 0.5 * tau * d * d;
        }
    }
    return ll;
}

struct Posterior {
    ModelSpec spec;
    std::vector<LatentBlock> blocks;
    Eigen::VectorXd mode;
    Eigen::MatrixXd hess;        // negative Hessian at the mode (plus C'C when constrained)
    Eigen::MatrixXd constraints; // sum-to-zero rows
    Eigen::MatrixXd krig;        // H^-1 C' (C H^-1 C')^-1, the constraint projector
    Eigen::MatrixXd cov;         // constrained latent covariance
    std::vector<double> log_prec;  // modal log-precisions (noise last for gaussian)
    double noise_var = std::numeric_limits<double>::quiet_NaN();
    double log_marginal = 0.0;
    int inner_steps = 0;  // Newton steps applied in the final inner solve
    long dropped_points = 0;
    double dropped_weight = 0.0;
};

namespace detail {

struct InnerResult {
    Eigen::VectorXd u;
    Eigen::MatrixXd hess;
    double loglik = 0.0;
    int steps = 0;
};

inline const LatentBlock& block_of_col(const std::vector<LatentBlock>& blocks, int col) {
    for (const auto& b : blocks)
        if (col >= b.offset && col < b.offset + b.size) return b;
    return blocks.back();
}

// prior precision at the given block log-precisions
inline Eigen::MatrixXd prior_precision(const LatentModel& lm, const Eigen::VectorXd& theta) {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(lm.n_latent, lm.n_latent);
    for (const auto& b : lm.blocks) {
        if (b.type == LatentBlock::Type::fixed) {
            for (int k = 0; k < b.size; ++k) q(b.offset + k, b.offset + k) = b.fixed_prec;
        } else if (b.type == LatentBlock::Type::iid) {
            const double tau = std::exp(theta[b.hyper_index]);
            for (int k = 0; k < b.size; ++k) q(b.offset + k, b.offset + k) = tau;
        } else {
            const double tau = std::exp(theta[b.hyper_index]);
            q.block(b.offset, b.offset, b.size, b.size) = tau * rw2_structure(b.size);
        }
    }
    return q;
}

// Newton solve for the latent mode at fixed hyperparameters, with sum-to-zero
// constraints enforced by conditioning by kriging and step-halving for
// robustness.
inline InnerResult newton_mode(const LatentModel& lm, Likelihood lik, const Eigen::VectorXd& theta,
                               const Eigen::MatrixXd& q, Eigen::VectorXd u) {
    const double log_prec_noise =
        (lik == Likelihood::gaussian && lm.n_hyper > 0) ? theta[lm.n_hyper - 1] : 0.0;
    const double tau_noise = std::exp(log_prec_noise);
    const Eigen::MatrixXd& con = lm.constraints;
    const bool constrained = con.rows() > 0;

    // start on the constraint manifold (exact no-op when already on it)
    if (constrained) {
        Eigen::MatrixXd cct = con * con.transpose();
        u -= con.transpose() * cct.llt().solve(con * u);
    }

    auto objective = [&](const Eigen::VectorXd& v) {
        return model_loglik(lm, lik, v, log_prec_noise) - 0.5 * v.dot(q * v);
    };

    InnerResult res;
    Eigen::MatrixXd hess;
    const int n_rows = static_cast<int>(lm.design.rows());
    for (int iter = 0; iter < 100; ++iter) {
        Eigen::VectorXd eta = lm.design * u;
        Eigen::VectorXd gvec(n_rows), wvec(n_rows);
        if (lik == Likelihood::poisson_pp) {
            for (int r = 0; r < n_rows; ++r) {
                const std::size_t i = static_cast<std::size_t>(r);
                if (lm.is_point[i]) {
                    gvec[r] = 1.0;
                    wvec[r] = 0.0;
                } else {
                    const double lam = lm.weight[i] * std::exp(eta[r]);
                    gvec[r] = -lam;
                    wvec[r] = lam;
                }
            }
        } else {
            for (int r = 0; r < n_rows; ++r) {
                gvec[r] = tau_noise * (lm.gauss_y[static_cast<std::size_t>(r)] - eta[r]);
                wvec[r] = tau_noise;
            }
        }
        Eigen::VectorXd grad = lm.design.transpose() * gvec - q * u;
        hess = Eigen::MatrixXd(lm.design.transpose() * wvec.asDiagonal() * lm.design) + q;
        if (!hess.allFinite()) {
            for (int c = 0; c < hess.cols(); ++c)
                if (!hess.col(c).allFinite())
                    throw NumericalError("fit: non-finite curvature in term '" +
                                         block_of_col(lm.blocks, c).label + "'");
        }
        // Augment with C'C so the factorization stays positive definite when a
        // smooth block's constant direction aliases the intercept. On the
        // constraint manifold the step, covariance and subspace determinant
        // are exactly invariant to this term.
        if (constrained) hess += con.transpose() * con;
        Eigen::LLT<Eigen::MatrixXd> llt(hess);
        if (llt.info() != Eigen::Success)
            throw NumericalError("fit: negative Hessian is not positive definite");

        Eigen::VectorXd step = llt.solve(grad);
        if (constrained) {
            // project the proposed point back onto the constraint manifold
            Eigen::MatrixXd hict = llt.solve(con.transpose());
            Eigen::MatrixXd s = con * hict;
            Eigen::VectorXd prop = u + step;
            step = prop - hict * s.llt().solve(con * prop) - u;
        }
        const double step_inf = step.cwiseAbs().maxCoeff();
        if (step_inf < 1e-12) break;  // already at the mode; leave u untouched

        const double cur = objective(u);
        double alpha = 1.0;
        bool accepted = false;
        for (int h = 0; h <= 30; ++h) {
            Eigen::VectorXd v = u + alpha * step;
            const double obj = objective(v);
            if (std::isfinite(obj) && obj >= cur - 1e-12) {
                u = v;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            int worst = 0;
            step.cwiseAbs().maxCoeff(&worst);
            throw NumericalError("fit diverged updating term '" + block_of_col(lm.blocks, worst).label + "'");
        }
        ++res.steps;
        if (alpha * step_inf < 1e-6) break;
    }

    // curvature at the final iterate
    {
        Eigen::VectorXd eta = lm.design * u;
        Eigen::VectorXd wvec(n_rows);
        if (lik == Likelihood::poisson_pp) {
            for (int r = 0; r < n_rows; ++r) {
                const std::size_t i = static_cast<std::size_t>(r);
                wvec[r] = lm.is_point[i] ? 0.0 : lm.weight[i] * std::exp(eta[r]);
            }
        } else {
            wvec.setConstant(tau_noise);
        }
        hess = Eigen::MatrixXd(lm.design.transpose() * wvec.asDiagonal() * lm.design) + q;
        if (constrained) hess += con.transpose() * con;
    }
    res.u = std::move(u);
    res.hess = std::move(hess);
    res.loglik = model_loglik(lm, lik, res.u, log_prec_noise);
    return res;
}

// Laplace-approximate log marginal likelihood at fixed hyperparameters, up to
// theta-independent constants. Includes the generalized prior normalization
// (rank n-1 per iid block, n-2 per rw2 block), the constraint-subspace
// correction, and a Gamma(1, 5e-5) hyper-prior on each precision.
inline double log_marginal(const LatentModel& lm, Likelihood lik, const Eigen::VectorXd& theta,
                           const InnerResult& inner, const Eigen::MatrixXd& q) {
    double lm_val = inner.loglik - 0.5 * inner.u.dot(q * inner.u);
    for (const auto& b : lm.blocks) {
        if (b.type == LatentBlock::Type::iid)
            lm_val += 0.5 * (b.size - 1) * theta[b.hyper_index];
        else if (b.type == LatentBlock::Type::rw2)
            lm_val += 0.5 * (b.size - 2) * theta[b.hyper_index];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(inner.hess);
    if (llt.info() != Eigen::Success)
        throw NumericalError("fit: negative Hessian is not positive definite");
    double logdet_h = 0.0;
    for (int i = 0; i < lm.n_latent; ++i) logdet_h += 2.0 * std::log(llt.matrixLLT()(i, i));
    lm_val -= 0.5 * logdet_h;
    if (lm.constraints.rows() > 0) {
        Eigen::MatrixXd s = lm.constraints * llt.solve(lm.constraints.transpose());
        Eigen::LLT<Eigen::MatrixXd> sllt(s);
        double logdet_s = 0.0;
        for (int i = 0; i < s.rows(); ++i) logdet_s += 2.0 * std::log(sllt.matrixLLT()(i, i));
        lm_val -= 0.5 * logdet_s;
    }
    // Gamma(1, 5e-5) on each precision, with the log-scale Jacobian
    constexpr double kRate = 5e-5;
    for (int k = 0; k < lm.n_hyper; ++k) lm_val += theta[k] - kRate * std::exp(theta[k]);
    (void)lik;
    return lm_val;
}

}  // namespace detail

// Empirical-Bayes Laplace fit: golden-section coordinate ascent over block
// log-precisions (outer), Newton over the latent vector (inner). An optional
// init warm-starts the latent mode.
inline Posterior fit(const LatentModel& lm, Likelihood lik, const Eigen::VectorXd* init = nullptr) {
    if (lm.design.rows() == 0) throw DataError("fit: design has no rows");
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(lm.n_hyper);
    Eigen::VectorXd u0 = init ? *init : Eigen::VectorXd::Zero(lm.n_latent);

    Eigen::MatrixXd q = detail::prior_precision(lm, theta);
    detail::InnerResult inner = detail::newton_mode(lm, lik, theta, q, u0);
    double best = detail::log_marginal(lm, lik, theta, inner, q);

    if (lm.n_hyper > 0) {
        constexpr double kLo = -6.0, kHi = 10.0;
        constexpr double kGolden = 0.6180339887498949;
        auto eval = [&](int k, double th) {
            Eigen::VectorXd t2 = theta;
            t2[k] = th;
            Eigen::MatrixXd q2 = detail::prior_precision(lm, t2);
            detail::InnerResult in2 = detail::newton_mode(lm, lik, t2, q2, inner.u);
            return std::make_pair(detail::log_marginal(lm, lik, t2, in2, q2), std::move(in2));
        };
        for (int sweep = 0; sweep < 40; ++sweep) {
            const double sweep_start = best;
            for (int k = 0; k < lm.n_hyper; ++k) {
                double a = kLo, b = kHi;
                double x1 = b - kGolden * (b - a), x2 = a + kGolden * (b - a);
                auto r1 = eval(k, x1), r2 = eval(k, x2);
                while (b - a > 1e-3) {
                    if (r1.first > r2.first) {
                        b = x2;
                        x2 = x1;
                        r2 = std::move(r1);
                        x1 = b - kGolden * (b - a);
                        r1 = eval(k, x1);
                    } else {
                        a = x1;
                        x1 = x2;
                        r1 = std::move(r2);
                        x2 = a + kGolden * (b - a);
                        r2 = eval(k, x2);
                    }
                }
                auto& pick = r1.first > r2.first ? r1 : r2;
                const double th = r1.first > r2.first ? x1 : x2;
                if (pick.first > best) {
                    best = pick.first;
                    theta[k] = th;
                    inner = std::move(pick.second);
                }
            }
            if (best - sweep_start < 1e-4) break;
        }
        // final inner solve at the selected hyperparameters
        q = detail::prior_precision(lm, theta);
        inner = detail::newton_mode(lm, lik, theta, q, inner.u);
        best = detail::log_marginal(lm, lik, theta, inner, q);
    }

    Posterior post;
    post.spec = lm.spec;
    post.blocks = lm.blocks;
    post.mode = inner.u;
    post.hess = inner.hess;
    post.constraints = lm.constraints;
    post.log_prec.assign(theta.data(), theta.data() + theta.size());
    post.log_marginal = best;
    post.inner_steps = inner.steps;
    post.dropped_points = lm.dropped_points;
    post.dropped_weight = lm.dropped_weight;
    if (lik == Likelihood::gaussian && lm.n_hyper > 0)
        post.noise_var = std::exp(-theta[lm.n_hyper - 1]);

    Eigen::LLT<Eigen::MatrixXd> llt(post.hess);
    if (llt.info() != Eigen::Success)
        throw NumericalError("fit: negative Hessian is not positive definite");
    Eigen::MatrixXd hinv = llt.solve(Eigen::MatrixXd::Identity(lm.n_latent, lm.n_latent));
    if (post.constraints.rows() > 0) {
        Eigen::MatrixXd hict = llt.solve(post.constraints.transpose());
        Eigen::MatrixXd s = post.constraints * hict;
        post.krig = hict * s.llt().solve(Eigen::MatrixXd::Identity(s.rows(), s.cols()));
        post.cov = hinv - post.krig * hict.transpose();
    } else {
        post.krig.resize(lm.n_latent, 0);
        post.cov = hinv;
    }
    return post;
}

// Draws from the Gaussian latent posterior at the modal hyperparameters,
// projected onto the constraint manifold. Deterministic for a given seed.
inline Eigen::MatrixXd sample_posterior(const Posterior& post, int n, std::uint64_t seed) {
    const int dim = static_cast<int>(post.mode.size());
    Eigen::MatrixXd draws(dim, n);
    if (n == 0) return draws;
    Eigen::LLT<Eigen::MatrixXd> llt(post.hess);
    if (llt.info() != Eigen::Success)
        throw NumericalError("sample_posterior: posterior precision is not positive definite");
    std::mt19937_64 rng = make_rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    for (int s = 0; s < n; ++s)
        for (int i = 0; i < dim; ++i) draws(i, s) = norm(rng);
    // L^-T z ~ N(0, H^-1)
    draws = llt.matrixU().solve(draws);
    draws.colwise() += post.mode;
    if (post.constraints.rows() > 0) draws -= post.krig * (post.constraints * draws);
    return draws;
}

// population standard deviation over mean; exactly 0 for a constant sample
inline double cv_of_samples(const std::vector<double>& xs) {
    const double var = population_variance(xs);
    if (var == 0.0) return 0.0;
    const double mean = mean_of(xs);
    return mean != 0.0 ? std::sqrt(var) / mean : 0.0;
}

struct PredictOptions {
    int n_samples = 100;
    std::uint64_t seed = 0;
    bool at_mode_only = false;  // degenerate posterior: every sample is the mode
};

struct Prediction {
    Raster<double> mean;  // mean exp(eta) per km^2 for centroids; mean eta for log sizes
    Raster<double> cv;    // population std/mean of exp(eta) across samples
    std::vector<std::pair<std::string, Raster<double>>> term_effect;  // mean per-term contribution
    std::map<std::string, long> unseen_levels;
    long nodata_cells = 0;
};

// Evaluate the posterior surface on a target grid: per-cell linear predictor
// for every posterior sample, aggregated to a mean surface, a
// coefficient-of-variation surface, and per-term effect surfaces.
inline Prediction predict_raster(const Posterior& post, const CovariateStack& cov,
                                 const GridHeader& target, const PredictOptions& opt = {}) {
    Eigen::MatrixXd samples;
    if (opt.at_mode_only) {
        samples = post.mode;
    } else {
        if (opt.n_samples < 1) throw ConfigError("predict: n_samples must be at least 1");
        samples = sample_posterior(post, opt.n_samples, opt.seed);
    }
    const int n_s = static_cast<int>(samples.cols());
    const bool log_size = post.spec.response == Response::log_sizes;

    Prediction pred;
    pred.mean = Raster<double>(target, 0.0);
    pred.cv = Raster<double>(target, 0.0);
    for (const auto& b : post.blocks) {
        pred.term_effect.emplace_back(b.label, Raster<double>(target, 0.0));
    }

    std::mutex warn_mutex;
    std::atomic<long> nodata_count{0};
    const std::size_t n_cells = pred.mean.size();
    parallel_for(n_cells, [&](std::size_t idx) {
        const int col = static_cast<int>(idx) % target.ncols;
        const int row = static_cast<int>(idx) / target.ncols;
        const double x = target.cell_center_x(col);
        const double y = target.cell_center_y(row);
        std::vector<std::pair<int, double>> entries;
        std::map<std::string, long> unseen;
        if (!detail::design_row(post.blocks, cov, x, y, entries, &unseen)) {
            pred.mean[idx] = target.nodata;
            pred.cv[idx] = target.nodata;
            for (auto& te : pred.term_effect) te.second[idx] = target.nodata;
            ++nodata_count;
            return;
        }
        if (!unseen.empty()) {
            std::lock_guard<std::mutex> lock(warn_mutex);
            for (const auto& kv : unseen) pred.unseen_levels[kv.first] += kv.second;
        }
        std::vector<double> lam(static_cast<std::size_t>(n_s));
        double eta_sum = 0.0;
        for (int s = 0; s < n_s; ++s) {
            double eta = 0.0;
            for (const auto& e : entries) eta += e.second * samples(e.first, s);
            lam[static_cast<std::size_t>(s)] = std::exp(eta);
            eta_sum += eta;
        }
        pred.mean[idx] = log_size ? eta_sum / n_s : mean_of(lam);
        pred.cv[idx] = cv_of_samples(lam);
        // per-term mean contribution
        for (std::size_t bi = 0; bi < post.blocks.size(); ++bi) {
            const LatentBlock& b = post.blocks[bi];
            double acc = 0.0;
            for (const auto& e : entries) {
                if (e.first < b.offset || e.first >= b.offset + b.size) continue;
                for (int s = 0; s < n_s; ++s) acc += e.second * samples(e.first, s);
            }
            pred.term_effect[bi].second[idx] = acc / n_s;
        }
    });
    pred.nodata_cells = nodata_count.load();
    return pred;
}

// Posterior summary rows: one per latent coordinate, normal-approximation
// credible bounds from the constrained covariance.
inline void write_posterior_summary_csv(const std::string& path, const Posterior& post) {
    CsvWriter csv(path, "term,level_or_bin,mean,sd,q025,q975");
    constexpr double kZ975 = 1.959963984540054;
    for (const auto& b : post.blocks) {
        for (int k = 0; k < b.size; ++k) {
            const int i = b.offset + k;
            std::string which;
            if (b.label == "intercept")
                which = "intercept";
            else if (b.type == LatentBlock::Type::fixed)
                which = "coef";
            else if (b.type == LatentBlock::Type::iid)
                which = format_double(b.levels[static_cast<std::size_t>(k)]);
            else
                which = format_double(b.bin_lo + (k + 0.5) * b.bin_w);
            const double mean = post.mode[i];
            const double sd = std::sqrt(std::max(0.0, post.cov(i, i)));
            csv.row({b.label, which, format_double(mean), format_double(sd),
                     format_double(mean - kZ975 * sd), format_double(mean + kZ975 * sd)});
        }
    }
}

}  // namespace incise
