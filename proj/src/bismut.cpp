#include "hodgemc/bismut.hpp"

#include "hodgemc/parallel.hpp"

#include <cmath>
#include <sstream>

namespace hodgemc {

FormValue frame_components(const Model& model, const FramePoint& fp, const FormValue& coord)
{
    if (coord.m != fp.E.rows()) throw ValidationError("form field has the wrong number of components");
    FormValue out;
    out.m = model.dim();
    out.frame = FrameTag::orthonormal;
    out.coeffs = lambda_extend(Eigen::MatrixXd(fp.E.transpose())).cast<cplx>() * coord.coeffs;
    out.refresh_mask();
    return out;
}

const char* to_string(EllMode mode)
{
    return mode == EllMode::compact_linear ? "compact-linear" : "localized";
}

EllMode ell_mode_from_string(const std::string& s)
{
    if (s == "compact-linear" || s == "compact_linear") return EllMode::compact_linear;
    if (s == "localized") return EllMode::localized;
    throw ValidationError("unknown ell mode '" + s + "'");
}

EllClock::EllClock(const Model& model, EllMode mode, double s, const Vec& x, const TimeGrid& grid, double c_loc)
    : model_(model), mode_(mode), s_(s), x_(x), grid_(grid), c_loc_(c_loc)
{
    if (mode == EllMode::localized && !model.has_distance())
        throw ModelError("localized ell needs a distance function on the model");
    if (!(c_loc > 0.0)) throw ValidationError("c_loc must be positive");
    // A Gaussian step of this length or more has probability below 1e-15.
    layer_ = 8.5 * std::sqrt(grid.dt) * std::sqrt(static_cast<double>(model.dim()));
}

void EllClock::reset()
{
    A_ = 0.0;
    phi_ = 1.0;
    n_ = 0;
}

EllClock::Rate EllClock::step(const FramePoint& Xn)
{
    Rate r;
    r.phi = phi_;
    double next;
    if (n_ + 1 >= grid_.steps) {
        next = 0.0;
    } else if (mode_ == EllMode::compact_linear) {
        next = 1.0 - static_cast<double>(n_ + 1) / grid_.steps;
    } else {
        if (phi_ == 0.0) {
            next = 0.0;
        } else {
            const double gap = 1.0 - model_.distance(x_, Xn.x);
            if (gap <= layer_) {
                A_ = 1.0;
            } else {
                A_ += c_loc_ * (1.0 / s_ + 1.0 / (gap * gap)) * grid_.dt;
            }
            next = std::max(0.0, 1.0 - A_);
        }
    }
    r.phidot = mode_ == EllMode::compact_linear ? -1.0 / s_ : (next - phi_) / grid_.dt;
    phi_ = next;
    ++n_;
    return r;
}

EllProcess make_ell(const Model& model, EllMode mode, const FormValue& v, double s, const Vec& x,
                    const PathSample& path, double c_loc)
{
    const int N = static_cast<int>(path.points.size()) - 1;
    if (N < 1) throw ValidationError("path has no steps");
    const TimeGrid grid{N, path.dt};
    if (std::abs(N * path.dt - s) > 1e-9 * s) throw ValidationError("path horizon does not match s");
    EllClock clock(model, mode, s, x, grid, c_loc);
    clock.reset();
    EllProcess ell;
    ell.mode = mode;
    ell.v = v;
    ell.vanish_time = s;
    ell.phi.push_back(1.0);
    const double vn2 = v.coeffs.squaredNorm();
    bool vanished = false;
    for (int n = 0; n < N; ++n) {
        const auto r = clock.step(path.points[n]);
        ell.phidot.push_back(r.phidot);
        ell.phi.push_back(clock.phi());
        ell.energy += vn2 * r.phidot * r.phidot * grid.dt;
        if (!vanished && clock.phi() == 0.0) {
            vanished = true;
            ell.vanish_time = path.t[n + 1];
        }
    }
    return ell;
}

MixedTensor MixedTensor::zero(int m, int k)
{
    MixedTensor t;
    t.m = m;
    t.k = k;
    t.c = Eigen::VectorXcd::Zero(m * binomial(m, k));
    return t;
}

MixedTensor MixedTensor::from_parts(const std::vector<FormValue>& parts, int k)
{
    if (parts.empty()) throw ValidationError("mixed tensor needs one form per direction");
    const int m = parts.front().m;
    if (static_cast<int>(parts.size()) != m) throw ValidationError("mixed tensor needs one form per direction");
    MixedTensor t = zero(m, k);
    const int n = binomial(m, k);
    for (int a = 0; a < m; ++a) {
        if (parts[a].m != m) throw ValidationError("mixed tensor parts disagree in dimension");
        t.c.segment(a * n, n) = parts[a].block(k);
    }
    return t;
}

MixedTensor MixedTensor::single(int m, int a, const FormValue& theta, int k)
{
    MixedTensor t = zero(m, k);
    const int n = binomial(m, k);
    t.c.segment(a * n, n) = theta.block(k);
    return t;
}

void to_json(nlohmann::json& j, const EstimatorResult& r)
{
    nlohmann::json value = nlohmann::json::array(), se = nlohmann::json::array();
    for (Eigen::Index i = 0; i < r.value.size(); ++i) {
        value.push_back({r.value[i].real(), r.value[i].imag()});
        se.push_back(r.se[i]);
    }
    j = nlohmann::json{{"kind", r.kind}, {"value", value}, {"se", se},       {"n", r.n},
                       {"seed", r.seed}, {"s", r.s},       {"dt", r.dt},      {"steps", r.steps},
                       {"degree", r.degree}, {"mode", r.mode}, {"fv_max", r.fv_max}, {"rho_max", r.rho_max}};
}

void require_kato(const Model& model, const EstimatorOptions& opts)
{
    (void)model;
    if (opts.kato && *opts.kato == KatoVerdict::neither && !opts.allow_kato_override)
        throw KatoError("curvature potential failed the Kato test; pass the override flag to proceed");
}

namespace {

int pure_degree(const FormValue& v, const char* what)
{
    for (int k = 0; k <= v.m; ++k)
        if (v.degree_mask == (1u << k)) return k;
    throw ValidationError(std::string(what) + " must have a single degree");
}

struct Restricted {
    std::vector<Eigen::MatrixXd> interior;  // e_a ⌟ : Λ^{k+1} → Λ^k
    std::vector<Eigen::MatrixXd> wedge;     // ε^a ∧ : Λ^{k−1} → Λ^k
};

Restricted restricted_ops(int m, int k)
{
    const auto& ext = ExteriorAlgebra::of(m);
    Restricted r;
    const int nk = ext.degree_size(k);
    for (int a = 0; a < m; ++a) {
        if (k + 1 <= m)
            r.interior.push_back(ext.interior_matrix(a).block(ext.degree_offset(k), ext.degree_offset(k + 1), nk,
                                                              ext.degree_size(k + 1)));
        if (k >= 1)
            r.wedge.push_back(ext.wedge_matrix(a).block(ext.degree_offset(k), ext.degree_offset(k - 1), nk,
                                                        ext.degree_size(k - 1)));
    }
    return r;
}

EstimatorResult finish(const char* kind, const Moments& mom, int len, const EstimatorOptions& opts, double s,
                       const TimeGrid& grid, int degree)
{
    EstimatorResult res;
    res.kind = kind;
    res.value.resize(len);
    res.se.resize(len);
    const Eigen::VectorXd se = mom.standard_error();
    for (int i = 0; i < len; ++i) {
        res.value[i] = cplx(mom.mean[2 * i], mom.mean[2 * i + 1]);
        res.se[i] = std::hypot(se[2 * i], se[2 * i + 1]);
    }
    res.n = opts.n_paths;
    res.seed = opts.seed;
    res.s = s;
    res.dt = grid.dt;
    res.steps = grid.steps;
    res.degree = degree;
    res.mode = to_string(opts.mode);
    return res;
}

void check_common(const Model& model, const Vec& x, double s, const EstimatorOptions& opts)
{
    if (opts.n_paths < 1) throw ValidationError("need at least one path");
    if (!(s > 0.0)) throw ValidationError("s must be positive");
    if (opts.substeps < 1) throw ValidationError("substeps must be at least 1");
    if (!model.valid_point(x)) throw ValidationError("evaluation point is not on the model");
    require_kato(model, opts);
}

void store(Eigen::VectorXd& rec, int i, cplx z)
{
    rec[2 * i] = z.real();
    rec[2 * i + 1] = z.imag();
}

}  // namespace

EstimatorResult semigroup_estimate(const Model& model, const ModelForm& alpha, const Vec& x, double s,
                                   const EstimatorOptions& opts)
{
    check_common(model, x, s, opts);
    const TimeGrid grid = make_grid(s, opts.dt);
    const int m = model.dim();
    const int L = 1 << m;
    const std::uint32_t all = (1u << (m + 1)) - 1;
    const FramePoint start = model.frame_point(x);

    const Moments mom = deterministic_reduce(opts.n_paths, 2 * L, opts.workers, [&](std::size_t b, std::size_t e,
                                                                                     Moments& acc) {
        DampedTransport T(model, CurvatureSource::weitzenbock, all, false);
        Eigen::VectorXd rec(2 * L);
        for (std::size_t i = b; i < e; ++i) {
            PathRng rng(opts.seed, i, kTagEstimator);
            T.start(start);
            FramePoint last = start;
            walk(model, start, grid, rng, opts.substeps, [&](int, const FramePoint&, const Vec&, const FramePoint& to) {
                T.advance(to, grid.dt);
                last = to;
                return true;
            });
            T.verify_gronwall();
            const FormValue a = frame_components(model, last, alpha(last.x));
            const Eigen::VectorXcd out = T.full().transpose().cast<cplx>() * a.coeffs;
            for (int j = 0; j < L; ++j) store(rec, j, out[j]);
            acc.add(rec);
        }
    });
    return finish("semigroup", mom, L, opts, s, grid, -1);
}

EstimatorResult domination_estimate(const Model& model, const ModelForm& alpha, int k, const Vec& x, double s,
                                    const EstimatorOptions& opts)
{
    check_common(model, x, s, opts);
    if (k < 0 || k > model.dim()) throw ValidationError("degree out of range");
    const TimeGrid grid = make_grid(s, opts.dt);
    const FramePoint start = model.frame_point(x);
    const Moments mom = deterministic_reduce(opts.n_paths, 2, opts.workers, [&](std::size_t b, std::size_t e,
                                                                                Moments& acc) {
        DampedTransport T(model, CurvatureSource::weitzenbock, 1u << k, false, false);
        Eigen::VectorXd rec(2);
        for (std::size_t i = b; i < e; ++i) {
            PathRng rng(opts.seed, i, kTagEstimator);
            T.start(start);
            FramePoint last = start;
            walk(model, start, grid, rng, opts.substeps, [&](int, const FramePoint&, const Vec&, const FramePoint& to) {
                T.advance(to, grid.dt);
                last = to;
                return true;
            });
            const FormValue a = frame_components(model, last, alpha(last.x));
            const double w = model.flat() ? 1.0 : std::exp(T.gronwall_log_bound(k));
            store(rec, 0, w * a.block(k).norm());
            acc.add(rec);
        }
    });
    return finish("domination", mom, 1, opts, s, grid, k);
}

EstimatorResult bismut_d(const Model& model, const ModelForm& alpha, const Vec& x, double s, const FormValue& v,
                         const EstimatorOptions& opts)
{
    check_common(model, x, s, opts);
    const int m = model.dim();
    if (v.m != m) throw ValidationError("test form has the wrong dimension");
    const int kv = pure_degree(v, "test form");
    if (kv == 0) throw ValidationError("exterior derivative pairs with forms of degree at least 1");
    const int k = kv - 1;
    const TimeGrid grid = make_grid(s, opts.dt);
    const FramePoint start = model.frame_point(x);
    const Restricted ops = restricted_ops(m, k);
    const Eigen::VectorXcd vb = v.block(kv);
    const bool flat = model.flat();

    const Moments mom = deterministic_reduce(opts.n_paths, 2, opts.workers, [&](std::size_t b, std::size_t e,
                                                                                Moments& acc) {
        DampedTransport T(model, CurvatureSource::weitzenbock, (1u << k) | (1u << kv), true);
        EllClock clock(model, opts.mode, s, x, grid, opts.c_loc);
        Eigen::VectorXd rec(2);
        for (std::size_t i = b; i < e; ++i) {
            PathRng rng(opts.seed, i, kTagEstimator);
            T.start(start);
            clock.reset();
            Eigen::VectorXcd U = Eigen::VectorXcd::Zero(ops.interior.front().rows());
            Vec S = Vec::Zero(m);
            FramePoint last = start;
            walk(model, start, grid, rng, opts.substeps, [&](int, const FramePoint& from, const Vec& dB,
                                                             const FramePoint& to) {
                const auto r = clock.step(from);
                if (flat) {
                    S += r.phidot * dB;
                } else if (r.phidot != 0.0) {
                    const Eigen::VectorXcd w = T.block(kv).cast<cplx>() * vb;
                    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(U.size());
                    for (int a = 0; a < m; ++a) c += dB[a] * (ops.interior[a].cast<cplx>() * w);
                    U += r.phidot * (T.inverse_block(k).cast<cplx>() * c);
                }
                T.advance(to, grid.dt);
                last = to;
                return true;
            });
            if (flat)
                for (int a = 0; a < m; ++a) U += S[a] * (ops.interior[a].cast<cplx>() * vb);
            T.verify_gronwall();
            const FormValue a = frame_components(model, last, alpha(last.x));
            store(rec, 0, -pairing(a.block(k), T.block(k).cast<cplx>() * U));
            acc.add(rec);
        }
    });
    return finish("d", mom, 1, opts, s, grid, k);
}

EstimatorResult bismut_delta(const Model& model, const ModelForm& alpha, const Vec& x, double s, const FormValue& v,
                             const EstimatorOptions& opts)
{
    check_common(model, x, s, opts);
    const int m = model.dim();
    if (v.m != m) throw ValidationError("test form has the wrong dimension");
    const TimeGrid grid = make_grid(s, opts.dt);
    if (v.degree_mask == 0) {
        EstimatorResult res;
        res.kind = "delta";
        res.value = Eigen::VectorXcd::Zero(1);
        res.se = Eigen::VectorXd::Zero(1);
        res.n = opts.n_paths;
        res.seed = opts.seed;
        res.s = s;
        res.dt = grid.dt;
        res.steps = grid.steps;
        res.degree = 0;
        res.mode = to_string(opts.mode);
        return res;
    }
    const int kv = pure_degree(v, "test form");
    const int k = kv + 1;
    if (k > m) throw ValidationError("codifferential test form degree too high");
    const FramePoint start = model.frame_point(x);
    const Restricted ops = restricted_ops(m, k);
    const Eigen::VectorXcd vb = v.block(kv);
    const bool flat = model.flat();

    const Moments mom = deterministic_reduce(opts.n_paths, 2, opts.workers, [&](std::size_t b, std::size_t e,
                                                                                Moments& acc) {
        DampedTransport T(model, CurvatureSource::weitzenbock, (1u << k) | (1u << kv), true);
        EllClock clock(model, opts.mode, s, x, grid, opts.c_loc);
        Eigen::VectorXd rec(2);
        for (std::size_t i = b; i < e; ++i) {
            PathRng rng(opts.seed, i, kTagEstimator);
            T.start(start);
            clock.reset();
            Eigen::VectorXcd U = Eigen::VectorXcd::Zero(ops.wedge.front().rows());
            Vec S = Vec::Zero(m);
            FramePoint last = start;
            walk(model, start, grid, rng, opts.substeps, [&](int, const FramePoint& from, const Vec& dB,
                                                             const FramePoint& to) {
                const auto r = clock.step(from);
                if (flat) {
                    S += r.phidot * dB;
                } else if (r.phidot != 0.0) {
                    const Eigen::VectorXcd w = T.block(kv).cast<cplx>() * vb;
                    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(U.size());
                    for (int a = 0; a < m; ++a) c -= dB[a] * (ops.wedge[a].cast<cplx>() * w);
                    U += r.phidot * (T.inverse_block(k).cast<cplx>() * c);
                }
                T.advance(to, grid.dt);
                last = to;
                return true;
            });
            if (flat)
                for (int a = 0; a < m; ++a) U -= S[a] * (ops.wedge[a].cast<cplx>() * vb);
            T.verify_gronwall();
            const FormValue a = frame_components(model, last, alpha(last.x));
            store(rec, 0, -pairing(a.block(k), T.block(k).cast<cplx>() * U));
            acc.add(rec);
        }
    });
    return finish("delta", mom, 1, opts, s, grid, k);
}

EstimatorResult bismut_nabla(const Model& model, const ModelForm& alpha, const Vec& x, double s,
                             const MixedTensor& xi, const EstimatorOptions& opts)
{
    check_common(model, x, s, opts);
    const int m = model.dim();
    if (xi.m != m) throw ValidationError("mixed tensor has the wrong dimension");
    const int k = xi.k;
    if (k < 0 || k > m) throw ValidationError("degree out of range");
    const auto& ext = ExteriorAlgebra::of(m);
    const int nk = ext.degree_size(k);
    if (xi.c.size() != m * nk) throw ValidationError("mixed tensor has the wrong length");
    const TimeGrid grid = make_grid(s, opts.dt);
    const FramePoint start = model.frame_point(x);
    const bool constant = model.constant_curvature().has_value();
    const bool flat = model.flat();

    // Rows of the T*M⊗Λ^k block and columns of the Λ^k block inside ρ.
    std::vector<int> rows, cols;
    for (int a = 0; a < m; ++a)
        for (int i = 0; i < nk; ++i) rows.push_back(a * ext.size() + ext.degree_offset(k) + i);
    for (int i = 0; i < nk; ++i) cols.push_back(ext.degree_offset(k) + i);

    std::vector<double> fv_block, rho_block;
    const std::size_t nblocks = (opts.n_paths + kBlockSize - 1) / kBlockSize;
    fv_block.assign(nblocks, 0.0);
    rho_block.assign(nblocks, 0.0);

    const Moments mom = deterministic_reduce(opts.n_paths, 2, opts.workers, [&](std::size_t b, std::size_t e,
                                                                                Moments& acc) {
        DampedTransport T(model, CurvatureSource::weitzenbock, 1u << k, true);
        DampedTransport Tt(model, CurvatureSource::weitzenbock_tilde, 1u << k, false);
        EllClock clock(model, opts.mode, s, x, grid, opts.c_loc);
        Eigen::VectorXd rec(2);
        Eigen::MatrixXd rho_k(m * nk, nk);
        double fv_max = 0.0, rho_max = 0.0;
        for (std::size_t i = b; i < e; ++i) {
            PathRng rng(opts.seed, i, kTagEstimator);
            T.start(start);
            Tt.start(start);
            clock.reset();
            Eigen::VectorXcd U = Eigen::VectorXcd::Zero(nk);
            Vec S = Vec::Zero(m);
            FramePoint last = start;
            walk(model, start, grid, rng, opts.substeps, [&](int, const FramePoint& from, const Vec& dB,
                                                             const FramePoint& to) {
                const auto r = clock.step(from);
                if (flat) {
                    S += r.phidot * dB;
                } else if (r.phi != 0.0 || r.phidot != 0.0) {
                    const Eigen::VectorXcd eta = Tt.block(k).cast<cplx>() * xi.c;
                    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(nk);
                    if (r.phidot != 0.0) {
                        for (int a = 0; a < m; ++a) c += dB[a] * eta.segment(a * nk, nk);
                        c *= r.phidot;
                    }
                    if (!constant && r.phi != 0.0) {
                        const Eigen::MatrixXd rho = rho_hom(model.nabla_riemann_in_frame(from));
                        for (int p = 0; p < m * nk; ++p)
                            for (int q = 0; q < nk; ++q) rho_k(p, q) = rho(rows[p], cols[q]);
                        rho_max = std::max(rho_max, rho_k.norm());
                        const Eigen::VectorXcd fv = 0.5 * r.phi * grid.dt * (rho_k.transpose().cast<cplx>() * eta);
                        fv_max = std::max(fv_max, fv.norm());
                        c += fv;
                    }
                    U += T.inverse_block(k).cast<cplx>() * c;
                }
                T.advance(to, grid.dt);
                Tt.advance(to, grid.dt);
                last = to;
                return true;
            });
            if (flat)
                for (int a = 0; a < m; ++a) U += S[a] * xi.c.segment(a * nk, nk);
            T.verify_gronwall();
            Tt.verify_gronwall();
            const FormValue a = frame_components(model, last, alpha(last.x));
            store(rec, 0, -pairing(a.block(k), T.block(k).cast<cplx>() * U));
            acc.add(rec);
        }
        const std::size_t blk = b / kBlockSize;
        fv_block[blk] = fv_max;
        rho_block[blk] = rho_max;
    });
    EstimatorResult res = finish("nabla", mom, 1, opts, s, grid, k);
    for (std::size_t i = 0; i < nblocks; ++i) {
        res.fv_max = std::max(res.fv_max, fv_block[i]);
        res.rho_max = std::max(res.rho_max, rho_block[i]);
    }
    return res;
}

}  // namespace hodgemc
