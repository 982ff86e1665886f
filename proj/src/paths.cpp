#include "hodgemc/paths.hpp"

#include "hodgemc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hodgemc {

TimeGrid make_grid(double s, double dt)
{
    if (!(dt > 0.0)) throw ValidationError("time step must be positive");
    if (!(s >= dt * (1.0 - 1e-12))) throw ValidationError("horizon must be at least one time step");
    const int n = static_cast<int>(std::ceil(s / dt - 1e-9));
    return {n, s / n};
}

Vec draw_increment(PathRng& rng, int m, double dt, int substeps)
{
    Vec dB = Vec::Zero(m);
    for (int j = 0; j < substeps; ++j)
        for (int a = 0; a < m; ++a) dB[a] += rng.normal();
    dB *= std::sqrt(dt / substeps);
    return dB;
}

DampedTransport::DampedTransport(const Model& model, CurvatureSource source, std::uint32_t degree_mask,
                                 bool track_inverse, bool check_gronwall)
    : model_(model),
      source_(source),
      mask_(degree_mask),
      inverse_(track_inverse),
      check_(check_gronwall),
      flat_(model.flat()),
      constant_(model.constant_curvature().has_value()),
      m_(model.dim()),
      q_(m_ + 1),
      qinv_(m_ + 1),
      cur_(m_ + 1),
      nxt_(m_ + 1),
      const_step_(m_ + 1),
      const_step_inv_(m_ + 1),
      log_bound_(m_ + 1, 0.0),
      lmin_cur_(m_ + 1, 0.0)
{
}

int DampedTransport::block_rows(int k) const
{
    const int n = binomial(m_, k);
    return source_ == CurvatureSource::weitzenbock ? n : m_ * n;
}

std::vector<int> DampedTransport::block_indices(int k) const
{
    const auto& ext = ExteriorAlgebra::of(m_);
    const int off = ext.degree_offset(k), n = ext.degree_size(k);
    std::vector<int> idx;
    if (source_ == CurvatureSource::weitzenbock) {
        for (int i = 0; i < n; ++i) idx.push_back(off + i);
    } else {
        for (int a = 0; a < m_; ++a)
            for (int i = 0; i < n; ++i) idx.push_back(a * ext.size() + off + i);
    }
    return idx;
}

void DampedTransport::curvature_blocks(const FramePoint& fp, std::vector<Eigen::MatrixXd>& out) const
{
    Eigen::MatrixXd full;
    if (source_ == CurvatureSource::weitzenbock)
        full = model_.weitzenbock_at(fp);
    else
        full = weitzenbock_tilde(model_.riemann_in_frame(fp));
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k))) continue;
        const auto idx = block_indices(k);
        const int n = static_cast<int>(idx.size());
        out[k].resize(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) out[k](i, j) = full(idx[i], idx[j]);
    }
}

namespace {

// exp(c·a) for symmetric a.
Eigen::MatrixXd sym_exp(const Eigen::MatrixXd& a, double c)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
    return es.eigenvectors() * (c * es.eigenvalues()).array().exp().matrix().asDiagonal() *
           es.eigenvectors().transpose();
}

double min_eigenvalue(const Eigen::MatrixXd& a)
{
    if (a.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()[0];
}

}  // namespace

void DampedTransport::start(const FramePoint& fp)
{
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k))) continue;
        const int n = block_rows(k);
        q_[k] = Eigen::MatrixXd::Identity(n, n);
        qinv_[k] = Eigen::MatrixXd::Identity(n, n);
        log_bound_[k] = 0.0;
    }
    if (flat_) return;
    if (!constant_ || !const_ready_) curvature_blocks(fp, cur_);
    const_ready_ = constant_;
    for (int k = 0; k <= m_; ++k)
        if (mask_ & (1u << k)) lmin_cur_[k] = min_eigenvalue(cur_[k]);
}

void DampedTransport::advance(const FramePoint& next, double dt)
{
    if (flat_) return;
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k))) continue;
        const int n = block_rows(k);
        if (constant_) {
            if (const_step_[k].rows() != n || const_dt_ != dt) {
                const_step_[k] = sym_exp(cur_[k], -0.5 * dt);
                const_step_inv_[k] = sym_exp(cur_[k], 0.5 * dt);
            }
            q_[k] = const_step_[k] * q_[k];
            if (inverse_) qinv_[k] = qinv_[k] * const_step_inv_[k];
            log_bound_[k] += -0.5 * dt * lmin_cur_[k];
        }
    }
    if (constant_) {
        const_dt_ = dt;
        return;
    }
    curvature_blocks(next, nxt_);
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k))) continue;
        const Eigen::MatrixXd mid = 0.5 * (cur_[k] + nxt_[k]);
        q_[k] = sym_exp(mid, -0.5 * dt) * q_[k];
        if (inverse_) qinv_[k] = qinv_[k] * sym_exp(mid, 0.5 * dt);
        const double lmin_next = min_eigenvalue(nxt_[k]);
        log_bound_[k] += -0.25 * dt * (lmin_cur_[k] + lmin_next);
        lmin_cur_[k] = lmin_next;
        cur_[k].swap(nxt_[k]);
    }
}

void DampedTransport::verify_gronwall() const
{
    if (!check_ || flat_) return;
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k)) || q_[k].size() == 0) continue;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(q_[k]);
        const double norm = svd.singularValues()[0];
        const double bound = std::exp(log_bound_[k]);
        if (norm > bound * (1.0 + 1e-6) + 1e-12) {
            std::ostringstream os;
            os << "damped transport exceeds its Gronwall bound in degree " << k << ": " << norm << " > " << bound;
            throw NumericalError(os.str());
        }
    }
}

Eigen::MatrixXd DampedTransport::full() const
{
    const auto& ext = ExteriorAlgebra::of(m_);
    const int size = source_ == CurvatureSource::weitzenbock ? ext.size() : m_ * ext.size();
    Eigen::MatrixXd out = Eigen::MatrixXd::Identity(size, size);
    if (flat_) return out;
    for (int k = 0; k <= m_; ++k) {
        if (!(mask_ & (1u << k))) continue;
        const auto idx = block_indices(k);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < idx.size(); ++j) out(idx[i], idx[j]) = q_[k](i, j);
    }
    return out;
}

FeynmanKac fk_weight(double integral)
{
    FeynmanKac fk;
    fk.integral = integral;
    double expo = -0.5 * integral;
    if (!(expo <= 700.0)) {
        expo = 700.0;
        fk.clamped = true;
    }
    fk.weight = std::exp(expo);
    return fk;
}

PathSample sample_path(const Model& model, const Vec& x0, double s, double dt, std::uint64_t seed,
                       std::uint64_t substream, const PathOptions& opts)
{
    if (!model.valid_point(x0)) throw ValidationError("start point is not on the model");
    const TimeGrid grid = make_grid(s, dt);
    const int m = model.dim();
    const std::uint32_t all = (1u << (m + 1)) - 1;

    PathSample path;
    path.dt = grid.dt;
    path.seed = seed;
    path.substream = substream;
    path.t.reserve(grid.steps + 1);
    path.points.reserve(grid.steps + 1);
    path.dB.reserve(grid.steps);

    FramePoint start = model.frame_point(x0);
    path.t.push_back(0.0);
    path.points.push_back(start);

    std::optional<DampedTransport> q, qt;
    if (opts.transport) {
        q.emplace(model, CurvatureSource::weitzenbock, all);
        q->start(start);
        path.Q.push_back(q->full());
    }
    if (opts.transport_tilde) {
        qt.emplace(model, CurvatureSource::weitzenbock_tilde, all);
        qt->start(start);
        path.Qt.push_back(qt->full());
    }

    PathRng rng(seed, substream, opts.tag);
    walk(model, start, grid, rng, opts.substeps, [&](int n, const FramePoint&, const Vec& dB, const FramePoint& to) {
        path.t.push_back((n + 1) * grid.dt);
        path.points.push_back(to);
        path.dB.push_back(dB);
        if (q) {
            q->advance(to, grid.dt);
            path.Q.push_back(q->full());
        }
        if (qt) {
            qt->advance(to, grid.dt);
            path.Qt.push_back(qt->full());
        }
        return true;
    });
    if (q) q->verify_gronwall();
    if (qt) qt->verify_gronwall();

    if (opts.w) path.fk = feynman_kac(path, opts.w);
    for (const auto& [c, r] : opts.balls) path.exits.push_back(exit_time(model, path, c, r));
    return path;
}

std::vector<Eigen::MatrixXd> damped_transport(const Model& model, const PathSample& path, CurvatureSource source)
{
    if (path.points.empty()) throw ValidationError("empty path");
    const std::uint32_t all = (1u << (model.dim() + 1)) - 1;
    DampedTransport q(model, source, all);
    q.start(path.points.front());
    std::vector<Eigen::MatrixXd> out;
    out.reserve(path.points.size());
    out.push_back(q.full());
    for (std::size_t n = 1; n < path.points.size(); ++n) {
        q.advance(path.points[n], path.t[n] - path.t[n - 1]);
        out.push_back(q.full());
    }
    q.verify_gronwall();
    return out;
}

ExitRecord exit_time(const Model& model, const PathSample& path, const Vec& center, double r)
{
    if (!(r > 0.0)) throw ValidationError("exit radius must be positive");
    if (!model.has_distance()) throw ModelError("model has no distance function");
    ExitRecord rec;
    rec.center = center;
    rec.radius = r;
    rec.time = path.t.back();
    for (std::size_t n = 0; n < path.points.size(); ++n) {
        if (model.distance(center, path.points[n].x) >= r) {
            rec.time = path.t[n];
            rec.censored = false;
            break;
        }
    }
    return rec;
}

FeynmanKac feynman_kac(const PathSample& path, const ScalarField& w)
{
    double integral = 0.0;
    double prev = w(path.points.front().x);
    for (std::size_t n = 1; n < path.points.size(); ++n) {
        const double cur = w(path.points[n].x);
        integral += 0.5 * (prev + cur) * (path.t[n] - path.t[n - 1]);
        prev = cur;
    }
    return fk_weight(integral);
}

const char* to_string(KatoVerdict v)
{
    switch (v) {
    case KatoVerdict::kato: return "kato";
    case KatoVerdict::dynkin: return "dynkin";
    case KatoVerdict::neither: return "neither";
    }
    return "neither";
}

KatoReport kato_test(const Model& model, const ScalarField& w, const KatoOptions& opts)
{
    if (opts.t_grid.empty()) throw ValidationError("kato test needs a t grid");
    if (opts.x_samples.empty()) throw ValidationError("kato test needs x samples");
    if (opts.n_paths < 2) throw ValidationError("kato test needs at least two paths");
    if (!(opts.dt > 0.0)) throw ValidationError("time step must be positive");

    std::vector<double> ts = opts.t_grid;
    std::sort(ts.begin(), ts.end());
    std::vector<int> cells;
    for (double t : ts) {
        if (!(t > 0.0)) throw ValidationError("kato t grid must be positive");
        const double c = t / opts.dt;
        const int ci = static_cast<int>(std::llround(c));
        if (ci < 1 || std::abs(c - ci) > 1e-9 * std::max(1.0, c))
            throw ValidationError("kato t grid must be multiples of the time step");
        cells.push_back(ci);
    }
    const int J = static_cast<int>(ts.size());
    const int total_cells = cells.back();
    const TimeGrid fine{2 * total_cells, 0.5 * opts.dt};

    KatoReport rep;
    rep.t = ts;
    rep.estimate.assign(J, -1.0);
    rep.se.assign(J, 0.0);
    rep.argsup.assign(J, 0);
    rep.exp_estimate.assign(J, -1.0);
    rep.exp_se.assign(J, 0.0);

    bool finite = true;
    for (std::size_t xi = 0; xi < opts.x_samples.size(); ++xi) {
        const FramePoint start = model.frame_point(opts.x_samples[xi]);
        const Moments mom = deterministic_reduce(
            opts.n_paths, 2 * J, opts.workers, [&](std::size_t b, std::size_t e, Moments& acc) {
                Eigen::VectorXd rec(2 * J);
                for (std::size_t i = b; i < e; ++i) {
                    PathRng rng(opts.seed, i, kTagKato + static_cast<std::uint32_t>(xi << 8));
                    double integral = 0.0;
                    int j = 0;
                    walk(model, start, fine, rng, 1, [&](int n, const FramePoint&, const Vec&, const FramePoint& to) {
                        if (n % 2 == 0) {
                            integral += opts.dt * std::abs(w(to.x));
                            const int cell = n / 2 + 1;
                            while (j < J && cells[j] == cell) {
                                rec[j] = integral;
                                rec[J + j] = std::exp(integral);
                                ++j;
                            }
                        }
                        return j < J;
                    });
                    acc.add(rec);
                }
            });
        const Eigen::VectorXd se = mom.standard_error();
        for (int j = 0; j < J; ++j) {
            if (!std::isfinite(mom.mean[j]) || !std::isfinite(mom.mean[J + j])) finite = false;
            if (mom.mean[j] > rep.estimate[j]) {
                rep.estimate[j] = mom.mean[j];
                rep.se[j] = se[j];
                rep.argsup[j] = static_cast<int>(xi);
            }
            if (mom.mean[J + j] > rep.exp_estimate[j]) {
                rep.exp_estimate[j] = mom.mean[J + j];
                rep.exp_se[j] = se[J + j];
            }
        }
    }

    rep.c_gamma = 0.0;
    for (int j = 0; j < J; ++j)
        rep.c_gamma = std::max(rep.c_gamma, (std::log(rep.exp_estimate[j]) - std::log(rep.gamma)) / ts[j]);
    if (!std::isfinite(rep.c_gamma)) finite = false;

    if (!finite) {
        rep.verdict = KatoVerdict::neither;
        rep.note = "divergent weight estimates at tested resolution";
        return rep;
    }
    if (J >= 2) {
        const double r1 = std::sqrt(ts[0]), r2 = std::sqrt(ts[1]);
        rep.intercept = (rep.estimate[0] * r2 - rep.estimate[1] * r1) / (r2 - r1);
        rep.intercept_se = (rep.se[0] * r2 + rep.se[1] * r1) / (r2 - r1);
    } else {
        rep.intercept = rep.estimate[0];
        rep.intercept_se = rep.se[0];
    }
    if (rep.intercept <= 2.0 * rep.intercept_se) {
        rep.verdict = KatoVerdict::kato;
    } else if (*std::min_element(rep.estimate.begin(), rep.estimate.end()) < 1.0) {
        rep.verdict = KatoVerdict::dynkin;
    } else {
        rep.verdict = KatoVerdict::neither;
    }
    rep.note = "sup over the declared x sample; verdict is resolution-limited";
    return rep;
}

}  // namespace hodgemc
