#include "mfuq/problems.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "mfuq/rng.hpp"
#include "mfuq/special_functions.hpp"

namespace mfuq {

namespace {

void check_shape(const FieldPair& fields, int m, const char* who) {
    if (fields.u.rows != m || fields.u.cols != m || fields.v.rows != m ||
        fields.v.cols != m) {
        throw std::invalid_argument(std::string(who) + ": fields must be " +
                                    std::to_string(m) + "x" + std::to_string(m));
    }
}

// du = D_u lap(u) + u - u^3 - k - v, dv = D_v lap(v) + u - v, written into
// preallocated fields. Ghost cells mirror the boundary cell, which makes the
// one-sided differences vanish (zero flux). The stencil adds the horizontal
// and vertical pairs first so that grid reflections commute with the operator
// exactly in floating point.
void rhs_into(const FieldPair& f, const RDConfig& cfg, FieldPair& out) {
    const int m = cfg.m;
    const double inv_dx2 = 1.0 / (cfg.dx() * cfg.dx());
    const double cu = cfg.d_u * inv_dx2;
    const double cv = cfg.d_v * inv_dx2;
    for (int i = 0; i < m; ++i) {
        const int up = i > 0 ? i - 1 : 0;
        const int dn = i < m - 1 ? i + 1 : m - 1;
        for (int j = 0; j < m; ++j) {
            const int lt = j > 0 ? j - 1 : 0;
            const int rt = j < m - 1 ? j + 1 : m - 1;
            const double u = f.u(i, j);
            const double v = f.v(i, j);
            const double lap_u =
                (f.u(i, lt) + f.u(i, rt)) + (f.u(up, j) + f.u(dn, j)) - 4.0 * u;
            const double lap_v =
                (f.v(i, lt) + f.v(i, rt)) + (f.v(up, j) + f.v(dn, j)) - 4.0 * v;
            double du = cu * lap_u;
            double dv = cv * lap_v;
            if (!cfg.zero_reactions) {
                du += u - u * u * u - cfg.k - v;
                dv += u - v;
            }
            out.u(i, j) = du;
            out.v(i, j) = dv;
        }
    }
}

void axpy_into(const FieldPair& y, double a, const FieldPair& x, FieldPair& out) {
    const std::size_t n = y.u.a.size();
    for (std::size_t t = 0; t < n; ++t) {
        out.u.a[t] = y.u.a[t] + a * x.u.a[t];
        out.v.a[t] = y.v.a[t] + a * x.v.a[t];
    }
}

bool finite_state(const FieldPair& f) {
    double s = 0.0;
    for (double x : f.u.a) s += x;
    for (double x : f.v.a) s += x;
    return std::isfinite(s);
}

}  // namespace

void validate_rd_config(const RDConfig& cfg) {
    if (cfg.m < 2) throw std::invalid_argument("rd: need at least 2 cells per side");
    if (cfg.steps < 1) throw std::invalid_argument("rd: need at least one step");
    if (!(cfg.t_final > 0.0) || !(cfg.half_width > 0.0)) {
        throw std::invalid_argument("rd: domain and final time must be positive");
    }
    if (cfg.d_u < 0.0 || cfg.d_v < 0.0) {
        throw std::invalid_argument("rd: diffusion coefficients must be nonnegative");
    }
    if (!(cfg.cfl() < 0.25)) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "rd: diffusion CFL number %.3g exceeds 0.25",
                      cfg.cfl());
        throw std::invalid_argument(buf);
    }
}

FieldPair rd_rhs(const FieldPair& fields, const RDConfig& cfg) {
    check_shape(fields, cfg.m, "rd_rhs");
    FieldPair out{Matrix(cfg.m, cfg.m), Matrix(cfg.m, cfg.m)};
    rhs_into(fields, cfg, out);
    return out;
}

FieldPair rd_solve(const RDConfig& cfg, const FieldPair& ic) {
    validate_rd_config(cfg);
    check_shape(ic, cfg.m, "rd_solve");

    const double dt = cfg.dt();
    FieldPair y = ic;
    FieldPair k1{Matrix(cfg.m, cfg.m), Matrix(cfg.m, cfg.m)};
    FieldPair k2 = k1, k3 = k1, k4 = k1, stage = k1;

    for (int step = 0; step < cfg.steps; ++step) {
        rhs_into(y, cfg, k1);
        axpy_into(y, 0.5 * dt, k1, stage);
        rhs_into(stage, cfg, k2);
        axpy_into(y, 0.5 * dt, k2, stage);
        rhs_into(stage, cfg, k3);
        axpy_into(y, dt, k3, stage);
        rhs_into(stage, cfg, k4);

        const double w = dt / 6.0;
        const std::size_t n = y.u.a.size();
        for (std::size_t t = 0; t < n; ++t) {
            y.u.a[t] += w * (k1.u.a[t] + 2.0 * (k2.u.a[t] + k3.u.a[t]) + k4.u.a[t]);
            y.v.a[t] += w * (k1.v.a[t] + 2.0 * (k2.v.a[t] + k3.v.a[t]) + k4.v.a[t]);
        }
        if (!finite_state(y)) {
            throw std::runtime_error("rd_solve: non-finite state at step " +
                                     std::to_string(step + 1));
        }
    }
    return y;
}

double rd_qoi(const FieldPair& fields) {
    if (fields.u.a.empty() || fields.u.a.size() != fields.v.a.size()) {
        throw std::invalid_argument("rd_qoi: mismatched fields");
    }
    double su = 0.0, sv = 0.0;
    for (double x : fields.u.a) su += std::abs(x);
    for (double x : fields.v.a) sv += std::abs(x);
    const double n = static_cast<double>(fields.u.a.size());
    return su / n + sv / n;
}

FieldPair rd_initial_condition(int m, std::uint64_t seed_ic) {
    if (m < 1) throw std::invalid_argument("rd_initial_condition: m must be positive");
    Xoshiro256 rng(seed_ic);
    FieldPair f{Matrix(m, m), Matrix(m, m)};
    for (double& x : f.u.a) x = normal_quantile(rng.uniform_open());
    for (double& x : f.v.a) x = normal_quantile(rng.uniform_open());
    return f;
}

FieldPair rd_block_average(const FieldPair& fine, int coarse_m) {
    const int fm = fine.u.rows;
    if (coarse_m < 1 || fm % coarse_m != 0 || fine.u.cols != fm ||
        fine.v.rows != fm || fine.v.cols != fm) {
        throw std::invalid_argument("rd_block_average: fine side must be a multiple of the coarse side");
    }
    const int b = fm / coarse_m;
    const double inv = 1.0 / (static_cast<double>(b) * b);
    FieldPair out{Matrix(coarse_m, coarse_m), Matrix(coarse_m, coarse_m)};
    for (int i = 0; i < coarse_m; ++i) {
        for (int j = 0; j < coarse_m; ++j) {
            double su = 0.0, sv = 0.0;
            for (int bi = 0; bi < b; ++bi) {
                for (int bj = 0; bj < b; ++bj) {
                    su += fine.u(i * b + bi, j * b + bj);
                    sv += fine.v(i * b + bi, j * b + bj);
                }
            }
            out.u(i, j) = su * inv;
            out.v(i, j) = sv * inv;
        }
    }
    return out;
}

std::string field_to_csv(const Matrix& field) {
    std::string out;
    out.reserve(static_cast<std::size_t>(field.rows) * field.cols * 20);
    char buf[32];
    for (int i = 0; i < field.rows; ++i) {
        for (int j = 0; j < field.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", field(i, j));
            if (j) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

RDModels rd_models(std::uint64_t seed_ic) {
    RDModels models;

    const auto ic_hf = std::make_shared<const FieldPair>(rd_initial_condition(64, seed_ic));
    const auto ic_lf = std::make_shared<const FieldPair>(rd_block_average(*ic_hf, 16));

    // D_u, D_v uniform on a triangle, k uniform and independent.
    Triangle2D diffusion;
    diffusion.v1 = {0.25e-3, 4e-3};
    diffusion.v2 = {1.75e-3, 5e-3};
    diffusion.v3 = {1e-3, 6e-3};
    const InputLaw k_law{UniformBox{{0.5e-3}, {1.5e-3}}};

    models.hf.label = "rd_hf";
    models.hf.d = 3;
    models.hf.cost = 1.0;
    models.hf.law = InputLaw{ProductLaw{{InputLaw{diffusion}, k_law}}};
    models.hf.evaluate = [ic_hf](const Vec& xi) {
        RDConfig cfg;
        cfg.d_u = xi[0];
        cfg.d_v = xi[1];
        cfg.k = xi[2];
        return rd_qoi(rd_solve(cfg, *ic_hf));
    };

    // The average of the triangle coordinates pushes forward to a triangular
    // law whose knots are the vertex averages: the level-set chord length is
    // piecewise linear with its peak at the middle vertex.
    const InputLaw dbar_law{Triangular1D{2.125e-3, 3.375e-3, 3.5e-3}};

    models.lf.label = "rd_lf";
    models.lf.d = 2;
    models.lf.cost = 0.1;
    models.lf.law = InputLaw{ProductLaw{{dbar_law, k_law}}};
    models.lf.evaluate = [ic_lf](const Vec& xi) {
        RDConfig cfg;
        cfg.m = 16;
        cfg.steps = 100;
        cfg.d_u = xi[0];
        cfg.d_v = xi[0];
        cfg.k = xi[1];
        return rd_qoi(rd_solve(cfg, *ic_lf));
    };

    models.hf_to_lf = [](const Vec& xi) { return Vec{0.5 * (xi[0] + xi[1]), xi[2]}; };

    return models;
}

}  // namespace mfuq
