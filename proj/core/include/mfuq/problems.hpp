#pragma once

// Ready-made benchmark problems: a linear pair where every pipeline
// ingredient has a closed form, an exponential pair with analytic gradients
// and exact mean, and a FitzHugh-Nagumo reaction-diffusion solver.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "mfuq/dimred.hpp"
#include "mfuq/estimators.hpp"
#include "mfuq/flow.hpp"
#include "mfuq/input_law.hpp"
#include "mfuq/linalg.hpp"

namespace mfuq {

// Q^HF = x + y versus Q^LF = x/2 + 2y on U([-1,1]^2). The bundle carries the
// exact versions of everything the pipelines otherwise learn from data.
struct TheoreticalExample {
    ModelSpec hf;
    ModelSpec lf;

    std::shared_ptr<const Flow> t;  // Gaussianizing input flow, shared law
    Matrix c_hf;  // gradient outer-product matrices of the models in eta
    Matrix c_lf;
    ActiveSubspace as_hf;  // leading directions, oriented so the latents
    ActiveSubspace as_lf;  // correlate positively

    AePair aes;               // exact single-layer autoencoders
    InputLaw latent_law_hf;   // law of Q^HF: triangular on [-2, 2]
    InputLaw latent_law_lf;   // law of Q^LF: trapezoidal on [-5/2, 5/2]
    std::shared_ptr<const Flow> s_hf;  // latent flows built from those laws
    std::shared_ptr<const Flow> s_lf;

    double rho;     // exact correlation 5/sqrt(34)
    double rho_as;  // reference value after the linear bridge
    double rho_ae;  // reference value after the nonlinear bridge
};

TheoreticalExample theoretical_example();

// Exponential-plus-oscillation pair on U([-1,1]^2) with analytic gradients,
// the exact input flow, and a closed-form mean; w = 0.01.
struct AnalyticPair {
    ModelSpec hf;
    ModelSpec lf;
    std::shared_ptr<const Flow> t;
    double exact_mean_hf;
};

AnalyticPair analytic_pair();

// ---- reaction-diffusion ----

// Explicit FV/RK4 discretization of the activator-inhibitor system
//   du/dt = D_u lap(u) + u - u^3 - k - v
//   dv/dt = D_v lap(v) + u - v
// on (-L, L)^2 with zero-flux boundaries.
struct RDConfig {
    int m = 64;       // finite-volume cells per side
    int steps = 400;  // RK4 steps over [0, T]
    double t_final = 4.0;
    double half_width = 1.0;  // domain half-width L
    double d_u = 1e-3;
    double d_v = 5e-3;
    double k = 1e-3;
    bool zero_reactions = false;  // pure-diffusion test mode

    double dt() const { return t_final / steps; }
    double dx() const { return 2.0 * half_width / m; }
    // largest diffusion CFL number of the explicit scheme
    double cfl() const {
        const double d = d_u > d_v ? d_u : d_v;
        return d * dt() / (dx() * dx());
    }
};

// Throws std::invalid_argument when shapes or signs are off or the CFL
// number reaches 0.25.
void validate_rd_config(const RDConfig& cfg);

struct FieldPair {
    Matrix u;
    Matrix v;
};

// Time derivatives: 5-point FV Laplacian with mirrored ghost cells plus the
// pointwise reactions. The stencil sums left+right and up+down pairwise, so
// reflections of the state reflect the result exactly.
FieldPair rd_rhs(const FieldPair& fields, const RDConfig& cfg);

// Classical RK4 over cfg.steps steps. Throws std::runtime_error naming the
// step at which the state stopped being finite.
FieldPair rd_solve(const RDConfig& cfg, const FieldPair& ic);

// mean |u| + mean |v| over cells; the cell-average quadrature of the domain
// integrals normalized by the domain area.
double rd_qoi(const FieldPair& fields);

// Standard normal noise in both fields, deterministic in the seed.
FieldPair rd_initial_condition(int m, std::uint64_t seed_ic);

// FV-consistent restriction: each coarse cell is the mean of the covering
// fine block. The fine side must be a multiple of the coarse side.
FieldPair rd_block_average(const FieldPair& fine, int coarse_m);

// Cell grid as CSV, one grid row per line, for snapshot plots.
std::string field_to_csv(const Matrix& field);

struct RDModels {
    ModelSpec hf;  // inputs (D_u, D_v, k) on a triangle x uniform law
    ModelSpec lf;  // inputs (D_bar, k); the coarse solver with D_u = D_v
    std::function<Vec(const Vec&)> hf_to_lf;  // (D_u, D_v, k) -> ((D_u+D_v)/2, k)
};

// The initial condition is drawn once from seed_ic at the fine resolution,
// block-averaged for the coarse model, and shared by all parameter samples.
RDModels rd_models(std::uint64_t seed_ic);

}  // namespace mfuq
