#include "mfuq/problems.hpp"

#include <cmath>

namespace mfuq {

namespace {

constexpr double kPi = 3.14159265358979323846;

DenseNet single_layer(const Matrix& w) {
    DenseNet net = make_dense_net({w.cols, w.rows}, Activation::Tanh, 0);
    net.weights[0] = w;
    net.biases[0] = Vec(static_cast<std::size_t>(w.rows), 0.0);
    return net;
}

Matrix from_rows(std::initializer_list<Vec> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows.begin()->size());
    Matrix m(r, c);
    int i = 0;
    for (const Vec& row : rows) {
        for (int j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
        ++i;
    }
    return m;
}

// Leading direction oriented so its coordinate sum is positive; both models
// increase along (1, 1), so this makes the latents positively correlated.
ActiveSubspace oriented_subspace(const Matrix& c) {
    ActiveSubspace as = active_subspace(c, 1);
    if (as.w(0, 0) + as.w(1, 0) < 0.0) {
        as.w(0, 0) = -as.w(0, 0);
        as.w(1, 0) = -as.w(1, 0);
    }
    return as;
}

}  // namespace

TheoreticalExample theoretical_example() {
    TheoreticalExample ex;

    const InputLaw law{UniformBox{{-1.0, -1.0}, {1.0, 1.0}}};

    ex.hf.label = "theoretical_hf";
    ex.hf.d = 2;
    ex.hf.cost = 1.0;
    ex.hf.law = law;
    ex.hf.evaluate = [](const Vec& v) { return v[0] + v[1]; };
    ex.hf.gradient = [](const Vec&) { return Vec{1.0, 1.0}; };

    ex.lf.label = "theoretical_lf";
    ex.lf.d = 2;
    ex.lf.cost = 0.01;
    ex.lf.law = law;
    ex.lf.evaluate = [](const Vec& v) { return 0.5 * v[0] + 2.0 * v[1]; };
    ex.lf.gradient = [](const Vec&) { return Vec{0.5, 2.0}; };

    ex.t = std::shared_ptr<const Flow>(make_analytic_cdf_flow(law));

    // In eta the gradients are (a 2phi(eta_1), b 2phi(eta_2)) for a model
    // a x + b y, with E[phi^2] = 1/(2 pi sqrt 3) and E[phi] = 1/(2 sqrt pi),
    // so the second-moment matrices have entries 4ab E[phi]^2 = ab/pi off
    // the diagonal and 4a^2 E[phi^2] = 2a^2/(pi sqrt 3) on it.
    const double diag_unit = 2.0 / (kPi * std::sqrt(3.0));
    ex.c_hf = Matrix(2, 2);
    ex.c_hf(0, 0) = ex.c_hf(1, 1) = diag_unit;
    ex.c_hf(0, 1) = ex.c_hf(1, 0) = 1.0 / kPi;
    ex.c_lf = Matrix(2, 2);
    ex.c_lf(0, 0) = 0.25 * diag_unit;
    ex.c_lf(1, 1) = 4.0 * diag_unit;
    ex.c_lf(0, 1) = ex.c_lf(1, 0) = 1.0 / kPi;

    ex.as_hf = oriented_subspace(ex.c_hf);
    ex.as_lf = oriented_subspace(ex.c_lf);

    // Exact autoencoders: the encoders are the models themselves, the
    // decoders right inverses, so Q composed with its decoder is the
    // identity on the latent space.
    ex.aes.model_as_encoder = false;
    ex.aes.hf.encoder = single_layer(from_rows({{1.0, 1.0}}));
    ex.aes.hf.decoder = single_layer(from_rows({{0.5}, {0.5}}));
    ex.aes.lf.encoder = single_layer(from_rows({{0.5, 2.0}}));
    ex.aes.lf.decoder = single_layer(from_rows({{0.4}, {0.4}}));

    // x + y is triangular on [-2, 2]; x/2 + 2y is trapezoidal on
    // [-5/2, 5/2] with flat top on [-3/2, 3/2].
    ex.latent_law_hf = InputLaw{Triangular1D{-2.0, 0.0, 2.0}};
    ex.latent_law_lf = InputLaw{Trapezoidal1D{-2.5, -1.5, 1.5, 2.5}};
    ex.s_hf = std::shared_ptr<const Flow>(make_analytic_cdf_flow(ex.latent_law_hf));
    ex.s_lf = std::shared_ptr<const Flow>(make_analytic_cdf_flow(ex.latent_law_lf));

    // Cov = 5/6 against sqrt(Var_hf Var_lf) = sqrt(2/3 * 17/12).
    ex.rho = 5.0 / std::sqrt(34.0);
    ex.rho_as = 0.98;
    ex.rho_ae = 0.99;

    return ex;
}

}  // namespace mfuq
