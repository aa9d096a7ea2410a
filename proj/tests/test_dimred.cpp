#include "test_helpers.hpp"

#include <cmath>

#include <mfuq/dimred.hpp>
#include <mfuq/flow.hpp>
#include <mfuq/input_law.hpp>
#include <mfuq/rng.hpp>
#include <mfuq/special_functions.hpp>

using namespace mfuq;

namespace {

constexpr double pi = 3.14159265358979323846;

Matrix gaussian_points(int n, int d, std::uint64_t seed) {
    return sample(InputLaw{StdGaussian{d}}, n, seed).data;
}

double phi(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * pi); }

}  // namespace

TEST_CASE("gradient sources agree on a smooth function") {
    auto f = [](const Vec& x) { return std::exp(0.7 * x[0] + 0.3 * x[1]) + 0.15 * std::sin(2.0 * pi * x[0]); };
    auto grad = [&](const Vec& x) {
        const double e = std::exp(0.7 * x[0] + 0.3 * x[1]);
        return Vec{0.7 * e + 0.15 * 2.0 * pi * std::cos(2.0 * pi * x[0]), 0.3 * e};
    };
    const GradientSource analytic{AnalyticGradient{grad}};
    const GradientSource fd{FiniteDifferenceGradient{f, 1e-4}};
    Xoshiro256 rng(3);
    for (int t = 0; t < 50; ++t) {
        const Vec x = {2.0 * rng.uniform01() - 1.0, 2.0 * rng.uniform01() - 1.0};
        const Vec ga = eval_gradient(analytic, x);
        const Vec gf = eval_gradient(fd, x);
        for (int j = 0; j < 2; ++j) CHECK_CLOSE(gf[j], ga[j], 1e-6 * std::max(1.0, std::fabs(ga[j])));
    }
}

TEST_CASE("surrogate gradients route through the network sensitivity") {
    DenseNet net = make_dense_net({2, 8, 1}, Activation::Tanh, 11);
    const GradientSource src{SurrogateGradient{net}};
    const Vec x = {0.3, -0.6};
    const Vec g = eval_gradient(src, x);
    const Vec g_ref = net.grad_input(x);
    CHECK(g[0] == g_ref[0]);
    CHECK(g[1] == g_ref[1]);
}

TEST_CASE("a linear model yields its coefficient outer product exactly") {
    const Vec a = {3.0, 4.0};
    const GradientSource src{AnalyticGradient{[&](const Vec&) { return a; }}};
    const Matrix c = estimate_c_matrix(src, gaussian_points(100, 2, 5));
    CHECK_CLOSE(c(0, 0), 9.0, 1e-12);
    CHECK_CLOSE(c(0, 1), 12.0, 1e-12);
    CHECK_CLOSE(c(1, 0), 12.0, 1e-12);
    CHECK_CLOSE(c(1, 1), 16.0, 1e-12);

    const ActiveSubspace as = active_subspace(c, 1);
    CHECK_CLOSE(as.eigenvalues[0], 25.0, 1e-10);
    CHECK_CLOSE(as.eigenvalues[1], 0.0, 1e-10);
    CHECK_CLOSE(as.w(0, 0), 0.6, 1e-10);
    CHECK_CLOSE(as.w(1, 0), 0.8, 1e-10);
}

TEST_CASE("gradient matrix of the gaussianized additive model matches closed form") {
    // The additive model x + y on the centered unit square, composed with the
    // inverse analytic gaussianizer, has gradient (2 phi(n1), 2 phi(n2)) in
    // normal coordinates; its second-moment matrix is
    // [[2/(pi sqrt 3), 1/pi], [1/pi, 2/(pi sqrt 3)]].
    const GradientSource src{AnalyticGradient{
        [](const Vec& n) { return Vec{2.0 * phi(n[0]), 2.0 * phi(n[1])}; }}};
    const Matrix c = estimate_c_matrix(src, gaussian_points(200000, 2, 29));
    const double diag = 2.0 / (pi * std::sqrt(3.0));
    const double off = 1.0 / pi;
    CHECK_CLOSE(c(0, 0), diag, 0.01);
    CHECK_CLOSE(c(1, 1), diag, 0.01);
    CHECK_CLOSE(c(0, 1), off, 0.01);

    const ActiveSubspace as = active_subspace(c, 1);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK_CLOSE(as.w(0, 0), inv_sqrt2, 0.01);
    CHECK_CLOSE(as.w(1, 0), inv_sqrt2, 0.01);
}

TEST_CASE("eigenvector signs follow the largest-component convention") {
    // Rank-one matrix whose dominant direction is (-0.6, -0.8).
    Matrix c(2, 2);
    c(0, 0) = 0.36;
    c(0, 1) = 0.48;
    c(1, 0) = 0.48;
    c(1, 1) = 0.64;
    const ActiveSubspace as = active_subspace(c, 2);
    CHECK(as.w(1, 0) > 0.0);  // largest-magnitude entry positive
    CHECK_CLOSE(as.w(0, 0), 0.6, 1e-10);
    CHECK_CLOSE(as.w(1, 0), 0.8, 1e-10);
    CHECK_THROWS_AS(active_subspace(c, 3), std::invalid_argument);
    CHECK_THROWS_AS(active_subspace(c, 0), std::invalid_argument);
}

TEST_CASE("projection and lift are adjoint maps through w") {
    Matrix c(3, 3);
    for (int i = 0; i < 3; ++i) c(i, i) = 3.0 - i;
    c(0, 1) = c(1, 0) = 0.4;
    const ActiveSubspace as = active_subspace(c, 2);
    const Vec x = {1.0, -2.0, 0.5};
    const Vec z = as_project(as, x);
    CHECK(z.size() == 2);
    const Vec back = as_lift(as, z);
    CHECK(back.size() == 3);
    // W^T W = I for orthonormal columns.
    const Vec z2 = as_project(as, back);
    CHECK_CLOSE(z2[0], z[0], 1e-12);
    CHECK_CLOSE(z2[1], z[1], 1e-12);

    const Matrix pts = gaussian_points(10, 3, 9);
    const Matrix zs = project_rows(as, pts);
    CHECK(zs.rows == 10);
    CHECK(zs.cols == 2);
    const Vec z0 = as_project(as, pts.row_vec(0));
    CHECK(zs(0, 0) == z0[0]);
    CHECK(zs(0, 1) == z0[1]);
}

TEST_CASE("latent sign matching flips anticorrelated lf columns") {
    const Matrix z_hf = gaussian_points(200, 2, 13);
    Matrix z_lf = z_hf;
    for (int i = 0; i < z_lf.rows; ++i) z_lf(i, 1) = -z_lf(i, 1);

    ActiveSubspace lf;
    lf.w = Matrix::identity(2);
    lf.eigenvalues = {1.0, 1.0};
    const Vec signs = match_latent_signs(lf, z_hf, z_lf);
    CHECK(signs[0] == 1.0);
    CHECK(signs[1] == -1.0);
    CHECK(lf.w(0, 0) == 1.0);
    CHECK(lf.w(1, 1) == -1.0);
}

TEST_CASE("active subspaces serialize to json and back") {
    Matrix c(2, 2);
    c(0, 0) = 2.0;
    c(0, 1) = c(1, 0) = 1.0;
    c(1, 1) = 2.0;
    const ActiveSubspace as = active_subspace(c, 2);
    const ActiveSubspace back = active_subspace_from_json(active_subspace_to_json(as));
    CHECK(back.w.rows == as.w.rows);
    CHECK(back.w.cols == as.w.cols);
    for (std::size_t i = 0; i < as.w.a.size(); ++i) CHECK(back.w.a[i] == as.w.a[i]);
    for (std::size_t i = 0; i < as.eigenvalues.size(); ++i)
        CHECK(back.eigenvalues[i] == as.eigenvalues[i]);
}

TEST_CASE("latent alignment recovers a planted permutation with signs") {
    const Matrix z_hf = gaussian_points(500, 3, 17);
    // LF columns: lf[:,0] = -hf[:,2], lf[:,1] = hf[:,0], lf[:,2] = -hf[:,1].
    Matrix z_lf(500, 3);
    Xoshiro256 noise(18);
    for (int i = 0; i < 500; ++i) {
        z_lf(i, 0) = -z_hf(i, 2) + 0.01 * (noise.uniform01() - 0.5);
        z_lf(i, 1) = z_hf(i, 0) + 0.01 * (noise.uniform01() - 0.5);
        z_lf(i, 2) = -z_hf(i, 1) + 0.01 * (noise.uniform01() - 0.5);
    }
    const LatentAlignment a = align_latents(z_hf, z_lf);
    CHECK_FALSE(a.greedy);
    CHECK(a.perm[0] == 1);
    CHECK(a.perm[1] == 2);
    CHECK(a.perm[2] == 0);
    CHECK(a.sign[0] == 1.0);
    CHECK(a.sign[1] == -1.0);
    CHECK(a.sign[2] == -1.0);

    const Vec mapped = apply_alignment(a, z_hf.row_vec(0));
    CHECK_CLOSE(mapped[1], z_hf(0, 0), 1e-12);
    CHECK_CLOSE(mapped[2], -z_hf(0, 1), 1e-12);
    CHECK_CLOSE(mapped[0], -z_hf(0, 2), 1e-12);
}

TEST_CASE("alignment above the exhaustive limit falls back to greedy matching") {
    const Matrix z_hf = gaussian_points(300, 7, 21);
    Matrix z_lf(300, 7);
    for (int i = 0; i < 300; ++i)
        for (int j = 0; j < 7; ++j) z_lf(i, j) = z_hf(i, (j + 3) % 7);
    const LatentAlignment a = align_latents(z_hf, z_lf);
    CHECK(a.greedy);
    std::vector<bool> seen(7, false);
    for (int j = 0; j < 7; ++j) {
        CHECK_FALSE(seen[a.perm[j]]);
        seen[a.perm[j]] = true;
    }
    for (int j = 0; j < 7; ++j) CHECK(a.perm[j] == (j + 4) % 7);
}

TEST_CASE("autoencoder loss gradient matches finite differences") {
    const Matrix xs = sample(InputLaw{UniformBox{{-1.0, -1.0}, {1.0, 1.0}}}, 20, 25).data;
    DenseNet surrogate = make_dense_net({2, 6, 1}, Activation::Tanh, 26);
    Vec q(20);
    for (int i = 0; i < 20; ++i) q[i] = xs(i, 0) + xs(i, 1);

    Autoencoder ae = make_autoencoder(2, 1, {4}, {4}, xs, 27);
    const std::size_t n_enc = ae.encoder.param_count();
    Vec grad(n_enc + ae.decoder.param_count(), 0.0);
    const double loss = ae_loss_and_grad(ae, surrogate, xs, q, &grad);
    CHECK(std::isfinite(loss));

    const double h = 1e-6;
    Autoencoder probe = ae;
    Vec p_enc = ae.encoder.flatten_params();
    Vec p_dec = ae.decoder.flatten_params();
    for (std::size_t k = 0; k < grad.size(); k += 5) {
        Vec pe = p_enc, pd = p_dec;
        if (k < n_enc)
            pe[k] += h;
        else
            pd[k - n_enc] += h;
        probe.encoder.unflatten_params(pe);
        probe.decoder.unflatten_params(pd);
        const double up = ae_loss_and_grad(probe, surrogate, xs, q, nullptr);
        if (k < n_enc)
            pe[k] -= 2.0 * h;
        else
            pd[k - n_enc] -= 2.0 * h;
        probe.encoder.unflatten_params(pe);
        probe.decoder.unflatten_params(pd);
        const double dn = ae_loss_and_grad(probe, surrogate, xs, q, nullptr);
        CHECK_CLOSE(grad[k], (up - dn) / (2.0 * h), 1e-5);
    }
}

TEST_CASE("autoencoder trained through an exact surrogate reconstructs an additive model") {
    // Surrogate computing exactly x + y: single affine layer, identity maps.
    DenseNet surrogate = make_dense_net({2, 1}, Activation::Tanh, 0);
    surrogate.weights[0](0, 0) = 1.0;
    surrogate.weights[0](0, 1) = 1.0;
    surrogate.biases[0][0] = 0.0;

    const Matrix xs = sample(InputLaw{UniformBox{{-1.0, -1.0}, {1.0, 1.0}}}, 500, 31).data;
    Vec q(500);
    for (int i = 0; i < 500; ++i) q[i] = xs(i, 0) + xs(i, 1);

    Autoencoder ae = make_autoencoder(2, 1, {}, {}, xs, 33);
    AeTrainConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.scheduler_factor = 0.999;
    cfg.epochs = 1500;
    const AeTrainReport report = train_autoencoder(ae, surrogate, xs, q, cfg);
    CHECK(report.final_loss < report.initial_loss);
    CHECK(report.final_loss < 0.02);

    Vec recon(500);
    for (int i = 0; i < 500; ++i)
        recon[i] = surrogate.forward_scalar(ae.decoder.forward(ae.encoder.forward(xs.row_vec(i))));
    CHECK(pearson(q, recon) > 0.999);
}

TEST_CASE("autoencoders serialize to json and back") {
    const Matrix xs = gaussian_points(50, 2, 41);
    const Autoencoder ae = make_autoencoder(2, 1, {3}, {3}, xs, 42);
    const Autoencoder back = autoencoder_from_json(autoencoder_to_json(ae));
    const Vec x = {0.2, -0.7};
    const Vec z1 = ae.encoder.forward(x);
    const Vec z2 = back.encoder.forward(x);
    CHECK(z1[0] == z2[0]);
    const Vec d1 = ae.decoder.forward(z1);
    const Vec d2 = back.decoder.forward(z2);
    CHECK(d1[0] == d2[0]);
    CHECK(d1[1] == d2[1]);
}

TEST_CASE("pearson correlation basics") {
    const Vec x = {1.0, 2.0, 3.0, 4.0};
    const Vec y = {2.0, 4.0, 6.0, 8.0};
    CHECK_CLOSE(pearson(x, y), 1.0, 1e-12);
    Vec yn = y;
    for (double& v : yn) v = -v;
    CHECK_CLOSE(pearson(x, yn), -1.0, 1e-12);
    CHECK_THROWS_AS(pearson(x, Vec{5.0, 5.0, 5.0, 5.0}), std::domain_error);
}
