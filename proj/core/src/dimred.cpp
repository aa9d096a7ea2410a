#include "mfuq/dimred.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mfuq/optimizer.hpp"
#include "mfuq/rng.hpp"

namespace mfuq {

namespace {

template <class... Ts>
struct Overload : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overload(Ts...) -> Overload<Ts...>;

// Alignment treats a constant latent column as uncorrelated instead of
// failing; such columns carry no usable pairing information anyway.
double corr_or_zero(const Vec& x, const Vec& y) {
    if (sample_variance(x) == 0.0 || sample_variance(y) == 0.0) return 0.0;
    return pearson(x, y);
}

}  // namespace

Vec eval_gradient(const GradientSource& g, const Vec& x) {
    return std::visit(Overload{
                          [&](const AnalyticGradient& a) { return a.grad(x); },
                          [&](const SurrogateGradient& s) { return s.net.grad_input(x); },
                          [&](const FiniteDifferenceGradient& fd) {
                              Vec grad(x.size());
                              for (std::size_t j = 0; j < x.size(); ++j) {
                                  const double step = fd.h * std::max(1.0, std::fabs(x[j]));
                                  Vec xp = x, xm = x;
                                  xp[j] += step;
                                  xm[j] -= step;
                                  grad[j] = (fd.f(xp) - fd.f(xm)) / (2.0 * step);
                              }
                              return grad;
                          },
                      },
                      g);
}

Matrix estimate_c_matrix(const GradientSource& g, const Matrix& xs) {
    if (xs.rows < 1) throw std::invalid_argument("estimate_c_matrix: empty sample");
    const int d = xs.cols;
    Matrix c(d, d);
    for (int i = 0; i < xs.rows; ++i) {
        const Vec grad = eval_gradient(g, xs.row_vec(i));
        if (static_cast<int>(grad.size()) != d)
            throw std::invalid_argument("estimate_c_matrix: gradient dimension mismatch");
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) c(a, b) += grad[a] * grad[b];
    }
    const double inv_n = 1.0 / static_cast<double>(xs.rows);
    for (double& v : c.a) v *= inv_n;
    return c;
}

ActiveSubspace active_subspace(const Matrix& c, int r) {
    if (r < 1 || r > c.rows) throw std::invalid_argument("active_subspace: rank out of range");
    const SymmetricEigen eig = jacobi_eigen_sym(c);
    ActiveSubspace as;
    as.eigenvalues = eig.eigenvalues;
    as.w = Matrix(c.rows, r);
    for (int j = 0; j < r; ++j) {
        int lead = 0;
        for (int i = 1; i < c.rows; ++i)
            if (std::fabs(eig.vectors(i, j)) > std::fabs(eig.vectors(lead, j))) lead = i;
        const double flip = eig.vectors(lead, j) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < c.rows; ++i) as.w(i, j) = flip * eig.vectors(i, j);
    }
    return as;
}

Vec as_project(const ActiveSubspace& as, const Vec& x) { return matvec_t(as.w, x); }

Vec as_lift(const ActiveSubspace& as, const Vec& z) { return matvec(as.w, z); }

Matrix project_rows(const ActiveSubspace& as, const Matrix& xs) {
    if (xs.cols != as.w.rows) throw std::invalid_argument("project_rows: dimension mismatch");
    Matrix out(xs.rows, as.w.cols);
    for (int i = 0; i < xs.rows; ++i) {
        const Vec z = as_project(as, xs.row_vec(i));
        for (int j = 0; j < out.cols; ++j) out(i, j) = z[j];
    }
    return out;
}

Vec match_latent_signs(ActiveSubspace& lf, const Matrix& z_hf, const Matrix& z_lf) {
    if (z_hf.cols != lf.w.cols || z_lf.cols != lf.w.cols || z_hf.rows != z_lf.rows)
        throw std::invalid_argument("match_latent_signs: shape mismatch");
    Vec signs(lf.w.cols, 1.0);
    for (int j = 0; j < lf.w.cols; ++j) {
        if (corr_or_zero(z_hf.col_vec(j), z_lf.col_vec(j)) < 0.0) {
            signs[j] = -1.0;
            for (int i = 0; i < lf.w.rows; ++i) lf.w(i, j) = -lf.w(i, j);
        }
    }
    return signs;
}

nlohmann::json active_subspace_to_json(const ActiveSubspace& as) {
    return {{"rows", as.w.rows}, {"cols", as.w.cols}, {"w", as.w.a}, {"eigenvalues", as.eigenvalues}};
}

ActiveSubspace active_subspace_from_json(const nlohmann::json& j) {
    ActiveSubspace as;
    as.w = Matrix(j.at("rows").get<int>(), j.at("cols").get<int>());
    as.w.a = j.at("w").get<Vec>();
    as.eigenvalues = j.at("eigenvalues").get<Vec>();
    if (as.w.a.size() != static_cast<std::size_t>(as.w.rows) * as.w.cols)
        throw std::invalid_argument("active_subspace_from_json: bad matrix payload");
    return as;
}

LatentAlignment align_latents(const Matrix& z_hf, const Matrix& z_lf) {
    if (z_hf.cols != z_lf.cols || z_hf.rows != z_lf.rows || z_hf.cols < 1)
        throw std::invalid_argument("align_latents: shape mismatch");
    const int r = z_hf.cols;
    Matrix corr(r, r);
    for (int j = 0; j < r; ++j) {
        const Vec hf = z_hf.col_vec(j);
        for (int k = 0; k < r; ++k) corr(j, k) = corr_or_zero(hf, z_lf.col_vec(k));
    }

    LatentAlignment out;
    out.perm.resize(r);
    out.sign.assign(r, 1.0);

    if (r <= 6) {
        std::vector<int> perm(r);
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<int> best = perm;
        double best_score = -1.0;
        do {
            double score = 0.0;
            for (int j = 0; j < r; ++j) score += std::fabs(corr(j, perm[j]));
            if (score > best_score) {
                best_score = score;
                best = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        out.perm = best;
    } else {
        // Too many permutations; repeatedly take the strongest remaining pair.
        out.greedy = true;
        std::vector<bool> row_used(r, false), col_used(r, false);
        for (int step = 0; step < r; ++step) {
            int bj = -1, bk = -1;
            double best = -1.0;
            for (int j = 0; j < r; ++j) {
                if (row_used[j]) continue;
                for (int k = 0; k < r; ++k) {
                    if (col_used[k]) continue;
                    if (std::fabs(corr(j, k)) > best) {
                        best = std::fabs(corr(j, k));
                        bj = j;
                        bk = k;
                    }
                }
            }
            row_used[bj] = true;
            col_used[bk] = true;
            out.perm[bj] = bk;
        }
    }
    for (int j = 0; j < r; ++j)
        if (corr(j, out.perm[j]) < 0.0) out.sign[j] = -1.0;
    return out;
}

Vec apply_alignment(const LatentAlignment& a, const Vec& z_hf) {
    if (z_hf.size() != a.perm.size()) throw std::invalid_argument("apply_alignment: size mismatch");
    Vec out(z_hf.size());
    for (std::size_t j = 0; j < z_hf.size(); ++j) out[a.perm[j]] = a.sign[j] * z_hf[j];
    return out;
}

Autoencoder make_autoencoder(int d, int r, const std::vector<int>& encoder_hidden,
                             const std::vector<int>& decoder_hidden, const Matrix& xs,
                             std::uint64_t seed) {
    if (d < 1 || r < 1 || r > d) throw std::invalid_argument("make_autoencoder: bad dimensions");
    if (xs.cols != d) throw std::invalid_argument("make_autoencoder: sample dimension mismatch");
    std::vector<int> enc_sizes{d};
    enc_sizes.insert(enc_sizes.end(), encoder_hidden.begin(), encoder_hidden.end());
    enc_sizes.push_back(r);
    std::vector<int> dec_sizes{r};
    dec_sizes.insert(dec_sizes.end(), decoder_hidden.begin(), decoder_hidden.end());
    dec_sizes.push_back(d);

    Autoencoder ae;
    ae.encoder = make_dense_net(enc_sizes, Activation::Tanh, derive_seed(seed, 0));
    ae.decoder = make_dense_net(dec_sizes, Activation::Tanh, derive_seed(seed, 1));
    // Encoder reads raw inputs; decoder writes raw inputs back. Latents stay
    // unnormalized in between.
    set_normalization(ae.encoder, xs, Matrix(xs.rows, r));
    ae.encoder.out_map = AffineMap::identity(r);
    set_normalization(ae.decoder, Matrix(xs.rows, r), xs);
    ae.decoder.in_map = AffineMap::identity(r);
    return ae;
}

double ae_loss_and_grad(const Autoencoder& ae, const DenseNet& surrogate, const Matrix& xs,
                        const Vec& q, Vec* grad) {
    const int n = xs.rows;
    if (n < 1) throw std::invalid_argument("ae_loss_and_grad: empty sample");
    if (q.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("ae_loss_and_grad: target size mismatch");
    if (ae.encoder.input_dim() != xs.cols || ae.decoder.output_dim() != xs.cols ||
        ae.encoder.output_dim() != ae.decoder.input_dim() || surrogate.input_dim() != xs.cols ||
        surrogate.output_dim() != 1)
        throw std::invalid_argument("ae_loss_and_grad: inconsistent network shapes");
    const std::size_t n_enc = ae.encoder.param_count();
    if (grad && grad->size() != n_enc + ae.decoder.param_count())
        throw std::invalid_argument("ae_loss_and_grad: grad size mismatch");

    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    Vec enc_grad, dec_grad;
    if (grad) {
        enc_grad.assign(n_enc, 0.0);
        dec_grad.assign(ae.decoder.param_count(), 0.0);
    }
    for (int i = 0; i < n; ++i) {
        const Vec x = xs.row_vec(i);
        const ForwardCache ce = forward_cached(ae.encoder, x);
        const ForwardCache cd = forward_cached(ae.decoder, ce.y_raw);
        const ForwardCache cs = forward_cached(surrogate, cd.y_raw);
        const double resid = cs.y_raw[0] - q[i];
        loss += std::fabs(resid) * inv_n;
        if (!grad) continue;
        const double dLds = (resid > 0.0 ? 1.0 : (resid < 0.0 ? -1.0 : 0.0)) * inv_n;
        const Vec g_x = backward(surrogate, cs, {dLds}, nullptr);
        const Vec g_z = backward(ae.decoder, cd, g_x, &dec_grad);
        backward(ae.encoder, ce, g_z, &enc_grad);
    }
    if (grad) {
        for (std::size_t i = 0; i < n_enc; ++i) (*grad)[i] += enc_grad[i];
        for (std::size_t i = 0; i < dec_grad.size(); ++i) (*grad)[n_enc + i] += dec_grad[i];
    }
    return loss;
}

AeTrainReport train_autoencoder(Autoencoder& ae, const DenseNet& surrogate, const Matrix& xs,
                                const Vec& q, const AeTrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train_autoencoder: bad learning rate");
    if (!(cfg.scheduler_factor > 0.0 && cfg.scheduler_factor <= 1.0))
        throw std::invalid_argument("train_autoencoder: bad scheduler factor");
    if (cfg.epochs < 1) throw std::invalid_argument("train_autoencoder: epochs must be >= 1");

    const std::size_t n_enc = ae.encoder.param_count();
    Vec params = ae.encoder.flatten_params();
    {
        const Vec dec = ae.decoder.flatten_params();
        params.insert(params.end(), dec.begin(), dec.end());
    }
    Adam adam(params.size(), cfg.learning_rate);
    Vec grad(params.size());

    AeTrainReport report;
    report.epochs = cfg.epochs;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        adam.set_learning_rate(cfg.learning_rate *
                               std::pow(cfg.scheduler_factor, static_cast<double>(epoch)));
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = ae_loss_and_grad(ae, surrogate, xs, q, &grad);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_autoencoder: loss diverged at epoch " +
                                     std::to_string(epoch));
        if (epoch == 0) report.initial_loss = loss;
        adam.step(params, grad);
        ae.encoder.unflatten_params(Vec(params.begin(), params.begin() + n_enc));
        ae.decoder.unflatten_params(Vec(params.begin() + n_enc, params.end()));
    }
    report.final_loss = ae_loss_and_grad(ae, surrogate, xs, q, nullptr);
    return report;
}

nlohmann::json autoencoder_to_json(const Autoencoder& ae) {
    return {{"encoder", net_to_json(ae.encoder)}, {"decoder", net_to_json(ae.decoder)}};
}

Autoencoder autoencoder_from_json(const nlohmann::json& j) {
    Autoencoder ae;
    ae.encoder = net_from_json(j.at("encoder"));
    ae.decoder = net_from_json(j.at("decoder"));
    return ae;
}

}  // namespace mfuq
