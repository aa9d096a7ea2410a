#pragma once

#include <cstdint>
#include <functional>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mfuq/dense_net.hpp"
#include "mfuq/linalg.hpp"

namespace mfuq {

// Where gradients of a scalar model come from. Surrogate gradients use the
// network's exact input sensitivity; finite differences are central with a
// step scaled by the coordinate magnitude.
struct AnalyticGradient {
    std::function<Vec(const Vec&)> grad;
};
struct SurrogateGradient {
    DenseNet net;
};
struct FiniteDifferenceGradient {
    std::function<double(const Vec&)> f;
    double h = 1e-4;
};
using GradientSource = std::variant<AnalyticGradient, SurrogateGradient, FiniteDifferenceGradient>;

Vec eval_gradient(const GradientSource& g, const Vec& x);

// (1/n) sum of grad(x_i) grad(x_i)^T over the rows of xs, accumulated in row
// order so results are bit-reproducible. Symmetric by construction.
Matrix estimate_c_matrix(const GradientSource& g, const Matrix& xs);

// Leading eigenvectors of a gradient outer-product matrix. Column signs are
// fixed deterministically: the entry of largest magnitude is made positive
// (smallest index wins ties).
struct ActiveSubspace {
    Matrix w;         // d x r, columns are the leading eigenvectors
    Vec eigenvalues;  // all d of them, descending
};

ActiveSubspace active_subspace(const Matrix& c, int r);

Vec as_project(const ActiveSubspace& as, const Vec& x);  // W^T x
Vec as_lift(const ActiveSubspace& as, const Vec& z);     // W z
Matrix project_rows(const ActiveSubspace& as, const Matrix& xs);

// Flips the columns of `lf.w` so that each latent coordinate correlates
// non-negatively with its high-fidelity counterpart on pilot projections.
// Returns the signs that were applied.
Vec match_latent_signs(ActiveSubspace& lf, const Matrix& z_hf, const Matrix& z_lf);

nlohmann::json active_subspace_to_json(const ActiveSubspace& as);
ActiveSubspace active_subspace_from_json(const nlohmann::json& j);

// Pairing of latent coordinates between two models: HF coordinate j maps to
// LF coordinate perm[j] with sign sign[j], chosen to maximize the summed
// absolute correlation. Exhaustive for r <= 6, greedy above that.
struct LatentAlignment {
    std::vector<int> perm;
    Vec sign;
    bool greedy = false;
};

LatentAlignment align_latents(const Matrix& z_hf, const Matrix& z_lf);

// Places the HF latent vector into LF coordinates: out[perm[j]] = sign[j] * z[j].
Vec apply_alignment(const LatentAlignment& a, const Vec& z_hf);

// Encoder compresses model inputs to r latent coordinates, decoder expands
// them back. Both operate on raw (unnormalized) coordinates.
struct Autoencoder {
    DenseNet encoder;
    DenseNet decoder;
};

// Tanh nets; the encoder normalizes its input from the pilot sample, the
// decoder maps its raw output back into the data box. Zero hidden sizes give
// plain affine maps.
Autoencoder make_autoencoder(int d, int r, const std::vector<int>& encoder_hidden,
                             const std::vector<int>& decoder_hidden, const Matrix& xs,
                             std::uint64_t seed);

// Mean absolute reconstruction loss measured through a frozen surrogate:
// (1/n) sum |q_i - surrogate(decoder(encoder(x_i)))|. When `grad` is given it
// must hold encoder params followed by decoder params and is accumulated into.
double ae_loss_and_grad(const Autoencoder& ae, const DenseNet& surrogate, const Matrix& xs,
                        const Vec& q, Vec* grad);

struct AeTrainConfig {
    double learning_rate = 1e-3;
    double scheduler_factor = 1.0;  // lr_t = lr0 * factor^epoch
    int epochs = 2000;
    std::uint64_t seed = 0;
};

struct AeTrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int epochs = 0;
};

// Full-batch Adam on encoder and decoder parameters jointly; the surrogate
// only routes gradients and is never updated.
AeTrainReport train_autoencoder(Autoencoder& ae, const DenseNet& surrogate, const Matrix& xs,
                                const Vec& q, const AeTrainConfig& cfg);

nlohmann::json autoencoder_to_json(const Autoencoder& ae);
Autoencoder autoencoder_from_json(const nlohmann::json& j);

}  // namespace mfuq
