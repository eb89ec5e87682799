#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sqd::nn {

using Vec = std::vector<double>;

double softplus(double x);
double sigmoid(double x);

// 0.5*ln(2*pi*sigma^2) + (x - mu)^2 / (2*sigma^2)
double gaussian_nll(double x, double mu, double sigma);
// Partial derivatives of gaussian_nll w.r.t. mu and sigma.
std::pair<double, double> gaussian_nll_grad(double x, double mu, double sigma);

// Visitor over (param array, grad array) pairs; used for flattening,
// optimization and gradient checking.
using ParamVisitor = std::function<void(Vec& params, Vec& grads)>;

struct DenseLayer {
    int in = 0;
    int out = 0;
    bool tanh_act = false;
    Vec W;  // out x in, row-major
    Vec b;  // out
    Vec gW, gb;

    DenseLayer() = default;
    DenseLayer(int in_dim, int out_dim, bool tanh_activation);

    // pre, if given, receives the pre-activation values needed by backward().
    Vec forward(const Vec& x, Vec* pre = nullptr) const;
    // Accumulates parameter gradients; returns dL/dx.
    Vec backward(const Vec& x, const Vec& pre, const Vec& dy);

    void init_uniform(std::mt19937_64& rng, double range = 0.1);
    void zero_grads();
    void visit(const ParamVisitor& fn);
};

struct LstmCell {
    int in = 0;
    int hidden = 0;
    // Gate order: input, forget, output, candidate. W: hidden x in, U: hidden x hidden.
    Vec Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wg, Ug, bg;
    Vec gWi, gUi, gbi, gWf, gUf, gbf, gWo, gUo, gbo, gWg, gUg, gbg;

    LstmCell() = default;
    LstmCell(int in_dim, int hidden_dim);

    struct Cache {
        Vec x, h_prev, c_prev;
        Vec i, f, o, g, c, h;
    };

    // Returns (h, c); fills cache for backward when given.
    std::pair<Vec, Vec> forward(const Vec& h_prev, const Vec& c_prev, const Vec& x,
                                Cache* cache = nullptr) const;
    // Given upstream dh, dc at this step, accumulates parameter gradients and
    // returns (dh_prev, dc_prev, dx).
    std::tuple<Vec, Vec, Vec> backward(const Cache& cache, const Vec& dh, const Vec& dc);

    void init_uniform(std::mt19937_64& rng, double range = 0.1);
    void zero_grads();
    void visit(const ParamVisitor& fn);
};

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Adam {
    AdamConfig cfg;
    Vec m, v;
    long t = 0;

    explicit Adam(AdamConfig c = {}) : cfg(c) {}

    // In-place update over a flat parameter view. Accumulators are sized
    // lazily on the first call and must keep the same size afterwards.
    void step(std::span<double> params, std::span<const double> grads);
};

// Max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// with a central difference of width h. `loss` must not mutate params
// observably (it is handed a scratch copy).
double check_gradients(const std::function<double(std::span<const double>)>& loss,
                       std::span<const double> params, std::span<const double> analytic,
                       double h = 1e-4);

// Flat views over a visit()-style parameter tree.
Vec flatten(const std::function<void(const ParamVisitor&)>& visit_all, bool grads);
void unflatten(const std::function<void(const ParamVisitor&)>& visit_all,
               std::span<const double> flat);

}  // namespace sqd::nn
