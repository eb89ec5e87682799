#include "sqd/nn.hpp"

#include <cmath>

namespace sqd::nn {

double softplus(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double gaussian_nll(double x, double mu, double sigma) {
    double d = x - mu;
    return 0.5 * std::log(2.0 * M_PI * sigma * sigma) + d * d / (2.0 * sigma * sigma);
}

std::pair<double, double> gaussian_nll_grad(double x, double mu, double sigma) {
    double d = x - mu;
    double s2 = sigma * sigma;
    double dmu = -d / s2;
    double dsigma = 1.0 / sigma - d * d / (s2 * sigma);
    return {dmu, dsigma};
}

namespace {

void uniform_fill(Vec& v, std::mt19937_64& rng, double range) {
    std::uniform_real_distribution<double> dist(-range, range);
    for (auto& x : v) x = dist(rng);
}

// y += M * x, M is rows x cols row-major
void matvec_acc(const Vec& m, const Vec& x, Vec& y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = m.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

// dM += dy * x^T; dx += M^T * dy
void matvec_backward(const Vec& m, const Vec& x, const Vec& dy, Vec& dm, Vec& dx, int rows,
                     int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* row = m.data() + static_cast<size_t>(r) * cols;
        double* drow = dm.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) {
            drow[c] += dy[r] * x[c];
            dx[c] += row[c] * dy[r];
        }
    }
}

}  // namespace

DenseLayer::DenseLayer(int in_dim, int out_dim, bool tanh_activation)
    : in(in_dim),
      out(out_dim),
      tanh_act(tanh_activation),
      W(static_cast<size_t>(in_dim) * out_dim, 0.0),
      b(out_dim, 0.0),
      gW(W.size(), 0.0),
      gb(b.size(), 0.0) {}

Vec DenseLayer::forward(const Vec& x, Vec* pre) const {
    if (static_cast<int>(x.size()) != in)
        throw std::logic_error("dense: input dimension mismatch");
    Vec y = b;
    matvec_acc(W, x, y, out, in);
    if (pre) *pre = y;
    if (tanh_act)
        for (auto& v : y) v = std::tanh(v);
    return y;
}

Vec DenseLayer::backward(const Vec& x, const Vec& pre, const Vec& dy) {
    Vec dpre = dy;
    if (tanh_act) {
        for (int r = 0; r < out; ++r) {
            double t = std::tanh(pre[r]);
            dpre[r] *= 1.0 - t * t;
        }
    }
    Vec dx(in, 0.0);
    matvec_backward(W, x, dpre, gW, dx, out, in);
    for (int r = 0; r < out; ++r) gb[r] += dpre[r];
    return dx;
}

void DenseLayer::init_uniform(std::mt19937_64& rng, double range) {
    uniform_fill(W, rng, range);
    uniform_fill(b, rng, range);
}

void DenseLayer::zero_grads() {
    std::fill(gW.begin(), gW.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
}

void DenseLayer::visit(const ParamVisitor& fn) {
    fn(W, gW);
    fn(b, gb);
}

LstmCell::LstmCell(int in_dim, int hidden_dim) : in(in_dim), hidden(hidden_dim) {
    size_t wi = static_cast<size_t>(hidden) * in;
    size_t uu = static_cast<size_t>(hidden) * hidden;
    for (Vec* w : {&Wi, &Wf, &Wo, &Wg}) w->assign(wi, 0.0);
    for (Vec* u : {&Ui, &Uf, &Uo, &Ug}) u->assign(uu, 0.0);
    for (Vec* bv : {&bi, &bf, &bo, &bg}) bv->assign(hidden, 0.0);
    for (Vec* g : {&gWi, &gWf, &gWo, &gWg}) g->assign(wi, 0.0);
    for (Vec* g : {&gUi, &gUf, &gUo, &gUg}) g->assign(uu, 0.0);
    for (Vec* g : {&gbi, &gbf, &gbo, &gbg}) g->assign(hidden, 0.0);
}

std::pair<Vec, Vec> LstmCell::forward(const Vec& h_prev, const Vec& c_prev, const Vec& x,
                                      Cache* cache) const {
    if (static_cast<int>(x.size()) != in || static_cast<int>(h_prev.size()) != hidden ||
        static_cast<int>(c_prev.size()) != hidden)
        throw std::logic_error("lstm: dimension mismatch");
    Vec ai = bi, af = bf, ao = bo, ag = bg;
    matvec_acc(Wi, x, ai, hidden, in);
    matvec_acc(Ui, h_prev, ai, hidden, hidden);
    matvec_acc(Wf, x, af, hidden, in);
    matvec_acc(Uf, h_prev, af, hidden, hidden);
    matvec_acc(Wo, x, ao, hidden, in);
    matvec_acc(Uo, h_prev, ao, hidden, hidden);
    matvec_acc(Wg, x, ag, hidden, in);
    matvec_acc(Ug, h_prev, ag, hidden, hidden);

    Vec i(hidden), f(hidden), o(hidden), g(hidden), c(hidden), h(hidden);
    for (int r = 0; r < hidden; ++r) {
        i[r] = sigmoid(ai[r]);
        f[r] = sigmoid(af[r]);
        o[r] = sigmoid(ao[r]);
        g[r] = std::tanh(ag[r]);
        c[r] = f[r] * c_prev[r] + i[r] * g[r];
        h[r] = o[r] * std::tanh(c[r]);
    }
    if (cache) *cache = Cache{x, h_prev, c_prev, i, f, o, g, c, h};
    return {std::move(h), std::move(c)};
}

std::tuple<Vec, Vec, Vec> LstmCell::backward(const Cache& cc, const Vec& dh, const Vec& dc) {
    Vec dai(hidden), daf(hidden), dao(hidden), dag(hidden), dc_prev(hidden);
    for (int r = 0; r < hidden; ++r) {
        double tc = std::tanh(cc.c[r]);
        double do_ = dh[r] * tc;
        double dcr = dc[r] + dh[r] * cc.o[r] * (1.0 - tc * tc);
        double di = dcr * cc.g[r];
        double df = dcr * cc.c_prev[r];
        double dg = dcr * cc.i[r];
        dc_prev[r] = dcr * cc.f[r];
        dai[r] = di * cc.i[r] * (1.0 - cc.i[r]);
        daf[r] = df * cc.f[r] * (1.0 - cc.f[r]);
        dao[r] = do_ * cc.o[r] * (1.0 - cc.o[r]);
        dag[r] = dg * (1.0 - cc.g[r] * cc.g[r]);
    }
    Vec dx(in, 0.0), dh_prev(hidden, 0.0);
    matvec_backward(Wi, cc.x, dai, gWi, dx, hidden, in);
    matvec_backward(Ui, cc.h_prev, dai, gUi, dh_prev, hidden, hidden);
    matvec_backward(Wf, cc.x, daf, gWf, dx, hidden, in);
    matvec_backward(Uf, cc.h_prev, daf, gUf, dh_prev, hidden, hidden);
    matvec_backward(Wo, cc.x, dao, gWo, dx, hidden, in);
    matvec_backward(Uo, cc.h_prev, dao, gUo, dh_prev, hidden, hidden);
    matvec_backward(Wg, cc.x, dag, gWg, dx, hidden, in);
    matvec_backward(Ug, cc.h_prev, dag, gUg, dh_prev, hidden, hidden);
    for (int r = 0; r < hidden; ++r) {
        gbi[r] += dai[r];
        gbf[r] += daf[r];
        gbo[r] += dao[r];
        gbg[r] += dag[r];
    }
    return {std::move(dh_prev), std::move(dc_prev), std::move(dx)};
}

void LstmCell::init_uniform(std::mt19937_64& rng, double range) {
    for (Vec* v : {&Wi, &Ui, &bi, &Wf, &Uf, &bf, &Wo, &Uo, &bo, &Wg, &Ug, &bg})
        uniform_fill(*v, rng, range);
}

void LstmCell::zero_grads() {
    for (Vec* g : {&gWi, &gUi, &gbi, &gWf, &gUf, &gbf, &gWo, &gUo, &gbo, &gWg, &gUg, &gbg})
        std::fill(g->begin(), g->end(), 0.0);
}

void LstmCell::visit(const ParamVisitor& fn) {
    fn(Wi, gWi);
    fn(Ui, gUi);
    fn(bi, gbi);
    fn(Wf, gWf);
    fn(Uf, gUf);
    fn(bf, gbf);
    fn(Wo, gWo);
    fn(Uo, gUo);
    fn(bo, gbo);
    fn(Wg, gWg);
    fn(Ug, gUg);
    fn(bg, gbg);
}

void Adam::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size())
        throw std::logic_error("adam: params/grads size mismatch");
    if (m.empty()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
    }
    if (m.size() != params.size())
        throw std::logic_error("adam: parameter count changed between steps");
    ++t;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t k = 0; k < params.size(); ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grads[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grads[k] * grads[k];
        double mhat = m[k] / bc1;
        double vhat = v[k] / bc2;
        params[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

double check_gradients(const std::function<double(std::span<const double>)>& loss,
                       std::span<const double> params, std::span<const double> analytic,
                       double h) {
    if (params.size() != analytic.size())
        throw std::logic_error("check_gradients: size mismatch");
    Vec scratch(params.begin(), params.end());
    double worst = 0.0;
    for (size_t k = 0; k < scratch.size(); ++k) {
        double orig = scratch[k];
        scratch[k] = orig + h;
        double up = loss(scratch);
        scratch[k] = orig - h;
        double down = loss(scratch);
        scratch[k] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("check_gradients: non-finite loss at perturbation");
        double numeric = (up - down) / (2.0 * h);
        double denom = std::max(1e-8, std::abs(analytic[k]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
    }
    return worst;
}

Vec flatten(const std::function<void(const ParamVisitor&)>& visit_all, bool grads) {
    Vec out;
    visit_all([&](Vec& p, Vec& g) {
        const Vec& src = grads ? g : p;
        out.insert(out.end(), src.begin(), src.end());
    });
    return out;
}

void unflatten(const std::function<void(const ParamVisitor&)>& visit_all,
               std::span<const double> flat) {
    size_t off = 0;
    visit_all([&](Vec& p, Vec&) {
        if (off + p.size() > flat.size())
            throw std::logic_error("unflatten: flat vector too short");
        std::copy(flat.begin() + off, flat.begin() + off + p.size(), p.begin());
        off += p.size();
    });
    if (off != flat.size()) throw std::logic_error("unflatten: flat vector size mismatch");
}

}  // namespace sqd::nn
