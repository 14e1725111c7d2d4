#include "iclstm/network.hpp"

#include <cmath>

namespace iclstm {

Arch arch_from_string(const std::string& s) {
    if (s == "rnn") return Arch::rnn;
    if (s == "lstm") return Arch::lstm;
    if (s == "icrnn") return Arch::icrnn;
    if (s == "iclstm") return Arch::iclstm;
    throw InvalidArgumentError("unknown architecture: " + s);
}

std::string to_string(Arch a) {
    switch (a) {
        case Arch::rnn: return "rnn";
        case Arch::lstm: return "lstm";
        case Arch::icrnn: return "icrnn";
        case Arch::iclstm: return "iclstm";
    }
    throw InvalidArgumentError("bad Arch value");
}

ActivationKind activation_from_string(const std::string& s) {
    if (s == "relu") return ActivationKind::relu;
    if (s == "softplus") return ActivationKind::softplus;
    if (s == "tanh") return ActivationKind::tanh_act;
    if (s == "sigmoid") return ActivationKind::sigmoid;
    if (s == "linear") return ActivationKind::linear;
    throw InvalidArgumentError("unknown activation: " + s);
}

std::string to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::softplus: return "softplus";
        case ActivationKind::tanh_act: return "tanh";
        case ActivationKind::sigmoid: return "sigmoid";
        case ActivationKind::linear: return "linear";
    }
    throw InvalidArgumentError("bad ActivationKind value");
}

double Activation::value(double x) const {
    switch (kind) {
        case ActivationKind::relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::softplus: {
            // max(x,0) + log1p(exp(-beta*|x|))/beta, stable for large |x|.
            double ax = std::abs(x);
            return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-beta * ax)) / beta;
        }
        case ActivationKind::tanh_act: return std::tanh(x);
        case ActivationKind::sigmoid: return 0.5 * (1.0 + std::tanh(0.5 * x));
        case ActivationKind::linear: return x;
    }
    throw InvalidArgumentError("bad ActivationKind value");
}

Eigen::MatrixXd Activation::value(const Eigen::MatrixXd& x) const {
    switch (kind) {
        case ActivationKind::relu: return x.cwiseMax(0.0);
        case ActivationKind::softplus: {
            Eigen::ArrayXXd a = x.array();
            return (a.max(0.0) + (-beta * a.abs()).exp().log1p() / beta).matrix();
        }
        case ActivationKind::tanh_act: return x.array().tanh().matrix();
        case ActivationKind::sigmoid: return (0.5 * (1.0 + (0.5 * x.array()).tanh())).matrix();
        case ActivationKind::linear: return x;
    }
    throw InvalidArgumentError("bad ActivationKind value");
}

Eigen::MatrixXd Activation::slope_from_value(const Eigen::MatrixXd& y) const {
    switch (kind) {
        case ActivationKind::relu: return (y.array() > 0.0).cast<double>().matrix();
        case ActivationKind::softplus: return (1.0 - (-beta * y.array()).exp()).matrix();
        case ActivationKind::tanh_act: return (1.0 - y.array().square()).matrix();
        case ActivationKind::sigmoid: return (y.array() * (1.0 - y.array())).matrix();
        case ActivationKind::linear: return Eigen::MatrixXd::Ones(y.rows(), y.cols());
    }
    throw InvalidArgumentError("bad ActivationKind value");
}

Eigen::MatrixXd expand_input(const Eigen::MatrixXd& x) {
    if (!x.allFinite()) throw InvalidArgumentError("expand_input: non-finite input");
    Eigen::MatrixXd out(x.rows(), 2 * x.cols());
    out.leftCols(x.cols()) = x;
    out.rightCols(x.cols()) = -x;
    return out;
}

Eigen::VectorXd expand_input(const Eigen::VectorXd& x) {
    if (!x.allFinite()) throw InvalidArgumentError("expand_input: non-finite input");
    Eigen::VectorXd out(2 * x.size());
    out.head(x.size()) = x;
    out.tail(x.size()) = -x;
    return out;
}

std::vector<int> ModelParams::hidden_widths() const {
    std::vector<int> w;
    w.reserve(layers.size());
    for (const auto& l : layers) {
        std::visit([&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RnnLayer>) w.push_back(static_cast<int>(p.Wh.rows()));
            else if constexpr (std::is_same_v<T, LstmLayer>) w.push_back(static_cast<int>(p.Wf.rows()));
            else if constexpr (std::is_same_v<T, IcrnnLayer>) w.push_back(static_cast<int>(p.W.rows()));
            else w.push_back(static_cast<int>(p.Wh.rows()));
        }, l);
    }
    return w;
}

namespace {

void check_dims(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

// Output width a layer presents to its successor.
int layer_out_width(const LayerParams& l) {
    return std::visit([](const auto& p) -> int {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RnnLayer>) return static_cast<int>(p.Wh.rows());
        else if constexpr (std::is_same_v<T, LstmLayer>) return static_cast<int>(p.Wf.rows());
        else if constexpr (std::is_same_v<T, IcrnnLayer>) return static_cast<int>(p.V.rows());
        else return static_cast<int>(p.Wd.rows());
    }, l);
}

}  // namespace

void ModelParams::validate() const {
    if (n_x <= 0 || n_o <= 0) throw InvalidArgumentError("model widths must be positive");
    if (layers.empty()) throw InvalidArgumentError("model has no layers");
    int w = input_width();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "layer " + std::to_string(i);
        std::visit([&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RnnLayer>) {
                if (arch != Arch::rnn) throw InvalidArgumentError(where + ": layer kind does not match arch");
                int n = static_cast<int>(p.Wh.rows());
                check_dims(p.Wx.rows() == n && p.Wx.cols() == w, where + ": Wx shape");
                check_dims(p.Wh.cols() == n, where + ": Wh shape");
                check_dims(p.b.size() == n, where + ": b shape");
            } else if constexpr (std::is_same_v<T, LstmLayer>) {
                if (arch != Arch::lstm) throw InvalidArgumentError(where + ": layer kind does not match arch");
                int n = static_cast<int>(p.Wf.rows());
                for (const auto* m : {&p.Uf, &p.Ui, &p.Uo, &p.Uc})
                    check_dims(m->rows() == n && m->cols() == w, where + ": input weight shape");
                for (const auto* m : {&p.Wf, &p.Wi, &p.Wo, &p.Wc})
                    check_dims(m->rows() == n && m->cols() == n, where + ": recurrent weight shape");
                for (const auto* v : {&p.bf, &p.bi, &p.bo, &p.bc})
                    check_dims(v->size() == n, where + ": bias shape");
            } else if constexpr (std::is_same_v<T, IcrnnLayer>) {
                if (arch != Arch::icrnn) throw InvalidArgumentError(where + ": layer kind does not match arch");
                int n = static_cast<int>(p.W.rows());
                check_dims(p.U.rows() == n && p.U.cols() == w, where + ": U shape");
                check_dims(p.W.cols() == n, where + ": W shape");
                check_dims(p.D2.rows() == n && p.D2.cols() == w, where + ": D2 shape");
                check_dims(p.V.rows() == n && p.V.cols() == n, where + ": V shape");
                check_dims(p.D1.rows() == n && p.D1.cols() == n, where + ": D1 shape");
                check_dims(p.D3.rows() == n && p.D3.cols() == w, where + ": D3 shape");
            } else {
                if (arch != Arch::iclstm) throw InvalidArgumentError(where + ": layer kind does not match arch");
                int n = static_cast<int>(p.Wh.rows());
                check_dims(w == 2 * n_x, where + ": convex LSTM layers consume the expanded input width");
                check_dims(p.Wx.rows() == n && p.Wx.cols() == w, where + ": Wx shape");
                check_dims(p.Wh.cols() == n, where + ": Wh shape");
                for (const auto* v : {&p.Df, &p.Di, &p.Do, &p.Dc, &p.bf, &p.bi, &p.bo, &p.bc})
                    check_dims(v->size() == n, where + ": gate vector shape");
                check_dims(p.Wd.rows() == w && p.Wd.cols() == n, where + ": Wd shape");
                check_dims(p.bd.size() == w, where + ": bd shape");
            }
        }, layers[i]);
        w = layer_out_width(layers[i]);
    }
    check_dims(Wy.rows() == n_o && Wy.cols() == w, "head Wy shape");
    check_dims(by.size() == n_o, "head by shape");
    if (convex_arch()) {
        if (!hidden_act.convex_family())
            throw InvalidArgumentError("convex architectures need relu or softplus hidden activation");
        if (arch == Arch::iclstm && !dense_act.convex_family())
            throw InvalidArgumentError("convex LSTM dense activation must be relu or softplus");
        if (output_act.kind != ActivationKind::relu && output_act.kind != ActivationKind::linear)
            throw InvalidArgumentError("convex architectures need relu or linear output activation");
    }
}

bool ModelParams::constraints_satisfied() const {
    for (const auto& b : param_blocks(*this))
        if (b.nonneg && b.map().minCoeff() < 0.0) return false;
    return true;
}

namespace {

void push_block(std::vector<BlockView>& out, const std::string& name, Eigen::MatrixXd& m, bool nonneg) {
    out.push_back({name, m.data(), m.rows(), m.cols(), nonneg});
}

void push_block(std::vector<BlockView>& out, const std::string& name, Eigen::VectorXd& v, bool nonneg) {
    out.push_back({name, v.data(), v.size(), 1, nonneg});
}

}  // namespace

std::vector<BlockView> param_blocks(ModelParams& m) {
    std::vector<BlockView> out;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        std::visit([&](auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, RnnLayer>) {
                push_block(out, p + "Wx", l.Wx, false);
                push_block(out, p + "Wh", l.Wh, false);
                push_block(out, p + "b", l.b, false);
            } else if constexpr (std::is_same_v<T, LstmLayer>) {
                push_block(out, p + "Uf", l.Uf, false);
                push_block(out, p + "Ui", l.Ui, false);
                push_block(out, p + "Uo", l.Uo, false);
                push_block(out, p + "Uc", l.Uc, false);
                push_block(out, p + "Wf", l.Wf, false);
                push_block(out, p + "Wi", l.Wi, false);
                push_block(out, p + "Wo", l.Wo, false);
                push_block(out, p + "Wc", l.Wc, false);
                push_block(out, p + "bf", l.bf, false);
                push_block(out, p + "bi", l.bi, false);
                push_block(out, p + "bo", l.bo, false);
                push_block(out, p + "bc", l.bc, false);
            } else if constexpr (std::is_same_v<T, IcrnnLayer>) {
                push_block(out, p + "U", l.U, true);
                push_block(out, p + "W", l.W, true);
                push_block(out, p + "D2", l.D2, true);
                push_block(out, p + "V", l.V, true);
                push_block(out, p + "D1", l.D1, true);
                push_block(out, p + "D3", l.D3, true);
            } else {
                push_block(out, p + "Wx", l.Wx, true);
                push_block(out, p + "Wh", l.Wh, true);
                push_block(out, p + "Df", l.Df, true);
                push_block(out, p + "Di", l.Di, true);
                push_block(out, p + "Do", l.Do, true);
                push_block(out, p + "Dc", l.Dc, true);
                push_block(out, p + "bf", l.bf, false);
                push_block(out, p + "bi", l.bi, false);
                push_block(out, p + "bo", l.bo, false);
                push_block(out, p + "bc", l.bc, false);
                push_block(out, p + "Wd", l.Wd, true);
                push_block(out, p + "bd", l.bd, false);
            }
        }, m.layers[i]);
    }
    bool head_nonneg = m.convex_arch();
    push_block(out, "head.Wy", m.Wy, head_nonneg);
    push_block(out, "head.by", m.by, false);
    return out;
}

std::vector<BlockView> param_blocks(const ModelParams& m) {
    // Read-only views; the const_cast never feeds a write on these paths.
    return param_blocks(const_cast<ModelParams&>(m));
}

ModelParams zeros_like(const ModelParams& m) {
    ModelParams z = m;
    for (auto& b : param_blocks(z)) b.map().setZero();
    return z;
}

Eigen::Index param_count(const ModelParams& m) {
    Eigen::Index n = 0;
    for (const auto& b : param_blocks(m)) n += b.size();
    return n;
}

ModelParams make_model(Arch arch, int n_x, const std::vector<int>& hidden, int n_o) {
    if (n_x <= 0 || n_o <= 0 || hidden.empty())
        throw InvalidArgumentError("make_model: widths must be positive and at least one layer");
    for (int h : hidden)
        if (h <= 0) throw InvalidArgumentError("make_model: hidden widths must be positive");
    ModelParams m;
    m.arch = arch;
    m.n_x = n_x;
    m.n_o = n_o;
    int w = m.input_width();
    for (int n : hidden) {
        switch (arch) {
            case Arch::rnn: {
                RnnLayer l;
                l.Wx = Eigen::MatrixXd::Zero(n, w);
                l.Wh = Eigen::MatrixXd::Zero(n, n);
                l.b = Eigen::VectorXd::Zero(n);
                m.layers.emplace_back(std::move(l));
                w = n;
                break;
            }
            case Arch::lstm: {
                LstmLayer l;
                for (auto* mm : {&l.Uf, &l.Ui, &l.Uo, &l.Uc}) *mm = Eigen::MatrixXd::Zero(n, w);
                for (auto* mm : {&l.Wf, &l.Wi, &l.Wo, &l.Wc}) *mm = Eigen::MatrixXd::Zero(n, n);
                for (auto* v : {&l.bf, &l.bi, &l.bo, &l.bc}) *v = Eigen::VectorXd::Zero(n);
                m.layers.emplace_back(std::move(l));
                w = n;
                break;
            }
            case Arch::icrnn: {
                IcrnnLayer l;
                l.U = Eigen::MatrixXd::Zero(n, w);
                l.W = Eigen::MatrixXd::Zero(n, n);
                l.D2 = Eigen::MatrixXd::Zero(n, w);
                l.V = Eigen::MatrixXd::Zero(n, n);
                l.D1 = Eigen::MatrixXd::Zero(n, n);
                l.D3 = Eigen::MatrixXd::Zero(n, w);
                m.layers.emplace_back(std::move(l));
                w = n;
                break;
            }
            case Arch::iclstm: {
                IcLstmLayer l;
                l.Wx = Eigen::MatrixXd::Zero(n, w);
                l.Wh = Eigen::MatrixXd::Zero(n, n);
                for (auto* v : {&l.Df, &l.Di, &l.Do, &l.Dc, &l.bf, &l.bi, &l.bo, &l.bc})
                    *v = Eigen::VectorXd::Zero(n);
                l.Wd = Eigen::MatrixXd::Zero(w, n);
                l.bd = Eigen::VectorXd::Zero(w);
                m.layers.emplace_back(std::move(l));
                // w unchanged: the skip keeps convex layers at the expanded width
                break;
            }
        }
    }
    m.Wy = Eigen::MatrixXd::Zero(n_o, w);
    m.by = Eigen::VectorXd::Zero(n_o);
    switch (arch) {
        case Arch::rnn:
        case Arch::lstm:
            m.hidden_act = {ActivationKind::tanh_act};
            m.dense_act = {ActivationKind::linear};
            m.output_act = {ActivationKind::linear};
            break;
        case Arch::icrnn:
        case Arch::iclstm:
            m.hidden_act = {ActivationKind::relu};
            m.dense_act = {ActivationKind::relu};
            m.output_act = {ActivationKind::relu};
            break;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

// A.rowwise scaled by d, shifted by b: g(A * diag(d) + 1 b^T) row-broadcast.
Eigen::MatrixXd gate_eval(const Activation& g, const Eigen::MatrixXd& a,
                          const Eigen::VectorXd& d, const Eigen::VectorXd& b) {
    Eigen::MatrixXd pre = ((a.array().rowwise() * d.transpose().array()).rowwise() +
                           b.transpose().array()).matrix();
    return g.value(pre);
}

Eigen::MatrixXd affine(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    return ((x * w.transpose()).rowwise() + b.transpose());
}

const Activation kSigmoid{ActivationKind::sigmoid};

}  // namespace

void iclstm_cell_step(const IcLstmLayer& p, const Activation& g,
                      const Eigen::MatrixXd& xhat, CellState& state) {
    Eigen::MatrixXd a = xhat * p.Wx.transpose() + state.h * p.Wh.transpose();
    Eigen::MatrixXd f = gate_eval(g, a, p.Df, p.bf);
    Eigen::MatrixXd i = gate_eval(g, a, p.Di, p.bi);
    Eigen::MatrixXd o = gate_eval(g, a, p.Do, p.bo);
    Eigen::MatrixXd ctil = gate_eval(g, a, p.Dc, p.bc);
    state.c = f.cwiseProduct(state.c) + i.cwiseProduct(ctil);
    state.h = o.cwiseProduct(g.value(state.c));
}

namespace {

struct LayerRun {
    CellState state;          // h (and c) carried across time
    Eigen::MatrixXd prev_in;  // icrnn lagged input
};

Eigen::MatrixXd step_layer(const ModelParams& m, const LayerParams& lp, LayerRun& run,
                           const Eigen::MatrixXd& x, const Eigen::MatrixXd& model_x,
                           LayerStepCache* cache) {
    const Activation& g = m.hidden_act;
    return std::visit([&](const auto& p) -> Eigen::MatrixXd {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RnnLayer>) {
            Eigen::MatrixXd h = g.value(affine(x, p.Wx, p.b) + run.state.h * p.Wh.transpose());
            run.state.h = h;
            if (cache) { cache->X = x; cache->H = h; }
            return h;
        } else if constexpr (std::is_same_v<T, LstmLayer>) {
            Eigen::MatrixXd f = kSigmoid.value(affine(x, p.Uf, p.bf) + run.state.h * p.Wf.transpose());
            Eigen::MatrixXd i = kSigmoid.value(affine(x, p.Ui, p.bi) + run.state.h * p.Wi.transpose());
            Eigen::MatrixXd o = kSigmoid.value(affine(x, p.Uo, p.bo) + run.state.h * p.Wo.transpose());
            Eigen::MatrixXd ctil = g.value(affine(x, p.Uc, p.bc) + run.state.h * p.Wc.transpose());
            Eigen::MatrixXd c = f.cwiseProduct(run.state.c) + i.cwiseProduct(ctil);
            Eigen::MatrixXd gc = g.value(c);
            Eigen::MatrixXd h = o.cwiseProduct(gc);
            if (cache) {
                cache->X = x; cache->F = f; cache->I = i; cache->O = o;
                cache->Ctil = ctil; cache->C = c; cache->Gc = gc; cache->H = h;
            }
            run.state.c = std::move(c);
            run.state.h = h;
            return h;
        } else if constexpr (std::is_same_v<T, IcrnnLayer>) {
            Eigen::MatrixXd h = g.value(x * p.U.transpose() + run.state.h * p.W.transpose() +
                                        run.prev_in * p.D2.transpose());
            Eigen::MatrixXd z = g.value(h * p.V.transpose() + run.state.h * p.D1.transpose() +
                                        x * p.D3.transpose());
            if (cache) { cache->X = x; cache->H = h; cache->Z = z; }
            run.state.h = h;
            run.prev_in = x;
            return z;
        } else {
            Eigen::MatrixXd a = x * p.Wx.transpose() + run.state.h * p.Wh.transpose();
            Eigen::MatrixXd f = gate_eval(g, a, p.Df, p.bf);
            Eigen::MatrixXd i = gate_eval(g, a, p.Di, p.bi);
            Eigen::MatrixXd o = gate_eval(g, a, p.Do, p.bo);
            Eigen::MatrixXd ctil = gate_eval(g, a, p.Dc, p.bc);
            Eigen::MatrixXd c = f.cwiseProduct(run.state.c) + i.cwiseProduct(ctil);
            Eigen::MatrixXd gc = g.value(c);
            Eigen::MatrixXd h = o.cwiseProduct(gc);
            Eigen::MatrixXd zg = m.dense_act.value(affine(h, p.Wd, p.bd));
            Eigen::MatrixXd z = zg + model_x;
            if (cache) {
                cache->X = x; cache->A = std::move(a); cache->F = f; cache->I = i;
                cache->O = o; cache->Ctil = ctil; cache->C = c; cache->Gc = gc;
                cache->H = h; cache->Zg = zg; cache->Z = z;
            }
            run.state.c = std::move(c);
            run.state.h = std::move(h);
            return z;
        }
    }, lp);
}

}  // namespace

BatchSeq forward_batched(const ModelParams& m, const BatchSeq& xs, ForwardCache* cache) {
    if (xs.empty()) throw InvalidArgumentError("forward: empty sequence");
    const Eigen::Index B = xs[0].rows();
    const int w = m.input_width();
    for (const auto& x : xs)
        if (x.rows() != B || x.cols() != w)
            throw DimensionError("forward: step width " + std::to_string(x.cols()) +
                                 " does not match model input width " + std::to_string(w));
    const int T = static_cast<int>(xs.size());
    const int L = m.num_layers();
    const auto widths = m.hidden_widths();

    std::vector<LayerRun> runs(L);
    int in_w = w;
    for (int l = 0; l < L; ++l) {
        runs[l].state.h = Eigen::MatrixXd::Zero(B, widths[l]);
        runs[l].state.c = Eigen::MatrixXd::Zero(B, widths[l]);
        runs[l].prev_in = Eigen::MatrixXd::Zero(B, in_w);
        in_w = layer_out_width(m.layers[l]);
    }
    if (cache) {
        cache->model_input = xs;
        cache->layers.assign(L, std::vector<LayerStepCache>(T));
        cache->head_out.resize(T);
    }

    BatchSeq ys(T);
    for (int t = 0; t < T; ++t) {
        Eigen::MatrixXd cur = xs[t];
        for (int l = 0; l < L; ++l) {
            cur = step_layer(m, m.layers[l], runs[l], cur, xs[t],
                             cache ? &cache->layers[l][t] : nullptr);
            if (!cur.allFinite())
                throw NumericError("forward: non-finite hidden state at layer " +
                                   std::to_string(l) + ", step " + std::to_string(t));
        }
        Eigen::MatrixXd y = m.output_act.value(affine(cur, m.Wy, m.by));
        if (!y.allFinite())
            throw NumericError("forward: non-finite output at step " + std::to_string(t));
        if (cache) cache->head_out[t] = y;
        ys[t] = std::move(y);
    }
    return ys;
}

Eigen::MatrixXd forward(const ModelParams& m, const Eigen::MatrixXd& seq) {
    if (seq.cols() != m.n_x)
        throw DimensionError("forward: sequence width does not match n_x");
    require_finite(seq, "input sequence");
    Eigen::MatrixXd native = m.convex_arch() ? expand_input(seq) : seq;
    BatchSeq xs(seq.rows());
    for (Eigen::Index t = 0; t < seq.rows(); ++t) xs[t] = native.row(t);
    BatchSeq ys = forward_batched(m, xs);
    Eigen::MatrixXd out(seq.rows(), m.n_o);
    for (Eigen::Index t = 0; t < seq.rows(); ++t) out.row(t) = ys[t];
    return out;
}

Eigen::MatrixXd forward_repeat(const ModelParams& m, const Eigen::VectorXd& x, int repeats) {
    if (repeats <= 0) throw InvalidArgumentError("forward_repeat: repeats must be positive");
    if (x.size() != m.n_x) throw DimensionError("forward_repeat: input width does not match n_x");
    Eigen::MatrixXd seq = x.transpose().replicate(repeats, 1);
    return forward(m, seq);
}

PointModel make_point_model(const ModelParams& m, int repeats) {
    if (repeats <= 0) throw InvalidArgumentError("point model: repeats must be positive");
    PointModel pm;
    pm.n_in = m.n_x;
    pm.n_out = repeats * m.n_o;
    pm.eval = [model = m, repeats](const Eigen::VectorXd& x) {
        Eigen::MatrixXd y = forward_repeat(model, x, repeats);
        Eigen::VectorXd flat(y.size());
        for (Eigen::Index t = 0; t < y.rows(); ++t)
            flat.segment(t * y.cols(), y.cols()) = y.row(t);
        return flat;
    };
    return pm;
}

PointModel make_point_model_expanded(const ModelParams& m, int repeats) {
    if (!m.convex_arch())
        throw InvalidArgumentError("expanded point model requires a convex architecture");
    if (repeats <= 0) throw InvalidArgumentError("point model: repeats must be positive");
    PointModel pm;
    pm.n_in = 2 * m.n_x;
    pm.n_out = repeats * m.n_o;
    pm.eval = [model = m, repeats](const Eigen::VectorXd& xhat) {
        if (xhat.size() != 2 * model.n_x)
            throw DimensionError("expanded point model: bad input width");
        BatchSeq xs(repeats, xhat.transpose());
        BatchSeq ys = forward_batched(model, xs);
        Eigen::VectorXd flat(static_cast<Eigen::Index>(repeats) * model.n_o);
        for (int t = 0; t < repeats; ++t)
            flat.segment(static_cast<Eigen::Index>(t) * model.n_o, model.n_o) = ys[t].row(0);
        return flat;
    };
    return pm;
}

}  // namespace iclstm
