#include "iclstm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace iclstm::train {

namespace {

void fill_clipped_normal(Eigen::MatrixXd& m, std::mt19937_64& rng, double std_dev) {
    std::normal_distribution<double> nd(0.0, std_dev);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = std::max(0.0, nd(rng));
}

void fill_abs_normal(Eigen::MatrixXd& m, std::mt19937_64& rng, double std_dev) {
    std::normal_distribution<double> nd(0.0, std_dev);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = std::abs(nd(rng));
}

void fill_uniform01(Eigen::VectorXd& v, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = ud(rng);
}

void fill_glorot(Eigen::MatrixXd& m, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> ud(-limit, limit);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = ud(rng);
}

void scaled_identity(Eigen::MatrixXd& m, double gain) {
    m.setZero();
    for (Eigen::Index i = 0; i < std::min(m.rows(), m.cols()); ++i) m(i, i) = gain;
}

}  // namespace

ModelParams init_params(Arch arch, int n_x, const std::vector<int>& hidden, int n_o,
                        std::uint64_t seed) {
    ModelParams m = make_model(arch, n_x, hidden, n_o);
    auto rng = make_rng(seed, 3);
    constexpr double kStd = 0.01;
    for (auto& lv : m.layers) {
        std::visit([&](auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, RnnLayer>) {
                fill_glorot(l.Wx, rng);
                fill_glorot(l.Wh, rng);
            } else if constexpr (std::is_same_v<T, LstmLayer>) {
                for (auto* w : {&l.Uf, &l.Ui, &l.Uo, &l.Uc}) fill_glorot(*w, rng);
                for (auto* w : {&l.Wf, &l.Wi, &l.Wo, &l.Wc}) fill_glorot(*w, rng);
            } else if constexpr (std::is_same_v<T, IcrnnLayer>) {
                fill_clipped_normal(l.U, rng, kStd);
                scaled_identity(l.W, 0.1);
                fill_abs_normal(l.D2, rng, kStd);
                fill_abs_normal(l.V, rng, kStd);
                fill_abs_normal(l.D1, rng, kStd);
                fill_abs_normal(l.D3, rng, kStd);
            } else {
                fill_clipped_normal(l.Wx, rng, kStd);
                scaled_identity(l.Wh, 0.1);
                for (auto* d : {&l.Df, &l.Di, &l.Do, &l.Dc}) fill_uniform01(*d, rng);
                fill_abs_normal(l.Wd, rng, kStd);
            }
        }, lv);
    }
    if (m.convex_arch()) {
        fill_abs_normal(m.Wy, rng, kStd);
    } else {
        fill_glorot(m.Wy, rng);
    }
    m.validate();
    return m;
}

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw DimensionError("mse_loss: shape mismatch");
    }
    if (pred.size() == 0) throw InvalidArgumentError("mse_loss: empty matrices");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double mse_loss(const BatchSeq& pred, const BatchSeq& target) {
    if (pred.size() != target.size() || pred.empty()) {
        throw DimensionError("mse_loss: sequence length mismatch");
    }
    double sq = 0.0;
    double count = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t].rows() != target[t].rows() || pred[t].cols() != target[t].cols()) {
            throw DimensionError("mse_loss: shape mismatch at step " + std::to_string(t));
        }
        sq += (pred[t] - target[t]).squaredNorm();
        count += static_cast<double>(pred[t].size());
    }
    return sq / count;
}

BatchSeq mse_grad(const BatchSeq& pred, const BatchSeq& target) {
    if (pred.size() != target.size() || pred.empty()) {
        throw DimensionError("mse_grad: sequence length mismatch");
    }
    double count = 0.0;
    for (const auto& p : pred) count += static_cast<double>(p.size());
    BatchSeq dY(pred.size());
    for (std::size_t t = 0; t < pred.size(); ++t) {
        dY[t] = 2.0 / count * (pred[t] - target[t]);
    }
    return dY;
}

namespace {

Eigen::VectorXd colsum(const Eigen::MatrixXd& m) {
    return m.colwise().sum().transpose();
}

Eigen::MatrixXd row_scale(const Eigen::MatrixXd& m, const Eigen::VectorXd& d) {
    return (m.array().rowwise() * d.transpose().array()).matrix();
}

const Eigen::MatrixXd& layer_output(const LayerStepCache& c, Arch arch) {
    return (arch == Arch::rnn || arch == Arch::lstm) ? c.H : c.Z;
}

void backward_rnn(const RnnLayer& p, const Activation& g,
                  const std::vector<LayerStepCache>& cs, const BatchSeq& dOut,
                  RnnLayer& gr, BatchSeq& dIn) {
    const int T = static_cast<int>(cs.size());
    const Eigen::Index B = dOut[0].rows(), n = p.Wh.rows();
    Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(B, n);
    for (int t = T - 1; t >= 0; --t) {
        const Eigen::MatrixXd dH = dOut[t] + dh_carry;
        const Eigen::MatrixXd dPre = dH.cwiseProduct(g.slope_from_value(cs[t].H));
        gr.Wx += dPre.transpose() * cs[t].X;
        gr.b += colsum(dPre);
        if (t > 0) gr.Wh += dPre.transpose() * cs[t - 1].H;
        dIn[t] = dPre * p.Wx;
        dh_carry = dPre * p.Wh;
    }
}

void backward_lstm(const LstmLayer& p, const Activation& g,
                   const std::vector<LayerStepCache>& cs, const BatchSeq& dOut,
                   LstmLayer& gr, BatchSeq& dIn) {
    const Activation sig{ActivationKind::sigmoid};
    const int T = static_cast<int>(cs.size());
    const Eigen::Index B = dOut[0].rows(), n = p.Wf.rows();
    Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(B, n);
    Eigen::MatrixXd dc_carry = Eigen::MatrixXd::Zero(B, n);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(B, n);
    for (int t = T - 1; t >= 0; --t) {
        const auto& c = cs[t];
        const Eigen::MatrixXd& H_prev = t > 0 ? cs[t - 1].H : zero;
        const Eigen::MatrixXd& C_prev = t > 0 ? cs[t - 1].C : zero;
        const Eigen::MatrixXd dH = dOut[t] + dh_carry;
        const Eigen::MatrixXd dC =
            dH.cwiseProduct(c.O).cwiseProduct(g.slope_from_value(c.Gc)) + dc_carry;
        const Eigen::MatrixXd dPre_o =
            dH.cwiseProduct(c.Gc).cwiseProduct(sig.slope_from_value(c.O));
        const Eigen::MatrixXd dPre_f =
            dC.cwiseProduct(C_prev).cwiseProduct(sig.slope_from_value(c.F));
        const Eigen::MatrixXd dPre_i =
            dC.cwiseProduct(c.Ctil).cwiseProduct(sig.slope_from_value(c.I));
        const Eigen::MatrixXd dPre_c =
            dC.cwiseProduct(c.I).cwiseProduct(g.slope_from_value(c.Ctil));
        gr.Uf += dPre_f.transpose() * c.X;
        gr.Ui += dPre_i.transpose() * c.X;
        gr.Uo += dPre_o.transpose() * c.X;
        gr.Uc += dPre_c.transpose() * c.X;
        if (t > 0) {
            gr.Wf += dPre_f.transpose() * H_prev;
            gr.Wi += dPre_i.transpose() * H_prev;
            gr.Wo += dPre_o.transpose() * H_prev;
            gr.Wc += dPre_c.transpose() * H_prev;
        }
        gr.bf += colsum(dPre_f);
        gr.bi += colsum(dPre_i);
        gr.bo += colsum(dPre_o);
        gr.bc += colsum(dPre_c);
        dIn[t] = dPre_f * p.Uf + dPre_i * p.Ui + dPre_o * p.Uo + dPre_c * p.Uc;
        dh_carry = dPre_f * p.Wf + dPre_i * p.Wi + dPre_o * p.Wo + dPre_c * p.Wc;
        dc_carry = dC.cwiseProduct(c.F);
    }
}

void backward_icrnn(const IcrnnLayer& p, const Activation& g,
                    const std::vector<LayerStepCache>& cs, const BatchSeq& dOut,
                    IcrnnLayer& gr, BatchSeq& dIn) {
    const int T = static_cast<int>(cs.size());
    const Eigen::Index B = dOut[0].rows(), n = p.W.rows(), w = p.U.cols();
    Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(B, n);
    Eigen::MatrixXd dxlag_carry = Eigen::MatrixXd::Zero(B, w);
    const Eigen::MatrixXd zero_h = Eigen::MatrixXd::Zero(B, n);
    const Eigen::MatrixXd zero_x = Eigen::MatrixXd::Zero(B, w);
    for (int t = T - 1; t >= 0; --t) {
        const auto& c = cs[t];
        const Eigen::MatrixXd& H_prev = t > 0 ? cs[t - 1].H : zero_h;
        const Eigen::MatrixXd& X_prev = t > 0 ? cs[t - 1].X : zero_x;
        const Eigen::MatrixXd dPre_z = dOut[t].cwiseProduct(g.slope_from_value(c.Z));
        gr.V += dPre_z.transpose() * c.H;
        gr.D3 += dPre_z.transpose() * c.X;
        const Eigen::MatrixXd dH = dPre_z * p.V + dh_carry;
        const Eigen::MatrixXd dPre_h = dH.cwiseProduct(g.slope_from_value(c.H));
        gr.U += dPre_h.transpose() * c.X;
        if (t > 0) {
            gr.D1 += dPre_z.transpose() * H_prev;
            gr.W += dPre_h.transpose() * H_prev;
            gr.D2 += dPre_h.transpose() * X_prev;
        }
        dIn[t] = dPre_h * p.U + dPre_z * p.D3 + dxlag_carry;
        dh_carry = dPre_h * p.W + dPre_z * p.D1;
        dxlag_carry = dPre_h * p.D2;
    }
}

// dModel accumulates the parameter-free skip contribution to the expanded
// model input that every convex LSTM layer adds.
void backward_iclstm(const ModelParams& m, const IcLstmLayer& p,
                     const std::vector<LayerStepCache>& cs, const BatchSeq& dOut,
                     IcLstmLayer& gr, BatchSeq& dIn, BatchSeq& dModel) {
    const Activation& g = m.hidden_act;
    const int T = static_cast<int>(cs.size());
    const Eigen::Index B = dOut[0].rows(), n = p.Wh.rows();
    Eigen::MatrixXd dh_carry = Eigen::MatrixXd::Zero(B, n);
    Eigen::MatrixXd dc_carry = Eigen::MatrixXd::Zero(B, n);
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(B, n);
    for (int t = T - 1; t >= 0; --t) {
        const auto& c = cs[t];
        const Eigen::MatrixXd& C_prev = t > 0 ? cs[t - 1].C : zero;
        dModel[t] += dOut[t];
        const Eigen::MatrixXd dPre_d = dOut[t].cwiseProduct(m.dense_act.slope_from_value(c.Zg));
        gr.Wd += dPre_d.transpose() * c.H;
        gr.bd += colsum(dPre_d);
        const Eigen::MatrixXd dH = dPre_d * p.Wd + dh_carry;
        const Eigen::MatrixXd dC =
            dH.cwiseProduct(c.O).cwiseProduct(g.slope_from_value(c.Gc)) + dc_carry;
        const Eigen::MatrixXd dPre_f =
            dC.cwiseProduct(C_prev).cwiseProduct(g.slope_from_value(c.F));
        const Eigen::MatrixXd dPre_i =
            dC.cwiseProduct(c.Ctil).cwiseProduct(g.slope_from_value(c.I));
        const Eigen::MatrixXd dPre_o =
            dH.cwiseProduct(c.Gc).cwiseProduct(g.slope_from_value(c.O));
        const Eigen::MatrixXd dPre_c =
            dC.cwiseProduct(c.I).cwiseProduct(g.slope_from_value(c.Ctil));
        gr.Df += colsum(dPre_f.cwiseProduct(c.A));
        gr.Di += colsum(dPre_i.cwiseProduct(c.A));
        gr.Do += colsum(dPre_o.cwiseProduct(c.A));
        gr.Dc += colsum(dPre_c.cwiseProduct(c.A));
        gr.bf += colsum(dPre_f);
        gr.bi += colsum(dPre_i);
        gr.bo += colsum(dPre_o);
        gr.bc += colsum(dPre_c);
        const Eigen::MatrixXd dA = row_scale(dPre_f, p.Df) + row_scale(dPre_i, p.Di) +
                                   row_scale(dPre_o, p.Do) + row_scale(dPre_c, p.Dc);
        gr.Wx += dA.transpose() * c.X;
        if (t > 0) gr.Wh += dA.transpose() * cs[t - 1].H;
        dIn[t] = dA * p.Wx;
        dh_carry = dA * p.Wh;
        dc_carry = dC.cwiseProduct(c.F);
    }
}

}  // namespace

ModelParams backward(const ModelParams& m, const ForwardCache& cache, const BatchSeq& dY,
                     BatchSeq* d_input) {
    const int L = m.num_layers();
    const int T = static_cast<int>(cache.head_out.size());
    if (static_cast<int>(cache.layers.size()) != L || T == 0) {
        throw InvalidArgumentError("backward: cache does not match the model");
    }
    if (static_cast<int>(dY.size()) != T) {
        throw DimensionError("backward: dY length does not match the cached sequence");
    }
    const Eigen::Index B = cache.head_out[0].rows();
    for (int t = 0; t < T; ++t) {
        if (dY[t].rows() != B || dY[t].cols() != m.n_o) {
            throw DimensionError("backward: dY shape at step " + std::to_string(t));
        }
    }

    ModelParams grads = zeros_like(m);
    BatchSeq dOut(T);
    for (int t = 0; t < T; ++t) {
        const Eigen::MatrixXd dPre_y =
            dY[t].cwiseProduct(m.output_act.slope_from_value(cache.head_out[t]));
        grads.Wy += dPre_y.transpose() * layer_output(cache.layers[L - 1][t], m.arch);
        grads.by += colsum(dPre_y);
        dOut[t] = dPre_y * m.Wy;
    }

    BatchSeq dModel(T, Eigen::MatrixXd::Zero(B, m.input_width()));
    for (int l = L - 1; l >= 0; --l) {
        BatchSeq dIn(T);
        std::visit([&](const auto& p) {
            using T_ = std::decay_t<decltype(p)>;
            auto& gl = std::get<T_>(grads.layers[l]);
            if constexpr (std::is_same_v<T_, RnnLayer>) {
                backward_rnn(p, m.hidden_act, cache.layers[l], dOut, gl, dIn);
            } else if constexpr (std::is_same_v<T_, LstmLayer>) {
                backward_lstm(p, m.hidden_act, cache.layers[l], dOut, gl, dIn);
            } else if constexpr (std::is_same_v<T_, IcrnnLayer>) {
                backward_icrnn(p, m.hidden_act, cache.layers[l], dOut, gl, dIn);
            } else {
                backward_iclstm(m, p, cache.layers[l], dOut, gl, dIn, dModel);
            }
        }, m.layers[l]);
        dOut = std::move(dIn);
    }

    for (const auto& b : param_blocks(grads)) {
        if (!b.map().allFinite()) {
            throw NumericError("backward: non-finite gradient in block " + b.name);
        }
    }
    if (d_input) {
        d_input->resize(T);
        for (int t = 0; t < T; ++t) {
            (*d_input)[t] = dOut[t] + dModel[t];
            if (!(*d_input)[t].allFinite()) {
                throw NumericError("backward: non-finite input gradient at step " +
                                   std::to_string(t));
            }
        }
    }
    return grads;
}

void project_nonnegative(ModelParams& m) {
    for (auto& b : param_blocks(m)) {
        if (!b.nonneg) continue;
        auto mp = b.map();
        for (Eigen::Index j = 0; j < mp.size(); ++j) {
            if (mp.data()[j] < 0.0) mp.data()[j] = 0.0;
        }
    }
}

double gradient_norm(const ModelParams& grads) {
    double sq = 0.0;
    for (const auto& b : param_blocks(grads)) sq += b.map().squaredNorm();
    return std::sqrt(sq);
}

void clip_gradients(ModelParams& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = gradient_norm(grads);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (auto& b : param_blocks(grads)) b.map() *= scale;
}

AdamState make_adam_state(const ModelParams& m) {
    AdamState st;
    for (const auto& b : param_blocks(m)) {
        st.m1.emplace_back(Eigen::MatrixXd::Zero(b.rows, b.cols));
        st.m2.emplace_back(Eigen::MatrixXd::Zero(b.rows, b.cols));
    }
    return st;
}

void adam_step(ModelParams& m, const ModelParams& grads, AdamState& st, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto pb = param_blocks(m);
    auto gb = param_blocks(grads);
    if (pb.size() != gb.size() || st.m1.size() != pb.size()) {
        throw DimensionError("adam_step: parameter/gradient/state block mismatch");
    }
    st.step += 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < pb.size(); ++k) {
        const auto g = gb[k].map();
        if (g.rows() != st.m1[k].rows() || g.cols() != st.m1[k].cols()) {
            throw DimensionError("adam_step: shape mismatch in block " + pb[k].name);
        }
        st.m1[k] = b1 * st.m1[k] + (1.0 - b1) * g;
        st.m2[k] = b2 * st.m2[k] + (1.0 - b2) * g.cwiseProduct(g);
        auto param = pb[k].map();
        param.array() -=
            lr * (st.m1[k].array() / c1) / ((st.m2[k].array() / c2).sqrt() + eps);
    }
    if (m.convex_arch()) project_nonnegative(m);
}

BatchSeq model_inputs(const ModelParams& m, const BatchSeq& inputs, int n_raw) {
    if (inputs.empty()) throw InvalidArgumentError("model_inputs: empty sequence");
    const Eigen::Index cols = inputs[0].cols();
    if (cols != 2 * n_raw) throw DimensionError("model_inputs: expected expanded inputs");
    if (m.input_width() == cols) return inputs;
    if (m.input_width() == n_raw) {
        BatchSeq out;
        out.reserve(inputs.size());
        for (const auto& x : inputs) out.push_back(x.leftCols(n_raw));
        return out;
    }
    throw DimensionError("model_inputs: model width " + std::to_string(m.input_width()) +
                         " matches neither the raw nor the expanded feature count");
}

namespace {

BatchSeq gather_rows(const BatchSeq& seq, const std::vector<int>& idx, int begin, int count) {
    BatchSeq out(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        out[t].resize(count, seq[t].cols());
        for (int i = 0; i < count; ++i) out[t].row(i) = seq[t].row(idx[begin + i]);
    }
    return out;
}

}  // namespace

FitResult fit(const ModelParams& init, const data::SequenceDataset& ds, const TrainConfig& cfg) {
    const auto t_start = std::chrono::steady_clock::now();
    init.validate();
    ds.validate();
    if (init.n_o != ds.n_targets()) {
        throw DimensionError("fit: model output width does not match the targets");
    }
    if (cfg.lr0 <= 0 || cfg.max_epochs < 1 || cfg.patience < 1 || cfg.max_halvings < 0) {
        throw InvalidArgumentError("fit: bad training configuration");
    }
    const BatchSeq tr_x = model_inputs(init, ds.train_inputs(), ds.n_raw);
    const BatchSeq tr_y = ds.train_targets();
    const BatchSeq te_x = model_inputs(init, ds.test_inputs(), ds.n_raw);
    const BatchSeq te_y = ds.test_targets();
    const int n_train = static_cast<int>(tr_x[0].rows());
    if (cfg.batch_size < 1 || cfg.batch_size > n_train) {
        throw InvalidArgumentError("fit: batch_size must lie in [1, n_train]");
    }

    ModelParams model = init;
    ModelParams best = init;
    AdamState st = make_adam_state(model);
    auto rng = make_rng(cfg.seed, 2);
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    TrainReport rep;
    double lr = cfg.lr0;
    int stall = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double train_sq = 0.0;
        for (int begin = 0; begin < n_train; begin += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_train - begin);
            const BatchSeq bx = gather_rows(tr_x, order, begin, bsz);
            const BatchSeq by = gather_rows(tr_y, order, begin, bsz);
            ForwardCache cache;
            const BatchSeq pred = forward_batched(model, bx, &cache);
            train_sq += mse_loss(pred, by) * bsz;
            ModelParams grads = backward(model, cache, mse_grad(pred, by));
            clip_gradients(grads, cfg.clip_threshold);
            adam_step(model, grads, st, lr);
        }
        const double train_mse = train_sq / n_train;
        const double test_mse = mse_loss(forward_batched(model, te_x), te_y);
        rep.train_mse.push_back(train_mse);
        rep.test_mse.push_back(test_mse);
        rep.lr.push_back(lr);
        rep.epochs_run = epoch;

        if (!std::isfinite(test_mse) || test_mse > 1e3) {
            rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                             t_start).count();
            throw TrainingDivergedError("fit: training diverged at epoch " +
                                        std::to_string(epoch) + " (test MSE " +
                                        format_double(test_mse) + ")", rep);
        }
        if (test_mse < rep.best_test) {
            rep.best_test = test_mse;
            rep.best_epoch = epoch;
            best = model;
            stall = 0;
        } else if (++stall >= cfg.patience) {
            lr *= 0.5;
            rep.halvings += 1;
            stall = 0;
            if (rep.halvings >= cfg.max_halvings) break;
        }
    }
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(best), std::move(rep)};
}

void report_to_csv(const TrainReport& r, const std::string& path) {
    Eigen::MatrixXd table(static_cast<Eigen::Index>(r.train_mse.size()), 4);
    for (Eigen::Index i = 0; i < table.rows(); ++i) {
        table(i, 0) = static_cast<double>(i + 1);
        table(i, 1) = r.train_mse[i];
        table(i, 2) = r.test_mse[i];
        table(i, 3) = r.lr[i];
    }
    write_csv(path, {"epoch", "train_mse", "test_mse", "lr"}, table);
}

}  // namespace iclstm::train
