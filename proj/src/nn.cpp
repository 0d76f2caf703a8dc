#include "amt/nn.hpp"

#include <cmath>
#include <limits>

#include "amt/codec.hpp"
#include "amt/errors.hpp"

namespace amt {

void ModelConfig::validate() const {
    if (d_model < 1 || encoder_layers < 1 || decoder_layers < 1 || ff_dim < 1 || frame_dim < 1)
        throw UsageError("model dimensions must be positive");
    if (attn_heads < 1 || d_model % attn_heads != 0)
        throw UsageError("d_model must be divisible by attn_heads");
    if (memory_heads < 1 || d_model % memory_heads != 0)
        throw UsageError("d_model must be divisible by memory_heads");
    if (l_agg < 0 || l_agg > n_t) throw UsageError("l_agg must lie in [0, n_t]");
    if (n_f < 1 || n_t < 2) throw UsageError("n_f and n_t must be positive");
    if (vocab < 5) throw UsageError("vocab too small");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kLnEps = 1e-5;

struct LnCache {
    MatrixXd xhat;
    VectorXd inv_std;
};

struct AttnCache {
    MatrixXd xq, xkv;
    MatrixXd q, k, v;
    std::vector<MatrixXd> p;  // per head [Lq x Lk]
    MatrixXd o;               // concatenated head outputs
};

struct FfnCache {
    MatrixXd x, h_pre, h_act;
};

struct DropCache {
    Eigen::ArrayXXd mask;
    bool active = false;
};

struct AttnW {
    const MatrixXd &wq, &bq, &wk, &wv, &bv, &wo, &bo;
};

struct AttnG {
    MatrixXd &wq, &bq, &wk, &wv, &bv, &wo, &bo;
};

void drop_fwd(MatrixXd& x, double p, Rng* rng, DropCache& c) {
    if (!rng || p <= 0.0) {
        c.active = false;
        return;
    }
    c.active = true;
    const double keep = 1.0 - p;
    const double inv = 1.0 / keep;
    c.mask.resize(x.rows(), x.cols());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) c.mask(i, j) = u(*rng) < keep ? inv : 0.0;
    x.array() *= c.mask;
}

void drop_bwd(const DropCache& c, MatrixXd& d) {
    if (c.active) d.array() *= c.mask;
}

using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

void ln_fwd(const MatrixXd& x, const MatrixXd& g, const MatrixXd& b, MatrixXd& y, LnCache& c) {
    const Eigen::Index n = x.cols();
    y.resize(x.rows(), n);
    c.xhat.resize(x.rows(), n);
    c.inv_std.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        RowArray cen = x.row(i).array() - mu;
        const double var = cen.square().sum() / double(n);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        c.inv_std[i] = inv;
        c.xhat.row(i) = (cen * inv).matrix();
        y.row(i) = (c.xhat.row(i).array() * g.row(0).array() + b.row(0).array()).matrix();
    }
}

void ln_bwd(const LnCache& c, const MatrixXd& g, const MatrixXd& dy, MatrixXd& dg, MatrixXd& db,
            MatrixXd& dx) {
    const Eigen::Index n = c.xhat.cols();
    dx.resize(c.xhat.rows(), n);
    for (Eigen::Index i = 0; i < c.xhat.rows(); ++i) {
        RowArray dxhat = dy.row(i).array() * g.row(0).array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * c.xhat.row(i).array()).mean();
        dx.row(i) = (c.inv_std[i] * (dxhat - m1 - c.xhat.row(i).array() * m2)).matrix();
    }
    dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
           x * std::exp(-0.5 * x * x) * 0.39894228040143268;
}

void ffn_fwd(const MatrixXd& x, const MatrixXd& w1, const MatrixXd& b1, const MatrixXd& w2,
             const MatrixXd& b2, FfnCache& c, MatrixXd& y) {
    c.x = x;
    c.h_pre.noalias() = x * w1;
    c.h_pre.rowwise() += b1.row(0);
    c.h_act = c.h_pre.unaryExpr([](double v) { return gelu(v); });
    y.noalias() = c.h_act * w2;
    y.rowwise() += b2.row(0);
}

void ffn_bwd(const FfnCache& c, const MatrixXd& w1, const MatrixXd& w2, const MatrixXd& dy,
             MatrixXd& dw1, MatrixXd& db1, MatrixXd& dw2, MatrixXd& db2, MatrixXd& dx) {
    dw2.noalias() += c.h_act.transpose() * dy;
    db2 += dy.colwise().sum();
    MatrixXd dh = dy * w2.transpose();
    dh.array() *= c.h_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    dw1.noalias() += c.x.transpose() * dh;
    db1 += dh.colwise().sum();
    dx.noalias() = dh * w1.transpose();
}

// key_valid == nullptr means every key is in range; causal requires Lq == Lk.
void attn_fwd(const MatrixXd& xq, const MatrixXd& xkv, const AttnW& w, int heads,
              const std::vector<char>* key_valid, bool causal, AttnCache& c, MatrixXd& out) {
    const Eigen::Index lq = xq.rows(), lk = xkv.rows(), d = w.wq.cols();
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));

    c.xq = xq;
    c.xkv = xkv;
    c.q.noalias() = xq * w.wq;
    c.q.rowwise() += w.bq.row(0);
    c.k.noalias() = xkv * w.wk;
    c.v.noalias() = xkv * w.wv;
    c.v.rowwise() += w.bv.row(0);

    c.p.assign(std::size_t(heads), MatrixXd());
    c.o.resize(lq, d);
    for (int h = 0; h < heads; ++h) {
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        MatrixXd& p = c.p[std::size_t(h)];
        p.noalias() = qh * kh.transpose();
        p *= scale;
        for (Eigen::Index i = 0; i < lq; ++i) {
            const Eigen::Index kmax = causal ? std::min(i + 1, lk) : lk;
            double m = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < kmax; ++j)
                if (!key_valid || (*key_valid)[std::size_t(j)]) m = std::max(m, p(i, j));
            if (!std::isfinite(m)) {
                p.row(i).setZero();
                continue;
            }
            double z = 0.0;
            for (Eigen::Index j = 0; j < lk; ++j) {
                if (j < kmax && (!key_valid || (*key_valid)[std::size_t(j)])) {
                    const double e = std::exp(p(i, j) - m);
                    p(i, j) = e;
                    z += e;
                } else {
                    p(i, j) = 0.0;
                }
            }
            p.row(i) /= z;
        }
        c.o.middleCols(h * dh, dh).noalias() = p * vh;
    }
    out.noalias() = c.o * w.wo;
    out.rowwise() += w.bo.row(0);
}

void attn_bwd(const AttnCache& c, const AttnW& w, AttnG& g, int heads, const MatrixXd& dout,
              MatrixXd& dxq_accum, MatrixXd& dxkv_accum) {
    const Eigen::Index d = w.wq.cols();
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));

    g.wo.noalias() += c.o.transpose() * dout;
    g.bo += dout.colwise().sum();
    MatrixXd do_ = dout * w.wo.transpose();

    MatrixXd dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
    for (int h = 0; h < heads; ++h) {
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        auto doh = do_.middleCols(h * dh, dh);
        const MatrixXd& p = c.p[std::size_t(h)];

        MatrixXd dp;
        dp.noalias() = doh * vh.transpose();
        dv.middleCols(h * dh, dh).noalias() = p.transpose() * doh;
        // softmax backward row-wise; fully masked rows have p == 0 and stay 0
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            const double dot = p.row(i).dot(dp.row(i));
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
        }
        dq.middleCols(h * dh, dh).noalias() = scale * (dp * kh);
        dk.middleCols(h * dh, dh).noalias() = scale * (dp.transpose() * qh);
    }
    g.wq.noalias() += c.xq.transpose() * dq;
    g.bq += dq.colwise().sum();
    g.wk.noalias() += c.xkv.transpose() * dk;
    g.wv.noalias() += c.xkv.transpose() * dv;
    g.bv += dv.colwise().sum();
    dxq_accum.noalias() += dq * w.wq.transpose();
    dxkv_accum.noalias() += dk * w.wk.transpose();
    dxkv_accum.noalias() += dv * w.wv.transpose();
}

struct EncLayerTrace {
    LnCache ln1;
    AttnCache attn;
    DropCache d_attn;
    LnCache ln2;
    FfnCache ffn;
    DropCache d_ffn;
};

struct DecLayerTrace {
    LnCache ln1;
    AttnCache self;
    DropCache d_self;
    LnCache ln2;
    AttnCache cross;
    DropCache d_cross;
    LnCache ln3;
    FfnCache ffn;
    DropCache d_ffn;
};

}  // namespace

struct Model::Trace {
    // memory
    long mem_key_len = 0;
    long mem_rows = 0;
    DropCache mem_d_in;
    AttnCache mem_attn;
    DropCache mem_d_attn;
    LnCache mem_ln;
    MatrixXd mem_out;

    // encoder
    DropCache enc_d_in;
    std::vector<EncLayerTrace> enc_layers;
    LnCache enc_lnf;
    MatrixXd enc_out;

    // decoder
    DropCache dec_d_in;
    std::vector<DecLayerTrace> dec_layers;
    LnCache dec_lnf;
    MatrixXd dec_out;  // input of the output projection
    MatrixXd kv;       // concat(enc, mem)
    std::vector<char> cross_valid;
    MatrixXd logits;
};

int Model::add_tensor(const std::string& name, int rows, int cols, std::uint64_t seed, bool xavier,
                      double constant) {
    Rng rng = make_rng(seed, name);
    MatrixXd m(rows, cols);
    if (xavier) {
        const double lim = std::sqrt(6.0 / double(rows + cols));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    } else {
        m.setConstant(constant);
    }
    const int idx = int(values_.size());
    names_.push_back(name);
    values_.push_back(std::move(m));
    grads_.push_back(MatrixXd::Zero(rows, cols));
    index_[name] = idx;
    return idx;
}

Model::AttnP Model::add_attn(const std::string& prefix, std::uint64_t seed) {
    const int d = cfg_.d_model;
    AttnP p;
    p.wq = add_tensor(prefix + ".wq", d, d, seed, true);
    p.bq = add_tensor(prefix + ".bq", 1, d, seed, false);
    p.wk = add_tensor(prefix + ".wk", d, d, seed, true);
    p.wv = add_tensor(prefix + ".wv", d, d, seed, true);
    p.bv = add_tensor(prefix + ".bv", 1, d, seed, false);
    p.wo = add_tensor(prefix + ".wo", d, d, seed, true);
    p.bo = add_tensor(prefix + ".bo", 1, d, seed, false);
    return p;
}

Model::LnP Model::add_ln(const std::string& prefix, std::uint64_t seed) {
    LnP p;
    p.g = add_tensor(prefix + ".g", 1, cfg_.d_model, seed, false, 1.0);
    p.b = add_tensor(prefix + ".b", 1, cfg_.d_model, seed, false, 0.0);
    return p;
}

Model::FfnP Model::add_ffn(const std::string& prefix, std::uint64_t seed) {
    FfnP p;
    p.w1 = add_tensor(prefix + ".w1", cfg_.d_model, cfg_.ff_dim, seed, true);
    p.b1 = add_tensor(prefix + ".b1", 1, cfg_.ff_dim, seed, false);
    p.w2 = add_tensor(prefix + ".w2", cfg_.ff_dim, cfg_.d_model, seed, true);
    p.b2 = add_tensor(prefix + ".b2", 1, cfg_.d_model, seed, false);
    return p;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model;

    enc_in_w_ = add_tensor("enc.in.w", cfg_.frame_dim, d, seed, true);
    enc_in_b_ = add_tensor("enc.in.b", 1, d, seed, false);
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
        const std::string p = "enc.L" + std::to_string(l);
        EncLayerP lp;
        lp.ln1 = add_ln(p + ".ln1", seed);
        lp.attn = add_attn(p + ".attn", seed);
        lp.ln2 = add_ln(p + ".ln2", seed);
        lp.ffn = add_ffn(p + ".ffn", seed);
        enc_layers_.push_back(lp);
    }
    enc_lnf_ = add_ln("enc.lnf", seed);

    dec_embed_ = add_tensor("dec.embed", cfg_.vocab, d, seed, true);
    for (int l = 0; l < cfg_.decoder_layers; ++l) {
        const std::string p = "dec.L" + std::to_string(l);
        DecLayerP lp;
        lp.ln1 = add_ln(p + ".ln1", seed);
        lp.self = add_attn(p + ".self", seed);
        lp.ln2 = add_ln(p + ".ln2", seed);
        lp.cross = add_attn(p + ".cross", seed);
        lp.ln3 = add_ln(p + ".ln3", seed);
        lp.ffn = add_ffn(p + ".ffn", seed);
        dec_layers_.push_back(lp);
    }
    dec_lnf_ = add_ln("dec.lnf", seed);
    out_w_ = add_tensor("out.w", d, cfg_.vocab, seed, true);
    out_b_ = add_tensor("out.b", 1, cfg_.vocab, seed, false);

    if (cfg_.l_agg > 0) {
        if (!cfg_.share_memory_embedding)
            mem_embed_ = add_tensor("mem.embed", cfg_.vocab, d, seed, true);
        mem_attn_ = add_attn("mem.attn", seed);
        mem_ln_ = add_ln("mem.ln", seed);
    }

    const int max_len = std::max(cfg_.n_t, cfg_.n_f);
    pos_.resize(max_len, d);
    for (int t = 0; t < max_len; ++t) {
        for (int i = 0; i < d; i += 2) {
            const double freq = std::pow(10000.0, -double(i) / double(d));
            pos_(t, i) = std::sin(t * freq);
            if (i + 1 < d) pos_(t, i + 1) = std::cos(t * freq);
        }
    }
}

int Model::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown tensor: " + name);
    return it->second;
}

Eigen::MatrixXd& Model::tensor(const std::string& name) { return values_[std::size_t(find(name))]; }
const Eigen::MatrixXd& Model::tensor(const std::string& name) const {
    return values_[std::size_t(find(name))];
}
Eigen::MatrixXd& Model::grad(const std::string& name) { return grads_[std::size_t(find(name))]; }

void Model::zero_grad() {
    for (auto& g : grads_) g.setZero();
}

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& t : values_) n += std::size_t(t.size());
    return n;
}

namespace {

void check_ids(const std::vector<int>& ids, int vocab, const char* what) {
    for (int id : ids)
        if (id < 0 || id >= vocab) throw DataError(std::string(what) + ": token id out of range");
}

}  // namespace

MemoryBlock Model::embed_memory(const std::vector<int>& prior_ids) const {
    if (int(prior_ids.size()) != cfg_.n_t)
        throw UsageError("prior must have exactly n_t token ids");
    MemoryBlock mb;
    if (cfg_.l_agg == 0) {
        mb.values.resize(0, cfg_.d_model);
        return mb;
    }
    check_ids(prior_ids, cfg_.vocab, "prior");
    Trace tr;
    mb.values = fwd_memory(prior_ids, tr, nullptr);
    return mb;
}

Eigen::MatrixXd Model::fwd_memory(const std::vector<int>& prior, Trace& tr, Rng* drng) const {
    const int d = cfg_.d_model;
    const int la = cfg_.l_agg;
    long key_len = 0;
    for (long i = long(prior.size()) - 1; i >= 0; --i) {
        if (prior[std::size_t(i)] != Vocab::kPadId) {
            key_len = i + 1;
            break;
        }
    }
    const long rows = std::max<long>(la, key_len);
    tr.mem_key_len = key_len;
    tr.mem_rows = rows;

    const MatrixXd& table = v(mem_embed_ >= 0 ? mem_embed_ : dec_embed_);
    MatrixXd e(rows, d);
    for (long i = 0; i < rows; ++i)
        e.row(i) = table.row(prior[std::size_t(i)]) + pos_.row(i);
    drop_fwd(e, cfg_.dropout, drng, tr.mem_d_in);

    std::vector<char> key_valid(static_cast<std::size_t>(key_len));
    for (long j = 0; j < key_len; ++j) key_valid[std::size_t(j)] = prior[std::size_t(j)] != Vocab::kPadId;

    AttnW w{v(mem_attn_.wq), v(mem_attn_.bq), v(mem_attn_.wk),
            v(mem_attn_.wv), v(mem_attn_.bv), v(mem_attn_.wo), v(mem_attn_.bo)};
    MatrixXd attn_out;
    if (key_len > 0) {
        attn_fwd(e.topRows(la), e.topRows(key_len), w, cfg_.memory_heads, &key_valid, false,
                 tr.mem_attn, attn_out);
    } else {
        attn_out = MatrixXd::Zero(la, d);
    }
    drop_fwd(attn_out, cfg_.dropout, drng, tr.mem_d_attn);

    MatrixXd res = e.topRows(la) + attn_out;
    MatrixXd out;
    ln_fwd(res, v(mem_ln_.g), v(mem_ln_.b), out, tr.mem_ln);
    tr.mem_out = out;
    return out;
}

Eigen::MatrixXd Model::encode_frames(const Eigen::MatrixXd& frames, int n_valid_frames) const {
    if (frames.rows() != cfg_.n_f || frames.cols() != cfg_.frame_dim)
        throw UsageError("frames must be n_f x frame_dim");
    if (n_valid_frames < 1 || n_valid_frames > cfg_.n_f)
        throw UsageError("n_valid_frames out of range");
    if (!frames.allFinite()) throw NumericError("non-finite frame input");
    Trace tr;
    return fwd_encoder(frames, n_valid_frames, tr, nullptr);
}

Eigen::MatrixXd Model::fwd_encoder(const Eigen::MatrixXd& frames, int n_valid, Trace& tr,
                                   Rng* drng) const {
    MatrixXd h;
    h.noalias() = frames * v(enc_in_w_);
    h.rowwise() += v(enc_in_b_).row(0);
    h += pos_.topRows(cfg_.n_f);
    drop_fwd(h, cfg_.dropout, drng, tr.enc_d_in);

    std::vector<char> key_valid(std::size_t(cfg_.n_f));
    for (int j = 0; j < cfg_.n_f; ++j) key_valid[std::size_t(j)] = j < n_valid;

    tr.enc_layers.assign(enc_layers_.size(), EncLayerTrace());
    for (std::size_t l = 0; l < enc_layers_.size(); ++l) {
        const EncLayerP& p = enc_layers_[l];
        EncLayerTrace& t = tr.enc_layers[l];
        MatrixXd a;
        ln_fwd(h, v(p.ln1.g), v(p.ln1.b), a, t.ln1);
        AttnW w{v(p.attn.wq), v(p.attn.bq), v(p.attn.wk),
                v(p.attn.wv), v(p.attn.bv), v(p.attn.wo), v(p.attn.bo)};
        MatrixXd o;
        attn_fwd(a, a, w, cfg_.attn_heads, &key_valid, false, t.attn, o);
        drop_fwd(o, cfg_.dropout, drng, t.d_attn);
        h += o;
        MatrixXd b;
        ln_fwd(h, v(p.ln2.g), v(p.ln2.b), b, t.ln2);
        MatrixXd f;
        ffn_fwd(b, v(p.ffn.w1), v(p.ffn.b1), v(p.ffn.w2), v(p.ffn.b2), t.ffn, f);
        drop_fwd(f, cfg_.dropout, drng, t.d_ffn);
        h += f;
    }
    MatrixXd out;
    ln_fwd(h, v(enc_lnf_.g), v(enc_lnf_.b), out, tr.enc_lnf);
    tr.enc_out = out;
    return out;
}

Eigen::MatrixXd Model::decode_logits(const std::vector<int>& target_in, const Eigen::MatrixXd& enc,
                                     int enc_valid_frames, const MemoryBlock& mem) const {
    if (target_in.empty() || int(target_in.size()) > cfg_.n_t)
        throw UsageError("target_in length must lie in [1, n_t]");
    if (target_in[0] != Vocab::kSosId) throw UsageError("target_in must begin with SOS");
    if (enc.rows() != cfg_.n_f || enc.cols() != cfg_.d_model)
        throw UsageError("encoder states must be n_f x d_model");
    if (mem.values.rows() != cfg_.l_agg || mem.values.cols() != cfg_.d_model)
        throw UsageError("memory block must be l_agg x d_model");
    check_ids(target_in, cfg_.vocab, "target_in");
    Trace tr;
    return fwd_decoder(target_in, enc, enc_valid_frames, mem.values, tr, nullptr);
}

Eigen::MatrixXd Model::fwd_decoder(const std::vector<int>& dec_in, const Eigen::MatrixXd& enc,
                                   int enc_valid, const Eigen::MatrixXd& mem, Trace& tr,
                                   Rng* drng) const {
    const int d = cfg_.d_model;
    const long L = long(dec_in.size());
    const long n_keys = enc.rows() + mem.rows();

    tr.kv.resize(n_keys, d);
    tr.kv.topRows(enc.rows()) = enc;
    if (mem.rows() > 0) tr.kv.bottomRows(mem.rows()) = mem;
    tr.cross_valid.assign(std::size_t(n_keys), 1);
    for (long j = 0; j < enc.rows(); ++j) tr.cross_valid[std::size_t(j)] = j < enc_valid;

    const MatrixXd& table = v(dec_embed_);
    MatrixXd h(L, d);
    for (long t = 0; t < L; ++t) h.row(t) = table.row(dec_in[std::size_t(t)]) + pos_.row(t);
    drop_fwd(h, cfg_.dropout, drng, tr.dec_d_in);

    tr.dec_layers.assign(dec_layers_.size(), DecLayerTrace());
    for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
        const DecLayerP& p = dec_layers_[l];
        DecLayerTrace& t = tr.dec_layers[l];
        MatrixXd a;
        ln_fwd(h, v(p.ln1.g), v(p.ln1.b), a, t.ln1);
        AttnW ws{v(p.self.wq), v(p.self.bq), v(p.self.wk),
                 v(p.self.wv), v(p.self.bv), v(p.self.wo), v(p.self.bo)};
        MatrixXd o;
        attn_fwd(a, a, ws, cfg_.attn_heads, nullptr, true, t.self, o);
        drop_fwd(o, cfg_.dropout, drng, t.d_self);
        h += o;

        MatrixXd b;
        ln_fwd(h, v(p.ln2.g), v(p.ln2.b), b, t.ln2);
        AttnW wc{v(p.cross.wq), v(p.cross.bq), v(p.cross.wk),
                 v(p.cross.wv), v(p.cross.bv), v(p.cross.wo), v(p.cross.bo)};
        MatrixXd oc;
        attn_fwd(b, tr.kv, wc, cfg_.attn_heads, &tr.cross_valid, false, t.cross, oc);
        drop_fwd(oc, cfg_.dropout, drng, t.d_cross);
        h += oc;

        MatrixXd cc;
        ln_fwd(h, v(p.ln3.g), v(p.ln3.b), cc, t.ln3);
        MatrixXd f;
        ffn_fwd(cc, v(p.ffn.w1), v(p.ffn.b1), v(p.ffn.w2), v(p.ffn.b2), t.ffn, f);
        drop_fwd(f, cfg_.dropout, drng, t.d_ffn);
        h += f;
    }
    ln_fwd(h, v(dec_lnf_.g), v(dec_lnf_.b), tr.dec_out, tr.dec_lnf);
    tr.logits.noalias() = tr.dec_out * v(out_w_);
    tr.logits.rowwise() += v(out_b_).row(0);
    return tr.logits;
}

double Model::example_loss_sum(const TrainExample& ex, long* counted) const {
    // const_cast is safe: backward == false never touches gradients
    return const_cast<Model*>(this)->run_example(ex, false, 0.0, counted, nullptr);
}

double Model::forward_backward(const TrainExample& ex, double grad_scale, long* counted,
                               Rng* dropout_rng) {
    return run_example(ex, true, grad_scale, counted, dropout_rng);
}

double Model::run_example(const TrainExample& ex, bool backward, double grad_scale, long* counted,
                          Rng* drng) {
    if (ex.frames.rows() != cfg_.n_f || ex.frames.cols() != cfg_.frame_dim)
        throw UsageError("example frames must be n_f x frame_dim");
    if (ex.n_valid_frames < 1 || ex.n_valid_frames > cfg_.n_f)
        throw UsageError("example n_valid_frames out of range");
    if (ex.dec_in.empty() || ex.dec_in.size() != ex.labels.size() ||
        int(ex.dec_in.size()) > cfg_.n_t)
        throw UsageError("example dec_in/labels must be equal nonzero length <= n_t");
    if (ex.dec_in[0] != Vocab::kSosId) throw UsageError("example dec_in must begin with SOS");
    if (cfg_.l_agg > 0 && int(ex.prior.size()) != cfg_.n_t)
        throw UsageError("example prior must be n_t ids");
    check_ids(ex.dec_in, cfg_.vocab, "dec_in");
    check_ids(ex.labels, cfg_.vocab, "labels");
    if (cfg_.l_agg > 0) check_ids(ex.prior, cfg_.vocab, "prior");

    Trace tr;
    MatrixXd mem(0, cfg_.d_model);
    if (cfg_.l_agg > 0) mem = fwd_memory(ex.prior, tr, drng);
    MatrixXd enc = fwd_encoder(ex.frames, ex.n_valid_frames, tr, drng);
    MatrixXd logits = fwd_decoder(ex.dec_in, enc, ex.n_valid_frames, mem, tr, drng);

    const long L = logits.rows();
    double sum_ce = 0.0;
    long n_counted = 0;
    MatrixXd dlogits;
    if (backward) dlogits = MatrixXd::Zero(L, cfg_.vocab);
    for (long t = 0; t < L; ++t) {
        const int label = ex.labels[std::size_t(t)];
        if (label == Vocab::kPadId) continue;
        ++n_counted;
        const double m = logits.row(t).maxCoeff();
        RowArray probs = (logits.row(t).array() - m).exp();
        const double z = probs.sum();
        sum_ce += std::log(z) + m - logits(t, label);
        if (backward) {
            dlogits.row(t) = (probs / z).matrix() * grad_scale;
            dlogits(t, label) -= grad_scale;
        }
    }
    if (counted) *counted = n_counted;
    if (!backward) return sum_ce;

    // ---- backward ----
    const int d = cfg_.d_model;

    g(out_w_).noalias() += tr.dec_out.transpose() * dlogits;
    g(out_b_) += dlogits.colwise().sum();
    MatrixXd dh = dlogits * v(out_w_).transpose();
    {
        MatrixXd dx;
        ln_bwd(tr.dec_lnf, v(dec_lnf_.g), dh, g(dec_lnf_.g), g(dec_lnf_.b), dx);
        dh = dx;
    }

    MatrixXd dkv = MatrixXd::Zero(tr.kv.rows(), d);
    for (long l = long(dec_layers_.size()) - 1; l >= 0; --l) {
        const DecLayerP& p = dec_layers_[std::size_t(l)];
        DecLayerTrace& t = tr.dec_layers[std::size_t(l)];

        MatrixXd dbranch = dh;
        drop_bwd(t.d_ffn, dbranch);
        MatrixXd dc;
        ffn_bwd(t.ffn, v(p.ffn.w1), v(p.ffn.w2), dbranch, g(p.ffn.w1), g(p.ffn.b1), g(p.ffn.w2),
                g(p.ffn.b2), dc);
        MatrixXd dx;
        ln_bwd(t.ln3, v(p.ln3.g), dc, g(p.ln3.g), g(p.ln3.b), dx);
        dh += dx;

        dbranch = dh;
        drop_bwd(t.d_cross, dbranch);
        AttnW wc{v(p.cross.wq), v(p.cross.bq), v(p.cross.wk),
                 v(p.cross.wv), v(p.cross.bv), v(p.cross.wo), v(p.cross.bo)};
        AttnG gc{g(p.cross.wq), g(p.cross.bq), g(p.cross.wk),
                 g(p.cross.wv), g(p.cross.bv), g(p.cross.wo), g(p.cross.bo)};
        MatrixXd dxq = MatrixXd::Zero(dh.rows(), d);
        attn_bwd(t.cross, wc, gc, cfg_.attn_heads, dbranch, dxq, dkv);
        ln_bwd(t.ln2, v(p.ln2.g), dxq, g(p.ln2.g), g(p.ln2.b), dx);
        dh += dx;

        dbranch = dh;
        drop_bwd(t.d_self, dbranch);
        AttnW ws{v(p.self.wq), v(p.self.bq), v(p.self.wk),
                 v(p.self.wv), v(p.self.bv), v(p.self.wo), v(p.self.bo)};
        AttnG gs{g(p.self.wq), g(p.self.bq), g(p.self.wk),
                 g(p.self.wv), g(p.self.bv), g(p.self.wo), g(p.self.bo)};
        MatrixXd da = MatrixXd::Zero(dh.rows(), d);
        attn_bwd(t.self, ws, gs, cfg_.attn_heads, dbranch, da, da);
        ln_bwd(t.ln1, v(p.ln1.g), da, g(p.ln1.g), g(p.ln1.b), dx);
        dh += dx;
    }
    drop_bwd(tr.dec_d_in, dh);
    for (long t = 0; t < L; ++t)
        g(dec_embed_).row(ex.dec_in[std::size_t(t)]) += dh.row(t);

    // encoder backward: gradient from cross-attention keys
    MatrixXd denc = dkv.topRows(cfg_.n_f);
    {
        MatrixXd dx;
        ln_bwd(tr.enc_lnf, v(enc_lnf_.g), denc, g(enc_lnf_.g), g(enc_lnf_.b), dx);
        denc = dx;
    }
    for (long l = long(enc_layers_.size()) - 1; l >= 0; --l) {
        const EncLayerP& p = enc_layers_[std::size_t(l)];
        EncLayerTrace& t = tr.enc_layers[std::size_t(l)];

        MatrixXd dbranch = denc;
        drop_bwd(t.d_ffn, dbranch);
        MatrixXd db_, dx;
        ffn_bwd(t.ffn, v(p.ffn.w1), v(p.ffn.w2), dbranch, g(p.ffn.w1), g(p.ffn.b1), g(p.ffn.w2),
                g(p.ffn.b2), db_);
        ln_bwd(t.ln2, v(p.ln2.g), db_, g(p.ln2.g), g(p.ln2.b), dx);
        denc += dx;

        dbranch = denc;
        drop_bwd(t.d_attn, dbranch);
        AttnW w{v(p.attn.wq), v(p.attn.bq), v(p.attn.wk),
                v(p.attn.wv), v(p.attn.bv), v(p.attn.wo), v(p.attn.bo)};
        AttnG gg{g(p.attn.wq), g(p.attn.bq), g(p.attn.wk),
                 g(p.attn.wv), g(p.attn.bv), g(p.attn.wo), g(p.attn.bo)};
        MatrixXd da = MatrixXd::Zero(denc.rows(), d);
        attn_bwd(t.attn, w, gg, cfg_.attn_heads, dbranch, da, da);
        ln_bwd(t.ln1, v(p.ln1.g), da, g(p.ln1.g), g(p.ln1.b), dx);
        denc += dx;
    }
    drop_bwd(tr.enc_d_in, denc);
    g(enc_in_w_).noalias() += ex.frames.transpose() * denc;
    g(enc_in_b_) += denc.colwise().sum();

    // memory backward
    if (cfg_.l_agg > 0) {
        const int la = cfg_.l_agg;
        MatrixXd dmem = dkv.bottomRows(la);
        MatrixXd dres;
        ln_bwd(tr.mem_ln, v(mem_ln_.g), dmem, g(mem_ln_.g), g(mem_ln_.b), dres);

        MatrixXd de = MatrixXd::Zero(tr.mem_rows, d);
        de.topRows(la) += dres;
        if (tr.mem_key_len > 0) {
            MatrixXd dattn = dres;
            drop_bwd(tr.mem_d_attn, dattn);
            AttnW w{v(mem_attn_.wq), v(mem_attn_.bq), v(mem_attn_.wk),
                    v(mem_attn_.wv), v(mem_attn_.bv), v(mem_attn_.wo), v(mem_attn_.bo)};
            AttnG gg{g(mem_attn_.wq), g(mem_attn_.bq), g(mem_attn_.wk),
                     g(mem_attn_.wv), g(mem_attn_.bv), g(mem_attn_.wo), g(mem_attn_.bo)};
            MatrixXd dxq = MatrixXd::Zero(la, d);
            MatrixXd dxkv = MatrixXd::Zero(tr.mem_key_len, d);
            attn_bwd(tr.mem_attn, w, gg, cfg_.memory_heads, dattn, dxq, dxkv);
            de.topRows(la) += dxq;
            de.topRows(tr.mem_key_len) += dxkv;
        }
        drop_bwd(tr.mem_d_in, de);
        MatrixXd& et = g(mem_embed_ >= 0 ? mem_embed_ : dec_embed_);
        for (long i = 0; i < tr.mem_rows; ++i) et.row(ex.prior[std::size_t(i)]) += de.row(i);
    }
    return sum_ce;
}

ModelConfig gradcheck_config() {
    ModelConfig cfg;
    cfg.d_model = 12;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.attn_heads = 3;
    cfg.ff_dim = 24;
    cfg.memory_heads = 3;
    cfg.l_agg = 4;
    cfg.n_f = 4;
    cfg.n_t = 16;
    cfg.frame_dim = 8;
    cfg.vocab = 40;
    cfg.dropout = 0.0;
    return cfg;
}

namespace {

std::vector<TrainExample> gradcheck_batch(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = make_rng(seed, "gradcheck-batch");
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> tok(4, cfg.vocab - 1);

    std::vector<TrainExample> batch;
    for (int n = 0; n < 2; ++n) {
        TrainExample ex;
        ex.tag = "gradcheck" + std::to_string(n);
        ex.frames.resize(cfg.n_f, cfg.frame_dim);
        for (Eigen::Index j = 0; j < ex.frames.cols(); ++j)
            for (Eigen::Index i = 0; i < ex.frames.rows(); ++i) ex.frames(i, j) = u(rng);
        ex.n_valid_frames = cfg.n_f - 1;

        ex.prior.assign(std::size_t(cfg.n_t), Vocab::kPadId);
        if (n == 0)  // second example keeps an all-PAD prior
            for (int i = 0; i < cfg.n_t / 2; ++i) ex.prior[std::size_t(i)] = tok(rng);

        const int L = 8;
        ex.dec_in.push_back(Vocab::kSosId);
        for (int i = 1; i < L; ++i) ex.dec_in.push_back(tok(rng));
        for (int i = 0; i < L - 1; ++i) ex.labels.push_back(tok(rng));
        ex.labels.push_back(Vocab::kEosId);
        ex.labels[3] = Vocab::kPadId;  // exercise the loss mask
        batch.push_back(std::move(ex));
    }
    return batch;
}

}  // namespace

GradCheckReport gradient_check(const ModelConfig& cfg, std::uint64_t seed, double h) {
    ModelConfig c = cfg;
    c.dropout = 0.0;  // finite differences need a deterministic smooth loss
    Model model(c, seed);
    std::vector<TrainExample> batch = gradcheck_batch(c, seed);

    long total = 0;
    for (const auto& ex : batch) {
        long n = 0;
        model.example_loss_sum(ex, &n);
        total += n;
    }

    model.zero_grad();
    for (const auto& ex : batch) model.forward_backward(ex, 1.0 / double(total));

    auto batch_loss = [&]() {
        double s = 0.0;
        for (const auto& ex : batch) s += model.example_loss_sum(ex);
        return s / double(total);
    };

    GradCheckReport rep;
    for (const std::string& name : model.tensor_names()) {
        Eigen::MatrixXd& w = model.tensor(name);
        const Eigen::MatrixXd& ga = model.grad(name);
        Eigen::MatrixXd gfd(w.rows(), w.cols());
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                const double orig = w(i, j);
                w(i, j) = orig + h;
                const double lp = batch_loss();
                w(i, j) = orig - h;
                const double lm = batch_loss();
                w(i, j) = orig;
                gfd(i, j) = (lp - lm) / (2.0 * h);
            }
        }
        const double na = ga.norm(), nf = gfd.norm();
        const double err = (gfd - ga).norm() / std::max({na, nf, 1e-8});
        rep.per_tensor[name] = err;
        rep.max_rel_error = std::max(rep.max_rel_error, err);
    }
    return rep;
}

}  // namespace amt
