#include "amt/transcribe.hpp"

#include <cmath>

#include "amt/errors.hpp"
#include "amt/mel.hpp"

namespace amt {

namespace {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;

RowVectorXd ln_row(const RowVectorXd& x, const MatrixXd& g, const MatrixXd& b) {
    const double mu = x.mean();
    Eigen::Array<double, 1, Eigen::Dynamic> cen = x.array() - mu;
    const double var = cen.square().sum() / double(x.cols());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    return ((cen * inv) * g.row(0).array() + b.row(0).array()).matrix();
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

}  // namespace

IncrementalDecoder::IncrementalDecoder(const Model& m, const Eigen::MatrixXd& enc, int enc_valid,
                                       const MemoryBlock& mem)
    : m_(m) {
    const ModelConfig& cfg = m.cfg_;
    if (enc.rows() != cfg.n_f || enc.cols() != cfg.d_model)
        throw UsageError("encoder states must be n_f x d_model");
    if (mem.values.rows() != cfg.l_agg || mem.values.cols() != cfg.d_model)
        throw UsageError("memory block must be l_agg x d_model");
    if (enc_valid < 1 || enc_valid > cfg.n_f) throw UsageError("enc_valid out of range");

    MatrixXd kv(enc.rows() + mem.values.rows(), cfg.d_model);
    kv.topRows(enc.rows()) = enc;
    if (mem.values.rows() > 0) kv.bottomRows(mem.values.rows()) = mem.values;
    cross_valid_.assign(std::size_t(kv.rows()), 1);
    for (long j = 0; j < enc.rows(); ++j) cross_valid_[std::size_t(j)] = j < enc_valid;

    for (const auto& lp : m.dec_layers_) {
        self_k_.push_back(MatrixXd(cfg.n_t, cfg.d_model));
        self_v_.push_back(MatrixXd(cfg.n_t, cfg.d_model));
        MatrixXd k;
        k.noalias() = kv * m.v(lp.cross.wk);
        MatrixXd vv;
        vv.noalias() = kv * m.v(lp.cross.wv);
        vv.rowwise() += m.v(lp.cross.bv).row(0);
        cross_k_.push_back(std::move(k));
        cross_v_.push_back(std::move(vv));
    }
}

int IncrementalDecoder::step(int token_id) {
    const ModelConfig& cfg = m_.cfg_;
    if (pos_ >= cfg.n_t) throw UsageError("decoder ran past n_t positions");
    if (token_id < 0 || token_id >= cfg.vocab) throw DataError("token id out of range");
    const int d = cfg.d_model;
    const int heads = cfg.attn_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(double(dh));

    RowVectorXd x = m_.v(m_.dec_embed_).row(token_id) + m_.pos_.row(pos_);

    for (std::size_t l = 0; l < m_.dec_layers_.size(); ++l) {
        const auto& lp = m_.dec_layers_[l];

        RowVectorXd a = ln_row(x, m_.v(lp.ln1.g), m_.v(lp.ln1.b));
        RowVectorXd q = a * m_.v(lp.self.wq) + m_.v(lp.self.bq).row(0);
        self_k_[l].row(pos_) = a * m_.v(lp.self.wk);
        self_v_[l].row(pos_) = a * m_.v(lp.self.wv) + m_.v(lp.self.bv).row(0);
        RowVectorXd o(d);
        for (int h = 0; h < heads; ++h) {
            auto qh = q.segment(h * dh, dh);
            auto kh = self_k_[l].middleRows(0, pos_ + 1).middleCols(h * dh, dh);
            auto vh = self_v_[l].middleRows(0, pos_ + 1).middleCols(h * dh, dh);
            Eigen::VectorXd s = (kh * qh.transpose()) * scale;
            const double mx = s.maxCoeff();
            Eigen::ArrayXd p = (s.array() - mx).exp();
            p /= p.sum();
            o.segment(h * dh, dh) = p.matrix().transpose() * vh;
        }
        x += o * m_.v(lp.self.wo) + m_.v(lp.self.bo).row(0);

        RowVectorXd b = ln_row(x, m_.v(lp.ln2.g), m_.v(lp.ln2.b));
        RowVectorXd qc = b * m_.v(lp.cross.wq) + m_.v(lp.cross.bq).row(0);
        RowVectorXd oc(d);
        for (int h = 0; h < heads; ++h) {
            auto qh = qc.segment(h * dh, dh);
            auto kh = cross_k_[l].middleCols(h * dh, dh);
            auto vh = cross_v_[l].middleCols(h * dh, dh);
            Eigen::VectorXd s = (kh * qh.transpose()) * scale;
            double mx = -std::numeric_limits<double>::infinity();
            for (long j = 0; j < s.size(); ++j)
                if (cross_valid_[std::size_t(j)]) mx = std::max(mx, s[j]);
            Eigen::ArrayXd p = Eigen::ArrayXd::Zero(s.size());
            double z = 0.0;
            for (long j = 0; j < s.size(); ++j) {
                if (!cross_valid_[std::size_t(j)]) continue;
                p[j] = std::exp(s[j] - mx);
                z += p[j];
            }
            p /= z;
            oc.segment(h * dh, dh) = p.matrix().transpose() * vh;
        }
        x += oc * m_.v(lp.cross.wo) + m_.v(lp.cross.bo).row(0);

        RowVectorXd c = ln_row(x, m_.v(lp.ln3.g), m_.v(lp.ln3.b));
        RowVectorXd h1 = c * m_.v(lp.ffn.w1) + m_.v(lp.ffn.b1).row(0);
        h1 = h1.unaryExpr([](double u) { return gelu(u); });
        x += h1 * m_.v(lp.ffn.w2) + m_.v(lp.ffn.b2).row(0);
    }

    x = ln_row(x, m_.v(m_.dec_lnf_.g), m_.v(m_.dec_lnf_.b));
    logits_ = x * m_.v(m_.out_w_) + m_.v(m_.out_b_).row(0);
    ++pos_;
    Eigen::Index arg = 0;
    logits_.maxCoeff(&arg);
    return int(arg);
}

std::vector<int> greedy_decode(const Model& m, const Eigen::MatrixXd& enc, int enc_valid,
                               const MemoryBlock& mem) {
    IncrementalDecoder dec(m, enc, enc_valid, mem);
    std::vector<int> out;
    int next = dec.step(Vocab::kSosId);
    while (true) {
        out.push_back(next);
        if (next == Vocab::kEosId || int(out.size()) >= m.config().n_t) break;
        next = dec.step(next);
    }
    return out;
}

TranscribeResult transcribe_frames(const Model& m, const Vocab& vocab, const FrameMatrix& frames,
                                   const SegmentConfig& cfg, double total_seconds) {
    TranscribeResult res;
    const long total = frames.num_frames();
    const int n_mels = int(frames.frames.cols());
    std::vector<int> prior(std::size_t(cfg.n_t), Vocab::kPadId);  // window 0: empty memory
    HeldNotes held;

    for (long s : window_grid(total, cfg.n_f)) {
        const long valid = std::min<long>(cfg.n_f, total - s);
        Eigen::MatrixXd win = Eigen::MatrixXd::Zero(cfg.n_f, n_mels);
        win.topRows(valid) = frames.frames.middleRows(s, valid);

        MemoryBlock mem = m.embed_memory(prior);
        Eigen::MatrixXd enc = m.encode_frames(win, int(valid));
        std::vector<int> ids = greedy_decode(m, enc, int(valid), mem);
        res.window_ids.push_back(ids);

        SegmentWindow span{s * cfg.frame_hop_s, (s + valid) * cfg.frame_hop_s};
        DecodeResult dr = decode_tokens(vocab.tokens(ids), span, held);
        res.stats += dr.stats;
        for (const NoteEvent& n : dr.fragment.notes) res.notes.notes.push_back(n);
        held = std::move(dr.new_held);

        prior.assign(std::size_t(cfg.n_t), Vocab::kPadId);
        for (std::size_t i = 0; i < ids.size() && i < std::size_t(cfg.n_t); ++i)
            prior[i] = ids[i];
    }

    // Notes still sounding at the end of the audio close there.
    for (const auto& [key, onsets] : held)
        for (double onset : onsets)
            res.notes.notes.push_back(
                {onset, std::max(total_seconds, onset + kTimeStepS), key.second, key.first, false});

    res.notes.duration_s = total_seconds;
    res.notes.normalize();
    res.notes.duration_s = std::max(res.notes.duration_s, total_seconds);
    return res;
}

TranscribeResult transcribe_track(const Model& m, const Vocab& vocab, const AudioBuffer& audio,
                                  const SegmentConfig& cfg) {
    FrameMatrix frames = log_mel(audio);
    return transcribe_frames(m, vocab, frames, cfg, audio.duration_s());
}

}  // namespace amt
