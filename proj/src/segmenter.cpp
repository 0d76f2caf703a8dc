#include "amt/segmenter.hpp"

#include <algorithm>

#include "amt/errors.hpp"

namespace amt {

std::vector<long> window_grid(long total_frames, int n_f) {
    if (n_f < 1) throw UsageError("n_f must be >= 1");
    std::vector<long> starts;
    for (long s = 0; s < total_frames; s += n_f) starts.push_back(s);
    return starts;
}

PriorWindow prior_window_for(long i, int n_f, int l_hop) {
    PriorWindow w;
    w.l_hop = l_hop;
    w.start = i - long(l_hop) * n_f;
    w.end = w.start + n_f;
    return w;
}

PriorWindow sample_prior_window(long i, const SegmentConfig& cfg, Rng& rng) {
    if (cfg.max_hop < 1) throw UsageError("max_hop must be >= 1");
    std::uniform_int_distribution<int> dist(1, cfg.max_hop);
    return prior_window_for(i, cfg.n_f, dist(rng));
}

namespace {

std::vector<int> pad_ids(const Vocab& vocab, const TokenSeq& seq, int n_t) {
    std::vector<int> ids = vocab.ids(seq);
    if (int(ids.size()) > n_t) throw DataError("token sequence longer than n_t");
    ids.resize(std::size_t(n_t), Vocab::kPadId);
    return ids;
}

}  // namespace

std::vector<TrainingPair> make_training_pairs(const TrackData& track, const SegmentConfig& cfg,
                                              const Vocab& vocab, Rng& rng,
                                              std::optional<int> forced_hop) {
    const long total = track.frames.num_frames();
    const int n_mels = int(track.frames.frames.cols());
    const int t_max = cfg.t_max();

    std::vector<TrainingPair> pairs;
    const std::vector<long> grid = window_grid(total, cfg.n_f);
    pairs.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const long s = grid[k];
        TrainingPair p;
        p.window_index = long(k);
        const long valid = std::min<long>(cfg.n_f, total - s);
        p.n_valid_frames = int(valid);
        p.frames = Eigen::MatrixXd::Zero(cfg.n_f, n_mels);
        p.frames.topRows(valid) = track.frames.frames.middleRows(s, valid);

        p.span = {s * cfg.frame_hop_s, (s + valid) * cfg.frame_hop_s};
        p.target_tokens = encode_segment(track.notes, p.span, t_max, cfg.n_t);

        PriorWindow pw = forced_hop ? prior_window_for(s, cfg.n_f, *forced_hop)
                                    : sample_prior_window(s, cfg, rng);
        p.hop = pw.l_hop;
        if (pw.in_range()) {
            SegmentWindow prior_span{pw.start * cfg.frame_hop_s, pw.end * cfg.frame_hop_s};
            p.prior_tokens = encode_segment(track.notes, prior_span, t_max, cfg.n_t);
        }
        p.target = pad_ids(vocab, p.target_tokens, cfg.n_t);
        p.prior = pad_ids(vocab, p.prior_tokens, cfg.n_t);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

BatchSampler::BatchSampler(const std::vector<TrackData>* tracks, SegmentConfig cfg,
                           const Vocab* vocab, Rng rng)
    : tracks_(tracks), cfg_(cfg), vocab_(vocab), rng_(rng) {
    if (!tracks_ || tracks_->empty()) throw UsageError("batch sampler needs at least one track");
    for (const TrackData& t : *tracks_)
        if (t.frames.num_frames() == 0) throw UsageError("batch sampler given an empty track");
}

std::vector<TrainingPair> BatchSampler::next() {
    const int want = cfg_.batch_segments;
    std::vector<TrainingPair> batch;
    batch.reserve(std::size_t(want));
    bool first = true;
    while (int(batch.size()) < want) {
        std::uniform_int_distribution<std::size_t> pick(0, tracks_->size() - 1);
        const TrackData& track = (*tracks_)[pick(rng_)];
        std::vector<TrainingPair> pairs = make_training_pairs(track, cfg_, *vocab_, rng_);
        long start = 0;
        if (first && long(pairs.size()) > want) {
            std::uniform_int_distribution<long> s(0, long(pairs.size()) - want);
            start = s(rng_);
        }
        first = false;
        for (std::size_t k = std::size_t(start); k < pairs.size() && int(batch.size()) < want; ++k)
            batch.push_back(std::move(pairs[k]));
    }
    return batch;
}

}  // namespace amt
