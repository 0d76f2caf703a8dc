#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <vector>

#include "amt/errors.hpp"
#include "amt/rng.hpp"
#include "amt/segmenter.hpp"
#include "testutil.hpp"

using namespace amt;

namespace {

TrackData make_track(long total_frames, int n_mels, std::uint64_t seed) {
    TrackData t;
    t.frames.frames = Eigen::MatrixXd::Zero(total_frames, n_mels);
    for (long r = 0; r < total_frames; ++r)
        for (int c = 0; c < n_mels; ++c) t.frames.frames(r, c) = double(r) + 0.001 * c;
    Rng rng = make_rng(seed, "segmenter-track");
    testutil::SeqOpts opts;
    opts.duration_s = double(total_frames) * kFrameHopS;
    opts.notes = 15;
    t.notes = testutil::random_sequence(rng, opts);
    t.name = "t" + std::to_string(seed);
    return t;
}

}  // namespace

TEST_CASE("segment config derives window length and bins") {
    SegmentConfig cfg;
    CHECK(cfg.window_seconds() == doctest::Approx(2.048));
    CHECK(cfg.t_max() == 205);
}

TEST_CASE("window grid tiles the track") {
    std::vector<long> g = window_grid(2000, 256);
    REQUIRE(g.size() == 8);
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == long(k) * 256);

    CHECK(window_grid(0, 256).empty());
    CHECK(window_grid(256, 256) == std::vector<long>{0});
    CHECK(window_grid(257, 256) == std::vector<long>{0, 256});
    CHECK(window_grid(1, 256) == std::vector<long>{0});
    CHECK_THROWS_AS(window_grid(100, 0), UsageError);
}

TEST_CASE("prior windows sit l_hop windows back") {
    PriorWindow w = prior_window_for(512, 256, 1);
    CHECK(w.start == 256);
    CHECK(w.end == 512);
    CHECK(w.in_range());

    w = prior_window_for(512, 256, 2);
    CHECK(w.start == 0);
    CHECK(w.in_range());

    w = prior_window_for(256, 256, 2);
    CHECK(w.start == -256);
    CHECK_FALSE(w.in_range());

    w = prior_window_for(0, 256, 1);
    CHECK_FALSE(w.in_range());

    for (long i : {0L, 256L, 2560L}) {
        for (int h : {1, 2, 3}) {
            PriorWindow p = prior_window_for(i, 256, h);
            CHECK(p.start == i - long(h) * 256);
            CHECK(p.end - p.start == 256);
            CHECK(p.l_hop == h);
        }
    }
}

TEST_CASE("sampled hops are uniform on [1, max_hop]") {
    SegmentConfig cfg;
    cfg.max_hop = 4;
    Rng rng = make_rng(9, "segmenter-hop");
    std::map<int, int> counts;
    const int n = 20000;
    for (int i = 0; i < n; ++i) counts[sample_prior_window(10240, cfg, rng).l_hop]++;
    REQUIRE(counts.size() == 4);
    for (auto& [h, c] : counts) {
        CHECK(h >= 1);
        CHECK(h <= 4);
        CHECK(c > 4700);
        CHECK(c < 5300);
    }

    cfg.max_hop = 1;
    for (int i = 0; i < 100; ++i) CHECK(sample_prior_window(10240, cfg, rng).l_hop == 1);

    cfg.max_hop = 0;
    CHECK_THROWS_AS(sample_prior_window(10240, cfg, rng), UsageError);
}

TEST_CASE("training pairs cover every window and thread priors") {
    SegmentConfig cfg;
    TrackData track = make_track(600, 8, 1);
    Vocab vocab(cfg.t_max());
    Rng rng = make_rng(2, "segmenter-pairs");

    std::vector<TrainingPair> pairs = make_training_pairs(track, cfg, vocab, rng, 1);
    REQUIRE(pairs.size() == 3);

    CHECK(pairs[0].n_valid_frames == 256);
    CHECK(pairs[1].n_valid_frames == 256);
    CHECK(pairs[2].n_valid_frames == 88);

    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const TrainingPair& p = pairs[k];
        CHECK(p.window_index == long(k));
        CHECK(p.frames.rows() == cfg.n_f);
        CHECK(p.frames.cols() == 8);
        CHECK(p.hop == 1);

        // Valid rows copy the source; the rest are zero padding.
        for (int r = 0; r < p.n_valid_frames; ++r)
            CHECK(p.frames(r, 3) ==
                  doctest::Approx(double(long(k) * 256 + r) + 0.003));
        for (int r = p.n_valid_frames; r < cfg.n_f; ++r) CHECK(p.frames.row(r).isZero(0.0));

        CHECK(p.span.start_s == doctest::Approx(double(k) * 2.048));
        CHECK(p.target_tokens.back() == tok_eos());
        REQUIRE(int(p.target.size()) == cfg.n_t);
        REQUIRE(int(p.prior.size()) == cfg.n_t);

        // Padded ids extend the token ids with PAD.
        std::vector<int> ids = vocab.ids(p.target_tokens);
        for (std::size_t i = 0; i < ids.size(); ++i) CHECK(p.target[i] == ids[i]);
        for (std::size_t i = ids.size(); i < p.target.size(); ++i)
            CHECK(p.target[i] == Vocab::kPadId);
    }
    CHECK(pairs[2].span.end_s == doctest::Approx(512 * kFrameHopS + 88 * kFrameHopS));

    // hop 1: each window's prior is the previous window's target.
    CHECK(pairs[0].prior_tokens.empty());
    for (int i : pairs[0].prior) CHECK(i == Vocab::kPadId);
    CHECK(pairs[1].prior_tokens == pairs[0].target_tokens);
    CHECK(pairs[2].prior_tokens == pairs[1].target_tokens);

    // hop 2 skips one window back.
    std::vector<TrainingPair> hop2 = make_training_pairs(track, cfg, vocab, rng, 2);
    CHECK(hop2[0].prior_tokens.empty());
    CHECK(hop2[1].prior_tokens.empty());
    CHECK(hop2[2].prior_tokens == pairs[0].target_tokens);
}

TEST_CASE("batch sampler emits full batches of consecutive windows") {
    SegmentConfig cfg;
    cfg.batch_segments = 4;
    cfg.max_hop = 2;
    Vocab vocab(cfg.t_max());

    std::vector<TrackData> tracks;
    tracks.push_back(make_track(2560, 8, 1));  // 10 windows
    tracks.push_back(make_track(512, 8, 2));   // 2 windows

    BatchSampler sampler(&tracks, cfg, &vocab, make_rng(3, "segmenter-batch"));

    std::map<long, int> first_index;
    std::map<int, int> hops;
    for (int it = 0; it < 30; ++it) {
        std::vector<TrainingPair> batch = sampler.next();
        REQUIRE(int(batch.size()) == cfg.batch_segments);
        first_index[batch[0].window_index]++;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            hops[batch[k].hop]++;
            if (k > 0) {
                // Consecutive within a run; a new run restarts at window 0.
                bool consecutive = batch[k].window_index == batch[k - 1].window_index + 1;
                CHECK((consecutive || batch[k].window_index == 0));
            }
        }
    }
    CHECK(first_index.size() >= 3);  // the start offset is randomized
    CHECK(hops.count(1));
    CHECK(hops.count(2));  // priors are resampled per batch

    // Same seed, same stream.
    BatchSampler a(&tracks, cfg, &vocab, make_rng(7, "segmenter-det"));
    BatchSampler b(&tracks, cfg, &vocab, make_rng(7, "segmenter-det"));
    for (int it = 0; it < 5; ++it) {
        std::vector<TrainingPair> ba = a.next(), bb = b.next();
        REQUIRE(ba.size() == bb.size());
        for (std::size_t k = 0; k < ba.size(); ++k) {
            CHECK(ba[k].target == bb[k].target);
            CHECK(ba[k].prior == bb[k].prior);
            CHECK(ba[k].window_index == bb[k].window_index);
            CHECK(ba[k].hop == bb[k].hop);
        }
    }

    std::vector<TrackData> none;
    CHECK_THROWS_AS(BatchSampler(&none, cfg, &vocab, make_rng(1, "x")), UsageError);
    std::vector<TrackData> with_empty;
    with_empty.push_back(make_track(256, 8, 3));
    with_empty.push_back(TrackData{});
    CHECK_THROWS_AS(BatchSampler(&with_empty, cfg, &vocab, make_rng(1, "x")), UsageError);
}
