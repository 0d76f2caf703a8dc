#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "amt/errors.hpp"
#include "amt/rng.hpp"
#include "amt/train.hpp"

using namespace amt;

namespace {

ModelConfig tiny_model(const SegmentConfig& scfg, const Vocab& vocab) {
    ModelConfig c;
    c.d_model = 24;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.attn_heads = 3;
    c.ff_dim = 48;
    c.memory_heads = 3;
    c.l_agg = 8;
    c.n_f = scfg.n_f;
    c.n_t = scfg.n_t;
    c.frame_dim = 12;
    c.vocab = vocab.size();
    c.dropout = 0.0;
    return c;
}

SegmentConfig tiny_segments() {
    SegmentConfig s;
    s.n_f = 16;
    s.n_t = 24;
    s.max_hop = 2;
    s.batch_segments = 2;
    return s;
}

TrackData tiny_track() {
    TrackData t;
    t.frames.frames = Eigen::MatrixXd::Zero(32, 12);
    Rng rng = make_rng(21, "train-frames");
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (Eigen::Index i = 0; i < 32; ++i)
        for (Eigen::Index j = 0; j < 12; ++j) t.frames.frames(i, j) = unit(rng);
    // Two onsets share a time bin so shuffle augmentation has room to act.
    t.notes.notes = {{0.05, 0.10, 60, 3, false},
                     {0.052, 0.20, 64, 3, false},
                     {0.18, 0.25, 67, 5, false}};
    t.notes.duration_s = 0.256;
    t.name = "tiny";
    return t;
}

}  // namespace

TEST_CASE("lr schedule ramps, decays, and floors") {
    LrSchedule s{1e-3, 1e-4, 10, 100};
    CHECK_THROWS_AS(s.at(0), UsageError);
    CHECK(s.at(1) == doctest::Approx(1e-4));  // peak * 1/10
    CHECK(s.at(5) == doctest::Approx(5e-4));
    CHECK(s.at(10) == doctest::Approx(1e-3));
    CHECK(s.at(55) == doctest::Approx(1e-4 + 0.5 * (1e-3 - 1e-4)));
    CHECK(s.at(100) == doctest::Approx(1e-4));
    CHECK(s.at(5000) == doctest::Approx(1e-4));
    for (long k = 10; k < 100; ++k) CHECK(s.at(k) >= s.at(k + 1));

    LrSchedule no_warmup{1e-3, 1e-4, 0, 100};
    CHECK(no_warmup.at(1) > 0.95e-3);
    CHECK(no_warmup.at(100) == doctest::Approx(1e-4));

    // A warmup longer than the run truncates to a plain ramp.
    LrSchedule ramp{1e-3, 1e-4, 20, 10};
    CHECK(ramp.at(15) == doctest::Approx(1e-3 * 15.0 / 20.0));
    CHECK(ramp.at(25) == doctest::Approx(1e-4));
}

TEST_CASE("adam bias correction makes the first steps unit-scaled") {
    SegmentConfig scfg = tiny_segments();
    Vocab vocab(scfg.t_max());
    Model m(tiny_model(scfg, vocab), 3);

    AdamOpt detached;
    CHECK_FALSE(detached.attached());
    CHECK_THROWS_AS(detached.step(m, 1e-3), UsageError);

    AdamOpt opt(m);
    CHECK(opt.attached());
    CHECK(opt.t() == 0);

    const double before = m.tensor("out.b")(0, 0);
    const Eigen::MatrixXd w_before = m.tensor("out.w");
    m.zero_grad();
    m.grad("out.b").setConstant(2.0);
    opt.step(m, 1e-3);
    CHECK(opt.t() == 1);

    // With constant gradient g, the bias-corrected update is lr * g/|g|.
    double delta = m.tensor("out.b")(0, 0) - before;
    CHECK(delta == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(m.tensor("out.w") == w_before);  // zero gradient, zero movement

    m.zero_grad();
    m.grad("out.b").setConstant(2.0);
    opt.step(m, 1e-3);
    CHECK(opt.t() == 2);
    double delta2 = m.tensor("out.b")(0, 0) - before;
    CHECK(delta2 == doctest::Approx(-2e-3).epsilon(1e-4));

    opt.set_t(40);
    CHECK(opt.t() == 40);
}

TEST_CASE("examples shift targets against decoder inputs") {
    SegmentConfig scfg = tiny_segments();
    Vocab vocab(scfg.t_max());
    TrackData track = tiny_track();
    Rng rng = make_rng(4, "train-pairs");
    std::vector<TrainingPair> pairs = make_training_pairs(track, scfg, vocab, rng, 1);
    REQUIRE(pairs.size() == 2);

    TrainExample ex = example_from_pair(pairs[1], vocab, false, nullptr);
    std::vector<int> want = vocab.ids(pairs[1].target_tokens);
    CHECK(ex.labels == want);
    REQUIRE(ex.dec_in.size() == ex.labels.size());
    CHECK(ex.dec_in[0] == Vocab::kSosId);
    for (std::size_t i = 1; i < ex.dec_in.size(); ++i) CHECK(ex.dec_in[i] == ex.labels[i - 1]);
    CHECK(ex.labels.back() == Vocab::kEosId);
    CHECK(ex.prior == pairs[1].prior);
    CHECK(ex.n_valid_frames == pairs[1].n_valid_frames);

    // Augmentation permutes within sections; canonical content is unchanged.
    // Window 0 holds two onsets in one bin, so a swap is reachable.
    std::vector<int> base = vocab.ids(pairs[0].target_tokens);
    Rng arng = make_rng(5, "train-aug");
    bool any_differs = false;
    for (int k = 0; k < 20; ++k) {
        TrainExample aug = example_from_pair(pairs[0], vocab, true, &arng);
        CHECK(canonicalize(vocab.tokens(aug.labels)) == pairs[0].target_tokens);
        any_differs |= aug.labels != base;
    }
    CHECK(any_differs);

    CHECK_THROWS_AS(example_from_pair(pairs[1], vocab, true, nullptr), UsageError);

    TrainingPair bad = pairs[0];
    bad.target_tokens.pop_back();  // drop EOS
    CHECK_THROWS_AS(example_from_pair(bad, vocab, false, nullptr), DataError);
}

TEST_CASE("repeated steps on one batch drive the loss down") {
    SegmentConfig scfg = tiny_segments();
    Vocab vocab(scfg.t_max());
    ModelConfig mc = tiny_model(scfg, vocab);
    Model m(mc, 9);
    TrackData track = tiny_track();
    Rng rng = make_rng(6, "train-loop");
    std::vector<TrainingPair> batch = make_training_pairs(track, scfg, vocab, rng, 1);

    long expect_tokens = 0;
    for (const TrainingPair& p : batch) expect_tokens += long(p.target_tokens.size());

    AdamOpt opt(m);
    LrSchedule sched{5e-3, 5e-4, 10, 250};
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 250; ++step) {
        StepResult r = train_step(m, vocab, batch, opt, sched, false, rng);
        CHECK(r.tokens == expect_tokens);
        CHECK(r.lr == doctest::Approx(sched.at(step + 1)));
        if (step == 0) first = r.loss;
        last = r.loss;
    }
    CHECK(opt.t() == 250);
    CHECK(last < 0.5 * first);
    CHECK(dataset_loss(m, vocab, batch) < first);
    CHECK(token_accuracy(m, vocab, batch) > 0.9);

    CHECK_THROWS_AS(train_step(m, vocab, {}, opt, sched, false, rng), UsageError);
    CHECK_THROWS_AS(dataset_loss(m, vocab, {}), UsageError);
    CHECK_THROWS_AS(token_accuracy(m, vocab, {}), UsageError);

    m.tensor("out.w").setConstant(std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(train_step(m, vocab, batch, opt, sched, false, rng), NumericError);
}

TEST_CASE("resuming restores the optimizer clock") {
    namespace fs = std::filesystem;
    SegmentConfig scfg = tiny_segments();
    Vocab vocab(scfg.t_max());
    Model m(tiny_model(scfg, vocab), 12);
    TrackData track = tiny_track();
    Rng rng = make_rng(7, "train-resume");
    std::vector<TrainingPair> batch = make_training_pairs(track, scfg, vocab, rng, 1);

    AdamOpt opt(m);
    LrSchedule sched{1e-3, 1e-4, 10, 50};
    for (int step = 0; step < 3; ++step) train_step(m, vocab, batch, opt, sched, false, rng);

    fs::path path = fs::temp_directory_path() / "amt_test_train_resume.bin";
    save_checkpoint(path.string(), m, opt.t(), &opt);

    Checkpoint back = load_checkpoint(path.string());
    REQUIRE(back.has_adam);
    CHECK(back.step == 3);
    CHECK(back.opt.t() == 3);

    StepResult r = train_step(back.model, vocab, batch, back.opt, sched, false, rng);
    CHECK(r.lr == doctest::Approx(sched.at(4)));
    CHECK(back.opt.t() == 4);
    fs::remove(path);
}
