#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "amt/audio.hpp"
#include "amt/codec.hpp"
#include "amt/config.hpp"
#include "amt/dataset.hpp"
#include "amt/errors.hpp"
#include "amt/mel.hpp"
#include "amt/metrics.hpp"
#include "amt/nn.hpp"
#include "amt/rng.hpp"
#include "amt/segmenter.hpp"
#include "amt/smf.hpp"
#include "amt/train.hpp"
#include "amt/transcribe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw amt::DataError("cannot open: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw amt::DataError("cannot open: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

// Binds --out targets: empty path means stdout.
class OutStream {
public:
    explicit OutStream(const std::string& path) {
        if (path.empty()) {
            os_ = &std::cout;
        } else {
            file_.open(path, std::ios::trunc);
            if (!file_) throw amt::DataError("cannot write: " + path);
            os_ = &file_;
        }
    }
    std::ostream& get() { return *os_; }
    void finish(const std::string& path) {
        os_->flush();
        if (!path.empty() && !file_) throw amt::DataError("short write: " + path);
    }

private:
    std::ofstream file_;
    std::ostream* os_ = nullptr;
};

amt::TrackData load_track(const fs::path& base, const amt::ManifestEntry& e) {
    amt::AudioBuffer audio = amt::read_wav_file(base / e.audio_path);
    audio = amt::resample(audio, amt::kSampleRate);
    amt::TrackData td;
    td.frames = amt::log_mel(audio);
    td.notes = amt::parse_smf(read_file_bytes(base / e.midi_path)).notes;
    td.name = fs::path(e.midi_path).stem().string();
    return td;
}

long window_count(double duration_s, double window_s) {
    long n = static_cast<long>(std::ceil(duration_s / window_s - 1e-9));
    return std::max<long>(1, n);
}

// ---------------------------------------------------------------- make-dataset

struct MakeDatasetArgs {
    std::string out_dir;
    int tracks = 16;
    double seconds = 0.0;  // 0: per-mode default
    bool disambiguation = false;
    int min_programs = 1;
    int max_programs = 2;
    bool drums = true;
    int notes = 64;
};

int run_make_dataset(const amt::RunConfig& cfg, const MakeDatasetArgs& a) {
    amt::SyntheticSpec spec;
    spec.n_tracks = a.tracks;
    spec.disambiguation = a.disambiguation;
    spec.track_seconds = a.seconds > 0 ? a.seconds : (a.disambiguation ? 10.24 : 4.608);
    spec.min_programs = a.min_programs;
    spec.max_programs = a.max_programs;
    spec.drums = a.drums;
    spec.notes_per_track = a.notes;
    spec.seed = cfg.seed;

    auto entries = amt::make_dataset(spec, a.out_dir);
    long n_train = 0, n_val = 0, n_test = 0;
    for (const auto& e : entries) {
        if (e.split == "train") ++n_train;
        else if (e.split == "val") ++n_val;
        else ++n_test;
    }
    std::cout << "wrote " << entries.size() << " tracks to " << a.out_dir << " (train/val/test = "
              << n_train << "/" << n_val << "/" << n_test << ")\n";
    std::cout << "manifest: " << (fs::path(a.out_dir) / "manifest.jsonl").string() << "\n";
    return 0;
}

// ------------------------------------------------------- tokenize / detokenize

int run_tokenize(const amt::RunConfig& cfg, const std::string& midi_path,
                 const std::string& out_path) {
    amt::NoteSequence seq = amt::parse_smf(read_file_bytes(midi_path)).notes;
    amt::SegmentConfig scfg = cfg.segment_config();
    const double win = scfg.window_seconds();
    const int t_max = scfg.t_max();
    const long n_win = window_count(seq.duration_s, win);

    OutStream out(out_path);
    for (long w = 0; w < n_win; ++w) {
        amt::SegmentWindow window{w * win, (w + 1) * win};
        amt::TokenSeq toks = amt::encode_segment(seq, window, t_max, scfg.n_t);
        out.get() << amt::tokens_to_text(toks) << "\n";
    }
    out.finish(out_path);
    return 0;
}

int run_detokenize(const amt::RunConfig& cfg, const std::string& tokens_path,
                   const std::string& out_path) {
    std::vector<std::string> lines = read_lines(tokens_path);
    if (lines.empty()) throw amt::DataError("no token lines in " + tokens_path);
    amt::SegmentConfig scfg = cfg.segment_config();
    const double win = scfg.window_seconds();

    amt::NoteSequence seq;
    amt::HeldNotes held;
    amt::DecodeStats stats;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        amt::TokenSeq toks;
        try {
            toks = amt::tokens_from_text(lines[i]);
        } catch (const amt::DataError& e) {
            throw amt::DataError("line " + std::to_string(i + 1) + ": " + e.what());
        }
        amt::SegmentWindow window{double(i) * win, double(i + 1) * win};
        amt::DecodeResult r = amt::decode_tokens(toks, window, held);
        seq.notes.insert(seq.notes.end(), r.fragment.notes.begin(), r.fragment.notes.end());
        held = std::move(r.new_held);
        stats += r.stats;
    }
    const double end_s = double(lines.size()) * win;
    for (const auto& [key, onsets] : held)
        for (double onset : onsets)
            seq.notes.push_back({onset, std::max(end_s, onset + amt::kTimeStepS), key.second,
                                 key.first, false});
    seq.duration_s = end_s;
    seq.normalize();

    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw amt::DataError("cannot write: " + out_path);
    auto bytes = amt::write_smf(seq);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw amt::DataError("short write: " + out_path);

    if (stats.violations_total() > 0)
        std::cerr << "note: decoded with " << stats.violations_total()
                  << " grammar violations\n";
    std::cout << "wrote " << seq.notes.size() << " notes to " << out_path << "\n";
    return 0;
}

int run_augment(const amt::RunConfig& cfg, const std::string& in_path,
                const std::string& out_path) {
    std::vector<std::string> lines = read_lines(in_path);
    amt::Rng rng = amt::make_rng(cfg.seed, "augment");
    OutStream out(out_path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        amt::TokenSeq toks;
        try {
            toks = amt::tokens_from_text(lines[i]);
            out.get() << amt::tokens_to_text(amt::shuffle_tokens(toks, rng)) << "\n";
        } catch (const amt::DataError& e) {
            throw amt::DataError("line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    out.finish(out_path);
    return 0;
}

// ------------------------------------------------------------------------ train

double val_onset_f1_flat(const amt::Model& model, const amt::Vocab& vocab,
                         const std::vector<amt::TrackData>& tracks,
                         const amt::SegmentConfig& scfg, double tol_s) {
    std::vector<amt::CorpusPair> pairs;
    std::vector<std::string> names;
    for (const auto& t : tracks) {
        double total_s = double(t.frames.num_frames()) * t.frames.frame_hop_s;
        amt::TranscribeResult r = amt::transcribe_frames(model, vocab, t.frames, scfg, total_s);
        pairs.emplace_back(t.notes, r.notes);
        names.push_back(t.name);
    }
    return amt::evaluate_corpus(pairs, tol_s, names).corpus_onset[0].f1;
}

int run_train(amt::RunConfig cfg, const std::string& resume_path) {
    using clock = std::chrono::steady_clock;
    if (cfg.manifest.empty())
        throw amt::UsageError("train: set a manifest (--manifest or config key manifest)");
    if (cfg.out_dir.empty())
        throw amt::UsageError("train: set an output directory (--out-dir or config key out_dir)");
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw amt::DataError("cannot create " + cfg.out_dir + ": " + ec.message());

    std::cout << "== resolved config ==\n" << cfg.dump() << "== end config ==\n";
    {
        std::ofstream f(fs::path(cfg.out_dir) / "config.txt", std::ios::trunc);
        f << cfg.dump();
    }

    auto entries = amt::read_manifest(cfg.manifest);
    fs::path base = fs::path(cfg.manifest).parent_path();
    std::vector<amt::TrackData> train_tracks, val_tracks;
    for (const auto& e : entries) {
        if (e.split == "test") continue;  // held out entirely
        amt::TrackData td = load_track(base, e);
        (e.split == "train" ? train_tracks : val_tracks).push_back(std::move(td));
    }
    if (train_tracks.empty()) throw amt::DataError("manifest has no train tracks");
    std::cout << "tracks: train=" << train_tracks.size() << " val=" << val_tracks.size() << "\n";

    amt::SegmentConfig scfg = cfg.segment_config();
    amt::Vocab vocab(scfg.t_max());
    amt::Model model(cfg.model_config(vocab.size()), cfg.seed);
    amt::AdamOpt opt(model);
    long start_step = 0;
    if (!resume_path.empty()) {
        amt::Checkpoint ck = amt::load_checkpoint(resume_path);
        if (!(ck.model.config() == model.config()))
            throw amt::DataError("resume checkpoint was trained with a different model config");
        model = std::move(ck.model);
        start_step = ck.step;
        if (ck.has_adam) {
            opt = std::move(ck.opt);
        } else {
            opt = amt::AdamOpt(model);
            opt.set_t(start_step);
        }
        std::cout << "resumed from " << resume_path << " at step " << start_step << "\n";
    }
    std::cout << "model parameters: " << model.param_count() << "\n";

    std::vector<amt::TrainingPair> val_pairs;
    {
        amt::Rng vrng = amt::make_rng(cfg.seed, "val-pairs");
        for (const auto& t : val_tracks)
            for (auto& p : amt::make_training_pairs(t, scfg, vocab, vrng, 1))
                val_pairs.push_back(std::move(p));
    }

    amt::LrSchedule sched = cfg.schedule();
    amt::BatchSampler sampler(&train_tracks, scfg, &vocab, amt::make_rng(cfg.seed, "sampler"));
    amt::Rng aug_rng = amt::make_rng(cfg.seed, "augment");

    const std::string best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
    std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl",
                      start_step > 0 ? std::ios::app : std::ios::trunc);

    auto t0 = clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    double best_val = std::numeric_limits<double>::infinity();
    long best_step = -1;

    for (long s = start_step + 1; s <= cfg.total_steps; ++s) {
        auto batch = sampler.next();
        amt::StepResult r = amt::train_step(model, vocab, batch, opt, sched, cfg.augment, aug_rng);
        if (s == start_step + 1 || s % cfg.log_every == 0 || s == cfg.total_steps) {
            json j{{"step", s}, {"loss", r.loss}, {"lr", r.lr}, {"seconds", elapsed()}};
            log << j.dump() << "\n";
            log.flush();
            std::cout << "step " << s << "/" << cfg.total_steps << " loss=" << r.loss
                      << " lr=" << r.lr << "\n";
        }
        if (!val_pairs.empty() && (s % cfg.eval_every == 0 || s == cfg.total_steps)) {
            double vl = amt::dataset_loss(model, vocab, val_pairs);
            json j{{"step", s}, {"val_loss", vl}, {"seconds", elapsed()}};
            log << j.dump() << "\n";
            log.flush();
            std::cout << "step " << s << " val_loss=" << vl << "\n";
            if (vl < best_val) {
                best_val = vl;
                best_step = s;
                amt::save_checkpoint(best_path, model, s, &opt);
            }
        }
    }
    amt::save_checkpoint(last_path, model, cfg.total_steps, &opt);
    if (best_step < 0) {
        // No validation split: keep the checkpoints interchangeable.
        amt::save_checkpoint(best_path, model, cfg.total_steps, &opt);
        best_step = cfg.total_steps;
    }
    std::cout << "checkpoints: " << best_path << " (step " << best_step << "), " << last_path
              << " (step " << cfg.total_steps << ")\n";

    if (val_pairs.empty()) {
        std::cout << "no val tracks; skipping final validation report\n";
        return 0;
    }

    struct Scored {
        const char* name;
        long step;
        double loss, acc, f1;
    };
    amt::Model best_model = amt::load_checkpoint(best_path).model;
    auto score = [&](const amt::Model& m, const char* name, long step) {
        Scored sc{name, step, 0, 0, 0};
        sc.loss = amt::dataset_loss(m, vocab, val_pairs);
        sc.acc = amt::token_accuracy(m, vocab, val_pairs);
        sc.f1 = val_onset_f1_flat(m, vocab, val_tracks, scfg, cfg.tolerance_s);
        std::cout << "val[" << name << " @step " << step << "]: loss=" << sc.loss
                  << " token_acc=" << sc.acc << " onset_f1_flat=" << sc.f1 << "\n";
        return sc;
    };
    Scored sb = score(best_model, "best", best_step);
    Scored sl = score(model, "last", cfg.total_steps);
    const Scored& acc_pick = sb.acc >= sl.acc ? sb : sl;
    const Scored& f1_pick = sb.f1 >= sl.f1 ? sb : sl;
    std::cout << "summary: val token accuracy " << acc_pick.acc << " (checkpoint "
              << acc_pick.name << "), val onset F1 " << f1_pick.f1 << " (checkpoint "
              << f1_pick.name << ")\n";
    json j{{"step", cfg.total_steps},
           {"val_token_acc", acc_pick.acc},
           {"val_onset_f1_flat", f1_pick.f1},
           {"acc_checkpoint", acc_pick.name},
           {"f1_checkpoint", f1_pick.name},
           {"seconds", elapsed()}};
    log << j.dump() << "\n";
    return 0;
}

// ------------------------------------------------------------------- transcribe

int run_transcribe(const amt::RunConfig& cfg, const std::string& ckpt_path,
                   const std::string& audio_path, const std::string& out_path,
                   const std::string& tokens_out, const std::string& stats_out) {
    amt::Checkpoint ck = amt::load_checkpoint(ckpt_path);
    const amt::Model& model = ck.model;

    amt::SegmentConfig scfg = cfg.segment_config();
    scfg.n_f = model.config().n_f;  // geometry comes from the checkpoint
    scfg.n_t = model.config().n_t;
    amt::Vocab vocab(scfg.t_max());
    if (vocab.size() != model.config().vocab)
        throw amt::DataError("checkpoint vocab size " + std::to_string(model.config().vocab) +
                             " does not match window-derived size " +
                             std::to_string(vocab.size()));

    amt::AudioBuffer audio = amt::read_wav_file(audio_path);
    audio = amt::resample(audio, amt::kSampleRate);
    amt::TranscribeResult r = amt::transcribe_track(model, vocab, audio, scfg);

    {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw amt::DataError("cannot write: " + out_path);
        auto bytes = amt::write_smf(r.notes);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw amt::DataError("short write: " + out_path);
    }
    if (!tokens_out.empty()) {
        OutStream out(tokens_out);
        for (const auto& ids : r.window_ids)
            out.get() << amt::tokens_to_text(vocab.tokens(ids)) << "\n";
        out.finish(tokens_out);
    }

    json stats;
    stats["windows"] = r.window_ids.size();
    stats["notes"] = r.notes.notes.size();
    stats["violations"] = r.stats.as_map();
    stats["violations_total"] = r.stats.violations_total();
    std::cout << stats.dump(2) << "\n";
    if (!stats_out.empty()) {
        std::ofstream out(stats_out, std::ios::trunc);
        if (!out) throw amt::DataError("cannot write: " + stats_out);
        out << stats.dump(2) << "\n";
    }
    return 0;
}

// --------------------------------------------------------------------- evaluate

int run_evaluate(const amt::RunConfig& cfg, const std::string& ref_dir,
                 const std::string& est_dir, const std::string& json_out,
                 const std::string& csv_out) {
    if (!fs::is_directory(ref_dir)) throw amt::DataError("not a directory: " + ref_dir);
    if (!fs::is_directory(est_dir)) throw amt::DataError("not a directory: " + est_dir);

    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(ref_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".mid" || ext == ".midi") stems.push_back(entry.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());

    std::vector<amt::CorpusPair> pairs;
    std::vector<std::string> names;
    long skipped = 0;
    for (const std::string& stem : stems) {
        fs::path ref_path;
        for (const char* ext : {".mid", ".midi"}) {
            fs::path p = fs::path(ref_dir) / (stem + ext);
            if (fs::exists(p)) ref_path = p;
        }
        fs::path est_path;
        for (const char* ext : {".mid", ".midi"}) {
            fs::path p = fs::path(est_dir) / (stem + ext);
            if (fs::exists(p)) est_path = p;
        }
        if (est_path.empty()) {
            std::cerr << "warning: no estimate for " << stem << ", skipping\n";
            ++skipped;
            continue;
        }
        pairs.emplace_back(amt::parse_smf(read_file_bytes(ref_path)).notes,
                           amt::parse_smf(read_file_bytes(est_path)).notes);
        names.push_back(stem);
    }
    if (pairs.empty()) throw amt::DataError("no reference/estimate pairs found");

    amt::MetricReport rep = amt::evaluate_corpus(pairs, cfg.tolerance_s, names);

    if (!json_out.empty()) {
        std::ofstream out(json_out, std::ios::trunc);
        if (!out) throw amt::DataError("cannot write: " + json_out);
        out << rep.to_json() << "\n";
    }
    if (!csv_out.empty()) {
        std::ofstream out(csv_out, std::ios::trunc);
        if (!out) throw amt::DataError("cannot write: " + csv_out);
        out << rep.to_csv();
    }

    std::cout << "tracks evaluated: " << pairs.size();
    if (skipped > 0) std::cout << " (skipped " << skipped << ")";
    std::cout << "\n";
    char buf[160];
    for (int g = 0; g < 3; ++g) {
        const amt::PRF& p = rep.corpus_onset[g];
        std::snprintf(buf, sizeof buf, "onset %-9s P=%.4f R=%.4f F1=%.4f (tp=%ld fp=%ld fn=%ld)",
                      amt::granularity_name(amt::Granularity(g)), p.precision, p.recall, p.f1,
                      p.tp, p.fp, p.fn);
        std::cout << buf << "\n";
    }
    std::snprintf(buf, sizeof buf, "instrument detection (macro) P=%.4f R=%.4f F1=%.4f",
                  rep.detection_macro.precision, rep.detection_macro.recall,
                  rep.detection_macro.f1);
    std::cout << buf << "\n";
    std::snprintf(buf, sizeof buf, "instrument leakage phi=%.4f (%ld/%ld)", rep.phi, rep.phi_num,
                  rep.phi_den);
    std::cout << buf << "\n";
    return 0;
}

// -------------------------------------------------------------------- gradcheck

int run_gradcheck(int n_seeds, double h, double threshold) {
    if (n_seeds < 1) throw amt::UsageError("gradcheck: need at least one seed");
    amt::ModelConfig gc = amt::gradcheck_config();
    double worst = 0.0;
    for (int s = 1; s <= n_seeds; ++s) {
        amt::GradCheckReport rep = amt::gradient_check(gc, std::uint64_t(s), h);
        std::string worst_name;
        for (const auto& [name, err] : rep.per_tensor)
            if (err == rep.max_rel_error) worst_name = name;
        char buf[160];
        std::snprintf(buf, sizeof buf, "seed %d: max tensor rel err %.3e (%s)", s,
                      rep.max_rel_error, worst_name.c_str());
        std::cout << buf << "\n";
        worst = std::max(worst, rep.max_rel_error);
    }
    if (!(worst < threshold)) {
        std::ostringstream msg;
        msg << "gradient check failed: max rel err " << worst << " >= " << threshold;
        throw amt::NumericError(msg.str());
    }
    std::cout << "gradient check passed: " << n_seeds << " seed(s) below " << threshold << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy multi-instrument music transcription pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_flag = 0;
    int threads_flag = 0;
    std::vector<std::string> set_kv;
    auto* opt_config = app.add_option("--config", config_path, "key=value settings file");
    auto* opt_seed = app.add_option("--seed", seed_flag, "override config seed");
    auto* opt_threads = app.add_option("--threads", threads_flag, "override config threads");
    app.add_option("--set", set_kv, "override a config key, e.g. --set l_agg=0")
        ->take_all();

    auto* cmd_make = app.add_subcommand("make-dataset", "synthesize a WAV+MIDI corpus");
    MakeDatasetArgs mk;
    cmd_make->add_option("--out", mk.out_dir, "output directory")->required();
    cmd_make->add_option("--tracks", mk.tracks, "number of tracks");
    cmd_make->add_option("--seconds", mk.seconds, "track length in seconds");
    cmd_make->add_flag("--disambiguation", mk.disambiguation,
                       "paired-cue corpus for memory experiments");
    cmd_make->add_option("--min-programs", mk.min_programs, "min melodic programs per track");
    cmd_make->add_option("--max-programs", mk.max_programs, "max melodic programs per track");
    cmd_make->add_flag("--drums,!--no-drums", mk.drums, "include a drum voice");
    cmd_make->add_option("--notes", mk.notes, "note budget per track");

    auto* cmd_tok = app.add_subcommand("tokenize", "MIDI to token text, one window per line");
    std::string tok_midi, tok_out;
    cmd_tok->add_option("--midi", tok_midi, "input MIDI file")->required();
    cmd_tok->add_option("--out", tok_out, "output text file (default stdout)");

    auto* cmd_detok = app.add_subcommand("detokenize", "token text back to MIDI");
    std::string detok_tokens, detok_out;
    cmd_detok->add_option("--tokens", detok_tokens, "input token text file")->required();
    cmd_detok->add_option("--out", detok_out, "output MIDI file")->required();

    auto* cmd_aug = app.add_subcommand("augment", "order-shuffle token text, one line per window");
    std::string aug_in, aug_out;
    cmd_aug->add_option("--in", aug_in, "input token text file")->required();
    cmd_aug->add_option("--out", aug_out, "output text file (default stdout)");

    auto* cmd_train = app.add_subcommand("train", "train a transcription model");
    std::string train_manifest, train_out_dir, train_resume;
    cmd_train->add_option("--manifest", train_manifest, "dataset manifest (JSONL)");
    cmd_train->add_option("--out-dir", train_out_dir, "checkpoint/log directory");
    cmd_train->add_option("--resume", train_resume, "checkpoint to resume from");

    auto* cmd_trans = app.add_subcommand("transcribe", "audio to MIDI with a trained model");
    std::string trans_ckpt, trans_audio, trans_out, trans_tokens, trans_stats;
    cmd_trans->add_option("--checkpoint", trans_ckpt, "model checkpoint")->required();
    cmd_trans->add_option("--audio", trans_audio, "input WAV file")->required();
    cmd_trans->add_option("--out", trans_out, "output MIDI file")->required();
    cmd_trans->add_option("--tokens-out", trans_tokens, "also write predicted token text");
    cmd_trans->add_option("--stats-out", trans_stats, "also write decode stats JSON");

    auto* cmd_eval = app.add_subcommand("evaluate", "score estimate MIDI against reference MIDI");
    std::string eval_ref, eval_est, eval_json, eval_csv;
    double eval_tol = -1.0;
    cmd_eval->add_option("--ref-dir", eval_ref, "reference MIDI directory")->required();
    cmd_eval->add_option("--est-dir", eval_est, "estimate MIDI directory")->required();
    cmd_eval->add_option("--json", eval_json, "write full report JSON here");
    cmd_eval->add_option("--csv", eval_csv, "write per-track CSV here");
    cmd_eval->add_option("--tol", eval_tol, "onset tolerance in seconds");

    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
    int grad_seeds = 5;
    double grad_h = 1e-5, grad_threshold = 1e-4;
    cmd_grad->add_option("--seeds", grad_seeds, "number of seeds");
    cmd_grad->add_option("--fd-step", grad_h, "finite-difference step");
    cmd_grad->add_option("--threshold", grad_threshold, "max tolerated relative error");

    for (CLI::App* sc : app.get_subcommands([](const CLI::App*) { return true; }))
        sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        std::vector<std::pair<std::string, std::string>> overrides;
        for (const std::string& kv : set_kv) {
            std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw amt::UsageError("--set expects key=value, got '" + kv + "'");
            overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (opt_seed->count() > 0) overrides.emplace_back("seed", std::to_string(seed_flag));
        if (opt_threads->count() > 0)
            overrides.emplace_back("threads", std::to_string(threads_flag));
        (void)opt_config;
        amt::RunConfig cfg = amt::RunConfig::load(config_path, overrides);

        if (*cmd_make) return run_make_dataset(cfg, mk);
        if (*cmd_tok) return run_tokenize(cfg, tok_midi, tok_out);
        if (*cmd_detok) return run_detokenize(cfg, detok_tokens, detok_out);
        if (*cmd_aug) return run_augment(cfg, aug_in, aug_out);
        if (*cmd_train) {
            if (!train_manifest.empty()) cfg.manifest = train_manifest;
            if (!train_out_dir.empty()) cfg.out_dir = train_out_dir;
            return run_train(std::move(cfg), train_resume);
        }
        if (*cmd_trans)
            return run_transcribe(cfg, trans_ckpt, trans_audio, trans_out, trans_tokens,
                                  trans_stats);
        if (*cmd_eval) {
            if (eval_tol > 0) cfg.tolerance_s = eval_tol;
            return run_evaluate(cfg, eval_ref, eval_est, eval_json, eval_csv);
        }
        if (*cmd_grad) return run_gradcheck(grad_seeds, grad_h, grad_threshold);
        throw amt::UsageError("no subcommand selected");
    } catch (const amt::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const amt::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const amt::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
