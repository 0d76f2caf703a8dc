#include "amt/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "amt/audio.hpp"
#include "amt/errors.hpp"
#include "amt/mel.hpp"
#include "amt/rng.hpp"
#include "amt/smf.hpp"

namespace amt {

namespace fs = std::filesystem;

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("audio_path") || !j.contains("midi_path") || !j.contains("split"))
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": need audio_path, midi_path, split");
        ManifestEntry e;
        e.audio_path = j.at("audio_path").get<std::string>();
        e.midi_path = j.at("midi_path").get<std::string>();
        e.split = j.at("split").get<std::string>();
        if (e.split != "train" && e.split != "val" && e.split != "test")
            throw DataError("manifest line " + std::to_string(line_no) + ": bad split '" +
                            e.split + "'");
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& e : entries) {
        nlohmann::json j;
        j["audio_path"] = e.audio_path;
        j["midi_path"] = e.midi_path;
        j["split"] = e.split;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("short write: " + path);
}

std::vector<std::string> split_assign(int n_tracks) {
    if (n_tracks <= 0) throw UsageError("split_assign: need at least one track");
    const double shares[3] = {0.90, 0.05, 0.05};
    int counts[3];
    double rem[3];
    int assigned = 0;
    for (int b = 0; b < 3; ++b) {
        double exact = n_tracks * shares[b];
        counts[b] = static_cast<int>(exact);
        rem[b] = exact - counts[b];
        assigned += counts[b];
    }
    // Largest remainder; ties favor the earlier bucket.
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; assigned < n_tracks; ++k) {
        ++counts[order[k % 3]];
        ++assigned;
    }
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n_tracks));
    const char* names[3] = {"train", "val", "test"};
    for (int b = 0; b < 3; ++b)
        for (int i = 0; i < counts[b]; ++i) out.emplace_back(names[b]);
    return out;
}

namespace {

constexpr int kPentatonic[5] = {0, 2, 4, 7, 9};

int scale_pitch(int base, int step) {
    int oct = step / 5, deg = step % 5;
    if (deg < 0) {
        deg += 5;
        --oct;
    }
    return base + 12 * oct + kPentatonic[deg];
}

// Monophonic line: random walk over a pentatonic lattice on a fixed onset grid.
void emit_voice(NoteSequence& seq, Rng& rng, int program, int base_pitch, int max_steps,
                double t0, double grid, double dur, double t_end, double emit_prob,
                int* budget) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> jump(-2, 2);
    int pos = max_steps / 2;
    for (double t = t0; t + dur <= t_end && *budget > 0; t += grid) {
        pos = std::clamp(pos + jump(rng), 0, max_steps - 1);
        if (coin(rng) >= emit_prob) continue;
        int pitch = std::clamp(scale_pitch(base_pitch, pos), 0, 127);
        seq.notes.push_back({t, t + dur, pitch, program, false});
        --*budget;
    }
}

NoteSequence synth_normal(const SyntheticSpec& spec, int index) {
    Rng rng = make_rng(spec.seed, "track" + std::to_string(index));
    static const int kPool[8] = {0, 8, 16, 24, 32, 40, 48, 56};
    int lo = std::clamp(spec.min_programs, 1, 8);
    int hi = std::clamp(spec.max_programs, lo, 8);
    std::uniform_int_distribution<int> npd(lo, hi);
    int n_prog = npd(rng);

    int pool[8];
    std::copy(kPool, kPool + 8, pool);
    for (int i = 7; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i);
        std::swap(pool[i], pool[pick(rng)]);
    }

    NoteSequence seq;
    seq.duration_s = spec.track_seconds;
    int budget = spec.notes_per_track;
    double t_end = spec.track_seconds - 0.05;
    for (int v = 0; v < n_prog; ++v) {
        int base = (v % 2 == 0) ? 55 : 67;
        emit_voice(seq, rng, pool[v], base, 12, 0.25, 0.25, 0.20, t_end, 0.7, &budget);
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (spec.drums && coin(rng) < 0.75) {
        for (double t = 0.25; t <= t_end && budget > 0; t += 0.25) {
            if (coin(rng) >= 0.5) continue;
            seq.notes.push_back({t, t, 36, 0, true});
            --budget;
        }
    }
    seq.normalize();
    return seq;
}

// Paired tracks share one melody after the first window; only an opening cue
// (register) tells the two program classes apart once that window scrolls away.
NoteSequence synth_disambiguation(const SyntheticSpec& spec, int index) {
    int pair = index / 2;
    int cls = index % 2;
    int program = cls;  // programs 0 and 1 render identically

    NoteSequence seq;
    seq.duration_s = spec.track_seconds;

    Rng cue_rng = make_rng(spec.seed, "cue" + std::to_string(index));
    int cue_base = (cls == 0) ? 36 : 79;
    int budget = spec.notes_per_track;
    emit_voice(seq, cue_rng, program, cue_base, 6, 0.25, 0.25, 0.20, 1.95, 1.0, &budget);

    Rng mel_rng = make_rng(spec.seed, "pair" + std::to_string(pair));
    double t_end = spec.track_seconds - 0.10;
    emit_voice(seq, mel_rng, program, 55, 11, 2.304, 0.256, 0.20, t_end, 1.0, &budget);

    seq.normalize();
    return seq;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write: " + path);
}

}  // namespace

NoteSequence synth_track_notes(const SyntheticSpec& spec, int track_index) {
    if (track_index < 0 || track_index >= spec.n_tracks)
        throw UsageError("synth_track_notes: track index out of range");
    if (spec.track_seconds <= 0.5) throw UsageError("track_seconds too small");
    return spec.disambiguation ? synth_disambiguation(spec, track_index)
                               : synth_normal(spec, track_index);
}

std::vector<ManifestEntry> make_dataset(const SyntheticSpec& spec, const std::string& out_dir) {
    if (spec.n_tracks <= 0) throw UsageError("make_dataset: n_tracks must be positive");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir + ": " + ec.message());

    std::vector<std::string> splits = split_assign(spec.n_tracks);
    std::vector<ManifestEntry> entries;
    entries.reserve(static_cast<size_t>(spec.n_tracks));
    for (int i = 0; i < spec.n_tracks; ++i) {
        NoteSequence notes = synth_track_notes(spec, i);
        std::ostringstream stem;
        stem << "track" << (i < 10 ? "0" : "") << i;

        AudioBuffer audio = synthesize_additive(notes, kSampleRate);
        std::string wav_name = stem.str() + ".wav";
        write_wav_file((fs::path(out_dir) / wav_name).string(), audio);

        std::string mid_name = stem.str() + ".mid";
        write_file((fs::path(out_dir) / mid_name).string(), write_smf(notes));

        entries.push_back({wav_name, mid_name, splits[static_cast<size_t>(i)]});
    }
    write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), entries);
    return entries;
}

}  // namespace amt
