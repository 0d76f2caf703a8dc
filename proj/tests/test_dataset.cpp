#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "amt/audio.hpp"
#include "amt/dataset.hpp"
#include "amt/errors.hpp"
#include "amt/smf.hpp"

using namespace amt;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> slurp_bytes(const fs::path& p) {
    std::vector<char> raw = slurp(p);
    return {raw.begin(), raw.end()};
}

std::map<std::string, int> split_counts(const std::vector<std::string>& splits) {
    std::map<std::string, int> c;
    for (const std::string& s : splits) ++c[s];
    return c;
}

fs::path scratch_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool same_notes(const NoteSequence& a, const NoteSequence& b) {
    if (a.notes.size() != b.notes.size()) return false;
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
        const NoteEvent &x = a.notes[i], &y = b.notes[i];
        if (x.onset_s != y.onset_s || x.offset_s != y.offset_s) return false;
        if (x.pitch != y.pitch || x.program != y.program || x.is_drum != y.is_drum) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("splits follow 90:5:5 with largest remainders") {
    CHECK_THROWS_AS(split_assign(0), UsageError);
    CHECK_THROWS_AS(split_assign(-4), UsageError);

    CHECK(split_counts(split_assign(16)) ==
          std::map<std::string, int>{{"train", 14}, {"val", 1}, {"test", 1}});
    CHECK(split_counts(split_assign(20)) ==
          std::map<std::string, int>{{"train", 18}, {"val", 1}, {"test", 1}});
    CHECK(split_assign(1) == std::vector<std::string>{"train"});
    CHECK(split_counts(split_assign(2)) == std::map<std::string, int>{{"train", 2}});
    CHECK(split_counts(split_assign(100)) ==
          std::map<std::string, int>{{"train", 90}, {"val", 5}, {"test", 5}});

    // Buckets are contiguous: all train tracks first, then val, then test.
    std::vector<std::string> s = split_assign(40);
    REQUIRE(s.size() == 40);
    CHECK(std::is_sorted(s.begin(), s.end(), [](const std::string& a, const std::string& b) {
        auto rank = [](const std::string& x) { return x == "train" ? 0 : x == "val" ? 1 : 2; };
        return rank(a) < rank(b);
    }));
}

TEST_CASE("manifests round trip and reject malformed lines") {
    fs::path dir = scratch_dir("amt_test_manifest");
    fs::path path = dir / "m.jsonl";

    std::vector<ManifestEntry> entries = {{"a.wav", "a.mid", "train"},
                                          {"b.wav", "b.mid", "val"},
                                          {"c.wav", "c.mid", "test"}};
    write_manifest(path.string(), entries);
    std::vector<ManifestEntry> back = read_manifest(path.string());
    REQUIRE(back.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CHECK(back[i].audio_path == entries[i].audio_path);
        CHECK(back[i].midi_path == entries[i].midi_path);
        CHECK(back[i].split == entries[i].split);
    }

    {
        std::ofstream app(path, std::ios::app);
        app << "\n   \n";  // blank lines are skipped
    }
    CHECK(read_manifest(path.string()).size() == 3);

    auto write_lines = [&](const std::string& body) {
        std::ofstream out(path, std::ios::trunc);
        out << body;
    };
    write_lines("{\"audio_path\": \"a.wav\"");
    CHECK_THROWS_AS(read_manifest(path.string()), DataError);
    write_lines("{\"audio_path\": \"a.wav\", \"split\": \"train\"}\n");
    CHECK_THROWS_AS(read_manifest(path.string()), DataError);
    write_lines("{\"audio_path\": \"a\", \"midi_path\": \"b\", \"split\": \"dev\"}\n");
    CHECK_THROWS_AS(read_manifest(path.string()), DataError);
    CHECK_THROWS_AS(read_manifest((dir / "missing.jsonl").string()), DataError);

    fs::remove_all(dir);
}

TEST_CASE("synthetic tracks are deterministic and well formed") {
    SyntheticSpec spec;
    spec.n_tracks = 4;
    spec.track_seconds = 3.0;
    spec.notes_per_track = 40;

    NoteSequence a = synth_track_notes(spec, 1);
    NoteSequence b = synth_track_notes(spec, 1);
    CHECK(same_notes(a, b));
    CHECK(a.duration_s == b.duration_s);

    NoteSequence c = synth_track_notes(spec, 2);
    CHECK_FALSE(same_notes(a, c));

    SyntheticSpec other = spec;
    other.seed = 8;
    CHECK_FALSE(same_notes(a, synth_track_notes(other, 1)));

    for (int i = 0; i < spec.n_tracks; ++i) {
        NoteSequence t = synth_track_notes(spec, i);
        CHECK(int(t.notes.size()) <= spec.notes_per_track);
        CHECK(t.notes.size() > 0);
        for (const NoteEvent& n : t.notes) {
            CHECK(n.onset_s >= 0.0);
            CHECK(n.offset_s <= spec.track_seconds);
            CHECK(n.pitch >= 0);
            CHECK(n.pitch <= 127);
            if (n.is_drum) {
                CHECK(n.pitch == 36);
            } else {
                CHECK(n.program % 8 == 0);
                CHECK(n.program < 64);
                CHECK(n.offset_s > n.onset_s);
            }
        }
    }

    CHECK_THROWS_AS(synth_track_notes(spec, -1), UsageError);
    CHECK_THROWS_AS(synth_track_notes(spec, spec.n_tracks), UsageError);
    SyntheticSpec shorty = spec;
    shorty.track_seconds = 0.3;
    CHECK_THROWS_AS(synth_track_notes(shorty, 0), UsageError);
}

TEST_CASE("dataset builds are byte-identical for one spec") {
    SyntheticSpec spec;
    spec.n_tracks = 3;
    spec.track_seconds = 1.5;
    spec.notes_per_track = 24;

    fs::path da = scratch_dir("amt_test_ds_a");
    fs::path db = scratch_dir("amt_test_ds_b");
    std::vector<ManifestEntry> ea = make_dataset(spec, da.string());
    std::vector<ManifestEntry> eb = make_dataset(spec, db.string());
    REQUIRE(ea.size() == 3);
    REQUIRE(eb.size() == 3);

    CHECK(slurp(da / "manifest.jsonl") == slurp(db / "manifest.jsonl"));
    for (const ManifestEntry& e : ea) {
        CHECK(e.split == "train");
        CHECK(slurp(da / e.audio_path) == slurp(db / e.audio_path));
        CHECK(slurp(da / e.midi_path) == slurp(db / e.midi_path));
    }
    CHECK(read_manifest((da / "manifest.jsonl").string()).size() == 3);

    fs::remove_all(da);
    fs::remove_all(db);
}

TEST_CASE("dataset audio and midi reload to the synthesized notes") {
    SyntheticSpec spec;
    spec.n_tracks = 2;
    spec.track_seconds = 1.5;
    spec.notes_per_track = 24;

    fs::path dir = scratch_dir("amt_test_ds_reload");
    std::vector<ManifestEntry> entries = make_dataset(spec, dir.string());

    for (int i = 0; i < spec.n_tracks; ++i) {
        NoteSequence want = synth_track_notes(spec, i);
        std::vector<std::uint8_t> midi = slurp_bytes(dir / entries[i].midi_path);
        NoteSequence got = parse_smf(midi).notes;
        REQUIRE(got.notes.size() == want.notes.size());
        for (std::size_t k = 0; k < want.notes.size(); ++k) {
            CHECK(got.notes[k].onset_s == doctest::Approx(want.notes[k].onset_s).epsilon(1e-6));
            CHECK(got.notes[k].offset_s == doctest::Approx(want.notes[k].offset_s).epsilon(1e-6));
            CHECK(got.notes[k].pitch == want.notes[k].pitch);
            CHECK(got.notes[k].program == want.notes[k].program);
            CHECK(got.notes[k].is_drum == want.notes[k].is_drum);
        }

        AudioBuffer wav = read_wav_file(dir / entries[i].audio_path);
        CHECK(wav.sample_rate == 16000);
        CHECK(wav.duration_s() == doctest::Approx(spec.track_seconds).epsilon(1e-3));
    }

    fs::remove_all(dir);
}

TEST_CASE("disambiguation pairs differ only in the cue window") {
    SyntheticSpec spec;
    spec.disambiguation = true;
    spec.n_tracks = 4;

    NoteSequence t0 = synth_track_notes(spec, 0);
    NoteSequence t1 = synth_track_notes(spec, 1);

    auto programs = [](const NoteSequence& s) {
        std::vector<int> p;
        for (const NoteEvent& n : s.notes) p.push_back(n.program);
        std::sort(p.begin(), p.end());
        p.erase(std::unique(p.begin(), p.end()), p.end());
        return p;
    };
    CHECK(programs(t0) == std::vector<int>{0});
    CHECK(programs(t1) == std::vector<int>{1});

    // The cue registers are disjoint; the shared melody is identical.
    std::vector<NoteEvent> mel0, mel1;
    for (const NoteEvent& n : t0.notes) {
        if (n.onset_s < 2.0)
            CHECK(n.pitch <= 50);
        else
            mel0.push_back(n);
    }
    for (const NoteEvent& n : t1.notes) {
        if (n.onset_s < 2.0)
            CHECK(n.pitch >= 75);
        else
            mel1.push_back(n);
    }
    REQUIRE(mel0.size() > 4);
    REQUIRE(mel0.size() == mel1.size());
    for (std::size_t i = 0; i < mel0.size(); ++i) {
        CHECK(mel0[i].onset_s == mel1[i].onset_s);
        CHECK(mel0[i].offset_s == mel1[i].offset_s);
        CHECK(mel0[i].pitch == mel1[i].pitch);
    }

    // Rendered audio: identical once the cue has rung out, different inside it.
    AudioBuffer a0 = synthesize_additive(t0, 16000);
    AudioBuffer a1 = synthesize_additive(t1, 16000);
    REQUIRE(a0.samples.size() == a1.samples.size());
    std::size_t boundary = std::size_t(2.048 * 16000);
    bool tail_equal = std::equal(a0.samples.begin() + long(boundary), a0.samples.end(),
                                 a1.samples.begin() + long(boundary));
    CHECK(tail_equal);
    bool head_differs = !std::equal(a0.samples.begin(), a0.samples.begin() + long(boundary),
                                    a1.samples.begin());
    CHECK(head_differs);

    // A second pair gets its own melody.
    NoteSequence t2 = synth_track_notes(spec, 2);
    CHECK_FALSE(same_notes(t0, t2));
    CHECK(programs(t2) == std::vector<int>{0});
}
