#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amt/notes.hpp"

namespace amt {

struct ManifestEntry {
    std::string audio_path;
    std::string midi_path;
    std::string split;  // train | val | test
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// 90:5:5 split by track index, largest-remainder rounding.
std::vector<std::string> split_assign(int n_tracks);

struct SyntheticSpec {
    int n_tracks = 16;
    double track_seconds = 4.608;
    int min_programs = 1;
    int max_programs = 2;
    bool drums = true;
    int notes_per_track = 64;
    int polyphony_cap = 4;
    std::uint64_t seed = 7;
    bool disambiguation = false;
};

NoteSequence synth_track_notes(const SyntheticSpec& spec, int track_index);

std::vector<ManifestEntry> make_dataset(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace amt
