#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "amt/notes.hpp"

namespace amt {

struct AudioBuffer {
    std::vector<double> samples;  // mono, in [-1, 1]
    int sample_rate = 16000;

    double duration_s() const {
        return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
    }
};

// 16-bit little-endian mono PCM WAV.
AudioBuffer read_wav(std::span<const std::uint8_t> bytes);
AudioBuffer read_wav_file(const std::filesystem::path& path);
std::vector<std::uint8_t> write_wav(const AudioBuffer& audio);
void write_wav_file(const std::filesystem::path& path, const AudioBuffer& audio);

// Linear-interpolation resampler; returns the input untouched when rates match.
AudioBuffer resample(const AudioBuffer& audio, int target_rate);

// Renders notes as additive sine stacks: fundamental at 440*2^((pitch-69)/12)
// with overtone weights fixed per MIDI program family (see kOvertoneTable),
// a 10 ms linear attack/release, and drums as 30 ms noise bursts.  The mix is
// scaled by 1/sqrt(max simultaneous notes) and clipped to [-1, 1].
AudioBuffer synthesize_additive(const NoteSequence& seq, int sample_rate);

}  // namespace amt
