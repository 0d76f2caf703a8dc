#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amt/notes.hpp"

namespace amt {

struct SmfParseResult {
    NoteSequence notes;
    // Note-ons left open at end of track are closed there and counted here.
    std::uint32_t dangling_notes = 0;
};

// Reads a format 0/1 Standard MIDI File. Note-on/off pairs are resolved
// FIFO per (track, channel, pitch) and program changes are scoped to their
// own track; velocity-0 note-ons count as note-offs; channel 10 (1-indexed)
// is flagged as drums. Throws ParseError (with the offending byte offset)
// on malformed input; never crashes on fuzz.
SmfParseResult parse_smf(std::span<const std::uint8_t> bytes);

// Writes a format 1 SMF at a fixed 120 bpm: one tempo track plus one note
// track per distinct (program, is_drum). Onsets round-trip through
// parse_smf within half a tick; the default ppq makes one tick = 1 ms, so
// times on a millisecond grid survive exactly.
std::vector<std::uint8_t> write_smf(const NoteSequence& seq, int ppq = 500);

}  // namespace amt
