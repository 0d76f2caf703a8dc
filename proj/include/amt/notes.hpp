#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

namespace amt {

// One note with instrument attribution. Drums are onset-only events and
// carry offset_s == onset_s; for melodic notes offset_s > onset_s.
struct NoteEvent {
    double onset_s = 0.0;
    double offset_s = 0.0;
    int pitch = 0;    // 0..127
    int program = 0;  // 0..127 (for drums: kit number, evaluation ignores it)
    bool is_drum = false;

    friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

inline auto canonical_key(const NoteEvent& n) {
    return std::make_tuple(n.onset_s, n.is_drum, n.program, n.pitch, n.offset_s);
}

// Instrument-attributed note list, kept sorted by
// (onset, is_drum, program, pitch). duration_s covers every offset.
struct NoteSequence {
    std::vector<NoteEvent> notes;
    double duration_s = 0.0;

    // Restores the canonical order and grows duration_s to cover all notes.
    void normalize();

    friend bool operator==(const NoteSequence&, const NoteSequence&) = default;
};

}  // namespace amt
