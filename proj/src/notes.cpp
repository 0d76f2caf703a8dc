#include "amt/notes.hpp"

#include <algorithm>

namespace amt {

void NoteSequence::normalize() {
    std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return canonical_key(a) < canonical_key(b);
    });
    for (const NoteEvent& n : notes) {
        duration_s = std::max(duration_s, n.offset_s);
    }
}

}  // namespace amt
