#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "amt/notes.hpp"

namespace amt {

// Event-token language.  A segment is encoded as
//   ((PROGRAM PITCH)*) TIE (TIME (PROGRAM (ON|OFF) PITCH)+)* EOS
// where the prefix before TIE declares notes held over from earlier
// segments, TIME bins are 10 ms steps from the segment start, note-offs
// precede note-ons within a bin, and both sections are ordered ascending by
// (program, pitch).  Drums use program 128 and never produce note-offs.
enum class TokenKind : std::uint8_t {
    Pad,
    Sos,
    Eos,
    Tie,
    Time,     // value = time bin
    Program,  // value = 0..128 (128 means drums)
    NoteOn,
    NoteOff,
    Pitch,  // value = 0..127
};

struct Token {
    TokenKind kind = TokenKind::Pad;
    int value = 0;

    friend bool operator==(const Token&, const Token&) = default;
};

inline Token tok_pad() { return {TokenKind::Pad, 0}; }
inline Token tok_sos() { return {TokenKind::Sos, 0}; }
inline Token tok_eos() { return {TokenKind::Eos, 0}; }
inline Token tok_tie() { return {TokenKind::Tie, 0}; }
inline Token tok_time(int bin) { return {TokenKind::Time, bin}; }
inline Token tok_program(int p) { return {TokenKind::Program, p}; }
inline Token tok_on() { return {TokenKind::NoteOn, 0}; }
inline Token tok_off() { return {TokenKind::NoteOff, 0}; }
inline Token tok_pitch(int n) { return {TokenKind::Pitch, n}; }

using TokenSeq = std::vector<Token>;

struct SegmentWindow {
    double start_s = 0.0;
    double end_s = 0.0;
};

constexpr int kDrumProgram = 128;
constexpr double kTimeStepS = 0.010;

// Bijective token <-> id map.  Layout: PAD=0, SOS=1, EOS=2, TIE=3, then the
// TIME block (t_max entries), PROGRAM block (129), NOTE_ON, NOTE_OFF, and
// the PITCH block (128).
class Vocab {
public:
    explicit Vocab(int t_max);

    int t_max() const { return t_max_; }
    int size() const { return 4 + t_max_ + 129 + 2 + 128; }

    int id(const Token& t) const;
    Token token(int id) const;

    std::vector<int> ids(const TokenSeq& seq) const;
    TokenSeq tokens(const std::vector<int>& ids) const;

    static constexpr int kPadId = 0;
    static constexpr int kSosId = 1;
    static constexpr int kEosId = 2;
    static constexpr int kTieId = 3;

private:
    int t_max_;
};

// Number of 10 ms bins needed to cover a window of the given length.
int time_bins_for(double segment_seconds);

// Multiset of open notes keyed by (program, pitch); values are onset times
// in FIFO order, oldest first.
using HeldNotes = std::map<std::pair<int, int>, std::deque<double>>;

// Held state implied by the ground truth at a window boundary.
HeldNotes held_from_truth(const NoteSequence& seq, double window_start_s);

// Counters for robust decoding.  Grammar violations are skipped, never
// fatal; tie_unmatched tracks tie declarations with no matching held note
// (grammatical, but semantically surprising).
struct DecodeStats {
    std::uint64_t pitch_without_group = 0;
    std::uint64_t onoff_without_program = 0;
    std::uint64_t program_dangling = 0;
    std::uint64_t missing_onoff = 0;
    std::uint64_t missing_tie = 0;
    std::uint64_t stray_tie = 0;
    std::uint64_t group_before_time = 0;
    std::uint64_t time_reversed = 0;
    std::uint64_t off_for_drum = 0;
    std::uint64_t tie_drum = 0;
    std::uint64_t unmatched_note_off = 0;
    std::uint64_t zero_length_note = 0;

    std::uint64_t tie_unmatched = 0;

    std::uint64_t violations_total() const;
    DecodeStats& operator+=(const DecodeStats& o);
    std::map<std::string, std::uint64_t> as_map() const;
};

struct DecodeResult {
    NoteSequence fragment;  // notes fully closed within the window
    HeldNotes new_held;     // notes still open at window end
    DecodeStats stats;
};

// Encodes the part of `seq` that intersects `window`.  Times are quantized
// to 10 ms bins relative to window start (ties round half up, bins clamped
// to t_max-1).  Output is canonical and at most max_tokens long; truncation
// drops whole trailing event groups and always keeps a final EOS.
TokenSeq encode_segment(const NoteSequence& seq, const SegmentWindow& window, int t_max,
                        int max_tokens = 1024);

// Robust decoder: accepts arbitrary token streams, skipping and counting
// grammar violations.  Held notes absent from the tie section close at
// window start; notes still open at window end are deferred to new_held.
DecodeResult decode_tokens(const TokenSeq& tokens, const SegmentWindow& window,
                           const HeldNotes& held);

// Uniformly permutes tie pairs and the event groups within each
// (time bin, on/off section); decoded output is unchanged.  Throws
// DataError if the input violates the grammar.
template <typename Rng>
TokenSeq shuffle_tokens(const TokenSeq& tokens, Rng& rng);

// Sorts tie pairs and per-section groups ascending by (program, pitch).
// Idempotent; throws DataError on grammar violations.
TokenSeq canonicalize(const TokenSeq& tokens);

// Text rendering: tokens space-separated as TIE, EOS, PAD, SOS, T<bin>,
// P<program>, ON, OFF, N<pitch>; one sequence per line.
std::string tokens_to_text(const TokenSeq& seq);
TokenSeq tokens_from_text(const std::string& line);

// --- implementation detail shared by shuffle/canonicalize -----------------

namespace detail {

struct ProgramPitch {
    int program;
    int pitch;
    friend auto operator<=>(const ProgramPitch&, const ProgramPitch&) = default;
};

struct BinEvents {
    int bin = 0;
    std::vector<ProgramPitch> offs;
    std::vector<ProgramPitch> ons;
};

// Strictly parsed token sequence structure (tie section + event bins).
struct ParsedSeq {
    std::vector<ProgramPitch> tie;
    std::vector<BinEvents> bins;
    bool has_eos = false;
    std::size_t trailing_pads = 0;

    TokenSeq assemble() const;
};

ParsedSeq parse_strict(const TokenSeq& tokens);

}  // namespace detail

template <typename Rng>
TokenSeq shuffle_tokens(const TokenSeq& tokens, Rng& rng) {
    detail::ParsedSeq p = detail::parse_strict(tokens);
    std::shuffle(p.tie.begin(), p.tie.end(), rng);
    for (detail::BinEvents& b : p.bins) {
        std::shuffle(b.offs.begin(), b.offs.end(), rng);
        std::shuffle(b.ons.begin(), b.ons.end(), rng);
    }
    return p.assemble();
}

}  // namespace amt
