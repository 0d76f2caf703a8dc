#include "amt/codec.hpp"

#include <cmath>
#include <optional>

#include "amt/errors.hpp"

namespace amt {

Vocab::Vocab(int t_max) : t_max_(t_max) {
    if (t_max < 1) throw UsageError("vocab needs at least one time bin");
}

int Vocab::id(const Token& t) const {
    switch (t.kind) {
        case TokenKind::Pad: return kPadId;
        case TokenKind::Sos: return kSosId;
        case TokenKind::Eos: return kEosId;
        case TokenKind::Tie: return kTieId;
        case TokenKind::Time:
            if (t.value < 0 || t.value >= t_max_) throw UsageError("time bin out of range: " + std::to_string(t.value));
            return 4 + t.value;
        case TokenKind::Program:
            if (t.value < 0 || t.value > 128) throw UsageError("program out of range: " + std::to_string(t.value));
            return 4 + t_max_ + t.value;
        case TokenKind::NoteOn: return 4 + t_max_ + 129;
        case TokenKind::NoteOff: return 4 + t_max_ + 129 + 1;
        case TokenKind::Pitch:
            if (t.value < 0 || t.value > 127) throw UsageError("pitch out of range: " + std::to_string(t.value));
            return 4 + t_max_ + 129 + 2 + t.value;
    }
    throw UsageError("invalid token kind");
}

Token Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw UsageError("token id out of range: " + std::to_string(id));
    if (id == kPadId) return tok_pad();
    if (id == kSosId) return tok_sos();
    if (id == kEosId) return tok_eos();
    if (id == kTieId) return tok_tie();
    id -= 4;
    if (id < t_max_) return tok_time(id);
    id -= t_max_;
    if (id < 129) return tok_program(id);
    id -= 129;
    if (id == 0) return tok_on();
    if (id == 1) return tok_off();
    return tok_pitch(id - 2);
}

std::vector<int> Vocab::ids(const TokenSeq& seq) const {
    std::vector<int> out;
    out.reserve(seq.size());
    for (const Token& t : seq) out.push_back(id(t));
    return out;
}

TokenSeq Vocab::tokens(const std::vector<int>& ids) const {
    TokenSeq out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
}

int time_bins_for(double segment_seconds) {
    return int(std::ceil(segment_seconds / kTimeStepS - 1e-9));
}

HeldNotes held_from_truth(const NoteSequence& seq, double window_start_s) {
    HeldNotes held;
    for (const NoteEvent& n : seq.notes) {
        if (n.is_drum) continue;
        if (n.onset_s < window_start_s && n.offset_s > window_start_s)
            held[{n.program, n.pitch}].push_back(n.onset_s);
    }
    return held;  // std::map iteration + push order keeps onsets ascending
}

std::uint64_t DecodeStats::violations_total() const {
    return pitch_without_group + onoff_without_program + program_dangling + missing_onoff +
           missing_tie + stray_tie + group_before_time + time_reversed + off_for_drum + tie_drum +
           unmatched_note_off + zero_length_note;
}

DecodeStats& DecodeStats::operator+=(const DecodeStats& o) {
    pitch_without_group += o.pitch_without_group;
    onoff_without_program += o.onoff_without_program;
    program_dangling += o.program_dangling;
    missing_onoff += o.missing_onoff;
    missing_tie += o.missing_tie;
    stray_tie += o.stray_tie;
    group_before_time += o.group_before_time;
    time_reversed += o.time_reversed;
    off_for_drum += o.off_for_drum;
    tie_drum += o.tie_drum;
    unmatched_note_off += o.unmatched_note_off;
    zero_length_note += o.zero_length_note;
    tie_unmatched += o.tie_unmatched;
    return *this;
}

std::map<std::string, std::uint64_t> DecodeStats::as_map() const {
    return {
        {"pitch_without_group", pitch_without_group},
        {"onoff_without_program", onoff_without_program},
        {"program_dangling", program_dangling},
        {"missing_onoff", missing_onoff},
        {"missing_tie", missing_tie},
        {"stray_tie", stray_tie},
        {"group_before_time", group_before_time},
        {"time_reversed", time_reversed},
        {"off_for_drum", off_for_drum},
        {"tie_drum", tie_drum},
        {"unmatched_note_off", unmatched_note_off},
        {"zero_length_note", zero_length_note},
        {"tie_unmatched", tie_unmatched},
    };
}

namespace {

int quantize_bin(double t_rel, int t_max) {
    int bin = int(std::floor(t_rel / kTimeStepS + 0.5));  // half rounds up
    return std::clamp(bin, 0, t_max - 1);
}

}  // namespace

TokenSeq encode_segment(const NoteSequence& seq, const SegmentWindow& window, int t_max,
                        int max_tokens) {
    if (window.end_s <= window.start_s) throw UsageError("segment window must have positive length");

    std::vector<detail::ProgramPitch> tie;
    std::map<int, detail::BinEvents> bins;
    auto bin_at = [&](int b) -> detail::BinEvents& {
        detail::BinEvents& e = bins[b];
        e.bin = b;
        return e;
    };

    for (const NoteEvent& n : seq.notes) {
        if (n.is_drum) {
            if (n.onset_s >= window.start_s && n.onset_s < window.end_s)
                bin_at(quantize_bin(n.onset_s - window.start_s, t_max)).ons.push_back({kDrumProgram, n.pitch});
            continue;
        }
        bool on_inside = n.onset_s >= window.start_s && n.onset_s < window.end_s;
        bool held_over = n.onset_s < window.start_s && n.offset_s > window.start_s;
        bool off_inside = n.offset_s > window.start_s && n.offset_s < window.end_s;
        if (on_inside) {
            int on_bin = quantize_bin(n.onset_s - window.start_s, t_max);
            if (off_inside) {
                int off_bin = quantize_bin(n.offset_s - window.start_s, t_max);
                if (off_bin <= on_bin) off_bin = on_bin + 1;  // keep a representable duration
                if (off_bin > t_max - 1) continue;            // sub-resolution note at the window edge
                bin_at(on_bin).ons.push_back({n.program, n.pitch});
                bin_at(off_bin).offs.push_back({n.program, n.pitch});
            } else {
                bin_at(on_bin).ons.push_back({n.program, n.pitch});  // stays open past window end
            }
        } else if (held_over) {
            tie.push_back({n.program, n.pitch});
            if (off_inside)
                bin_at(quantize_bin(n.offset_s - window.start_s, t_max)).offs.push_back({n.program, n.pitch});
        }
    }

    std::sort(tie.begin(), tie.end());
    for (auto& [b, e] : bins) {
        std::sort(e.offs.begin(), e.offs.end());
        std::sort(e.ons.begin(), e.ons.end());
    }

    // Assemble under the token budget, dropping whole trailing groups.
    TokenSeq out;
    const int budget = max_tokens - 1;  // reserve the final EOS
    bool truncated = false;

    auto try_append = [&](const TokenSeq& atom) {
        if (truncated || int(out.size() + atom.size()) > budget) {
            truncated = true;
            return;
        }
        out.insert(out.end(), atom.begin(), atom.end());
    };

    for (const auto& pp : tie) try_append({tok_program(pp.program), tok_pitch(pp.pitch)});
    try_append({tok_tie()});
    if (truncated) {
        // Degenerate budget: guarantee at least a valid empty segment.
        out.clear();
        out.push_back(tok_tie());
        out.push_back(tok_eos());
        return out;
    }
    for (const auto& [b, e] : bins) {
        std::size_t before = out.size();
        try_append({tok_time(b)});
        bool any_group = false;
        for (const auto& pp : e.offs) {
            std::size_t was = out.size();
            try_append({tok_program(pp.program), tok_off(), tok_pitch(pp.pitch)});
            any_group |= out.size() > was;
        }
        for (const auto& pp : e.ons) {
            std::size_t was = out.size();
            try_append({tok_program(pp.program), tok_on(), tok_pitch(pp.pitch)});
            any_group |= out.size() > was;
        }
        if (!any_group) out.resize(before);  // a TIME with no groups is not grammatical
        if (truncated) break;
    }
    out.push_back(tok_eos());
    return out;
}

DecodeResult decode_tokens(const TokenSeq& tokens, const SegmentWindow& window,
                           const HeldNotes& held) {
    DecodeResult res;
    DecodeStats& st = res.stats;

    // Tie section first: count declarations per (program, pitch).
    std::map<std::pair<int, int>, int> tie_declared;

    enum class Phase { TieSection, Events };
    Phase phase = Phase::TieSection;
    std::optional<int> pending_program;
    int pending_onoff = -1;  // -1 none, 0 off, 1 on
    int current_bin = -1;

    HeldNotes open;  // includes surviving held notes once the tie section resolves
    bool tie_resolved = false;

    auto resolve_tie = [&]() {
        if (tie_resolved) return;
        tie_resolved = true;
        for (const auto& [key, onsets] : held) {
            int declared = 0;
            if (auto it = tie_declared.find(key); it != tie_declared.end()) declared = it->second;
            std::size_t keep = std::min<std::size_t>(declared, onsets.size());
            // Oldest onsets continue; the rest close at window start.
            for (std::size_t i = 0; i < onsets.size(); ++i) {
                if (i < keep) {
                    open[key].push_back(onsets[i]);
                } else {
                    res.fragment.notes.push_back(
                        {onsets[i], window.start_s, key.second, key.first, false});
                }
            }
            if (declared > int(onsets.size())) st.tie_unmatched += declared - int(onsets.size());
            for (int i = int(onsets.size()); i < declared; ++i)
                open[key].push_back(window.start_s);  // declared but unknown: open at window start
        }
        for (const auto& [key, count] : tie_declared) {
            if (held.count(key)) continue;
            st.tie_unmatched += count;
            for (int i = 0; i < count; ++i) open[key].push_back(window.start_s);
        }
    };

    auto emit_event = [&](int program, bool is_on, int pitch) {
        if (current_bin < 0) {
            ++st.group_before_time;
            return;
        }
        double t = window.start_s + current_bin * kTimeStepS;
        if (program == kDrumProgram) {
            if (!is_on) {
                ++st.off_for_drum;
                return;
            }
            res.fragment.notes.push_back({t, t, pitch, 0, true});
            return;
        }
        if (is_on) {
            open[{program, pitch}].push_back(t);
            return;
        }
        auto it = open.find({program, pitch});
        if (it == open.end() || it->second.empty()) {
            ++st.unmatched_note_off;
            return;
        }
        double onset = it->second.front();
        it->second.pop_front();
        double offset = t;
        if (offset <= onset) {
            ++st.zero_length_note;
            offset = onset + kTimeStepS;
        }
        res.fragment.notes.push_back({onset, offset, pitch, program, false});
    };

    auto flush_pending = [&](bool count_violation) {
        if (pending_program && count_violation) ++st.program_dangling;
        pending_program.reset();
        pending_onoff = -1;
    };

    for (const Token& t : tokens) {
        if (t.kind == TokenKind::Pad || t.kind == TokenKind::Sos) continue;
        if (t.kind == TokenKind::Eos) break;

        if (phase == Phase::TieSection) {
            switch (t.kind) {
                case TokenKind::Program:
                    flush_pending(true);
                    pending_program = t.value;
                    continue;
                case TokenKind::Pitch:
                    if (!pending_program) {
                        ++st.pitch_without_group;
                    } else if (*pending_program == kDrumProgram) {
                        ++st.tie_drum;
                        pending_program.reset();
                    } else {
                        ++tie_declared[{*pending_program, t.value}];
                        pending_program.reset();
                    }
                    continue;
                case TokenKind::Tie:
                    flush_pending(true);
                    phase = Phase::Events;
                    resolve_tie();
                    continue;
                case TokenKind::Time:
                    // Implicitly ends the tie section.
                    ++st.missing_tie;
                    flush_pending(true);
                    phase = Phase::Events;
                    resolve_tie();
                    break;  // fall through to event handling below
                case TokenKind::NoteOn:
                case TokenKind::NoteOff:
                    ++st.onoff_without_program;
                    continue;
                default:
                    continue;
            }
        }

        switch (t.kind) {
            case TokenKind::Time:
                flush_pending(true);
                if (t.value < current_bin) {
                    ++st.time_reversed;
                } else {
                    current_bin = t.value;
                }
                break;
            case TokenKind::Program:
                flush_pending(true);
                pending_program = t.value;
                break;
            case TokenKind::NoteOn:
            case TokenKind::NoteOff:
                if (!pending_program) {
                    ++st.onoff_without_program;
                } else {
                    pending_onoff = t.kind == TokenKind::NoteOn ? 1 : 0;
                }
                break;
            case TokenKind::Pitch:
                if (pending_program && pending_onoff >= 0) {
                    emit_event(*pending_program, pending_onoff == 1, t.value);
                    pending_program.reset();
                    pending_onoff = -1;
                } else if (pending_program) {
                    ++st.missing_onoff;
                    pending_program.reset();
                } else {
                    ++st.pitch_without_group;
                }
                break;
            case TokenKind::Tie:
                ++st.stray_tie;
                break;
            default:
                break;
        }
    }
    flush_pending(true);
    resolve_tie();  // handles sequences that end inside the tie section

    for (auto& [key, onsets] : open) {
        for (double onset : onsets) res.new_held[key].push_back(onset);
    }
    res.fragment.duration_s = window.end_s;
    res.fragment.normalize();
    res.fragment.duration_s = window.end_s;
    return res;
}

namespace detail {

TokenSeq ParsedSeq::assemble() const {
    TokenSeq out;
    for (const ProgramPitch& pp : tie) {
        out.push_back(tok_program(pp.program));
        out.push_back(tok_pitch(pp.pitch));
    }
    out.push_back(tok_tie());
    for (const BinEvents& b : bins) {
        out.push_back(tok_time(b.bin));
        for (const ProgramPitch& pp : b.offs) {
            out.push_back(tok_program(pp.program));
            out.push_back(tok_off());
            out.push_back(tok_pitch(pp.pitch));
        }
        for (const ProgramPitch& pp : b.ons) {
            out.push_back(tok_program(pp.program));
            out.push_back(tok_on());
            out.push_back(tok_pitch(pp.pitch));
        }
    }
    if (has_eos) out.push_back(tok_eos());
    for (std::size_t i = 0; i < trailing_pads; ++i) out.push_back(tok_pad());
    return out;
}

ParsedSeq parse_strict(const TokenSeq& tokens) {
    ParsedSeq p;
    std::size_t end = tokens.size();
    while (end > 0 && tokens[end - 1].kind == TokenKind::Pad) --end;
    p.trailing_pads = tokens.size() - end;

    std::size_t i = 0;
    auto fail = [&](const std::string& why) -> void {
        throw DataError("token sequence violates grammar at position " + std::to_string(i) + ": " + why);
    };

    // Tie section.
    while (true) {
        if (i >= end) fail("missing TIE");
        if (tokens[i].kind == TokenKind::Tie) {
            ++i;
            break;
        }
        if (tokens[i].kind != TokenKind::Program) fail("expected PROGRAM or TIE in tie section");
        int program = tokens[i].value;
        if (program == kDrumProgram) fail("drums cannot be tied");
        ++i;
        if (i >= end || tokens[i].kind != TokenKind::Pitch) fail("expected PITCH after PROGRAM in tie section");
        p.tie.push_back({program, tokens[i].value});
        ++i;
    }

    // Event section.
    while (i < end && tokens[i].kind != TokenKind::Eos) {
        if (tokens[i].kind != TokenKind::Time) fail("expected TIME");
        BinEvents bin;
        bin.bin = tokens[i].value;
        if (!p.bins.empty() && bin.bin <= p.bins.back().bin) fail("TIME bins must be strictly ascending");
        ++i;
        bool saw_group = false;
        bool in_on_section = false;
        while (i < end && tokens[i].kind == TokenKind::Program) {
            int program = tokens[i].value;
            ++i;
            if (i >= end || (tokens[i].kind != TokenKind::NoteOn && tokens[i].kind != TokenKind::NoteOff))
                fail("expected ON or OFF after PROGRAM");
            bool is_on = tokens[i].kind == TokenKind::NoteOn;
            if (!is_on && program == kDrumProgram) fail("drums cannot have note-offs");
            if (!is_on && in_on_section) fail("OFF group after ON group within a time bin");
            in_on_section |= is_on;
            ++i;
            if (i >= end || tokens[i].kind != TokenKind::Pitch) fail("expected PITCH after ON/OFF");
            (is_on ? bin.ons : bin.offs).push_back({program, tokens[i].value});
            ++i;
            saw_group = true;
        }
        if (!saw_group) fail("TIME with no event groups");
        p.bins.push_back(std::move(bin));
    }
    if (i < end && tokens[i].kind == TokenKind::Eos) {
        p.has_eos = true;
        ++i;
    }
    if (i != end) fail("trailing tokens after EOS");
    return p;
}

}  // namespace detail

TokenSeq canonicalize(const TokenSeq& tokens) {
    detail::ParsedSeq p = detail::parse_strict(tokens);
    std::sort(p.tie.begin(), p.tie.end());
    for (detail::BinEvents& b : p.bins) {
        std::sort(b.offs.begin(), b.offs.end());
        std::sort(b.ons.begin(), b.ons.end());
    }
    return p.assemble();
}

std::string tokens_to_text(const TokenSeq& seq) {
    std::string out;
    for (const Token& t : seq) {
        if (!out.empty()) out += ' ';
        switch (t.kind) {
            case TokenKind::Pad: out += "PAD"; break;
            case TokenKind::Sos: out += "SOS"; break;
            case TokenKind::Eos: out += "EOS"; break;
            case TokenKind::Tie: out += "TIE"; break;
            case TokenKind::Time: out += "T" + std::to_string(t.value); break;
            case TokenKind::Program: out += "P" + std::to_string(t.value); break;
            case TokenKind::NoteOn: out += "ON"; break;
            case TokenKind::NoteOff: out += "OFF"; break;
            case TokenKind::Pitch: out += "N" + std::to_string(t.value); break;
        }
    }
    return out;
}

TokenSeq tokens_from_text(const std::string& line) {
    TokenSeq out;
    std::size_t i = 0;
    int column = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i >= line.size()) break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        std::string word = line.substr(i, j - i);
        ++column;
        auto parse_int = [&](std::size_t from, int lo, int hi) {
            int v = 0;
            if (from >= word.size()) throw DataError("token " + std::to_string(column) + ": missing number in '" + word + "'");
            for (std::size_t k = from; k < word.size(); ++k) {
                if (word[k] < '0' || word[k] > '9')
                    throw DataError("token " + std::to_string(column) + ": bad number in '" + word + "'");
                v = v * 10 + (word[k] - '0');
                if (v > hi) break;
            }
            if (v < lo || v > hi)
                throw DataError("token " + std::to_string(column) + ": value out of range in '" + word + "'");
            return v;
        };
        if (word == "PAD") out.push_back(tok_pad());
        else if (word == "SOS") out.push_back(tok_sos());
        else if (word == "EOS") out.push_back(tok_eos());
        else if (word == "TIE") out.push_back(tok_tie());
        else if (word == "ON") out.push_back(tok_on());
        else if (word == "OFF") out.push_back(tok_off());
        else if (word[0] == 'T') out.push_back(tok_time(parse_int(1, 0, 1 << 20)));
        else if (word[0] == 'P') out.push_back(tok_program(parse_int(1, 0, 128)));
        else if (word[0] == 'N') out.push_back(tok_pitch(parse_int(1, 0, 127)));
        else throw DataError("token " + std::to_string(column) + ": unknown token '" + word + "'");
        i = j;
    }
    return out;
}

}  // namespace amt
