#include "amt/smf.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <tuple>

#include "amt/errors.hpp"

namespace amt {
namespace {

constexpr std::uint32_t kDefaultTempo = 500000;  // usec per quarter, 120 bpm

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void require(std::size_t n, const char* what) const {
        if (remaining() < n) throw ParseError(std::string("unexpected end of data reading ") + what, pos_);
    }

    std::uint8_t u8(const char* what) {
        require(1, what);
        return data_[pos_++];
    }

    std::uint8_t peek(const char* what) const {
        require(1, what);
        return data_[pos_];
    }

    std::uint16_t u16(const char* what) {
        require(2, what);
        std::uint16_t v = std::uint16_t(data_[pos_] << 8 | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32(const char* what) {
        require(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | data_[pos_ + i];
        pos_ += 4;
        return v;
    }

    // Variable-length quantity, at most 4 bytes per the SMF spec.
    std::uint32_t vlq(const char* what) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t b = u8(what);
            v = v << 7 | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        throw ParseError(std::string("overlong variable-length quantity in ") + what, pos_);
    }

    void skip(std::size_t n, const char* what) {
        require(n, what);
        pos_ += n;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

struct TempoChange {
    std::int64_t tick;
    std::uint32_t usec_per_qn;
};

// Piecewise-constant tempo; converts absolute ticks to seconds.
class TempoMap {
public:
    TempoMap(std::vector<TempoChange> changes, int ppq) : ppq_(ppq) {
        std::stable_sort(changes.begin(), changes.end(),
                         [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
        segments_.push_back({0, 0.0, kDefaultTempo});
        for (const TempoChange& c : changes) {
            Segment& last = segments_.back();
            if (c.tick == last.tick) {
                last.usec_per_qn = c.usec_per_qn;
                continue;
            }
            double at = last.start_s + double(c.tick - last.tick) * last.usec_per_qn * 1e-6 / ppq_;
            segments_.push_back({c.tick, at, c.usec_per_qn});
        }
    }

    double seconds(std::int64_t tick) const {
        auto it = std::upper_bound(segments_.begin(), segments_.end(), tick,
                                   [](std::int64_t t, const Segment& s) { return t < s.tick; });
        const Segment& s = *std::prev(it);
        return s.start_s + double(tick - s.tick) * s.usec_per_qn * 1e-6 / ppq_;
    }

private:
    struct Segment {
        std::int64_t tick;
        double start_s;
        std::uint32_t usec_per_qn;
    };
    std::vector<Segment> segments_;
    int ppq_;
};

struct ChannelEvent {
    std::int64_t tick;
    int track;
    std::int64_t order;  // within-file event index, for a stable merge
    std::uint8_t status;
    std::uint8_t data1;
    std::uint8_t data2;
};

std::uint8_t data_byte(ByteReader& r, const char* what) {
    std::uint8_t b = r.u8(what);
    if (b & 0x80) throw ParseError(std::string("data byte with high bit set in ") + what, r.pos() - 1);
    return b;
}

}  // namespace

SmfParseResult parse_smf(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.u32("header magic") != 0x4d546864)  // "MThd"
        throw ParseError("not a standard MIDI file (missing MThd)", 0);
    std::uint32_t header_len = r.u32("header length");
    if (header_len < 6) throw ParseError("header chunk too short", r.pos());
    std::uint16_t format = r.u16("format");
    std::uint16_t ntrks = r.u16("track count");
    std::uint16_t division = r.u16("division");
    if (format > 1) throw ParseError("unsupported SMF format " + std::to_string(format), r.pos() - 6);
    if (division & 0x8000) throw ParseError("SMPTE time division is not supported", r.pos() - 2);
    if (division == 0) throw ParseError("zero ticks per quarter note", r.pos() - 2);
    r.skip(header_len - 6, "header padding");

    std::vector<ChannelEvent> events;
    std::vector<TempoChange> tempi;
    std::vector<std::int64_t> track_end_tick;
    std::int64_t order = 0;

    for (int track = 0; track < ntrks; ++track) {
        // Skip alien chunks; a well-formed file announces each with a length.
        std::size_t track_end;
        while (true) {
            std::size_t magic_at = r.pos();
            std::uint32_t magic = r.u32("track magic");
            std::uint32_t len = r.u32("track length");
            if (len > r.remaining()) throw ParseError("chunk length overruns file", magic_at + 4);
            if (magic == 0x4d54726b) {  // "MTrk"
                track_end = r.pos() + len;
                break;
            }
            r.skip(len, "alien chunk");
        }

        std::int64_t tick = 0;
        std::uint8_t running = 0;
        bool ended = false;
        while (!ended) {
            if (r.pos() >= track_end) throw ParseError("track ended without end-of-track meta", r.pos());
            tick += r.vlq("delta time");
            std::uint8_t first = r.peek("event status");
            std::uint8_t status;
            if (first & 0x80) {
                status = r.u8("event status");
                if (status < 0xf0) running = status;
            } else {
                if (running == 0) throw ParseError("running status without prior status byte", r.pos());
                status = running;
            }

            if (status < 0xf0) {
                std::uint8_t kind = status & 0xf0;
                std::uint8_t d1 = data_byte(r, "channel event data");
                std::uint8_t d2 = 0;
                if (kind != 0xc0 && kind != 0xd0) d2 = data_byte(r, "channel event data");
                if (kind == 0x80 || kind == 0x90 || kind == 0xc0) {
                    events.push_back({tick, track, order++, status, d1, d2});
                }
            } else if (status == 0xff) {
                std::uint8_t type = r.u8("meta type");
                std::uint32_t mlen = r.vlq("meta length");
                if (type == 0x51) {
                    if (mlen != 3) throw ParseError("tempo meta with bad length", r.pos());
                    std::uint32_t t = 0;
                    for (int i = 0; i < 3; ++i) t = t << 8 | r.u8("tempo bytes");
                    if (t == 0) throw ParseError("zero tempo", r.pos() - 3);
                    tempi.push_back({tick, t});
                } else if (type == 0x2f) {
                    r.skip(mlen, "end of track");
                    ended = true;
                } else {
                    r.skip(mlen, "meta data");
                }
            } else if (status == 0xf0 || status == 0xf7) {
                std::uint32_t slen = r.vlq("sysex length");
                r.skip(slen, "sysex data");
            } else {
                throw ParseError("unexpected status byte " + std::to_string(status), r.pos() - 1);
            }
            if (r.pos() > track_end) throw ParseError("event overruns track chunk", r.pos());
        }
        if (r.pos() < track_end) r.skip(track_end - r.pos(), "track padding");
        track_end_tick.push_back(tick);
    }

    TempoMap tempo(std::move(tempi), division);

    std::stable_sort(events.begin(), events.end(), [](const ChannelEvent& a, const ChannelEvent& b) {
        return std::tie(a.tick, a.track, a.order) < std::tie(b.tick, b.track, b.order);
    });

    SmfParseResult result;
    // Program state and FIFO pairing are per (track, channel): format-1 files
    // routinely reuse channels across tracks, and readers conventionally treat
    // each track's program changes as scoped to that track.
    std::map<std::pair<int, int>, int> program;
    struct OpenNote {
        std::int64_t tick;
        int program;
        int track;
    };
    std::map<std::tuple<int, int, int>, std::deque<OpenNote>> open;  // (track, channel, pitch)

    auto close_note = [&](int channel, int pitch, const OpenNote& on, std::int64_t off_tick) {
        bool drum = channel == 9;
        double onset = tempo.seconds(on.tick);
        double offset = drum ? onset : tempo.seconds(std::max(off_tick, on.tick + 1));
        result.notes.notes.push_back({onset, offset, pitch, on.program, drum});
    };

    for (const ChannelEvent& e : events) {
        int channel = e.status & 0x0f;
        std::uint8_t kind = e.status & 0xf0;
        if (kind == 0xc0) {
            program[{e.track, channel}] = e.data1;
        } else if (kind == 0x90 && e.data2 > 0) {
            int prog = 0;
            if (auto it = program.find({e.track, channel}); it != program.end()) prog = it->second;
            open[{e.track, channel, e.data1}].push_back({e.tick, prog, e.track});
        } else {  // note-off, or note-on with velocity 0
            auto it = open.find({e.track, channel, e.data1});
            if (it == open.end() || it->second.empty()) continue;  // stray note-off
            close_note(channel, e.data1, it->second.front(), e.tick);
            it->second.pop_front();
        }
    }
    for (auto& [key, fifo] : open) {
        for (const OpenNote& on : fifo) {
            std::int64_t end_tick = on.track < int(track_end_tick.size()) ? track_end_tick[on.track] : on.tick + 1;
            close_note(std::get<1>(key), std::get<2>(key), on, end_tick);
            ++result.dangling_notes;
        }
    }

    std::int64_t max_end = 0;
    for (std::int64_t t : track_end_tick) max_end = std::max(max_end, t);
    result.notes.duration_s = tempo.seconds(max_end);
    result.notes.normalize();
    return result;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(v >> 24 & 0xff);
    out.push_back(v >> 16 & 0xff);
    out.push_back(v >> 8 & 0xff);
    out.push_back(v & 0xff);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v >> 8 & 0xff);
    out.push_back(v & 0xff);
}

void put_vlq(std::vector<std::uint8_t>& out, std::int64_t v) {
    std::uint8_t buf[5];
    int n = 0;
    buf[n++] = v & 0x7f;
    v >>= 7;
    while (v > 0) {
        buf[n++] = std::uint8_t(v & 0x7f) | 0x80;
        v >>= 7;
    }
    while (n > 0) out.push_back(buf[--n]);
}

struct WireEvent {
    std::int64_t tick;
    int order;  // 0 program change, 1 note-off, 2 note-on
    int pitch;
    std::uint8_t status;
    std::uint8_t d1;
    std::uint8_t d2;
};

void append_track(std::vector<std::uint8_t>& out, std::vector<WireEvent> events, std::int64_t end_tick) {
    std::sort(events.begin(), events.end(), [](const WireEvent& a, const WireEvent& b) {
        return std::tie(a.tick, a.order, a.pitch) < std::tie(b.tick, b.order, b.pitch);
    });
    std::vector<std::uint8_t> body;
    std::int64_t at = 0;
    for (const WireEvent& e : events) {
        put_vlq(body, e.tick - at);
        at = e.tick;
        body.push_back(e.status);
        body.push_back(e.d1);
        if ((e.status & 0xf0) != 0xc0) body.push_back(e.d2);
    }
    put_vlq(body, std::max<std::int64_t>(end_tick - at, 0));
    body.push_back(0xff);
    body.push_back(0x2f);
    body.push_back(0x00);

    out.push_back('M');
    out.push_back('T');
    out.push_back('r');
    out.push_back('k');
    put_u32(out, std::uint32_t(body.size()));
    out.insert(out.end(), body.begin(), body.end());
}

}  // namespace

std::vector<std::uint8_t> write_smf(const NoteSequence& seq, int ppq) {
    if (ppq < 24) throw UsageError("ppq must be at least 24");
    const double sec_per_tick = 0.5 / ppq;  // fixed 120 bpm
    auto to_tick = [&](double s) { return std::int64_t(std::llround(s / sec_per_tick)); };

    // Group notes by (is_drum, program); each group becomes one track.
    std::map<std::pair<bool, int>, std::vector<const NoteEvent*>> groups;
    for (const NoteEvent& n : seq.notes) groups[{n.is_drum, n.program}].push_back(&n);

    std::int64_t end_tick = to_tick(seq.duration_s);

    std::vector<std::uint8_t> out;
    out.push_back('M');
    out.push_back('T');
    out.push_back('h');
    out.push_back('d');
    put_u32(out, 6);
    put_u16(out, 1);  // format 1
    put_u16(out, std::uint16_t(groups.size() + 1));
    put_u16(out, std::uint16_t(ppq));

    {  // tempo track
        std::vector<std::uint8_t> body;
        put_vlq(body, 0);
        body.push_back(0xff);
        body.push_back(0x51);
        body.push_back(0x03);
        body.push_back(kDefaultTempo >> 16 & 0xff);
        body.push_back(kDefaultTempo >> 8 & 0xff);
        body.push_back(kDefaultTempo & 0xff);
        put_vlq(body, end_tick);
        body.push_back(0xff);
        body.push_back(0x2f);
        body.push_back(0x00);
        out.push_back('M');
        out.push_back('T');
        out.push_back('r');
        out.push_back('k');
        put_u32(out, std::uint32_t(body.size()));
        out.insert(out.end(), body.begin(), body.end());
    }

    int next_slot = 0;  // non-drum channel slots 0..14 map to channels skipping 9
    for (const auto& [key, notes] : groups) {
        auto [is_drum, prog] = key;
        int channel;
        if (is_drum) {
            channel = 9;
        } else {
            int s = next_slot++ % 15;
            channel = s < 9 ? s : s + 1;
        }
        std::vector<WireEvent> ev;
        ev.push_back({0, 0, 0, std::uint8_t(0xc0 | channel), std::uint8_t(prog), 0});
        for (const NoteEvent* n : notes) {
            std::int64_t on = to_tick(n->onset_s);
            // Drums are onset-only; give them a 1-tick wire duration.  A
            // melodic note that quantizes to zero length is widened the same
            // way so FIFO pairing cannot mismatch within one tick.
            std::int64_t off = is_drum ? on + 1 : std::max(to_tick(n->offset_s), on + 1);
            ev.push_back({on, 2, n->pitch, std::uint8_t(0x90 | channel), std::uint8_t(n->pitch), 80});
            ev.push_back({off, 1, n->pitch, std::uint8_t(0x80 | channel), std::uint8_t(n->pitch), 0});
        }
        append_track(out, std::move(ev), end_tick);
    }
    return out;
}

}  // namespace amt
