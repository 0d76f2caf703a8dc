#include "amt/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "amt/errors.hpp"

namespace amt {
namespace {

std::uint32_t rd_u32le(std::span<const std::uint8_t> b, std::size_t at) {
    return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8 | std::uint32_t(b[at + 2]) << 16 |
           std::uint32_t(b[at + 3]) << 24;
}

std::uint16_t rd_u16le(std::span<const std::uint8_t> b, std::size_t at) {
    return std::uint16_t(b[at] | b[at + 1] << 8);
}

void wr_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8 & 0xff);
    out.push_back(v >> 16 & 0xff);
    out.push_back(v >> 24 & 0xff);
}

void wr_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(v & 0xff);
    out.push_back(v >> 8 & 0xff);
}

}  // namespace

AudioBuffer read_wav(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw ParseError("not a RIFF/WAVE file", 0);

    bool have_fmt = false;
    int channels = 0, rate = 0, bits = 0;
    std::size_t data_at = 0, data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        char id[5] = {};
        std::memcpy(id, bytes.data() + pos, 4);
        std::uint32_t len = rd_u32le(bytes, pos + 4);
        std::size_t body = pos + 8;
        if (body + len > bytes.size()) throw ParseError("chunk overruns file", pos + 4);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw ParseError("fmt chunk too short", body);
            std::uint16_t fmt_tag = rd_u16le(bytes, body);
            channels = rd_u16le(bytes, body + 2);
            rate = int(rd_u32le(bytes, body + 4));
            bits = rd_u16le(bytes, body + 14);
            if (fmt_tag != 1) throw DataError("only PCM WAV is supported");
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_at = body;
            data_len = len;
        }
        pos = body + len + (len & 1);  // chunks are word-aligned
    }
    if (!have_fmt || data_at == 0) throw DataError("WAV missing fmt or data chunk");
    if (channels != 1) throw DataError("only mono WAV is supported, got " + std::to_string(channels) + " channels");
    if (bits != 16) throw DataError("only 16-bit PCM WAV is supported, got " + std::to_string(bits) + " bits");
    if (rate <= 0) throw DataError("invalid WAV sample rate");

    AudioBuffer audio;
    audio.sample_rate = rate;
    std::size_t n = data_len / 2;
    audio.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s = std::int16_t(rd_u16le(bytes, data_at + 2 * i));
        audio.samples[i] = double(s) / 32767.0;
    }
    return audio;
}

AudioBuffer read_wav_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_wav(bytes);
}

std::vector<std::uint8_t> write_wav(const AudioBuffer& audio) {
    std::vector<std::uint8_t> out;
    std::uint32_t data_len = std::uint32_t(audio.samples.size() * 2);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    wr_u32le(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    wr_u32le(out, 16);
    wr_u16le(out, 1);  // PCM
    wr_u16le(out, 1);  // mono
    wr_u32le(out, std::uint32_t(audio.sample_rate));
    wr_u32le(out, std::uint32_t(audio.sample_rate * 2));
    wr_u16le(out, 2);
    wr_u16le(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    wr_u32le(out, data_len);
    for (double s : audio.samples) {
        double c = std::clamp(s, -1.0, 1.0);
        wr_u16le(out, std::uint16_t(std::int16_t(std::llround(c * 32767.0))));
    }
    return out;
}

void write_wav_file(const std::filesystem::path& path, const AudioBuffer& audio) {
    auto bytes = write_wav(audio);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

AudioBuffer resample(const AudioBuffer& audio, int target_rate) {
    if (target_rate <= 0) throw UsageError("target sample rate must be positive");
    if (audio.sample_rate == target_rate || audio.samples.empty()) {
        AudioBuffer out = audio;
        out.sample_rate = target_rate;
        return out;
    }
    double ratio = double(audio.sample_rate) / target_rate;
    std::size_t n_out = std::size_t(std::llround(double(audio.samples.size()) / ratio));
    AudioBuffer out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        double x = double(i) * ratio;
        std::size_t i0 = std::min(std::size_t(x), audio.samples.size() - 1);
        std::size_t i1 = std::min(i0 + 1, audio.samples.size() - 1);
        double frac = x - double(i0);
        out.samples[i] = audio.samples[i0] * (1.0 - frac) + audio.samples[i1] * frac;
    }
    return out;
}

namespace {

// Relative overtone weights per MIDI program family (program / 8).  Each row
// is normalized to sum 1 at synthesis time, so a lone note peaks near +/-1.
// Families sharing a row are indistinguishable by timbre, only by register
// and context.
constexpr int kMaxPartials = 6;
constexpr double kOvertoneTable[16][kMaxPartials] = {
    {1.00, 0.45, 0.22, 0.10, 0.05, 0.02},  // 0  piano
    {1.00, 0.30, 0.40, 0.12, 0.08, 0.03},  // 1  chromatic percussion
    {1.00, 0.80, 0.55, 0.40, 0.28, 0.18},  // 2  organ
    {1.00, 0.60, 0.20, 0.30, 0.10, 0.06},  // 3  guitar
    {1.00, 0.25, 0.08, 0.03, 0.00, 0.00},  // 4  bass
    {1.00, 0.70, 0.50, 0.35, 0.22, 0.14},  // 5  strings
    {1.00, 0.55, 0.45, 0.30, 0.20, 0.12},  // 6  ensemble
    {1.00, 0.85, 0.30, 0.50, 0.15, 0.25},  // 7  brass
    {1.00, 0.20, 0.60, 0.10, 0.30, 0.05},  // 8  reed
    {1.00, 0.05, 0.15, 0.02, 0.04, 0.00},  // 9  pipe
    {1.00, 0.00, 0.33, 0.00, 0.20, 0.00},  // 10 synth lead (odd partials)
    {1.00, 0.50, 0.33, 0.25, 0.20, 0.16},  // 11 synth pad
    {1.00, 0.15, 0.45, 0.25, 0.05, 0.10},  // 12 synth fx
    {1.00, 0.40, 0.30, 0.20, 0.15, 0.10},  // 13 ethnic
    {1.00, 0.10, 0.05, 0.02, 0.01, 0.00},  // 14 percussive
    {1.00, 0.35, 0.12, 0.30, 0.08, 0.04},  // 15 sound effects
};

constexpr double kAttackReleaseS = 0.010;
constexpr double kDrumBurstS = 0.030;

double note_hz(int pitch) { return 440.0 * std::pow(2.0, (pitch - 69) / 12.0); }

// Deterministic per-note noise for drums.
struct XorShift64 {
    std::uint64_t s;
    double next() {  // uniform in [-1, 1)
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return double(s >> 11) * (2.0 / 9007199254740992.0) - 1.0;
    }
};

int max_polyphony(const NoteSequence& seq) {
    std::vector<std::pair<double, int>> edges;
    for (const NoteEvent& n : seq.notes) {
        double off = n.is_drum ? n.onset_s + kDrumBurstS : n.offset_s;
        edges.push_back({n.onset_s, +1});
        edges.push_back({off, -1});
    }
    std::sort(edges.begin(), edges.end());  // offsets sort before onsets at ties
    int cur = 0, best = 1;
    for (auto& [t, d] : edges) {
        cur += d;
        best = std::max(best, cur);
    }
    return best;
}

}  // namespace

AudioBuffer synthesize_additive(const NoteSequence& seq, int sample_rate) {
    if (sample_rate < 8000) throw UsageError("sample rate must be at least 8000 Hz");
    AudioBuffer out;
    out.sample_rate = sample_rate;
    out.samples.assign(std::size_t(std::llround(seq.duration_s * sample_rate)), 0.0);
    if (seq.notes.empty()) return out;

    const double nyquist = sample_rate / 2.0;
    const double scale = 1.0 / std::sqrt(double(max_polyphony(seq)));

    std::size_t note_index = 0;
    for (const NoteEvent& n : seq.notes) {
        std::size_t first = std::size_t(std::llround(n.onset_s * sample_rate));
        if (n.is_drum) {
            XorShift64 noise{0x9e3779b97f4a7c15ull ^ (std::uint64_t(n.pitch) << 32) ^ note_index};
            std::size_t len = std::size_t(std::llround(kDrumBurstS * sample_rate));
            for (std::size_t i = 0; i < len && first + i < out.samples.size(); ++i) {
                double env = 1.0 - double(i) / double(len);
                out.samples[first + i] += 0.9 * env * noise.next();
            }
        } else {
            const double* weights = kOvertoneTable[std::clamp(n.program, 0, 127) / 8];
            double wsum = 0.0;
            for (int k = 0; k < kMaxPartials; ++k) wsum += weights[k];
            double f0 = note_hz(n.pitch);
            double dur = n.offset_s - n.onset_s;
            double ar = std::min(kAttackReleaseS, dur / 2.0);
            std::size_t len = std::size_t(std::llround(dur * sample_rate));
            for (std::size_t i = 0; i < len && first + i < out.samples.size(); ++i) {
                double t = double(i) / sample_rate;
                double env = 1.0;
                if (t < ar) env = t / ar;
                double to_end = dur - t;
                if (to_end < ar) env = std::min(env, to_end / ar);
                double v = 0.0;
                for (int k = 0; k < kMaxPartials; ++k) {
                    double f = f0 * (k + 1);
                    if (weights[k] <= 0.0 || f >= nyquist) continue;
                    v += weights[k] / wsum * std::sin(2.0 * std::numbers::pi * f * t);
                }
                out.samples[first + i] += env * v;
            }
        }
        ++note_index;
    }

    for (double& s : out.samples) s = std::clamp(s * scale, -1.0, 1.0);
    return out;
}

}  // namespace amt
