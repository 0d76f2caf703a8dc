#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "amt/notes.hpp"

namespace amt {

inline constexpr double kOnsetTolS = 0.050;

enum class Granularity { Flat, MidiClass, Full };

const char* granularity_name(Granularity g);
int class_of(const NoteEvent& n, Granularity g);

struct MatchCounts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

struct OnsetMatch {
    MatchCounts counts;
    std::vector<std::pair<int, int>> pairs;  // (ref index, est index)
};

OnsetMatch onset_match_pairs(const NoteSequence& ref, const NoteSequence& est, Granularity g,
                             double tol_s);
MatchCounts onset_match(const NoteSequence& ref, const NoteSequence& est, Granularity g,
                        double tol_s);

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

PRF prf_from_counts(const MatchCounts& c);

// Instrument ids at full granularity: program for pitched notes, 128 for drums.
std::set<int> instrument_set(const NoteSequence& seq);

using CorpusPair = std::pair<NoteSequence, NoteSequence>;  // (ref, est)

double instrument_leakage_ratio(const std::vector<CorpusPair>& pairs);
PRF instrument_detection_prf(const NoteSequence& ref, const NoteSequence& est);

struct TrackEval {
    std::string track;
    PRF onset[3];  // indexed by Granularity
    long i_tr = 0;
    long i_gt = 0;
    PRF detection;
};

struct MetricReport {
    std::vector<TrackEval> tracks;
    PRF corpus_onset[3];
    long phi_num = 0;
    long phi_den = 0;
    double phi = 0.0;
    PRF detection_macro;
    std::map<std::string, std::uint64_t> violations;

    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
    std::string to_csv() const;
};

MetricReport evaluate_corpus(const std::vector<CorpusPair>& pairs, double tol_s,
                             const std::vector<std::string>& names = {});

}  // namespace amt
