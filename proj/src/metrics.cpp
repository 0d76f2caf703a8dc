#include "amt/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "amt/errors.hpp"

namespace amt {

const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::Flat: return "flat";
        case Granularity::MidiClass: return "midi_class";
        case Granularity::Full: return "full";
    }
    return "?";
}

int class_of(const NoteEvent& n, Granularity g) {
    switch (g) {
        case Granularity::Flat: return n.is_drum ? 1 : 0;
        case Granularity::MidiClass: return n.is_drum ? 16 : n.program / 8;
        case Granularity::Full: return n.is_drum ? 128 : n.program;
    }
    return -1;
}

namespace {

bool try_kuhn(int u, const std::vector<std::vector<int>>& adj, std::vector<char>& seen,
              std::vector<int>& match_est) {
    for (int v : adj[std::size_t(u)]) {
        if (seen[std::size_t(v)]) continue;
        seen[std::size_t(v)] = 1;
        if (match_est[std::size_t(v)] < 0 || try_kuhn(match_est[std::size_t(v)], adj, seen, match_est)) {
            match_est[std::size_t(v)] = u;
            return true;
        }
    }
    return false;
}

}  // namespace

OnsetMatch onset_match_pairs(const NoteSequence& ref, const NoteSequence& est, Granularity g,
                             double tol_s) {
    const int nr = int(ref.notes.size());
    const int ne = int(est.notes.size());
    auto adj = std::vector<std::vector<int>>(std::size_t(nr));
    for (int i = 0; i < nr; ++i) {
        const NoteEvent& r = ref.notes[std::size_t(i)];
        for (int j = 0; j < ne; ++j) {
            const NoteEvent& e = est.notes[std::size_t(j)];
            if (r.pitch == e.pitch && class_of(r, g) == class_of(e, g) &&
                std::abs(r.onset_s - e.onset_s) <= tol_s)
                adj[std::size_t(i)].push_back(j);
        }
    }
    std::vector<int> match_est(std::size_t(ne), -1);
    long matched = 0;
    for (int i = 0; i < nr; ++i) {
        std::vector<char> seen(std::size_t(ne), 0);
        if (try_kuhn(i, adj, seen, match_est)) ++matched;
    }
    OnsetMatch out;
    out.counts = {matched, ne - matched, nr - matched};
    for (int j = 0; j < ne; ++j)
        if (match_est[std::size_t(j)] >= 0) out.pairs.push_back({match_est[std::size_t(j)], j});
    return out;
}

MatchCounts onset_match(const NoteSequence& ref, const NoteSequence& est, Granularity g,
                        double tol_s) {
    return onset_match_pairs(ref, est, g, tol_s).counts;
}

PRF prf_from_counts(const MatchCounts& c) {
    PRF p;
    p.tp = c.tp;
    p.fp = c.fp;
    p.fn = c.fn;
    p.precision = c.tp + c.fp > 0 ? double(c.tp) / double(c.tp + c.fp) : 0.0;
    p.recall = c.tp + c.fn > 0 ? double(c.tp) / double(c.tp + c.fn) : 0.0;
    // Harmonic mean; a P x R denominator would give F1 = 2 at P = R = 1.
    p.f1 = p.precision + p.recall > 0.0
               ? 2.0 * p.precision * p.recall / (p.precision + p.recall)
               : 0.0;
    return p;
}

std::set<int> instrument_set(const NoteSequence& seq) {
    std::set<int> out;
    for (const NoteEvent& n : seq.notes) out.insert(n.is_drum ? 128 : n.program);
    return out;
}

double instrument_leakage_ratio(const std::vector<CorpusPair>& pairs) {
    long num = 0, den = 0;
    for (const auto& [ref, est] : pairs) {
        num += long(instrument_set(est).size());
        den += long(instrument_set(ref).size());
    }
    if (den == 0) throw DataError("instrument leakage ratio undefined: no ground-truth instruments");
    return double(num) / double(den);
}

PRF instrument_detection_prf(const NoteSequence& ref, const NoteSequence& est) {
    std::set<int> gt = instrument_set(ref);
    std::set<int> tr = instrument_set(est);
    long inter = 0;
    for (int v : tr) inter += gt.count(v) ? 1 : 0;

    PRF p;
    p.tp = inter;
    p.fp = long(tr.size()) - inter;
    p.fn = long(gt.size()) - inter;
    p.precision = tr.empty() ? 0.0 : double(inter) / double(tr.size());
    p.recall = gt.empty() ? (tr.empty() ? 1.0 : 0.0) : double(inter) / double(gt.size());
    p.f1 = p.precision + p.recall > 0.0
               ? 2.0 * p.precision * p.recall / (p.precision + p.recall)
               : 0.0;
    return p;
}

MetricReport evaluate_corpus(const std::vector<CorpusPair>& pairs, double tol_s,
                             const std::vector<std::string>& names) {
    if (pairs.empty()) throw UsageError("evaluate_corpus needs at least one pair");
    if (!names.empty() && names.size() != pairs.size())
        throw UsageError("names must match pair count");

    MetricReport rep;
    MatchCounts totals[3];
    double det_p = 0.0, det_r = 0.0, det_f = 0.0;
    for (std::size_t t = 0; t < pairs.size(); ++t) {
        const auto& [ref, est] = pairs[t];
        TrackEval ev;
        ev.track = names.empty() ? "track" + std::to_string(t) : names[t];
        for (int g = 0; g < 3; ++g) {
            MatchCounts c = onset_match(ref, est, Granularity(g), tol_s);
            ev.onset[g] = prf_from_counts(c);
            totals[g].tp += c.tp;
            totals[g].fp += c.fp;
            totals[g].fn += c.fn;
        }
        ev.i_tr = long(instrument_set(est).size());
        ev.i_gt = long(instrument_set(ref).size());
        ev.detection = instrument_detection_prf(ref, est);
        det_p += ev.detection.precision;
        det_r += ev.detection.recall;
        det_f += ev.detection.f1;
        rep.phi_num += ev.i_tr;
        rep.phi_den += ev.i_gt;
        rep.tracks.push_back(std::move(ev));
    }
    for (int g = 0; g < 3; ++g) rep.corpus_onset[g] = prf_from_counts(totals[g]);
    if (rep.phi_den == 0)
        throw DataError("instrument leakage ratio undefined: no ground-truth instruments");
    rep.phi = double(rep.phi_num) / double(rep.phi_den);
    const double n = double(pairs.size());
    rep.detection_macro.precision = det_p / n;
    rep.detection_macro.recall = det_r / n;
    rep.detection_macro.f1 = det_f / n;
    return rep;
}

namespace {

nlohmann::json prf_to_json(const PRF& p) {
    return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
            {"tp", p.tp},               {"fp", p.fp},         {"fn", p.fn}};
}

PRF prf_from_json(const nlohmann::json& j) {
    PRF p;
    p.precision = j.at("precision").get<double>();
    p.recall = j.at("recall").get<double>();
    p.f1 = j.at("f1").get<double>();
    p.tp = j.at("tp").get<long>();
    p.fp = j.at("fp").get<long>();
    p.fn = j.at("fn").get<long>();
    return p;
}

}  // namespace

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["tracks"] = nlohmann::json::array();
    for (const TrackEval& ev : tracks) {
        nlohmann::json t;
        t["track"] = ev.track;
        for (int g = 0; g < 3; ++g) t["onset"][granularity_name(Granularity(g))] = prf_to_json(ev.onset[g]);
        t["i_tr"] = ev.i_tr;
        t["i_gt"] = ev.i_gt;
        t["detection"] = prf_to_json(ev.detection);
        j["tracks"].push_back(std::move(t));
    }
    for (int g = 0; g < 3; ++g)
        j["corpus_onset"][granularity_name(Granularity(g))] = prf_to_json(corpus_onset[g]);
    j["phi"] = {{"num", phi_num}, {"den", phi_den}, {"value", phi}};
    j["detection_macro"] = prf_to_json(detection_macro);
    j["violations"] = violations;
    return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad metric report: ") + e.what());
    }
    MetricReport rep;
    try {
        for (const auto& t : j.at("tracks")) {
            TrackEval ev;
            ev.track = t.at("track").get<std::string>();
            for (int g = 0; g < 3; ++g)
                ev.onset[g] = prf_from_json(t.at("onset").at(granularity_name(Granularity(g))));
            ev.i_tr = t.at("i_tr").get<long>();
            ev.i_gt = t.at("i_gt").get<long>();
            ev.detection = prf_from_json(t.at("detection"));
            rep.tracks.push_back(std::move(ev));
        }
        for (int g = 0; g < 3; ++g)
            rep.corpus_onset[g] = prf_from_json(j.at("corpus_onset").at(granularity_name(Granularity(g))));
        rep.phi_num = j.at("phi").at("num").get<long>();
        rep.phi_den = j.at("phi").at("den").get<long>();
        rep.phi = j.at("phi").at("value").get<double>();
        rep.detection_macro = prf_from_json(j.at("detection_macro"));
        rep.violations = j.at("violations").get<std::map<std::string, std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad metric report: ") + e.what());
    }
    return rep;
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "track,granularity,P,R,F1,phi_num,phi_den,inst_P,inst_R,inst_F1\n";
    auto row = [&](const std::string& track, Granularity g, const PRF& onset, long num, long den,
                   const PRF& det) {
        out << track << ',' << granularity_name(g) << ',' << onset.precision << ',' << onset.recall
            << ',' << onset.f1 << ',' << num << ',' << den << ',' << det.precision << ','
            << det.recall << ',' << det.f1 << '\n';
    };
    for (const TrackEval& ev : tracks)
        for (int g = 0; g < 3; ++g)
            row(ev.track, Granularity(g), ev.onset[g], ev.i_tr, ev.i_gt, ev.detection);
    for (int g = 0; g < 3; ++g)
        row("ALL", Granularity(g), corpus_onset[g], phi_num, phi_den, detection_macro);
    return out.str();
}

}  // namespace amt
