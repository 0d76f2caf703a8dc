#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "amt/codec.hpp"
#include "amt/mel.hpp"
#include "amt/notes.hpp"
#include "amt/rng.hpp"

namespace amt {

struct SegmentConfig {
    int n_f = 256;
    int n_t = 1024;
    int frames_per_segment = 2000;
    int max_hop = 2;
    int batch_segments = 12;
    double frame_hop_s = kFrameHopS;

    double window_seconds() const { return n_f * frame_hop_s; }
    int t_max() const { return time_bins_for(window_seconds()); }
};

std::vector<long> window_grid(long total_frames, int n_f);

struct PriorWindow {
    long start = 0;  // frame index, negative when out of range
    long end = 0;
    int l_hop = 1;

    bool in_range() const { return start >= 0; }
};

PriorWindow prior_window_for(long i, int n_f, int l_hop);
PriorWindow sample_prior_window(long i, const SegmentConfig& cfg, Rng& rng);

struct TrainingPair {
    Eigen::MatrixXd frames;  // n_f x n_mels, zero-padded past valid rows
    int n_valid_frames = 0;
    TokenSeq target_tokens;  // unpadded, ends with EOS
    TokenSeq prior_tokens;   // unpadded; empty means all-PAD prior
    std::vector<int> target;  // ids padded to n_t
    std::vector<int> prior;   // ids padded to n_t
    int hop = 1;
    long window_index = 0;
    SegmentWindow span{};
};

struct TrackData {
    FrameMatrix frames;
    NoteSequence notes;
    std::string name;
};

std::vector<TrainingPair> make_training_pairs(const TrackData& track, const SegmentConfig& cfg,
                                              const Vocab& vocab, Rng& rng,
                                              std::optional<int> forced_hop = std::nullopt);

// Batches are batch_segments consecutive windows of one track, topped up from
// further tracks when a track runs short. Priors are resampled every call.
class BatchSampler {
public:
    BatchSampler(const std::vector<TrackData>* tracks, SegmentConfig cfg, const Vocab* vocab,
                 Rng rng);

    std::vector<TrainingPair> next();

private:
    const std::vector<TrackData>* tracks_;
    SegmentConfig cfg_;
    const Vocab* vocab_;
    Rng rng_;
};

}  // namespace amt
