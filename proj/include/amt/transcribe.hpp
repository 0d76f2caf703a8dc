#pragma once

#include <vector>

#include "amt/audio.hpp"
#include "amt/codec.hpp"
#include "amt/nn.hpp"
#include "amt/segmenter.hpp"

namespace amt {

// Single-token decoding with cached self-attention keys/values; output is
// identical to the full teacher-forced forward pass.
class IncrementalDecoder {
public:
    IncrementalDecoder(const Model& m, const Eigen::MatrixXd& enc, int enc_valid,
                       const MemoryBlock& mem);

    // Feeds one token at the next position and returns the argmax token id.
    int step(int token_id);
    const Eigen::RowVectorXd& last_logits() const { return logits_; }
    int position() const { return pos_; }

private:
    const Model& m_;
    int pos_ = 0;
    std::vector<Eigen::MatrixXd> self_k_, self_v_;    // per layer, n_t x d
    std::vector<Eigen::MatrixXd> cross_k_, cross_v_;  // per layer, n_keys x d
    std::vector<char> cross_valid_;
    Eigen::RowVectorXd logits_;
};

std::vector<int> greedy_decode(const Model& m, const Eigen::MatrixXd& enc, int enc_valid,
                               const MemoryBlock& mem);

struct TranscribeResult {
    NoteSequence notes;
    DecodeStats stats;
    std::vector<std::vector<int>> window_ids;  // predicted ids per window, EOS included
};

TranscribeResult transcribe_frames(const Model& m, const Vocab& vocab, const FrameMatrix& frames,
                                   const SegmentConfig& cfg, double total_seconds);
TranscribeResult transcribe_track(const Model& m, const Vocab& vocab, const AudioBuffer& audio,
                                  const SegmentConfig& cfg);

}  // namespace amt
