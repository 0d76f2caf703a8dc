#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "amt/audio.hpp"

namespace amt {

inline constexpr int kSampleRate = 16000;
inline constexpr int kNFft = 2048;
inline constexpr int kFrameHop = 128;
inline constexpr int kNMels = 512;
inline constexpr double kMelFMin = 20.0;
inline constexpr double kMelFMax = 7600.0;
inline constexpr double kLogFloor = 1e-6;
inline constexpr double kFrameHopS = double(kFrameHop) / kSampleRate;

struct FrameMatrix {
    Eigen::MatrixXd frames;  // num_frames x n_mels
    double frame_hop_s = kFrameHopS;

    long num_frames() const { return frames.rows(); }
};

namespace detail {

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

}  // namespace detail

class MelFilterbank {
public:
    MelFilterbank(int n_fft, int n_mels, double fmin_hz, double fmax_hz, double sample_rate);

    const Eigen::MatrixXd& weights() const { return weights_; }
    const std::vector<double>& center_frequencies() const { return centers_hz_; }

    // Row-sparse product; identical to weights() * magnitudes.
    Eigen::VectorXd apply(const Eigen::VectorXd& magnitudes) const;

private:
    Eigen::MatrixXd weights_;  // n_mels x (n_fft/2 + 1), each row sums to 1
    std::vector<double> centers_hz_;
    std::vector<std::pair<int, int>> row_span_;  // [first, last] nonzero bin per row
};

FrameMatrix log_mel(const AudioBuffer& audio);

}  // namespace amt
