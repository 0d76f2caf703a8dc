#include "amt/mel.hpp"

#include <cmath>

#include "amt/errors.hpp"

namespace amt {
namespace detail {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n < 2) return;
    if (n & (n - 1)) throw UsageError("fft size must be a power of two");

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / double(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

namespace {

long reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

}  // namespace detail

MelFilterbank::MelFilterbank(int n_fft, int n_mels, double fmin_hz, double fmax_hz,
                             double sample_rate) {
    if (n_fft < 2 || n_fft % 2 != 0) throw UsageError("n_fft must be even and >= 2");
    if (n_mels < 1) throw UsageError("n_mels must be >= 1");
    if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz && fmax_hz <= sample_rate / 2.0))
        throw UsageError("need 0 <= fmin < fmax <= sample_rate/2");

    const int n_bins = n_fft / 2 + 1;
    const double df = sample_rate / double(n_fft);

    const double mel_lo = detail::hz_to_mel(fmin_hz);
    const double mel_hi = detail::hz_to_mel(fmax_hz);
    std::vector<double> pts(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        pts[i] = detail::mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(i) / double(n_mels + 1));

    centers_hz_.assign(pts.begin() + 1, pts.end() - 1);
    weights_ = Eigen::MatrixXd::Zero(n_mels, n_bins);
    row_span_.assign(n_mels, {0, -1});

    // Integral of one linear triangle flank over [a, b].
    auto flank_area = [](double a, double b, double x0, double x1, double y0, double y1) {
        double lo = std::max(a, x0), hi = std::min(b, x1);
        if (hi <= lo) return 0.0;
        auto y = [&](double x) { return y0 + (y1 - y0) * (x - x0) / (x1 - x0); };
        return 0.5 * (y(lo) + y(hi)) * (hi - lo);
    };

    for (int m = 0; m < n_mels; ++m) {
        const double f_lo = pts[m], f_c = pts[m + 1], f_hi = pts[m + 2];
        double row_sum = 0.0;
        int first = -1, last = -1;
        for (int k = 0; k < n_bins; ++k) {
            const double a = k * df - df / 2.0;
            const double b = k * df + df / 2.0;
            if (b <= f_lo || a >= f_hi) continue;
            // Average triangle height across the bin span; point sampling would
            // zero out filters narrower than one bin.
            double w = (flank_area(a, b, f_lo, f_c, 0.0, 1.0) +
                        flank_area(a, b, f_c, f_hi, 1.0, 0.0)) /
                       df;
            if (w <= 0.0) continue;
            weights_(m, k) = w;
            row_sum += w;
            if (first < 0) first = k;
            last = k;
        }
        if (first < 0 || row_sum <= 0.0) throw NumericError("mel filter has no support");
        weights_.row(m) /= row_sum;
        row_span_[m] = {first, last};
    }
}

Eigen::VectorXd MelFilterbank::apply(const Eigen::VectorXd& magnitudes) const {
    if (magnitudes.size() != weights_.cols()) throw UsageError("magnitude vector has wrong size");
    Eigen::VectorXd out(weights_.rows());
    for (Eigen::Index m = 0; m < weights_.rows(); ++m) {
        auto [first, last] = row_span_[m];
        int n = last - first + 1;
        out[m] = weights_.row(m).segment(first, n).dot(magnitudes.segment(first, n));
    }
    return out;
}

FrameMatrix log_mel(const AudioBuffer& audio) {
    if (audio.sample_rate != 16000) throw UsageError("log_mel expects 16 kHz audio");

    FrameMatrix fm;
    const long n = long(audio.samples.size());
    if (n == 0) {
        fm.frames.resize(0, kNMels);
        return fm;
    }
    static const MelFilterbank bank(kNFft, kNMels, kMelFMin, kMelFMax, 16000.0);

    std::vector<double> window(kNFft);
    for (int j = 0; j < kNFft; ++j)
        window[j] = 0.5 * (1.0 - std::cos(2.0 * M_PI * double(j) / double(kNFft)));

    const long num_frames = (n + kFrameHop - 1) / kFrameHop;
    fm.frames.resize(num_frames, kNMels);

    std::vector<std::complex<double>> buf(kNFft);
    Eigen::VectorXd mag(kNFft / 2 + 1);
    for (long i = 0; i < num_frames; ++i) {
        const long center = i * kFrameHop;
        for (int j = 0; j < kNFft; ++j) {
            long idx = detail::reflect_index(center - kNFft / 2 + j, n);
            buf[j] = audio.samples[std::size_t(idx)] * window[j];
        }
        detail::fft_inplace(buf);
        for (int k = 0; k <= kNFft / 2; ++k) mag[k] = std::abs(buf[k]);
        Eigen::VectorXd mel = bank.apply(mag);
        for (int m = 0; m < kNMels; ++m) fm.frames(i, m) = std::log(mel[m] + kLogFloor);
    }
    return fm;
}

}  // namespace amt
