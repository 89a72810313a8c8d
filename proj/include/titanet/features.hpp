#pragma once

// Audio ingestion and log-mel feature extraction, plus the two segmentation
// policies used downstream: random training chunks and sliding windows over
// speech regions.

#include <cstdint>
#include <string>
#include <vector>

#include "titanet/tensor.hpp"

namespace titanet {

struct AudioSignal {
    std::vector<double> samples;  // amplitudes in [-1, 1]
    int sample_rate = 16000;
};

struct FrameConfig {
    double win_length = 0.025;  // seconds
    double hop_length = 0.010;  // seconds
    int n_fft = 512;
    int n_mels = 80;
    double log_floor = 1e-10;
};

struct MelSpectrogram {
    Tensor values;                    // [T, n_mels]
    std::vector<double> frame_times;  // frame-center timestamps, seconds
};

struct TimeSpan {
    double start = 0.0;
    double end = 0.0;
};

struct WindowPlan {
    double window = 0.0;
    double shift = 0.0;
    std::vector<TimeSpan> spans;
};

// RIFF/WAVE PCM 16-bit mono. Samples scale by 1/32768.
AudioSignal load_wav(const std::string& path);
void save_wav(const std::string& path, const AudioSignal& audio);

// In-place complex FFT; size must be a power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

std::vector<double> hann_window(int n);  // symmetric

// Triangular filters on the 2595*log10(1+f/700) scale spanning [0, sr/2].
// Rows: [n_mels, n_fft/2 + 1].
Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate);
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate);  // Hz, one per filter

// No center padding: T = 1 + floor((N - win) / hop). Rejects sample rates
// other than 16 kHz and signals shorter than one window.
MelSpectrogram compute_mel_spectrogram(const AudioSignal& signal, const FrameConfig& cfg = {});

// Per-frequency-bin standardization over time: (x - mean) / (std + 1e-5).
MelSpectrogram normalize_per_frequency(const MelSpectrogram& mel);

// Spectrograms longer than 3 s are cut into consecutive chunks whose target
// durations are drawn uniformly from {1.5, 2, 3} s (as frame counts); a
// trailing remainder shorter than 1.5 s is dropped. Shorter inputs pass
// through unchanged.
std::vector<MelSpectrogram> chunk_training_utterance(const MelSpectrogram& mel, uint64_t rng_seed);

// Sliding spans inside each speech region: starts advance by `shift`; an
// uncovered tail >= 0.5*window gets a final short span on the shift grid,
// a smaller tail extends the last span; regions shorter than the window
// yield one clipped span.
WindowPlan plan_windows(const std::vector<TimeSpan>& speech_regions, double window, double shift);

}  // namespace titanet
