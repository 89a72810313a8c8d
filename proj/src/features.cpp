#include "titanet/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "titanet/rng.hpp"

namespace titanet {

// ===================== WAV =====================

namespace {

constexpr double kPi = 3.14159265358979323846;

uint32_t read_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t read_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

AudioSignal load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0)
        throw std::runtime_error("load_wav: missing RIFF header in " + path);
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("load_wav: not a WAVE file: " + path);

    bool have_fmt = false;
    int sample_rate = 0;
    size_t pos = 12;
    AudioSignal out;
    bool have_data = false;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t size = read_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + size > bytes.size())
            throw std::runtime_error("load_wav: truncated '" + std::string(tag, 4) + "' chunk in " + path);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw std::runtime_error("load_wav: malformed fmt chunk in " + path);
            const uint16_t format = read_u16(bytes.data() + body);
            const uint16_t channels = read_u16(bytes.data() + body + 2);
            sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
            const uint16_t bits = read_u16(bytes.data() + body + 14);
            if (format != 1) throw std::runtime_error("load_wav: unsupported format (expected PCM) in " + path);
            if (channels != 1) throw std::runtime_error("load_wav: expected mono audio in " + path);
            if (bits != 16) throw std::runtime_error("load_wav: expected 16-bit samples in " + path);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw std::runtime_error("load_wav: data chunk before fmt chunk in " + path);
            const size_t n = size / 2;
            out.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const auto v = static_cast<int16_t>(read_u16(bytes.data() + body + 2 * i));
                out.samples[i] = static_cast<double>(v) / 32768.0;
            }
            have_data = true;
        }
        pos = body + size + (size % 2);  // chunks are word-aligned
    }
    if (!have_fmt) throw std::runtime_error("load_wav: missing fmt chunk in " + path);
    if (!have_data) throw std::runtime_error("load_wav: missing data chunk in " + path);
    out.sample_rate = sample_rate;
    return out;
}

void save_wav(const std::string& path, const AudioSignal& audio) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_wav: cannot open " + path + " for writing");
    const uint32_t n = static_cast<uint32_t>(audio.samples.size());
    const uint32_t data_size = n * 2;
    const uint32_t sr = static_cast<uint32_t>(audio.sample_rate);
    auto put_u32 = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        f.write(reinterpret_cast<char*>(b), 4);
    };
    auto put_u16 = [&](uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        f.write(reinterpret_cast<char*>(b), 2);
    };
    f.write("RIFF", 4);
    put_u32(36 + data_size);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(16);
    put_u16(1);  // PCM
    put_u16(1);  // mono
    put_u32(sr);
    put_u32(sr * 2);  // byte rate
    put_u16(2);       // block align
    put_u16(16);      // bits
    f.write("data", 4);
    put_u32(data_size);
    for (double s : audio.samples) {
        double v = std::lrint(s * 32768.0);
        v = std::min(32767.0, std::max(-32768.0, v));
        put_u16(static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
    if (!f) throw std::runtime_error("save_wav: write failed for " + path);
}

// ===================== FFT =====================

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    if (n != im.size()) throw std::invalid_argument("fft_radix2: real/imag size mismatch");
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fft_radix2: size must be a power of two, got " + std::to_string(n));
    // Bit-reversal permutation.
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

// ===================== mel machinery =====================

std::vector<double> hann_window(int n) {
    if (n < 1) throw std::invalid_argument("hann_window: size must be positive");
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    if (n == 1) return w;
    for (int i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (n - 1)));
    return w;
}

namespace {
double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> mel_boundary_hz(int n_mels, int sample_rate) {
    const double mel_hi = hz_to_mel(sample_rate / 2.0);
    std::vector<double> pts(static_cast<size_t>(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        pts[static_cast<size_t>(i)] = mel_to_hz(mel_hi * i / (n_mels + 1));
    return pts;
}
}  // namespace

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
    auto pts = mel_boundary_hz(n_mels, sample_rate);
    return {pts.begin() + 1, pts.end() - 1};
}

Tensor mel_filterbank(int n_mels, int n_fft, int sample_rate) {
    if (n_mels < 1) throw std::invalid_argument("mel_filterbank: n_mels must be positive");
    const int n_bins = n_fft / 2 + 1;
    const auto pts = mel_boundary_hz(n_mels, sample_rate);
    Tensor fb = Tensor::zeros({n_mels, n_bins});
    for (int m = 0; m < n_mels; ++m) {
        const double lo = pts[static_cast<size_t>(m)];
        const double mid = pts[static_cast<size_t>(m) + 1];
        const double hi = pts[static_cast<size_t>(m) + 2];
        for (int j = 0; j < n_bins; ++j) {
            const double f = static_cast<double>(j) * sample_rate / n_fft;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f == mid)
                w = 1.0;
            else if (f > mid && f < hi)
                w = (hi - f) / (hi - mid);
            fb.at(m, j) = w;
        }
    }
    return fb;
}

MelSpectrogram compute_mel_spectrogram(const AudioSignal& signal, const FrameConfig& cfg) {
    if (signal.sample_rate != 16000)
        throw std::invalid_argument("compute_mel_spectrogram: expected 16000 Hz input, got " +
                                    std::to_string(signal.sample_rate));
    const int sr = signal.sample_rate;
    const int win = static_cast<int>(std::lround(cfg.win_length * sr));
    const int hop = static_cast<int>(std::lround(cfg.hop_length * sr));
    if (hop < 1 || win < 1) throw std::invalid_argument("compute_mel_spectrogram: window/hop too small");
    if (win > cfg.n_fft)
        throw std::invalid_argument("compute_mel_spectrogram: window length " + std::to_string(win) +
                                    " exceeds FFT size " + std::to_string(cfg.n_fft));
    const auto n = static_cast<int64_t>(signal.samples.size());
    if (n < win)
        throw std::invalid_argument("compute_mel_spectrogram: signal has " + std::to_string(n) +
                                    " samples, minimum is " + std::to_string(win));
    const int t_frames = static_cast<int>(1 + (n - win) / hop);
    const int n_bins = cfg.n_fft / 2 + 1;
    const auto window = hann_window(win);
    const Tensor fb = mel_filterbank(cfg.n_mels, cfg.n_fft, sr);

    MelSpectrogram out;
    out.values = Tensor::zeros({t_frames, cfg.n_mels});
    out.frame_times.resize(static_cast<size_t>(t_frames));
    std::vector<double> re(static_cast<size_t>(cfg.n_fft)), im(static_cast<size_t>(cfg.n_fft));
    std::vector<double> power(static_cast<size_t>(n_bins));
    for (int t = 0; t < t_frames; ++t) {
        const int64_t off = static_cast<int64_t>(t) * hop;
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int i = 0; i < win; ++i)
            re[static_cast<size_t>(i)] = signal.samples[static_cast<size_t>(off + i)] * window[static_cast<size_t>(i)];
        fft_radix2(re, im);
        for (int j = 0; j < n_bins; ++j)
            power[static_cast<size_t>(j)] = re[static_cast<size_t>(j)] * re[static_cast<size_t>(j)] +
                                            im[static_cast<size_t>(j)] * im[static_cast<size_t>(j)];
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (int j = 0; j < n_bins; ++j) acc += fb.at(m, j) * power[static_cast<size_t>(j)];
            out.values.at(t, m) = std::log(acc + cfg.log_floor);
        }
        out.frame_times[static_cast<size_t>(t)] = (off + 0.5 * win) / sr;
    }
    return out;
}

MelSpectrogram normalize_per_frequency(const MelSpectrogram& mel) {
    const int t_frames = mel.values.dim(0), n_mels = mel.values.dim(1);
    MelSpectrogram out;
    out.values = Tensor::zeros({t_frames, n_mels});
    out.frame_times = mel.frame_times;
    for (int m = 0; m < n_mels; ++m) {
        double mean = 0.0;
        for (int t = 0; t < t_frames; ++t) mean += mel.values.at(t, m);
        mean /= t_frames;
        double var = 0.0;
        for (int t = 0; t < t_frames; ++t) {
            const double d = mel.values.at(t, m) - mean;
            var += d * d;
        }
        var /= t_frames;
        const double denom = std::sqrt(var) + 1e-5;
        for (int t = 0; t < t_frames; ++t) out.values.at(t, m) = (mel.values.at(t, m) - mean) / denom;
    }
    return out;
}

std::vector<MelSpectrogram> chunk_training_utterance(const MelSpectrogram& mel, uint64_t rng_seed) {
    const int t_frames = mel.values.dim(0), n_mels = mel.values.dim(1);
    // Target durations as frame counts, derived from the hop implied by the
    // frame timestamps (150/200/300 frames at the standard 10 ms hop).
    double hop = 0.010;
    if (t_frames >= 2) hop = mel.frame_times[1] - mel.frame_times[0];
    const int f15 = static_cast<int>(std::lround(1.5 / hop));
    const int f20 = static_cast<int>(std::lround(2.0 / hop));
    const int f30 = static_cast<int>(std::lround(3.0 / hop));
    if (t_frames <= f30) return {mel};

    const int choices[3] = {f15, f20, f30};
    Rng rng(rng_seed);
    std::vector<MelSpectrogram> chunks;
    int start = 0;
    while (t_frames - start >= f15) {
        const int target = choices[rng.uniform_int(3)];
        const int len = std::min(target, t_frames - start);
        if (len < f15) break;
        MelSpectrogram c;
        c.values = Tensor::zeros({len, n_mels});
        c.frame_times.assign(mel.frame_times.begin() + start, mel.frame_times.begin() + start + len);
        for (int t = 0; t < len; ++t)
            for (int m = 0; m < n_mels; ++m) c.values.at(t, m) = mel.values.at(start + t, m);
        chunks.push_back(std::move(c));
        start += len;
    }
    return chunks;
}

WindowPlan plan_windows(const std::vector<TimeSpan>& speech_regions, double window, double shift) {
    if (window <= 0.0 || shift <= 0.0 || shift > window)
        throw std::invalid_argument("plan_windows: need 0 < shift <= window");
    WindowPlan plan;
    plan.window = window;
    plan.shift = shift;
    double prev_end = -1.0;
    for (const auto& r : speech_regions) {
        if (r.end <= r.start)
            throw std::invalid_argument("plan_windows: empty speech region at " + std::to_string(r.start));
        if (r.start < prev_end)
            throw std::invalid_argument("plan_windows: speech regions overlap or are unordered at " +
                                        std::to_string(r.start));
        prev_end = r.end;
        const double len = r.end - r.start;
        if (len <= window) {
            plan.spans.push_back({r.start, r.end});
            continue;
        }
        const int i_max = static_cast<int>(std::floor((len - window) / shift));
        for (int i = 0; i <= i_max; ++i)
            plan.spans.push_back({r.start + i * shift, r.start + i * shift + window});
        const double covered_end = r.start + i_max * shift + window;
        const double tail = r.end - covered_end;
        if (tail <= 0.0) continue;
        if (tail >= 0.5 * window) {
            plan.spans.push_back({r.start + (i_max + 1) * shift, r.end});
        } else {
            plan.spans.back().end = r.end;
        }
    }
    return plan;
}

}  // namespace titanet
