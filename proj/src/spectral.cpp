#include "coopamp/spectral.hpp"

#include "coopamp/errors.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <numeric>

namespace coopamp {

namespace {

// FFTW's planner is not reentrant; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::span<double> input() { return {in_, n_}; }
  void execute() { fftw_execute(plan_); }
  double norm(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }
  std::size_t bins() const { return n_ / 2 + 1; }

private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::Hann && n > 1) {
    // Periodic Hann: exact 50% overlap-add.
    for (std::size_t i = 0; i < n; ++i)
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return out;
}

}  // namespace

void WelchConfig::validate() const {
  if (segment_length < 2) throw ConfigError("segment length must be at least 2 samples", "welch.segment_length");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)", "welch.overlap");
}

WelchConfig WelchConfig::for_duration(double seconds, double sample_rate, Window w) {
  WelchConfig cfg;
  cfg.segment_length = static_cast<std::size_t>(std::llround(seconds * sample_rate));
  cfg.window = w;
  return cfg;
}

std::size_t fft_friendly_length(std::size_t n) {
  if (n < 2) return 2;
  for (std::size_t m = n % 2 == 0 ? n : n + 1;; m += 2) {
    std::size_t r = m;
    for (std::size_t f : {2u, 3u, 5u, 7u})
      while (r % f == 0) r /= f;
    if (r == 1) return m;
  }
}

std::size_t Spectrum::nearest_bin(double f) const {
  if (frequency.empty()) throw ConfigError("empty spectrum");
  const double k = std::round(f / resolution);
  return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(frequency.size() - 1)));
}

double integrated_power(const Spectrum& s) {
  double total = 0.0;
  for (double d : s.density) total += d * d;
  return total * s.resolution;
}

struct WelchAccumulator::Impl {
  double fs;
  WelchConfig cfg;
  std::size_t hop;
  std::vector<double> window;
  double window_power;  // sum of w^2
  std::vector<double> buffer;
  std::size_t filled = 0;
  std::vector<double> acc;
  std::size_t segments = 0;
  RealFft fft;

  Impl(double fs_, const WelchConfig& c)
      : fs(fs_),
        cfg(c),
        hop(std::max<std::size_t>(1, c.segment_length - static_cast<std::size_t>(std::floor(
                                                              c.overlap * static_cast<double>(c.segment_length))))),
        window(make_window(c.window, c.segment_length)),
        window_power(std::inner_product(window.begin(), window.end(), window.begin(), 0.0)),
        buffer(c.segment_length),
        acc(c.segment_length / 2 + 1, 0.0),
        fft(c.segment_length) {}

  void process() {
    const std::size_t n = cfg.segment_length;
    double mean = 0.0;
    if (cfg.remove_mean) mean = std::accumulate(buffer.begin(), buffer.end(), 0.0) / static_cast<double>(n);
    auto in = fft.input();
    for (std::size_t i = 0; i < n; ++i) in[i] = (buffer[i] - mean) * window[i];
    fft.execute();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += fft.norm(k);
    ++segments;
    std::copy(buffer.begin() + static_cast<std::ptrdiff_t>(hop), buffer.end(), buffer.begin());
    filled = n - hop;
  }
};

WelchAccumulator::WelchAccumulator(double sample_rate, const WelchConfig& cfg) {
  cfg.validate();
  if (!(sample_rate > 0.0)) throw ConfigError("sample rate must be > 0");
  impl_ = std::make_unique<Impl>(sample_rate, cfg);
}

WelchAccumulator::~WelchAccumulator() = default;
WelchAccumulator::WelchAccumulator(WelchAccumulator&&) noexcept = default;
WelchAccumulator& WelchAccumulator::operator=(WelchAccumulator&&) noexcept = default;

void WelchAccumulator::push(double x) {
  impl_->buffer[impl_->filled++] = x;
  if (impl_->filled == impl_->cfg.segment_length) impl_->process();
}

void WelchAccumulator::push(std::span<const double> xs) {
  for (double x : xs) push(x);
}

std::size_t WelchAccumulator::segments() const noexcept { return impl_->segments; }

Spectrum WelchAccumulator::finish() const {
  const auto& m = *impl_;
  if (m.segments == 0) throw ConfigError("no complete Welch segment: record shorter than segment length");
  const std::size_t n = m.cfg.segment_length;
  Spectrum s;
  s.segments = m.segments;
  s.resolution = m.fs / static_cast<double>(n);
  s.window = m.cfg.window;
  s.frequency.resize(m.acc.size());
  s.density.resize(m.acc.size());
  // One-sided PSD = c |X_k|^2 / (fs sum w^2), c = 2 except at DC and Nyquist.
  const double scale = 1.0 / (m.fs * m.window_power * static_cast<double>(m.segments));
  for (std::size_t k = 0; k < m.acc.size(); ++k) {
    const bool unpaired = (k == 0) || (n % 2 == 0 && k == n / 2);
    const double psd = (unpaired ? 1.0 : 2.0) * m.acc[k] * scale;
    s.frequency[k] = static_cast<double>(k) * s.resolution;
    s.density[k] = std::sqrt(psd);
  }
  return s;
}

Spectrum welch_psd(std::span<const double> y, double sample_rate, const WelchConfig& cfg) {
  cfg.validate();
  if (cfg.segment_length > y.size())
    throw ConfigError("Welch segment (" + std::to_string(cfg.segment_length) +
                          " samples) is longer than the record (" + std::to_string(y.size()) + ")",
                      "welch.segment_length");
  WelchAccumulator acc(sample_rate, cfg);
  acc.push(y);
  return acc.finish();
}

Spectrum welch_psd(const TimeSeries& ts, Channel channel, const WelchConfig& cfg) {
  const auto y = ts.channel(channel);
  return welch_psd(y, ts.sample_rate(), cfg);
}

double peak_frequency(std::span<const double> y, double sample_rate) {
  if (y.size() < 8) throw ConfigError("record too short to locate a spectral peak");
  const std::size_t n = y.size();
  std::size_t nfft = 1;
  while (nfft < 4 * n) nfft <<= 1;
  RealFft fft(nfft);
  auto in = fft.input();
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  const auto w = make_window(Window::Hann, n);
  for (std::size_t i = 0; i < n; ++i) in[i] = (y[i] - mean) * w[i];
  std::fill(in.begin() + static_cast<std::ptrdiff_t>(n), in.end(), 0.0);
  fft.execute();

  std::size_t best = 1;
  for (std::size_t k = 2; k + 1 < fft.bins(); ++k)
    if (fft.norm(k) > fft.norm(best)) best = k;
  double offset = 0.0;
  if (best >= 1 && best + 1 < fft.bins()) {
    const double tiny = 1e-300;
    const double a = std::log(fft.norm(best - 1) + tiny);
    const double b = std::log(fft.norm(best) + tiny);
    const double c = std::log(fft.norm(best + 1) + tiny);
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) offset = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  return (static_cast<double>(best) + offset) * sample_rate / static_cast<double>(nfft);
}

}  // namespace coopamp
