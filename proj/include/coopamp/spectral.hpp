#pragma once

// Welch power-spectral-density estimation.

#include "coopamp/dynamics.hpp"

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace coopamp {

enum class Window { Hann, Rectangular };

struct WelchConfig {
  std::size_t segment_length = 0;  // samples
  double overlap = 0.5;            // fraction of a segment shared with the next
  Window window = Window::Hann;
  bool remove_mean = false;        // subtract each segment's mean before windowing

  void validate() const;
  static WelchConfig for_duration(double seconds, double sample_rate, Window w = Window::Hann);
};

// One-sided spectrum. `density` is the amplitude spectral density
// (units / sqrt(Hz)); density^2 * resolution is the power in a bin.
struct Spectrum {
  std::vector<double> frequency;
  std::vector<double> density;
  std::size_t segments = 0;
  double resolution = 0.0;  // Hz
  Window window = Window::Hann;

  std::size_t nearest_bin(double f) const;
  double power(std::size_t bin) const { return density[bin] * density[bin] * resolution; }
};

// Smallest even length >= n whose only prime factors are 2, 3, 5 and 7.
std::size_t fft_friendly_length(std::size_t n);

// Sum of bin powers, i.e. the mean square of the (windowed) record.
double integrated_power(const Spectrum& s);

// Streaming Welch estimator: segments are transformed as soon as they fill,
// so arbitrarily long records never need to be held in memory.
class WelchAccumulator {
public:
  WelchAccumulator(double sample_rate, const WelchConfig& cfg);
  ~WelchAccumulator();
  WelchAccumulator(WelchAccumulator&&) noexcept;
  WelchAccumulator& operator=(WelchAccumulator&&) noexcept;

  void push(double x);
  void push(std::span<const double> xs);
  std::size_t segments() const noexcept;
  // Throws ConfigError if no complete segment has been seen.
  Spectrum finish() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Throws ConfigError when the segment is longer than the record.
Spectrum welch_psd(std::span<const double> y, double sample_rate, const WelchConfig& cfg);
Spectrum welch_psd(const TimeSeries& ts, Channel channel, const WelchConfig& cfg);

// Frequency of the strongest spectral peak above DC: argmax of a Hann-windowed,
// 4x zero-padded periodogram refined by a parabola through the log power of
// the three bins around the maximum.
double peak_frequency(std::span<const double> y, double sample_rate);

}  // namespace coopamp
