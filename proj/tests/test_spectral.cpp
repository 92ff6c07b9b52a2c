#include "coopamp/errors.hpp"
#include "coopamp/spectral.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace coopamp;

namespace {

std::vector<double> white(std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> x(n);
  for (double& v : x) v = normal(rng);
  return x;
}

}  // namespace

TEST_CASE("Parseval: bin powers sum to the mean square") {
  const auto x = white(1 << 18, 1.5, 1);
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  for (Window w : {Window::Hann, Window::Rectangular}) {
    const auto s = welch_psd(x, 50.0, WelchConfig::for_duration(20.48, 50.0, w));
    CHECK(integrated_power(s) == doctest::Approx(ms).epsilon(0.01));
  }
}

TEST_CASE("white noise level is sigma sqrt(2 / fs)") {
  const double fs = 100.0, sigma = 3.0;
  const auto x = white(1 << 18, sigma, 2);
  const auto s = welch_psd(x, fs, WelchConfig::for_duration(10.24, fs));
  double mean = 0.0;
  for (std::size_t k = 1; k + 1 < s.density.size(); ++k) mean += s.density[k] * s.density[k];
  mean /= static_cast<double>(s.density.size() - 2);
  CHECK(std::sqrt(mean) == doctest::Approx(sigma * std::sqrt(2.0 / fs)).epsilon(0.1));
  CHECK(s.resolution == doctest::Approx(fs / 1024.0));
  CHECK(s.segments > 100);
}

TEST_CASE("sinusoid power lands at its frequency") {
  const double fs = 100.0, f = 12.5, amp = 2.0;
  std::vector<double> x(40000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs);
  const auto s = welch_psd(x, fs, WelchConfig::for_duration(40.0, fs));
  const std::size_t k = s.nearest_bin(f);
  double total = 0.0;
  for (std::size_t j = k - 3; j <= k + 3; ++j) total += s.power(j);
  CHECK(total == doctest::Approx(amp * amp / 2.0).epsilon(0.01));
  CHECK(peak_frequency(x, fs) == doctest::Approx(f).epsilon(1e-4));
}

TEST_CASE("DC offset is removed only on request") {
  std::vector<double> x(4096, 3.0);
  WelchConfig cfg = WelchConfig::for_duration(5.12, 100.0);
  CHECK(welch_psd(x, 100.0, cfg).density[0] > 0.0);
  cfg.remove_mean = true;
  CHECK(welch_psd(x, 100.0, cfg).density[0] == doctest::Approx(0.0));
}

TEST_CASE("streaming accumulator equals the batch estimate") {
  const auto x = white(30000, 1.0, 3);
  const auto cfg = WelchConfig::for_duration(20.0, 100.0);
  WelchAccumulator acc(100.0, cfg);
  for (std::size_t i = 0; i < x.size(); i += 777)
    acc.push(std::span<const double>(x.data() + i, std::min<std::size_t>(777, x.size() - i)));
  const auto a = acc.finish();
  const auto b = welch_psd(x, 100.0, cfg);
  REQUIRE(a.density.size() == b.density.size());
  CHECK(a.segments == b.segments);
  for (std::size_t k = 0; k < a.density.size(); ++k) CHECK(a.density[k] == doctest::Approx(b.density[k]).epsilon(1e-12));
}

TEST_CASE("FFT-friendly lengths") {
  CHECK(fft_friendly_length(1) == 2);
  CHECK(fft_friendly_length(1000) == 1000);
  CHECK(fft_friendly_length(1021) == 1024);
  auto smooth_even = [](std::size_t m) {
    if (m % 2 != 0) return false;
    for (std::size_t q : {2u, 3u, 5u, 7u})
      while (m % q == 0) m /= q;
    return m == 1;
  };
  for (std::size_t n : {17u, 1001u, 65537u, 75399u, 753983u}) {
    std::size_t want = n;
    while (!smooth_even(want)) ++want;
    CHECK(fft_friendly_length(n) == want);
  }
}

TEST_CASE("spectral configuration errors") {
  std::vector<double> x(100, 0.0);
  CHECK_THROWS_AS(welch_psd(x, 100.0, WelchConfig::for_duration(10.0, 100.0)), ConfigError);
  WelchConfig cfg;
  cfg.segment_length = 64;
  cfg.overlap = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  WelchAccumulator acc(100.0, WelchConfig::for_duration(1.0, 100.0));
  CHECK_THROWS_AS(acc.finish(), ConfigError);
}
