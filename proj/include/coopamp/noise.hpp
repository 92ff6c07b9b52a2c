#pragma once

namespace coopamp {

// One-sided amplitude spectral densities, tesla per root hertz.
struct NoiseModel {
  // Magnetometer readout noise. Added to the recorded signal only; never
  // enters the spin dynamics.
  double photon_shot = 0.0;
  // Genuine field noise along the drive axis. Drives the spins and is
  // amplified exactly like a signal.
  double magnetic = 0.0;
  // Reference level only, not simulated.
  double spin_projection = 0.0;

  void validate() const;
  bool silent() const noexcept { return photon_shot == 0.0 && magnetic == 0.0; }

  static NoiseModel measured_levels() noexcept { return {7.3e-12, 3.2e-15, 8.7e-15}; }
};

}  // namespace coopamp
