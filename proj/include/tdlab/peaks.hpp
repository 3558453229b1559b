#pragma once

// Peak detection and classification on sample-wise loss profiles.

#include <span>
#include <string>
#include <vector>

namespace tdlab::orchestrator {

enum class PeakClass { Linear, Nonlinear, Other };
const char* to_string(PeakClass c);

inline constexpr double kPeakClassWindowDex = 0.25;
inline constexpr double kPeakProminenceSigmas = 2.0;
inline constexpr std::size_t kMinPeakGrid = 7;

struct Peak {
  double n = 0.0;          ///< N at the peak
  double n_over_d = 0.0;
  double height = 0.0;     ///< smoothed loss at the peak
  double prominence = 0.0;
  double width_dex = 0.0;  ///< width at half prominence, in decades of N
  double stderr = 0.0;     ///< standard error used for the significance test
  std::size_t index = 0;
  PeakClass cls = PeakClass::Other;
};

struct PeakReport {
  std::vector<Peak> peaks;
  std::vector<double> smoothed;
  int count(PeakClass c) const;
};

/// |log10(N/D)| < |log10(N/P)| and within 0.25 dex of D: Linear; the mirror
/// image for P: Nonlinear; anything else: Other.
PeakClass classify_peak(double n, double D, double P);

/// Local maxima of the 3-point median-smoothed profile over log N (the
/// grid must be increasing), kept when their topographic prominence
/// exceeds 2x the standard error at the peak. Plateaus count once, located
/// at the largest raw value. End points are never peaks.
/// Throws InsufficientGridError with fewer than 7 points or a grid that does
/// not span both N = D and N = P.
PeakReport detect_peaks(std::span<const double> n, std::span<const double> loss,
                        std::span<const double> stderr, double D, double P);

}  // namespace tdlab::orchestrator
