#include "tdlab/peaks.hpp"

#include <algorithm>
#include <cmath>

#include "tdlab/errors.hpp"

namespace tdlab::orchestrator {

const char* to_string(PeakClass c) {
  switch (c) {
    case PeakClass::Linear: return "linear";
    case PeakClass::Nonlinear: return "nonlinear";
    case PeakClass::Other: break;
  }
  return "other";
}

int PeakReport::count(PeakClass c) const {
  return static_cast<int>(std::count_if(peaks.begin(), peaks.end(),
                                        [c](const Peak& p) { return p.cls == c; }));
}

PeakClass classify_peak(double n, double D, double P) {
  const double ld = std::abs(std::log10(n / D)), lp = std::abs(std::log10(n / P));
  if (ld < lp && ld <= kPeakClassWindowDex) return PeakClass::Linear;
  if (lp < ld && lp <= kPeakClassWindowDex) return PeakClass::Nonlinear;
  return PeakClass::Other;
}

namespace {

double median3(double a, double b, double c) { return std::max(std::min(a, b), std::min(std::max(a, b), c)); }

// log10 N where the segment (i, j) crosses level, linear in log N
double crossing(std::span<const double> logn, const std::vector<double>& s, std::size_t i,
                std::size_t j, double level) {
  const double t = (level - s[i]) / (s[j] - s[i]);
  return logn[i] + t * (logn[j] - logn[i]);
}

}  // namespace

PeakReport detect_peaks(std::span<const double> n, std::span<const double> loss,
                        std::span<const double> stderr, double D, double P) {
  const std::size_t m = n.size();
  if (loss.size() != m || stderr.size() != m) throw ConfigError("profile arrays differ in length");
  if (m < kMinPeakGrid) throw InsufficientGridError("peak detection needs at least 7 grid points");
  for (std::size_t i = 1; i < m; ++i)
    if (!(n[i] > n[i - 1])) throw ConfigError("profile grid must be strictly increasing");
  if (n.front() > std::min(D, P) || n.back() < std::max(D, P))
    throw InsufficientGridError("profile grid does not span N = D and N = P");
  for (std::size_t i = 0; i < m; ++i)
    if (!std::isfinite(loss[i])) throw InputError("non-finite loss in profile");

  PeakReport rep;
  auto& s = rep.smoothed;
  s.resize(m);
  s.front() = loss.front();
  s.back() = loss.back();
  for (std::size_t i = 1; i + 1 < m; ++i) s[i] = median3(loss[i - 1], loss[i], loss[i + 1]);
  std::vector<double> logn(m);
  for (std::size_t i = 0; i < m; ++i) logn[i] = std::log10(n[i]);

  for (std::size_t a = 1; a + 1 < m;) {
    std::size_t b = a;
    while (b + 1 < m && s[b + 1] == s[a]) ++b;
    const bool top = s[a - 1] < s[a] && b + 1 < m && s[b + 1] < s[a];
    if (!top) {
      a = b + 1;
      continue;
    }
    const double h = s[a];
    std::size_t l = a, r = b;
    double lmin = h, rmin = h;
    while (l > 0 && s[l - 1] <= h) lmin = std::min(lmin, s[--l]);
    while (r + 1 < m && s[r + 1] <= h) rmin = std::min(rmin, s[++r]);
    const double base = std::max(lmin, rmin);
    std::size_t at = a;
    for (std::size_t k = a; k <= b; ++k)
      if (loss[k] > loss[at]) at = k;

    Peak pk;
    pk.index = at;
    pk.n = n[at];
    pk.n_over_d = n[at] / D;
    pk.height = h;
    pk.prominence = h - base;
    pk.stderr = stderr[at];
    const double half = h - pk.prominence / 2;
    std::size_t i = a;
    while (i > 0 && s[i - 1] > half) --i;
    const double left = i > 0 ? crossing(logn, s, i - 1, i, half) : logn.front();
    std::size_t j = b;
    while (j + 1 < m && s[j + 1] > half) ++j;
    const double right = j + 1 < m ? crossing(logn, s, j, j + 1, half) : logn.back();
    pk.width_dex = right - left;
    pk.cls = classify_peak(pk.n, D, P);
    if (pk.prominence > kPeakProminenceSigmas * pk.stderr) rep.peaks.push_back(pk);
    a = b + 1;
  }
  return rep;
}

}  // namespace tdlab::orchestrator
