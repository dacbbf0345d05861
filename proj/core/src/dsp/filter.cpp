#include "eegscribe/dsp/filter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "eegscribe/errors.hpp"

namespace eegscribe::dsp {

using cplx = std::complex<double>;

SosFilter design_butter_bandpass(double low_hz, double high_hz, int order, double sample_rate) {
  const double nyquist = sample_rate / 2.0;
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist)) {
    throw ParameterError("band-pass cutoffs must satisfy 0 < low < high < Nyquist (" + std::to_string(nyquist) +
                         " Hz)");
  }
  if (order < 1) throw ParameterError("filter order must be positive");
  const double pi = std::numbers::pi;
  const double fs2 = 2.0 * sample_rate;
  const double wl = fs2 * std::tan(pi * low_hz / sample_rate);
  const double wh = fs2 * std::tan(pi * high_hz / sample_rate);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  // Analog low-pass prototype, shifted to the band, then mapped to z.
  std::vector<cplx> analog;
  for (int k = 0; k < order; ++k) {
    const double theta = pi * static_cast<double>(2 * k + 1 + order) / (2.0 * order);
    const cplx p = std::polar(1.0, theta);
    const cplx a = p * (bw / 2.0);
    const cplx d = std::sqrt(a * a - w0sq);
    analog.push_back(a + d);
    analog.push_back(a - d);
  }
  SosFilter f;
  f.sample_rate = sample_rate;
  cplx denom = 1.0;
  for (const auto& p : analog) {
    f.poles.push_back((fs2 + p) / (fs2 - p));
    denom *= (fs2 - p);
  }
  // Band-pass zeros: `order` at s = 0 → z = 1, `order` at infinity → z = −1.
  f.gain = std::real(std::pow(cplx(bw * fs2), order) / denom);

  std::vector<cplx> upper;
  std::vector<double> real_poles;
  for (const auto& p : f.poles) {
    if (std::abs(p.imag()) < 1e-14 * std::abs(p)) {
      real_poles.push_back(p.real());
    } else if (p.imag() > 0.0) {
      upper.push_back(p);
    }
  }
  std::sort(upper.begin(), upper.end(), [](const cplx& a, const cplx& b) { return std::abs(a) < std::abs(b); });
  std::sort(real_poles.begin(), real_poles.end());
  for (const auto& p : upper) {
    f.sections.push_back(Biquad{1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    f.sections.push_back(
        Biquad{1.0, 0.0, -1.0, -(real_poles[i] + real_poles[i + 1]), real_poles[i] * real_poles[i + 1]});
  }
  if (f.sections.size() != static_cast<std::size_t>(order)) {
    throw ContractError("band-pass design produced an unexpected pole layout");
  }
  f.sections.front().b0 *= f.gain;
  f.sections.front().b2 *= f.gain;
  return f;
}

std::size_t SosFilter::transient_samples() const {
  double r = 0.0;
  for (const auto& p : poles) r = std::max(r, std::abs(p));
  if (r <= 0.0) return 1;
  return static_cast<std::size_t>(std::ceil(std::log(1e-3) / std::log(r)));
}

double SosFilter::magnitude(double hz) const {
  const cplx z = std::polar(1.0, -2.0 * std::numbers::pi * hz / sample_rate);  // z^{-1}
  cplx h = 1.0;
  for (const auto& s : sections) {
    h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
  }
  return std::abs(h);
}

std::vector<std::array<double, 2>> sos_steady_state(const SosFilter& filter) {
  std::vector<std::array<double, 2>> zi;
  double level = 1.0;
  for (const auto& s : filter.sections) {
    const double y = level * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z2 = s.b2 * level - s.a2 * y;
    const double z1 = s.b1 * level - s.a1 * y + z2;
    zi.push_back({z1, z2});
    level = y;
  }
  return zi;
}

std::vector<double> sos_filter(const SosFilter& filter, std::span<const double> x,
                               std::vector<std::array<double, 2>> state) {
  if (state.size() != filter.sections.size()) throw DimensionError("sos_filter: one state pair per section required");
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t k = 0; k < filter.sections.size(); ++k) {
    const Biquad& s = filter.sections[k];
    double z1 = state[k][0], z2 = state[k][1];
    for (auto& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> filtfilt(const SosFilter& filter, std::span<const double> x) {
  const std::size_t pad = filter.transient_samples();
  const std::size_t n = x.size();
  if (n < 3 * pad) {
    throw ContractError("filtfilt: " + std::to_string(n) + " samples is shorter than three transient lengths (" +
                        std::to_string(3 * pad) + ")");
  }
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi = sos_steady_state(filter);
  auto scaled = [&zi](double level) {
    auto s = zi;
    for (auto& p : s) {
      p[0] *= level;
      p[1] *= level;
    }
    return s;
  };
  auto fwd = sos_filter(filter, ext, scaled(ext.front()));
  std::reverse(fwd.begin(), fwd.end());
  auto bwd = sos_filter(filter, fwd, scaled(fwd.front()));
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(pad), bwd.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

nx::Tensor butter_bandpass(const nx::Tensor& eeg, double low_hz, double high_hz, int order, double sample_rate) {
  if (eeg.rank() != 2) throw DimensionError("butter_bandpass: expected [channels × samples]");
  const auto filter = design_butter_bandpass(low_hz, high_hz, order, sample_rate);
  const std::size_t c = eeg.dim(0), s = eeg.dim(1);
  nx::Tensor out({c, s});
  for (std::size_t ch = 0; ch < c; ++ch) {
    auto row = filtfilt(filter, eeg.data().subspan(ch * s, s));
    std::copy(row.begin(), row.end(), out.data().begin() + static_cast<std::ptrdiff_t>(ch * s));
  }
  return out;
}

}  // namespace eegscribe::dsp
