#include "eegscribe/synth/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/stk_io.hpp"

namespace eegscribe::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kGlyph = dsp::kEpochSamples;

std::vector<Point> circle(double cx, double cy, double r, int n) {
  std::vector<Point> p;
  for (int i = 0; i <= n; ++i) {
    const double a = kPi / 2.0 + 2.0 * kPi * i / n;
    p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return p;
}

CharacterTemplate make_template(int cls, std::vector<Point> stroke) {
  CharacterTemplate t;
  t.char_class = cls;
  t.stroke = std::move(stroke);
  const double wobble = 1.0 + static_cast<double>(cls % 3);
  for (std::size_t i = 0; i < kGlyph; ++i) {
    const double u = static_cast<double>(i) / static_cast<double>(kGlyph - 1);
    const double s = std::sin(kPi * u);
    t.speed.push_back(0.25 + s * s * (1.0 + 0.2 * std::cos(2.0 * kPi * wobble * u)));
    t.pressure.push_back(0.3 + 0.05 * cls + 0.5 * s);
  }
  return t;
}

// Seeds a generator for one independent aspect of the session so that, e.g.,
// changing the noise level leaves the class structure untouched.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

// 1/f noise: white noise through Kellet's refined pink filter.
std::vector<double> pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  std::array<double, 7> b{};
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n + 2000; ++i) {
    const double w = white(rng);
    b[0] = 0.99886 * b[0] + w * 0.0555179;
    b[1] = 0.99332 * b[1] + w * 0.0750759;
    b[2] = 0.96900 * b[2] + w * 0.1538520;
    b[3] = 0.86650 * b[3] + w * 0.3104856;
    b[4] = 0.55000 * b[4] + w * 0.5329522;
    b[5] = -0.7616 * b[5] - w * 0.0168980;
    const double v = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
    b[6] = w * 0.115926;
    if (i >= 2000) out[i - 2000] = v;
  }
  const double m = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double& v : out) {
    v -= m;
    var += v * v;
  }
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (double& v : out) v /= sd;
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_repetitions < 1) throw ParameterError("synth: n_repetitions must be at least 1");
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity()) {
    throw ParameterError("synth: snr_db must be a number or +inf");
  }
  if (!(class_band[0] > 0.0 && class_band[1] < dsp::kSampleRate / 2.0 && class_band[1] - class_band[0] > 4.5)) {
    throw ParameterError("synth: class band must lie in (0, 125) Hz and span more than 4.5 Hz");
  }
  if (latent_sources < 1) throw ParameterError("synth: need at least one latent source");
  if (trajectory_jitter < 0.0) throw ParameterError("synth: trajectory jitter must be non-negative");
  if (frontal_channel >= dsp::kChannels) throw ParameterError("synth: frontal channel out of range");
  if (!(class_contrast > 0.0)) throw ParameterError("synth: class contrast must be positive");
  if (max_latency_jitter > 100 || amplitude_jitter < 0.0) throw ParameterError("synth: trial jitter out of range");
}

const std::array<CharacterTemplate, dsp::kNumClasses>& character_templates() {
  static const std::array<CharacterTemplate, dsp::kNumClasses> templates = [] {
    auto o = circle(0.5, 0.5, 0.5, 24);
    return std::array<CharacterTemplate, dsp::kNumClasses>{
        make_template(0, {{0, 1}, {0, 0}, {0, 0.5}, {1, 0.5}, {1, 1}, {1, 0}}),
        make_template(1, {{1, 1}, {0, 1}, {0, 0.5}, {0.8, 0.5}, {0, 0.5}, {0, 0}, {1, 0}}),
        make_template(2, {{0, 1}, {0, 0}, {0.8, 0}}),
        make_template(3, o),
        make_template(4, {{0.5, 0.2}, {0.55, 0.1}, {0.5, -0.05}, {0.35, -0.25}}),
        make_template(5, {{0, 1}, {0.25, 0}, {0.5, 0.6}, {0.75, 0}, {1, 1}}),
        make_template(6, {{0, 0}, {0, 1}, {0.7, 1}, {0.85, 0.8}, {0.7, 0.55}, {0, 0.5}, {0.8, 0}}),
        make_template(7, {{0, 0}, {0, 1}, {0.5, 1}, {0.9, 0.7}, {0.9, 0.3}, {0.5, 0}, {0, 0}}),
        make_template(8, {{0.5, 1}, {0.5, 0.3}, {0.45, 0.12}, {0.5, 0.05}, {0.55, 0.12}}),
    };
  }();
  return templates;
}

std::vector<dsp::KinematicSample> gen_character_trajectory(const CharacterTemplate& tmpl, double jitter,
                                                           std::mt19937_64& rng) {
  if (tmpl.stroke.size() < 2 || tmpl.speed.size() != kGlyph || tmpl.pressure.size() != kGlyph) {
    throw ContractError("character template needs ≥ 2 vertices and 250-sample profiles");
  }
  if (jitter < 0.0) throw ParameterError("trajectory jitter must be non-negative");
  std::vector<double> arc{0.0};
  for (std::size_t i = 1; i < tmpl.stroke.size(); ++i) {
    arc.push_back(arc.back() + std::hypot(tmpl.stroke[i].x - tmpl.stroke[i - 1].x, tmpl.stroke[i].y - tmpl.stroke[i - 1].y));
  }
  // progress[i] ∈ [0, 1]: cumulative speed, so the pen covers ground at the profile's pace
  std::vector<double> progress(kGlyph, 0.0);
  for (std::size_t i = 1; i < kGlyph; ++i) progress[i] = progress[i - 1] + tmpl.speed[i - 1];
  const double total = progress.back();

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<dsp::KinematicSample> out(kGlyph);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < kGlyph; ++i) {
    const double s = (i + 1 == kGlyph) ? arc.back() : arc.back() * progress[i] / total;
    while (seg + 2 < arc.size() && arc[seg + 1] < s) ++seg;
    const double len = arc[seg + 1] - arc[seg];
    const double f = len > 0.0 ? std::clamp((s - arc[seg]) / len, 0.0, 1.0) : 0.0;
    const Point& a = tmpl.stroke[seg];
    const Point& b = tmpl.stroke[seg + 1];
    out[i].sample_index = i;
    out[i].x = a.x + f * (b.x - a.x);
    out[i].y = a.y + f * (b.y - a.y);
    if (jitter > 0.0) {
      out[i].x += jitter * noise(rng);
      out[i].y += jitter * noise(rng);
    }
    out[i].pressure = tmpl.pressure[i];
  }
  for (std::size_t i = 0; i < kGlyph; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == kGlyph ? i : i + 1;
    const double dt = static_cast<double>(hi - lo) / dsp::kSampleRate;
    out[i].velocity = std::hypot(out[hi].x - out[lo].x, out[hi].y - out[lo].y) / dt;
  }
  return out;
}

SynthSession gen_session(const SynthConfig& config) {
  config.validate();
  const std::size_t c = dsp::kChannels;
  const std::size_t k = config.latent_sources;
  auto structure = stream(config.seed, 1);
  auto timing = stream(config.seed, 2);
  auto variability = stream(config.seed, 3);
  auto blink_rng = stream(config.seed, 4);
  auto noise_rng = stream(config.seed, 5);
  auto pen_rng = stream(config.seed, 6);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthSession out;
  GroundTruth& truth = out.truth;
  truth.mixing = nx::Tensor({c, k + 1});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j < k; ++j) truth.mixing.at(ch, j) = normal(structure);
    truth.mixing.at(ch, k) = 0.05 * normal(structure);
  }
  // Blink column: dominant on the frontal channel, weaker on its neighbours.
  truth.mixing.at(config.frontal_channel, k) = 1.0;
  for (std::size_t d = 1; d <= 2; ++d) truth.mixing.at((config.frontal_channel + d) % c, k) = 0.5;

  const double f_lo = config.class_band[0] + 2.0, f_hi = config.class_band[1] - 2.5;
  std::uniform_real_distribution<double> freq(f_lo, f_hi), amp(0.5, 1.5), phase(0.0, 2.0 * kPi);
  // Every class shares an evoked response; class identity is carried by a
  // weaker class-specific component scaled by class_contrast.
  auto burst = [&](std::vector<double>& out, double weight) {
    const double f = freq(structure), a = amp(structure) * (structure() % 2 ? 1.0 : -1.0), ph = phase(structure);
    for (std::size_t t = 0; t < kGlyph; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(kGlyph);
      const double hann = std::pow(std::sin(kPi * u), 2);
      out[t] += weight * a * hann * std::sin(2.0 * kPi * f * static_cast<double>(t) / dsp::kSampleRate + ph);
    }
  };
  std::vector<std::vector<double>> common(k, std::vector<double>(kGlyph, 0.0));
  for (auto& row : common) burst(row, 1.0);
  truth.class_waveforms = nx::Tensor({static_cast<std::size_t>(dsp::kNumClasses), k, kGlyph});
  for (int cls = 0; cls < dsp::kNumClasses; ++cls) {
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> w = common[j];
      burst(w, config.class_contrast);
      for (std::size_t t = 0; t < kGlyph; ++t) truth.class_waveforms.at(static_cast<std::size_t>(cls), j, t) = w[t];
    }
  }

  // Event timing: 12 glyphs per repetition, a longer pause between repetitions.
  std::uniform_int_distribution<std::size_t> gap(60, 140);
  std::vector<std::size_t> starts;
  std::vector<int> classes;
  std::vector<std::size_t> slots;
  std::size_t t = 500;
  for (std::size_t r = 0; r < config.n_repetitions; ++r) {
    for (std::size_t i = 0; i < dsp::kPhraseClasses.size(); ++i) {
      starts.push_back(t);
      classes.push_back(dsp::kPhraseClasses[i]);
      slots.push_back(i);
      t += kGlyph + gap(timing);
    }
    t += kGlyph;
  }
  const std::size_t s = t + 500;

  truth.sources = nx::Tensor({k + 1, s});
  std::uniform_int_distribution<int> latency(-static_cast<int>(config.max_latency_jitter),
                                              static_cast<int>(config.max_latency_jitter));
  for (std::size_t n = 0; n < starts.size(); ++n) {
    const double gain = 1.0 + config.amplitude_jitter * normal(variability);
    const auto t0 = static_cast<std::size_t>(static_cast<long>(starts[n]) + latency(variability));
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t u = 0; u < kGlyph; ++u) {
        truth.sources.at(j, t0 + u) += gain * truth.class_waveforms.at(static_cast<std::size_t>(classes[n]), j, u);
      }
    }
  }

  // Class-signal power on the scalp during pen-down windows sets the scale of
  // both the blink and the background.
  double power = 0.0;
  for (std::size_t n : starts) {
    for (std::size_t u = 0; u < kGlyph; ++u) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) v += truth.mixing.at(ch, j) * truth.sources.at(j, n + u);
        power += v * v;
      }
    }
  }
  power /= static_cast<double>(starts.size() * kGlyph * c);
  const double rms = std::sqrt(power);

  std::uniform_int_distribution<std::size_t> blink_gap(750, 1500);
  constexpr std::size_t kBlink = 75;
  for (std::size_t b = blink_gap(blink_rng); b + kBlink < s; b += blink_gap(blink_rng)) {
    for (std::size_t u = 0; u < kBlink; ++u) {
      truth.sources.at(k, b + u) =
          config.blink_amplitude * rms * 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(u) / kBlink));
    }
  }

  nx::Tensor eeg({c, s});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t j = 0; j <= k; ++j) {
      const double m = truth.mixing.at(ch, j);
      for (std::size_t u = 0; u < s; ++u) eeg.at(ch, u) += m * truth.sources.at(j, u);
    }
  }
  if (std::isfinite(config.snr_db)) {
    truth.noise_std = rms / std::pow(10.0, config.snr_db / 20.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto pink = pink_noise(s, noise_rng);
      for (std::size_t u = 0; u < s; ++u) eeg.at(ch, u) += truth.noise_std * pink[u];
    }
  }

  dsp::RawSession& session = out.session;
  session.eeg = std::move(eeg);
  const auto& templates = character_templates();
  for (std::size_t n = 0; n < starts.size(); ++n) {
    const std::size_t rep = n / dsp::kPhraseClasses.size();
    session.events.push_back({starts[n], dsp::PenEventKind::pen_down, classes[n]});
    session.events.push_back({starts[n] + kGlyph - 1, dsp::PenEventKind::pen_up, classes[n]});
    auto traj = gen_character_trajectory(templates[static_cast<std::size_t>(classes[n])], config.trajectory_jitter,
                                         pen_rng);
    for (auto& p : traj) {
      p.sample_index += starts[n];
      p.x += 1.5 * static_cast<double>(slots[n]);
      p.y -= 2.0 * static_cast<double>(rep);
      session.kinematics.push_back(p);
    }
  }
  session.validate();
  return out;
}

std::vector<std::filesystem::path> write_session(const std::filesystem::path& dir, const SynthSession& s) {
  std::filesystem::create_directories(dir);
  const std::vector<std::filesystem::path> paths{dir / "eeg.stk",          dir / "events.csv",
                                                 dir / "kinematics.csv",   dir / "truth_mixing.stk",
                                                 dir / "truth_sources.stk", dir / "truth_waveforms.stk"};
  nx::write_stk(paths[0], s.session.eeg);
  dsp::write_events_csv(paths[1], s.session.events);
  dsp::write_kinematics_csv(paths[2], s.session.kinematics);
  nx::write_stk(paths[3], s.truth.mixing);
  nx::write_stk(paths[4], s.truth.sources);
  nx::write_stk(paths[5], s.truth.class_waveforms);
  return paths;
}

}  // namespace eegscribe::synth
