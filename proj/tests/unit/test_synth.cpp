#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Dense>

#include "eegscribe/errors.hpp"
#include "eegscribe/synth/synthgen.hpp"

using namespace eegscribe;
using namespace eegscribe::synth;

namespace {

SynthConfig small(std::uint64_t seed = 42, double snr = 5.0) {
  SynthConfig cfg;
  cfg.n_repetitions = 1;
  cfg.seed = seed;
  cfg.snr_db = snr;
  return cfg;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const nx::Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.numel() / t.dim(0))};
}

}  // namespace

TEST_CASE("noise-free trajectories follow the template exactly") {
  const auto& tmpl = character_templates()[0];
  std::mt19937_64 a(1), b(2);
  const auto p = gen_character_trajectory(tmpl, 0.0, a);
  const auto q = gen_character_trajectory(tmpl, 0.0, b);
  REQUIRE(p.size() == 250);
  for (std::size_t i = 0; i < p.size(); ++i) {
    REQUIRE(p[i].x == q[i].x);
    REQUIRE(p[i].y == q[i].y);
    REQUIRE(p[i].velocity == q[i].velocity);
  }
  CHECK(p.front().x == tmpl.stroke.front().x);
  CHECK(p.front().y == tmpl.stroke.front().y);
  CHECK(p.back().x == doctest::Approx(tmpl.stroke.back().x));
  CHECK(p.back().y == doctest::Approx(tmpl.stroke.back().y));
  for (const auto& s : p) CHECK(s.pressure > 0.0);
}

TEST_CASE("velocity is the central-difference speed") {
  std::mt19937_64 rng(5);
  for (const auto& tmpl : character_templates()) {
    const auto p = gen_character_trajectory(tmpl, 0.02, rng);
    for (std::size_t i = 1; i + 1 < p.size(); ++i) {
      const double dx = (p[i + 1].x - p[i - 1].x) * 125.0;
      const double dy = (p[i + 1].y - p[i - 1].y) * 125.0;
      REQUIRE(std::abs(p[i].velocity - std::sqrt(dx * dx + dy * dy)) < 1e-9);
    }
    const double d0 = std::sqrt(std::pow(p[1].x - p[0].x, 2) + std::pow(p[1].y - p[0].y, 2)) * 250.0;
    CHECK(std::abs(p[0].velocity - d0) < 1e-9);
  }
}

TEST_CASE("glyph templates are pairwise distinct") {
  std::mt19937_64 rng(0);
  std::vector<std::vector<dsp::KinematicSample>> all;
  for (const auto& tmpl : character_templates()) {
    CHECK(tmpl.stroke.size() >= 2);
    all.push_back(gen_character_trajectory(tmpl, 0.0, rng));
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      double dist = 0.0;
      for (std::size_t t = 0; t < 250; ++t) {
        dist = std::max(dist, std::hypot(all[i][t].x - all[j][t].x, all[i][t].y - all[j][t].y));
      }
      CHECK(dist > 0.0);
    }
  }
}

TEST_CASE("one repetition writes the twelve glyphs of the phrase") {
  const auto s = gen_session(small());
  std::size_t downs = 0, ups = 0;
  std::map<int, int> freq;
  for (const auto& e : s.session.events) {
    if (e.kind == dsp::PenEventKind::pen_down) {
      ++downs;
      ++freq[e.char_class];
    } else {
      ++ups;
    }
  }
  CHECK(downs == 12);
  CHECK(ups == 12);
  CHECK(freq[2] == 3);  // L
  CHECK(freq[3] == 2);  // O
  for (int c : {0, 1, 4, 5, 6, 7, 8}) CHECK(freq[c] == 1);
  CHECK(s.session.channels() == 32);
}

TEST_CASE("generation is seed-deterministic") {
  const auto a = gen_session(small(7));
  const auto b = gen_session(small(7));
  const auto c = gen_session(small(8));
  CHECK(a.session.eeg.identical(b.session.eeg));
  CHECK(a.truth.sources.identical(b.truth.sources));
  CHECK_FALSE(a.session.eeg.identical(c.session.eeg));
}

TEST_CASE("noiseless sessions unmix exactly") {
  const auto s = gen_session(small(3, std::numeric_limits<double>::infinity()));
  const RowMat a = view(s.truth.mixing);
  const RowMat x = view(s.session.eeg);
  const RowMat recovered = a.completeOrthogonalDecomposition().pseudoInverse() * x;
  CHECK((recovered - view(s.truth.sources)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("noise level matches the requested snr") {
  const auto noisy = gen_session(small(11, 5.0));
  const auto clean = gen_session(small(11, std::numeric_limits<double>::infinity()));
  const RowMat noise = view(noisy.session.eeg) - view(clean.session.eeg);
  CHECK(std::sqrt(noise.squaredNorm() / static_cast<double>(noise.size())) ==
        doctest::Approx(noisy.truth.noise_std).epsilon(1e-9));

  // signal power measured independently over the pen-down windows
  double power = 0.0;
  std::size_t count = 0;
  const auto& a = clean.truth.mixing;
  const std::size_t k = a.dim(1) - 1;
  const RowMat signal = view(a).leftCols(static_cast<Eigen::Index>(k)) *
                        view(clean.truth.sources).topRows(static_cast<Eigen::Index>(k));
  for (const auto& e : clean.session.events) {
    if (e.kind != dsp::PenEventKind::pen_down) continue;
    const auto block = signal.middleCols(static_cast<Eigen::Index>(e.sample_index), 250);
    power += block.squaredNorm();
    count += static_cast<std::size_t>(block.size());
  }
  power /= static_cast<double>(count);
  CHECK(10.0 * std::log10(power / std::pow(noisy.truth.noise_std, 2)) == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("class signal is concentrated in the class band") {
  const auto s = gen_session(small(19, std::numeric_limits<double>::infinity()));
  const auto& src = s.truth.sources;
  const std::size_t n = src.dim(1), k = src.dim(0) - 1;
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (std::size_t t = 0; t < n; ++t) total += src.at(j, t) * src.at(j, t);
    // Parseval: sum of |X_m|^2 over all bins equals n * total.
    double in_band = 0.0;
    const auto m_lo = static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(n) / 250.0));
    const auto m_hi = static_cast<std::size_t>(std::floor(8.0 * static_cast<double>(n) / 250.0));
    for (std::size_t m = m_lo; m <= m_hi; ++m) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        acc += src.at(j, t) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(m * t % n) /
                                                  static_cast<double>(n));
      }
      in_band += 2.0 * std::norm(acc);  // positive and mirrored negative bin
    }
    CHECK(in_band / (static_cast<double>(n) * total) >= 0.95);
  }
}

TEST_CASE("noiseless class means are separated") {
  SynthConfig cfg = small(23, std::numeric_limits<double>::infinity());
  cfg.n_repetitions = 3;
  const auto s = gen_session(cfg);
  std::vector<Eigen::MatrixXd> mean(9, Eigen::MatrixXd::Zero(32, 250));
  std::vector<int> count(9, 0);
  const RowMat x = view(s.session.eeg);
  for (const auto& e : s.session.events) {
    if (e.kind != dsp::PenEventKind::pen_down) continue;
    mean[static_cast<std::size_t>(e.char_class)] += x.middleCols(static_cast<Eigen::Index>(e.sample_index), 250);
    ++count[static_cast<std::size_t>(e.char_class)];
  }
  double scale = 0.0;
  for (std::size_t c = 0; c < 9; ++c) {
    mean[c] /= count[c];
    scale = std::max(scale, mean[c].norm());
  }
  for (std::size_t a = 0; a < 9; ++a) {
    for (std::size_t b = a + 1; b < 9; ++b) CHECK((mean[a] - mean[b]).norm() > 0.1 * scale);
  }
}

TEST_CASE("session files load back") {
  const auto s = gen_session(small(2));
  const auto dir = std::filesystem::temp_directory_path() / "eegscribe_test_synth";
  std::filesystem::remove_all(dir);
  const auto paths = write_session(dir, s);
  for (const auto& p : paths) CHECK(std::filesystem::exists(p));
  const auto back = dsp::load_session(dir / "eeg.stk", dir / "events.csv", dir / "kinematics.csv");
  CHECK(back.eeg.identical(s.session.eeg));
  REQUIRE(back.events.size() == s.session.events.size());
  for (std::size_t i = 0; i < back.events.size(); ++i) {
    CHECK(back.events[i].sample_index == s.session.events[i].sample_index);
    CHECK(back.events[i].char_class == s.session.events[i].char_class);
  }
  REQUIRE(back.kinematics.size() == s.session.kinematics.size());
  for (std::size_t i = 0; i < back.kinematics.size(); ++i) REQUIRE(back.kinematics[i].x == s.session.kinematics[i].x);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid configurations are rejected") {
  SynthConfig cfg;
  cfg.n_repetitions = 0;
  CHECK_THROWS_AS(gen_session(cfg), ParameterError);
  cfg = SynthConfig{};
  cfg.snr_db = std::nan("");
  CHECK_THROWS_AS(gen_session(cfg), ParameterError);
}
