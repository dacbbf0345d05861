#include "eegscribe/dsp/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "eegscribe/dsp/filter.hpp"
#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/stk_io.hpp"

namespace eegscribe::dsp {

nx::Tensor average_reference(const nx::Tensor& eeg) {
  if (eeg.rank() != 2) throw DimensionError("average_reference: expected [channels × samples]");
  const std::size_t c = eeg.dim(0), s = eeg.dim(1);
  if (c < 2) throw ContractError("average_reference: needs at least two channels");
  nx::Tensor out = eeg;
  for (std::size_t t = 0; t < s; ++t) {
    double m = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) m += eeg.at(ch, t);
    m /= static_cast<double>(c);
    for (std::size_t ch = 0; ch < c; ++ch) out.at(ch, t) -= m;
  }
  return out;
}

nx::Tensor normalize_trajectory(std::span<const KinematicSample> segment) {
  if (segment.size() < 2) throw ContractError("normalize_trajectory: segment needs at least two samples");
  const double t0 = static_cast<double>(segment.front().sample_index);
  const double t1 = static_cast<double>(segment.back().sample_index);
  for (std::size_t i = 1; i < segment.size(); ++i) {
    if (segment[i].sample_index < segment[i - 1].sample_index) {
      throw ContractError("normalize_trajectory: kinematic samples out of time order");
    }
  }
  if (!(t1 > t0)) throw ContractError("normalize_trajectory: segment spans no time");

  constexpr std::size_t n = kEpochSamples;
  nx::Tensor out({kKinematicRows, n});
  std::size_t j = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double tq = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n - 1);
    while (j + 2 < segment.size() && static_cast<double>(segment[j + 1].sample_index) < tq) ++j;
    const auto& a = segment[j];
    const auto& b = segment[j + 1];
    const double ta = static_cast<double>(a.sample_index), tb = static_cast<double>(b.sample_index);
    const double f = tb > ta ? std::clamp((tq - ta) / (tb - ta), 0.0, 1.0) : 0.0;
    out.at(0, k) = a.x + f * (b.x - a.x);
    out.at(1, k) = a.y + f * (b.y - a.y);
    out.at(2, k) = a.pressure + f * (b.pressure - a.pressure);
    out.at(3, k) = a.velocity + f * (b.velocity - a.velocity);
  }
  const double x0 = out.at(0, 0), y0 = out.at(1, 0);
  for (std::size_t k = 0; k < n; ++k) {
    out.at(0, k) -= x0;
    out.at(1, k) -= y0;
  }
  for (std::size_t r = 0; r < kKinematicRows; ++r) {
    double lo = out.at(r, 0), hi = out.at(r, 0);
    for (std::size_t k = 1; k < n; ++k) {
      lo = std::min(lo, out.at(r, k));
      hi = std::max(hi, out.at(r, k));
    }
    const double range = hi - lo;
    for (std::size_t k = 0; k < n; ++k) out.at(r, k) = range > 1e-12 ? (out.at(r, k) - lo) / range : 0.0;
  }
  return out;
}

EpochSet extract_epochs(const RawSession& session) {
  session.validate();
  const std::size_t c = session.channels(), s = session.samples();
  std::vector<std::size_t> starts;
  std::vector<nx::Tensor> trajs;
  EpochSet out;
  std::size_t trial = 0;
  std::size_t kin_pos = 0;
  const auto& kin = session.kinematics;
  for (std::size_t i = 0; i < session.events.size(); ++i) {
    const auto& e = session.events[i];
    if (e.kind != PenEventKind::pen_down) continue;
    const std::size_t id = trial++;
    const std::size_t t0 = e.sample_index;
    const std::size_t up = (i + 1 < session.events.size()) ? session.events[i + 1].sample_index : s;
    if (t0 + kEpochSamples > s) {
      spdlog::warn("extract_epochs: dropping trial {} at sample {}, window overruns the recording ({} samples)", id, t0,
                   s);
      continue;
    }
    while (kin_pos < kin.size() && kin[kin_pos].sample_index < t0) ++kin_pos;
    std::size_t end = kin_pos;
    while (end < kin.size() && kin[end].sample_index <= up) ++end;
    trajs.push_back(normalize_trajectory(std::span<const KinematicSample>(kin).subspan(kin_pos, end - kin_pos)));
    starts.push_back(t0);
    out.labels.push_back(e.char_class);
    out.trial_ids.push_back(id);
  }
  if (starts.empty()) throw ContractError("extract_epochs: no complete trial in the session");
  out.epochs = nx::Tensor({starts.size(), c, kEpochSamples});
  out.trajectories = nx::Tensor({starts.size(), kKinematicRows, kEpochSamples});
  for (std::size_t n = 0; n < starts.size(); ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < kEpochSamples; ++t) out.epochs.at(n, ch, t) = session.eeg.at(ch, starts[n] + t);
    }
    std::copy(trajs[n].data().begin(), trajs[n].data().end(),
              out.trajectories.data().begin() + static_cast<std::ptrdiff_t>(n * kKinematicRows * kEpochSamples));
  }
  return out;
}

nx::Tensor znorm_channels(const nx::Tensor& epochs) {
  if (epochs.rank() != 3) throw DimensionError("znorm_channels: expected [n × channels × samples]");
  const std::size_t rows = epochs.dim(0) * epochs.dim(1), t = epochs.dim(2);
  nx::Tensor out(epochs.shape());
  const auto in = epochs.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = in.subspan(r * t, t);
    const double m = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(t);
    double var = 0.0;
    for (double v : row) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / static_cast<double>(t));
    for (std::size_t k = 0; k < t; ++k) od[r * t + k] = sd < 1e-12 ? 0.0 : (row[k] - m) / sd;
  }
  return out;
}

FoldAssignment make_folds(std::span<const int> labels, std::uint64_t seed) {
  constexpr int k = FoldAssignment::kFolds;
  if (labels.size() < static_cast<std::size_t>(k)) throw ContractError("make_folds: need at least 5 trials");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  FoldAssignment folds;
  folds.fold_of_trial.assign(labels.size(), -1);
  std::size_t offset = 0;
  for (auto& [cls, members] : by_class) {
    if (members.size() < static_cast<std::size_t>(k)) {
      spdlog::warn("make_folds: class {} has only {} trials; stratification is best-effort", cls, members.size());
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) {
      folds.fold_of_trial[members[i]] = static_cast<int>((offset + i) % k);
    }
    offset += members.size();
  }
  return folds;
}

void PreprocessConfig::validate() const {
  const std::vector<Stage> canonical{Stage::average_reference, Stage::bandpass, Stage::ica_rejection,
                                     Stage::second_filter};
  auto sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != canonical) throw ContractError("preprocess: stage order must list each continuous stage exactly once");
  if (order != canonical && !allow_reorder) {
    throw ContractError("preprocess: non-canonical stage order requires an explicit reorder override");
  }
  if (eog_threshold <= 0.0 || eog_threshold > 1.0) throw ParameterError("preprocess: eog threshold must lie in (0, 1]");
}

PreprocessResult preprocess_session(const RawSession& session, const PreprocessConfig& config) {
  config.validate();
  session.validate();
  PreprocessResult result;
  RawSession work = session;
  bool referenced = false;
  for (Stage stage : config.order) {
    switch (stage) {
      case Stage::average_reference:
        work.eeg = average_reference(work.eeg);
        referenced = true;
        break;
      case Stage::bandpass:
        work.eeg = butter_bandpass(work.eeg, config.bandpass[0], config.bandpass[1], config.filter_order);
        break;
      case Stage::second_filter:
        work.eeg = butter_bandpass(work.eeg, config.second_band[0], config.second_band[1], config.filter_order);
        break;
      case Stage::ica_rejection: {
        const std::size_t c = work.channels();
        if (config.frontal_channel >= c) throw ParameterError("preprocess: frontal channel out of range");
        IcaOptions opts;
        opts.n_components = config.ica_components ? config.ica_components : (referenced ? c - 1 : c);
        opts.seed = config.ica_seed;
        opts.max_iter = config.ica_max_iter;
        opts.tol = config.ica_tol;
        opts.fit_stride = config.ica_fit_stride;
        const IcaResult ica = fast_ica(work.eeg, opts);
        result.unconverged_components =
            static_cast<std::size_t>(std::count(ica.converged.begin(), ica.converged.end(), false));
        const auto frontal = work.eeg.data().subspan(config.frontal_channel * work.samples(), work.samples());
        auto rej = reject_eog(ica, frontal, config.eog_threshold);
        work.eeg = std::move(rej.cleaned);
        result.rejected_components = std::move(rej.rejected);
        result.component_correlations = std::move(rej.correlations);
        break;
      }
    }
  }
  EpochSet epochs = extract_epochs(work);
  std::size_t pen_downs = 0;
  for (const auto& e : session.events) pen_downs += e.kind == PenEventKind::pen_down ? 1 : 0;
  result.dropped_trials = pen_downs - epochs.size();
  epochs.epochs = znorm_channels(epochs.epochs);
  result.folds = make_folds(epochs.labels, config.fold_seed);
  result.data = std::move(epochs);
  return result;
}

namespace {

nx::Tensor as_column(const std::vector<double>& v) { return nx::Tensor({v.size()}, v); }

std::filesystem::path fold_file(const std::filesystem::path& dir, int k, const char* what) {
  return dir / ("fold" + std::to_string(k) + "_" + what + ".stk");
}

}  // namespace

void write_folds(const std::filesystem::path& dir, const EpochSet& data, const FoldAssignment& folds) {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < FoldAssignment::kFolds; ++k) {
    const auto rows = folds.members(k);
    if (rows.empty()) throw ContractError("write_folds: fold " + std::to_string(k) + " is empty");
    const EpochSet part = data.select(rows);
    nx::write_stk(fold_file(dir, k, "epochs"), part.epochs);
    nx::write_stk(fold_file(dir, k, "traj"), part.trajectories);
    nx::write_stk(fold_file(dir, k, "labels"), as_column(std::vector<double>(part.labels.begin(), part.labels.end())));
    std::vector<double> ids(part.trial_ids.begin(), part.trial_ids.end());
    nx::write_stk(fold_file(dir, k, "trials"), as_column(ids));
  }
}

std::vector<EpochSet> read_folds(const std::filesystem::path& dir) {
  std::vector<EpochSet> out;
  for (int k = 0; k < FoldAssignment::kFolds; ++k) {
    EpochSet part;
    part.epochs = nx::read_stk(fold_file(dir, k, "epochs"));
    part.trajectories = nx::read_stk(fold_file(dir, k, "traj"));
    const auto labels = nx::read_stk(fold_file(dir, k, "labels"));
    const auto ids = nx::read_stk(fold_file(dir, k, "trials"));
    for (double v : labels.data()) part.labels.push_back(static_cast<int>(v));
    for (double v : ids.data()) part.trial_ids.push_back(static_cast<std::size_t>(v));
    if (part.epochs.rank() != 3 || part.epochs.dim(0) != part.labels.size() ||
        part.trajectories.dim(0) != part.labels.size() || part.trial_ids.size() != part.labels.size()) {
      throw IoError("fold " + std::to_string(k) + " files disagree in trial count");
    }
    out.push_back(std::move(part));
  }
  return out;
}

}  // namespace eegscribe::dsp
