#include "eegscribe/dsp/session.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "eegscribe/errors.hpp"
#include "eegscribe/numerics/stk_io.hpp"

namespace eegscribe::dsp {

void RawSession::validate() const {
  if (eeg.rank() != 2) throw ContractError("session eeg must be [channels × samples]");
  if (sample_rate != kSampleRate) throw ContractError("session sampling rate must be 250 Hz");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (i > 0 && e.sample_index <= events[i - 1].sample_index) {
      throw ContractError("event sample indices must strictly increase (event " + std::to_string(i) + ")");
    }
    const auto expected = (i % 2 == 0) ? PenEventKind::pen_down : PenEventKind::pen_up;
    if (e.kind != expected) throw ContractError("pen_down/pen_up events must alternate (event " + std::to_string(i) + ")");
    if (e.char_class < 0 || e.char_class >= kNumClasses) {
      throw ContractError("event class " + std::to_string(e.char_class) + " outside [0, 9)");
    }
  }
}

EpochSet EpochSet::select(const std::vector<std::size_t>& rows) const {
  if (rows.empty()) throw ContractError("cannot select an empty epoch set");
  const std::size_t c = epochs.dim(1), t = epochs.dim(2);
  const std::size_t kr = trajectories.dim(1), kt = trajectories.dim(2);
  EpochSet out;
  out.epochs = nx::Tensor({rows.size(), c, t});
  out.trajectories = nx::Tensor({rows.size(), kr, kt});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= size()) throw DimensionError("epoch row out of range");
    std::copy_n(epochs.data().begin() + static_cast<std::ptrdiff_t>(r * c * t), c * t,
                out.epochs.data().begin() + static_cast<std::ptrdiff_t>(i * c * t));
    std::copy_n(trajectories.data().begin() + static_cast<std::ptrdiff_t>(r * kr * kt), kr * kt,
                out.trajectories.data().begin() + static_cast<std::ptrdiff_t>(i * kr * kt));
    out.labels.push_back(labels[r]);
    out.trial_ids.push_back(trial_ids[r]);
  }
  return out;
}

EpochSet EpochSet::concatenate(const std::vector<const EpochSet*>& parts) {
  if (parts.empty()) throw ContractError("nothing to concatenate");
  const auto& first = *parts.front();
  std::size_t n = 0;
  for (const auto* p : parts) {
    if (p->epochs.dim(1) != first.epochs.dim(1) || p->epochs.dim(2) != first.epochs.dim(2)) {
      throw DimensionError("epoch sets disagree in channel or sample count");
    }
    n += p->size();
  }
  EpochSet out;
  out.epochs = nx::Tensor({n, first.epochs.dim(1), first.epochs.dim(2)});
  out.trajectories = nx::Tensor({n, first.trajectories.dim(1), first.trajectories.dim(2)});
  std::size_t e_off = 0, t_off = 0;
  for (const auto* p : parts) {
    std::copy(p->epochs.data().begin(), p->epochs.data().end(), out.epochs.data().begin() + static_cast<std::ptrdiff_t>(e_off));
    std::copy(p->trajectories.data().begin(), p->trajectories.data().end(),
              out.trajectories.data().begin() + static_cast<std::ptrdiff_t>(t_off));
    e_off += p->epochs.numel();
    t_off += p->trajectories.numel();
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    out.trial_ids.insert(out.trial_ids.end(), p->trial_ids.begin(), p->trial_ids.end());
  }
  return out;
}

std::vector<std::size_t> FoldAssignment::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of_trial.size(); ++i) {
    if (fold_of_trial[i] == fold) out.push_back(i);
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::size_t parse_index(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError(where + ": bad integer '" + s + "'");
  return v;
}

double parse_real(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw IoError(where + ": bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw IoError(where + ": bad number '" + s + "'");
  }
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_events_csv(const std::filesystem::path& path, const std::vector<PenEvent>& events) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "sample_index,kind,char_class\n";
  for (const auto& e : events) {
    f << e.sample_index << ',' << (e.kind == PenEventKind::pen_down ? "pen_down" : "pen_up") << ',' << e.char_class
      << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<PenEvent> read_events_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || trim_cr(line) != "sample_index,kind,char_class") {
    throw IoError(path.string() + ": expected header sample_index,kind,char_class");
  }
  std::vector<PenEvent> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    auto cells = split(line);
    if (cells.size() != 3) throw IoError(where + ": expected 3 fields");
    PenEvent e;
    e.sample_index = parse_index(cells[0], where);
    if (cells[1] == "pen_down") {
      e.kind = PenEventKind::pen_down;
    } else if (cells[1] == "pen_up") {
      e.kind = PenEventKind::pen_up;
    } else {
      throw IoError(where + ": unknown event kind '" + cells[1] + "'");
    }
    e.char_class = static_cast<int>(parse_index(cells[2], where));
    out.push_back(e);
  }
  return out;
}

void write_kinematics_csv(const std::filesystem::path& path, const std::vector<KinematicSample>& kin) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "sample_index,x,y,pressure,velocity\n";
  for (const auto& k : kin) {
    f << k.sample_index << ',' << format_real(k.x) << ',' << format_real(k.y) << ',' << format_real(k.pressure) << ','
      << format_real(k.velocity) << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

std::vector<KinematicSample> read_kinematics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || trim_cr(line) != "sample_index,x,y,pressure,velocity") {
    throw IoError(path.string() + ": expected header sample_index,x,y,pressure,velocity");
  }
  std::vector<KinematicSample> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    auto cells = split(line);
    if (cells.size() != 5) throw IoError(where + ": expected 5 fields");
    out.push_back(KinematicSample{parse_index(cells[0], where), parse_real(cells[1], where),
                                  parse_real(cells[2], where), parse_real(cells[3], where),
                                  parse_real(cells[4], where)});
  }
  return out;
}

RawSession load_session(const std::filesystem::path& eeg, const std::filesystem::path& events,
                        const std::filesystem::path& kinematics) {
  RawSession s;
  s.eeg = nx::read_stk(eeg);
  s.events = read_events_csv(events);
  s.kinematics = read_kinematics_csv(kinematics);
  s.validate();
  return s;
}

}  // namespace eegscribe::dsp
