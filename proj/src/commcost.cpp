#include "pfedlvm/commcost.hpp"

#include <algorithm>
#include <cmath>
#include <locale>
#include <ostream>
#include <queue>
#include <stdexcept>
#include <string>

#include "pfedlvm/csv.hpp"
#include "pfedlvm/tensor.hpp"

namespace pfedlvm {

void CommParams::validate() const {
  if (S_max == 0 || N_b == 0 || B_s == 0 || F_b == 0 || M_b == 0 || sigma == 0 || V == 0) {
    throw ConfigError("CommParams: all of S_max, N_b, B_s, F_b, M_b, sigma, V must be positive");
  }
  if (B_s > S_max) throw ConfigError("CommParams: B_s must not exceed S_max");
}

std::uint64_t batches_per_pass(const CommParams& p) { return p.S_max / p.B_s; }

std::uint64_t m_pfl(const CommParams& p) {
  p.validate();
  return p.N_b * (p.F_b * batches_per_pass(p) * 2) * p.V;
}

std::uint64_t m_pfl_directional(const CommParams& p, std::uint64_t upload_bytes, std::uint64_t download_bytes) {
  p.validate();
  return p.N_b * batches_per_pass(p) * (upload_bytes + download_bytes) * p.V;
}

std::uint64_t m_fl(const CommParams& p) {
  p.validate();
  return (p.N_b / p.sigma) * p.M_b * 2 * p.V;
}

Savings savings(const CommParams& p) {
  const auto fl = m_fl(p);
  if (fl == 0) {
    throw std::domain_error("savings undefined: no parameter exchange occurs (N_b=" + std::to_string(p.N_b) +
                            " < sigma=" + std::to_string(p.sigma) + ")");
  }
  const auto pfl = m_pfl(p);
  Savings s;
  s.exact = 1.0 - static_cast<double>(pfl) / static_cast<double>(fl);
  s.approximate = 1.0 - (static_cast<double>(p.F_b) / static_cast<double>(p.M_b)) *
                            static_cast<double>(batches_per_pass(p)) * static_cast<double>(p.sigma);
  return s;
}

double floor_step_bound(const CommParams& p) {
  p.validate();
  const auto rounds = p.N_b / p.sigma;
  if (rounds == 0) throw std::domain_error("floor_step_bound: no parameter exchange occurs");
  const double s = static_cast<double>(p.S_max), b = static_cast<double>(p.B_s);
  const double step = s / (b * (b + 1.0)) + 1.0;
  return static_cast<double>(p.F_b) / static_cast<double>(p.M_b) * static_cast<double>(p.N_b) /
         static_cast<double>(rounds) * step;
}

// ---------------------------------------------------------------------------

void TimeParams::validate() const {
  if (vehicles.empty()) throw ConfigError("TimeParams: at least one vehicle required");
  auto bad = [](double v) { return !(v >= 0.0) || !std::isfinite(v); };
  if (bad(t_s)) throw ConfigError("TimeParams: t_s must be non-negative");
  for (std::size_t v = 0; v < vehicles.size(); ++v) {
    const auto& x = vehicles[v];
    if (bad(x.tf_c) || bad(x.tb_c) || bad(x.tf_p) || bad(x.tb_p) || bad(x.tu) || bad(x.td)) {
      throw ConfigError("TimeParams: vehicle " + std::to_string(v) + " has a negative or non-finite duration");
    }
  }
}

TimeParams TimeParams::uniform(std::size_t vehicles, const VehicleTimes& each, double server) {
  return TimeParams{std::vector<VehicleTimes>(vehicles, each), server};
}

double round_time(const TimeParams& tp) {
  tp.validate();
  double upload_stage = 0.0, update_stage = 0.0;
  for (const auto& v : tp.vehicles) {
    upload_stage = std::max(upload_stage, v.tf_c + v.tu);
    update_stage = std::max(update_stage, std::max(v.tb_c, v.tf_p + v.tb_p) + v.td);
  }
  return upload_stage + tp.t_s + update_stage;
}

namespace {

enum class EventType { CompressDone, UploadArrived, ExtractionDone, DownloadArrived, CompressorUpdated, HeadPredicted,
                       HeadUpdated };

struct Event {
  double time;
  std::uint64_t seq;
  EventType type;
  std::size_t vehicle;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

}  // namespace

double simulate_round_time(const TimeParams& tp) {
  tp.validate();
  const std::size_t n = tp.vehicles.size();
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  std::uint64_t seq = 0;
  auto schedule = [&](double at, EventType type, std::size_t v) { queue.push({at, seq++, type, v}); };

  for (std::size_t v = 0; v < n; ++v) schedule(tp.vehicles[v].tf_c, EventType::CompressDone, v);

  std::size_t arrived = 0;
  std::vector<int> pending_updates(n, 0);
  std::vector<double> finished(n, 0.0);
  double clock = 0.0;
  while (!queue.empty()) {
    const Event e = queue.top();
    queue.pop();
    clock = e.time;
    const auto& vt = e.vehicle < n ? tp.vehicles[e.vehicle] : tp.vehicles.front();
    switch (e.type) {
      case EventType::CompressDone: schedule(clock + vt.tu, EventType::UploadArrived, e.vehicle); break;
      case EventType::UploadArrived:
        if (++arrived == n) schedule(clock + tp.t_s, EventType::ExtractionDone, n);
        break;
      case EventType::ExtractionDone:
        for (std::size_t v = 0; v < n; ++v) schedule(clock + tp.vehicles[v].td, EventType::DownloadArrived, v);
        break;
      case EventType::DownloadArrived:
        pending_updates[e.vehicle] = 2;
        schedule(clock + vt.tb_c, EventType::CompressorUpdated, e.vehicle);
        schedule(clock + vt.tf_p, EventType::HeadPredicted, e.vehicle);
        break;
      case EventType::HeadPredicted: schedule(clock + vt.tb_p, EventType::HeadUpdated, e.vehicle); break;
      case EventType::CompressorUpdated:
      case EventType::HeadUpdated:
        if (--pending_updates[e.vehicle] == 0) finished[e.vehicle] = clock;
        break;
    }
  }
  return *std::max_element(finished.begin(), finished.end());
}

double total_time(const std::vector<double>& round_times) {
  double t = 0.0;
  for (double tb : round_times) t += tb;
  return t;
}

SpaceUnits space_units(std::uint64_t V, std::uint64_t F_b) { return {V * F_b, V * F_b}; }

// ---------------------------------------------------------------------------

std::vector<SweepRow> comm_sweep(const SweepGrid& g) {
  std::vector<SweepRow> rows;
  for (auto s : g.S_max)
    for (auto nb : g.N_b)
      for (auto bs : g.B_s)
        for (auto fb : g.F_b)
          for (auto mb : g.M_b)
            for (auto sg : g.sigma)
              for (auto v : g.V) {
                CommParams p{s, nb, bs, fb, mb, sg, v};
                try {
                  p.validate();
                } catch (const ConfigError&) {
                  continue;
                }
                SweepRow row;
                row.params = p;
                row.m_pfl = m_pfl(p);
                row.m_fl = m_fl(p);
                if (row.m_fl > 0) {
                  const auto eta = savings(p);
                  row.eta_exact = eta.exact;
                  row.eta_approx = eta.approximate;
                  row.eta_defined = true;
                }
                rows.push_back(row);
              }
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out.imbue(std::locale::classic());
  out << "S_max,N_b,B_s,F_b,M_b,sigma,V,m_pfl,m_fl,eta_exact,eta_approx\n";
  for (const auto& r : rows) {
    const auto& p = r.params;
    out << p.S_max << ',' << p.N_b << ',' << p.B_s << ',' << p.F_b << ',' << p.M_b << ',' << p.sigma << ',' << p.V
        << ',' << r.m_pfl << ',' << r.m_fl << ',' << (r.eta_defined ? format_double(r.eta_exact) : "nan") << ','
        << (r.eta_defined ? format_double(r.eta_approx) : "nan") << '\n';
  }
}

}  // namespace pfedlvm
