#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pfedlvm/tensor.hpp"  // ConfigError

namespace pfedlvm {

/// Symbols of the communication analysis. Byte quantities are payload-only.
struct CommParams {
  std::uint64_t S_max = 0;  // samples in the largest vehicle dataset
  std::uint64_t N_b = 0;    // passes over the largest dataset
  std::uint64_t B_s = 0;    // mini-batch size
  std::uint64_t F_b = 0;    // feature bytes per vehicle per mini-batch
  std::uint64_t M_b = 0;    // model bytes
  std::uint64_t sigma = 0;  // passes between parameter aggregations
  std::uint64_t V = 0;      // vehicle count

  void validate() const;
};

/// Exchange points per pass over the largest dataset: floor(S_max / B_s).
std::uint64_t batches_per_pass(const CommParams& p);

/// Feature-exchange total: N_b * (F_b * floor(S_max/B_s) * 2) * V.
std::uint64_t m_pfl(const CommParams& p);

/// Same count with distinct upload and download feature sizes.
std::uint64_t m_pfl_directional(const CommParams& p, std::uint64_t upload_bytes, std::uint64_t download_bytes);

/// Parameter-exchange total: floor(N_b / sigma) * M_b * 2 * V.
std::uint64_t m_fl(const CommParams& p);

struct Savings {
  double exact = 0.0;        // 1 - m_pfl / m_fl
  double approximate = 0.0;  // 1 - (F_b / M_b) * floor(S_max/B_s) * sigma
};

/// Throws std::domain_error when m_fl(p) == 0.
Savings savings(const CommParams& p);

/// Upper bound on |eta_exact(B_s) - eta_exact(B_s + 1)|, from
/// floor(S/B) - floor(S/(B+1)) <= S / (B (B+1)) + 1.
double floor_step_bound(const CommParams& p);

// ---------------------------------------------------------------------------

struct VehicleTimes {
  double tf_c = 0.0;  // compressor forward
  double tb_c = 0.0;  // compressor backward + update
  double tf_p = 0.0;  // head forward
  double tb_p = 0.0;  // head backward + update
  double tu = 0.0;    // feature upload
  double td = 0.0;    // shared-feature download
};

struct TimeParams {
  std::vector<VehicleTimes> vehicles;
  double t_s = 0.0;  // server extraction

  void validate() const;
  static TimeParams uniform(std::size_t vehicles, const VehicleTimes& each, double server);
};

/// Closed form of one exchange point:
/// max_v(tf_c + tu) + t_s + max_v(max(tb_c, tf_p + tb_p) + td).
double round_time(const TimeParams& tp);

/// Event-driven replay of one exchange point: compress, upload, barrier,
/// extraction, download, then the two local updates per vehicle. Returns the
/// time the last vehicle finishes.
double simulate_round_time(const TimeParams& tp);

double total_time(const std::vector<double>& round_times);

struct SpaceUnits {
  std::uint64_t vehicle_side = 0;
  std::uint64_t server_side = 0;
};

/// Feature storage: V * F_b on the vehicles and V * F_b on the server.
SpaceUnits space_units(std::uint64_t V, std::uint64_t F_b);

// ---------------------------------------------------------------------------

struct SweepGrid {
  std::vector<std::uint64_t> S_max{100};
  std::vector<std::uint64_t> N_b{100};
  std::vector<std::uint64_t> B_s{8};
  std::vector<std::uint64_t> F_b{1000};
  std::vector<std::uint64_t> M_b{1000000};
  std::vector<std::uint64_t> sigma{2};
  std::vector<std::uint64_t> V{3};
};

struct SweepRow {
  CommParams params;
  std::uint64_t m_pfl = 0;
  std::uint64_t m_fl = 0;
  double eta_exact = 0.0;
  double eta_approx = 0.0;
  bool eta_defined = false;
};

/// Cartesian product in the order S_max, N_b, B_s, F_b, M_b, sigma, V
/// (V varies fastest). Points violating CommParams invariants are skipped.
std::vector<SweepRow> comm_sweep(const SweepGrid& grid);

/// Header: S_max,N_b,B_s,F_b,M_b,sigma,V,m_pfl,m_fl,eta_exact,eta_approx.
/// Undefined savings are written as "nan".
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace pfedlvm
