#ifndef STIN_MODEL_HPP_
#define STIN_MODEL_HPP_

// Physical entities of the satellite-terrestrial network and the delay of
// hosting a user's twin locally, on an end-side device, or in the cloud.
// Everything here is a pure function of its arguments.

#include <cmath>
#include <cstddef>
#include <string>

#include "stin/error.hpp"

namespace stin {

inline constexpr double kSpeedOfLight = 2.998e8;  // m/s
inline constexpr double kBitsPerMegabyte = 8.0e6;

struct Position {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Position& a, const Position& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double dbm_per_hz_to_w_per_hz(double dbm) {
  return std::pow(10.0, (dbm - 30.0) / 10.0);
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw DomainError(std::string(what) + " is not finite");
  }
}

inline void require_positive(double v, const char* what) {
  require_finite(v, what);
  if (!(v > 0.0)) throw DomainError(std::string(what) + " must be > 0");
}

}  // namespace detail

// A terminal device that needs a digital twin.
struct User {
  std::size_t id = 0;
  Position position;
  double data_size_bits = 0.0;    // D_i
  double cpu_hz = 0.0;            // f_i
  double workload_density = 0.0;  // mu_i, cycles per bit
  double tx_power_w = 0.2;        // P_i, also used toward the satellite

  // Throws DomainError when a field breaks the type invariants.
  void check() const {
    detail::require_positive(data_size_bits, "data_size_bits");
    detail::require_positive(cpu_hz, "cpu_hz");
    detail::require_positive(workload_density, "workload_density");
    detail::require_positive(tx_power_w, "tx_power_w");
    if (tx_power_w > 0.2) throw DomainError("tx_power_w exceeds 0.2 W");
  }

  double workload_cycles() const { return workload_density * data_size_bits; }
};

// A terrestrial device that can host other users' twins.
struct EndSideNode {
  std::size_t id = 0;
  Position position;
  double total_cpu_hz = 0.0;  // F_j
  std::size_t capacity = 1;   // N_j

  void check() const {
    detail::require_positive(total_cpu_hz, "total_cpu_hz");
    if (capacity < 1) throw DomainError("end node capacity must be >= 1");
  }
};

// Fixed satellite relay between the users and the cloud server.
struct SatelliteCloudPath {
  double d_is_m = 6.0e5;
  double d_sc_m = 6.0e5;
  double w_is_hz = 1.0e6;
  double w_sc_hz = 2.0e7;
  double p_sc_w = 10.0;
  double g_is = 6.0e-13;
  double g_sc = 1.0e-12;
  double cloud_cpu_hz = 1.0e11;
  double light_speed = kSpeedOfLight;
  double altitude_m = 6.0e5;

  void check() const {
    detail::require_positive(d_is_m, "d_is_m");
    detail::require_positive(d_sc_m, "d_sc_m");
    detail::require_positive(w_is_hz, "w_is_hz");
    detail::require_positive(w_sc_hz, "w_sc_hz");
    detail::require_positive(p_sc_w, "p_sc_w");
    detail::require_positive(g_is, "g_is");
    detail::require_positive(g_sc, "g_sc");
    detail::require_positive(cloud_cpu_hz, "cloud_cpu_hz");
    detail::require_positive(light_speed, "light_speed");
    if (d_is_m < altitude_m) {
      throw DomainError("d_is_m below satellite altitude");
    }
  }

  double propagation_delay() const { return (d_is_m + d_sc_m) / light_speed; }
};

// User to end-side radio channel.
struct ChannelParams {
  double bandwidth_hz = 1.0e7;
  double noise_psd_w_per_hz = dbm_per_hz_to_w_per_hz(-174.0);
  double pathloss_exponent = 3.0;
  double ref_gain_db = -30.0;
  double shadowing_sigma_db = 4.0;

  void check() const {
    detail::require_positive(bandwidth_hz, "bandwidth_hz");
    detail::require_positive(noise_psd_w_per_hz, "noise_psd_w_per_hz");
    detail::require_finite(ref_gain_db, "ref_gain_db");
    detail::require_finite(shadowing_sigma_db, "shadowing_sigma_db");
    if (!(pathloss_exponent >= 2.0)) {
      throw DomainError("pathloss_exponent must be >= 2");
    }
  }
};

// W * log2(1 + P*G / (W*N0)), in bits/s.
inline double shannon_rate(double bandwidth_hz, double tx_power_w,
                           double gain_linear, double noise_psd_w_per_hz) {
  detail::require_positive(bandwidth_hz, "bandwidth_hz");
  detail::require_positive(tx_power_w, "tx_power_w");
  detail::require_positive(noise_psd_w_per_hz, "noise_psd_w_per_hz");
  detail::require_finite(gain_linear, "gain_linear");
  if (gain_linear < 0.0) throw DomainError("gain_linear must be >= 0");
  const double snr =
      tx_power_w * gain_linear / (bandwidth_hz * noise_psd_w_per_hz);
  return bandwidth_hz * std::log2(1.0 + snr);
}

// Log-distance path loss plus a shadowing draw in dB. Distances under 1 m
// are clamped to 1 m.
inline double channel_gain(double distance_m, const ChannelParams& channel,
                           double shadowing_db) {
  detail::require_finite(distance_m, "distance_m");
  detail::require_finite(shadowing_db, "shadowing_db");
  const double d = distance_m < 1.0 ? 1.0 : distance_m;
  const double db = channel.ref_gain_db -
                    10.0 * channel.pathloss_exponent * std::log10(d) +
                    shadowing_db;
  return db_to_linear(db);
}

inline double local_delay(const User& user) {
  if (!(user.cpu_hz > 0.0)) throw DomainError("local cpu_hz must be > 0");
  return user.workload_cycles() / user.cpu_hz;
}

// Transmission plus computation on an end-side device, given the link rate.
inline double end_side_delay_at_rate(const User& user, double rate_bps,
                                     double allocated_cpu_hz) {
  detail::require_finite(rate_bps, "rate_bps");
  if (!(rate_bps > 0.0)) throw UnreachableError("unreachable node: zero rate");
  detail::require_positive(allocated_cpu_hz, "allocated_cpu_hz");
  return user.data_size_bits / rate_bps +
         user.workload_cycles() / allocated_cpu_hz;
}

inline double end_side_delay(const User& user, const ChannelParams& channel,
                             double gain_linear, double allocated_cpu_hz) {
  const double rate = shannon_rate(channel.bandwidth_hz, user.tx_power_w,
                                   gain_linear, channel.noise_psd_w_per_hz);
  return end_side_delay_at_rate(user, rate, allocated_cpu_hz);
}

inline double satellite_uplink_rate(const User& user,
                                    const SatelliteCloudPath& path,
                                    double noise_psd_w_per_hz) {
  return shannon_rate(path.w_is_hz, user.tx_power_w, path.g_is,
                      noise_psd_w_per_hz);
}

inline double satellite_backhaul_rate(const SatelliteCloudPath& path,
                                      double noise_psd_w_per_hz) {
  return shannon_rate(path.w_sc_hz, path.p_sc_w, path.g_sc,
                      noise_psd_w_per_hz);
}

// Uplink, backhaul, propagation and cloud computation, given both rates.
inline double cloud_delay_at_rates(const User& user, double uplink_bps,
                                   double backhaul_bps, double d_is_m,
                                   double d_sc_m, double light_speed,
                                   double allocated_cloud_cpu_hz) {
  detail::require_finite(uplink_bps, "uplink_bps");
  detail::require_finite(backhaul_bps, "backhaul_bps");
  if (!(uplink_bps > 0.0)) throw UnreachableError("satellite unreachable");
  if (!(backhaul_bps > 0.0)) throw UnreachableError("gateway unreachable");
  detail::require_positive(allocated_cloud_cpu_hz, "allocated_cloud_cpu_hz");
  const double d = user.data_size_bits;
  return d / uplink_bps + d / backhaul_bps + (d_is_m + d_sc_m) / light_speed +
         user.workload_cycles() / allocated_cloud_cpu_hz;
}

inline double cloud_delay(const User& user, const SatelliteCloudPath& path,
                          double noise_psd_w_per_hz,
                          double allocated_cloud_cpu_hz) {
  return cloud_delay_at_rates(
      user, satellite_uplink_rate(user, path, noise_psd_w_per_hz),
      satellite_backhaul_rate(path, noise_psd_w_per_hz), path.d_is_m,
      path.d_sc_m, path.light_speed, allocated_cloud_cpu_hz);
}

}  // namespace stin

#endif  // STIN_MODEL_HPP_
