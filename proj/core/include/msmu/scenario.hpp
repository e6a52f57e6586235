// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace msmu {

/// Raised for malformed or out-of-range configuration. `key()` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct NumerologyParams {
  int index = 0;
  double scs_hz = 0.0;
  double rb_bandwidth_hz = 0.0;  // 12 subcarriers
  double tti_s = 0.0;            // one mini-slot (7 OFDM symbols)
  int ttis_per_frame = 0;
};

/// Numerology table for index 0..3 over a frame of `frame_len_s`.
NumerologyParams numerology_params(int gamma, double frame_len_s);

struct BwpLayout {
  double phi = 0.0;
  double b_ur_hz = 0.0;
  double b_em_hz = 0.0;
  int o_ur = 0;
  int o_em = 0;
};

BwpLayout bwp_split(double bandwidth_hz, double guard_hz, double phi,
                    const NumerologyParams& embb, const NumerologyParams& urllc);

struct Scenario {
  // [network]
  int num_rus = 4;
  int num_dus = 1;
  int num_ues = 24;
  int antennas = 4;
  double fh_capacity_bps = 100e6;
  double mh_capacity_bps = 1e9;
  double cpu_cu_hz = 1e9;
  double cpu_du_hz = 1e9;
  double cycles_per_packet = 1e4;
  double packet_bits = 1e4;
  double qmax_bytes = 1e6;
  double ue_speed_mps = 3.0;
  double ru_spacing_m = 330.0;
  double carrier_ghz = 0.98;
  double rician_k = 3.0;

  // [phy]
  double ru_bandwidth_hz = 3e6;
  double guard_band_hz = 180e3;
  int embb_numerology = 1;
  int urllc_numerology = 2;
  double p_max_w = 1.0;
  double noise_w = 1e-13;
  double snr_floor = 1.0;
  double error_prob = 1e-5;
  double dispersion = 1.0;
  double ru_proc_delay_s = 0.0;  // 0 selects two OFDM symbols of the uRLLC numerology

  // [timing]
  double frame_len_s = 0.01;
  double latency_budget_s = 1e-3;
  double lat_th_em_s = 10e-3;
  double lat_th_ur_s = 1e-3;
  std::uint64_t seed = 1;

  // [traffic]
  double embb_rate_bps = 1e6;
  double urllc_rate_pps = 10.0;
  double pkt_size_em_bytes = 1500.0;
  double pkt_size_ur_bytes = 125.0;
  double omega_max_pps = 1000.0;
  double bw_threshold_bps = 0.5e6;
  double lat_threshold_s = 10e-3;
  double rate_threshold_bps = 0.5e6;
  double eps1 = 0.9;
  double eps2 = 0.99;
  double sinusoid_amplitude = 0.0;
  double sinusoid_period_frames = 100.0;

  // [model]
  double lambda = 1.0;
  double r_max_bps = 0.0;  // 0 selects U * 1 Mbit/s
  int history_frames = 10;
  int d_model = 64;
  int encoder_layers = 6;
  int heads = 8;
  int ffn_dim = 512;
  double dropout = 0.3;
  int lstm_hidden = 32;
  int lstm_layers = 2;
  double lstm_dropout = 0.2;
  int batch_size = 32;
  double lr_forecaster = 1e-4;
  double lr_allocator = 1e-4;
  double lr_continual = 1e-3;
  bool revin_affine = false;
  double revin_eps = 1e-10;

  NumerologyParams embb() const { return numerology_params(embb_numerology, frame_len_s); }
  NumerologyParams urllc() const { return numerology_params(urllc_numerology, frame_len_s); }
  /// Mini-slots per frame; the simulator clock runs at the uRLLC TTI.
  int slots_per_frame() const { return urllc().ttis_per_frame; }
  double slot_s() const { return urllc().tti_s; }
  double proc_delay_s() const;
  double r_max() const { return r_max_bps > 0.0 ? r_max_bps : num_ues * 1e6; }
  BwpLayout layout(double phi) const {
    return bwp_split(ru_bandwidth_hz, guard_band_hz, phi, embb(), urllc());
  }
  /// Largest Φ that still leaves one eMBB RB after the guard band.
  double phi_max() const;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;

  bool operator==(const Scenario&) const = default;
};

Scenario load_scenario(std::string_view config_text);
Scenario load_scenario_file(const std::string& path);
std::string serialize(const Scenario& s);

}  // namespace msmu
