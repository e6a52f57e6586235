// SPDX-License-Identifier: Apache-2.0
#include "msmu/scenario.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <variant>

namespace msmu {

NumerologyParams numerology_params(int gamma, double frame_len_s) {
  if (gamma < 0 || gamma > 3) {
    throw std::invalid_argument(fmt::format("unsupported numerology index {}", gamma));
  }
  if (!(frame_len_s > 0.0)) {
    throw std::invalid_argument("frame length must be positive");
  }
  NumerologyParams n;
  n.index = gamma;
  n.scs_hz = 15e3 * static_cast<double>(1 << gamma);
  n.rb_bandwidth_hz = 12.0 * n.scs_hz;
  n.tti_s = 1e-3 / static_cast<double>(1 << (gamma + 1));
  const double ratio = frame_len_s / n.tti_s;
  const double slots = std::round(ratio);
  if (slots < 1.0 || std::abs(ratio - slots) > 1e-9 * slots) {
    throw std::invalid_argument(
        fmt::format("frame length {} s is not a whole number of {} s TTIs", frame_len_s, n.tti_s));
  }
  n.ttis_per_frame = static_cast<int>(slots);
  return n;
}

namespace {

int whole_rbs(double band_hz, double rb_hz) {
  if (band_hz <= 0.0) return 0;
  // absorb rounding noise such as 1079999.9999 for an exact multiple
  return static_cast<int>(std::floor(band_hz / rb_hz + 1e-9));
}

}  // namespace

BwpLayout bwp_split(double bandwidth_hz, double guard_hz, double phi,
                    const NumerologyParams& embb, const NumerologyParams& urllc) {
  if (!(phi >= 0.0 && phi <= 1.0)) {
    throw std::invalid_argument(fmt::format("slicing fraction {} outside [0,1]", phi));
  }
  BwpLayout l;
  l.phi = phi;
  l.b_ur_hz = phi * bandwidth_hz;
  l.b_em_hz = std::max((1.0 - phi) * bandwidth_hz - guard_hz, 0.0);
  l.o_ur = whole_rbs(l.b_ur_hz, urllc.rb_bandwidth_hz);
  l.o_em = whole_rbs(l.b_em_hz, embb.rb_bandwidth_hz);
  return l;
}

double Scenario::proc_delay_s() const {
  if (ru_proc_delay_s > 0.0) return ru_proc_delay_s;
  return 2.0 * slot_s() / 7.0;
}

double Scenario::phi_max() const {
  return std::clamp(1.0 - (guard_band_hz + embb().rb_bandwidth_hz) / ru_bandwidth_hz, 0.0, 1.0);
}

namespace {

using Field = std::variant<int Scenario::*, double Scenario::*, std::uint64_t Scenario::*,
                           bool Scenario::*>;

struct KeyDef {
  const char* section;
  const char* key;
  Field field;
};

// clang-format off
const std::array kKeys = {
    KeyDef{"network", "num_rus", &Scenario::num_rus},
    KeyDef{"network", "num_dus", &Scenario::num_dus},
    KeyDef{"network", "num_ues", &Scenario::num_ues},
    KeyDef{"network", "antennas", &Scenario::antennas},
    KeyDef{"network", "fh_capacity", &Scenario::fh_capacity_bps},
    KeyDef{"network", "mh_capacity", &Scenario::mh_capacity_bps},
    KeyDef{"network", "cpu_cu", &Scenario::cpu_cu_hz},
    KeyDef{"network", "cpu_du", &Scenario::cpu_du_hz},
    KeyDef{"network", "cycles_per_packet", &Scenario::cycles_per_packet},
    KeyDef{"network", "packet_bits", &Scenario::packet_bits},
    KeyDef{"network", "qmax", &Scenario::qmax_bytes},
    KeyDef{"network", "ue_speed", &Scenario::ue_speed_mps},
    KeyDef{"network", "ru_spacing", &Scenario::ru_spacing_m},
    KeyDef{"network", "carrier_ghz", &Scenario::carrier_ghz},
    KeyDef{"network", "rician_k", &Scenario::rician_k},

    KeyDef{"phy", "ru_bandwidth", &Scenario::ru_bandwidth_hz},
    KeyDef{"phy", "guard_band", &Scenario::guard_band_hz},
    KeyDef{"phy", "embb_numerology", &Scenario::embb_numerology},
    KeyDef{"phy", "urllc_numerology", &Scenario::urllc_numerology},
    KeyDef{"phy", "p_max", &Scenario::p_max_w},
    KeyDef{"phy", "noise", &Scenario::noise_w},
    KeyDef{"phy", "snr_floor", &Scenario::snr_floor},
    KeyDef{"phy", "error_prob", &Scenario::error_prob},
    KeyDef{"phy", "dispersion", &Scenario::dispersion},
    KeyDef{"phy", "ru_proc_delay", &Scenario::ru_proc_delay_s},

    KeyDef{"timing", "frame_len", &Scenario::frame_len_s},
    KeyDef{"timing", "latency_budget", &Scenario::latency_budget_s},
    KeyDef{"timing", "lat_th_em", &Scenario::lat_th_em_s},
    KeyDef{"timing", "lat_th_ur", &Scenario::lat_th_ur_s},
    KeyDef{"timing", "seed", &Scenario::seed},

    KeyDef{"traffic", "embb_rate", &Scenario::embb_rate_bps},
    KeyDef{"traffic", "urllc_rate", &Scenario::urllc_rate_pps},
    KeyDef{"traffic", "pkt_size_em", &Scenario::pkt_size_em_bytes},
    KeyDef{"traffic", "pkt_size_ur", &Scenario::pkt_size_ur_bytes},
    KeyDef{"traffic", "omega_max", &Scenario::omega_max_pps},
    KeyDef{"traffic", "bw_threshold", &Scenario::bw_threshold_bps},
    KeyDef{"traffic", "lat_threshold", &Scenario::lat_threshold_s},
    KeyDef{"traffic", "rate_threshold", &Scenario::rate_threshold_bps},
    KeyDef{"traffic", "eps1", &Scenario::eps1},
    KeyDef{"traffic", "eps2", &Scenario::eps2},
    KeyDef{"traffic", "sinusoid_amplitude", &Scenario::sinusoid_amplitude},
    KeyDef{"traffic", "sinusoid_period", &Scenario::sinusoid_period_frames},

    KeyDef{"model", "lambda", &Scenario::lambda},
    KeyDef{"model", "r_max", &Scenario::r_max_bps},
    KeyDef{"model", "history_frames", &Scenario::history_frames},
    KeyDef{"model", "d_model", &Scenario::d_model},
    KeyDef{"model", "encoder_layers", &Scenario::encoder_layers},
    KeyDef{"model", "heads", &Scenario::heads},
    KeyDef{"model", "ffn_dim", &Scenario::ffn_dim},
    KeyDef{"model", "dropout", &Scenario::dropout},
    KeyDef{"model", "lstm_hidden", &Scenario::lstm_hidden},
    KeyDef{"model", "lstm_layers", &Scenario::lstm_layers},
    KeyDef{"model", "lstm_dropout", &Scenario::lstm_dropout},
    KeyDef{"model", "batch_size", &Scenario::batch_size},
    KeyDef{"model", "lr_forecaster", &Scenario::lr_forecaster},
    KeyDef{"model", "lr_allocator", &Scenario::lr_allocator},
    KeyDef{"model", "lr_continual", &Scenario::lr_continual},
    KeyDef{"model", "revin_affine", &Scenario::revin_affine},
    KeyDef{"model", "revin_eps", &Scenario::revin_eps},
};
// clang-format on

const KeyDef* find_key(const std::string& section, const std::string& key) {
  for (const auto& k : kKeys) {
    if (section == k.section && key == k.key) return &k;
  }
  return nullptr;
}

template <typename T>
T parse_number(const std::string& name, const std::string& text) {
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError(name, fmt::format("{}: cannot parse '{}'", name, text));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ConfigError(name, fmt::format("{}: value must be finite", name));
  }
  return v;
}

bool parse_bool(const std::string& name, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(name, fmt::format("{}: expected true/false, got '{}'", name, text));
}

void require(bool ok, const char* key, const std::string& why) {
  if (!ok) throw ConfigError(key, fmt::format("{}: {}", key, why));
}

}  // namespace

void Scenario::validate() const {
  require(num_rus >= 1, "num_rus", "must be at least 1");
  require(num_dus >= 1, "num_dus", "must be at least 1");
  require(num_ues >= 1, "num_ues", "must be at least 1");
  require(antennas >= 1, "antennas", "must be at least 1");
  require(ru_bandwidth_hz > 0.0, "ru_bandwidth", "must be positive");
  require(guard_band_hz >= 0.0, "guard_band", "must be non-negative");
  require(ru_bandwidth_hz > guard_band_hz, "ru_bandwidth", "must exceed guard_band");
  require(frame_len_s > 0.0, "frame_len", "must be positive");
  require(lambda >= 0.0, "lambda", "must be non-negative");
  require(eps1 > 0.0 && eps1 < 1.0, "eps1", "must lie in (0,1)");
  require(eps2 > 0.0 && eps2 < 1.0, "eps2", "must lie in (0,1)");
  require(error_prob > 0.0 && error_prob < 0.5, "error_prob", "must lie in (0,0.5)");
  require(snr_floor >= 0.0, "snr_floor", "must be non-negative");
  require(noise_w > 0.0, "noise", "must be positive");
  require(p_max_w > 0.0, "p_max", "must be positive");
  require(dispersion >= 0.0, "dispersion", "must be non-negative");
  require(fh_capacity_bps > 0.0, "fh_capacity", "must be positive");
  require(mh_capacity_bps > 0.0, "mh_capacity", "must be positive");
  require(cpu_cu_hz > 0.0, "cpu_cu", "must be positive");
  require(cpu_du_hz > 0.0, "cpu_du", "must be positive");
  require(cycles_per_packet >= 0.0, "cycles_per_packet", "must be non-negative");
  require(packet_bits >= 0.0, "packet_bits", "must be non-negative");
  require(qmax_bytes > 0.0, "qmax", "must be positive");
  require(pkt_size_em_bytes > 0.0, "pkt_size_em", "must be positive");
  require(pkt_size_ur_bytes > 0.0, "pkt_size_ur", "must be positive");
  require(rate_threshold_bps >= 0.0, "rate_threshold", "must be non-negative");
  require(latency_budget_s > 0.0, "latency_budget", "must be positive");
  require(lat_th_em_s > 0.0, "lat_th_em", "must be positive");
  require(lat_th_ur_s > 0.0, "lat_th_ur", "must be positive");
  require(omega_max_pps > 0.0, "omega_max", "must be positive");
  require(embb_rate_bps >= 0.0, "embb_rate", "must be non-negative");
  require(urllc_rate_pps >= 0.0, "urllc_rate", "must be non-negative");
  require(sinusoid_amplitude >= 0.0 && sinusoid_amplitude <= 1.0, "sinusoid_amplitude",
          "must lie in [0,1]");
  require(sinusoid_period_frames > 0.0, "sinusoid_period", "must be positive");
  require(ue_speed_mps >= 0.0, "ue_speed", "must be non-negative");
  require(ru_spacing_m > 0.0, "ru_spacing", "must be positive");
  require(carrier_ghz > 0.0, "carrier_ghz", "must be positive");
  require(rician_k >= 0.0, "rician_k", "must be non-negative");
  require(ru_proc_delay_s >= 0.0, "ru_proc_delay", "must be non-negative");
  require(r_max_bps >= 0.0, "r_max", "must be non-negative");
  require(history_frames >= 1, "history_frames", "must be at least 1");
  require(d_model >= 1, "d_model", "must be at least 1");
  require(encoder_layers >= 1, "encoder_layers", "must be at least 1");
  require(heads >= 1 && d_model % heads == 0, "heads", "must divide d_model");
  require(ffn_dim >= 1, "ffn_dim", "must be at least 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0,1)");
  require(lstm_hidden >= 1, "lstm_hidden", "must be at least 1");
  require(lstm_layers >= 1, "lstm_layers", "must be at least 1");
  require(lstm_dropout >= 0.0 && lstm_dropout < 1.0, "lstm_dropout", "must lie in [0,1)");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(lr_forecaster > 0.0, "lr_forecaster", "must be positive");
  require(lr_allocator > 0.0, "lr_allocator", "must be positive");
  require(lr_continual > 0.0, "lr_continual", "must be positive");
  require(revin_eps > 0.0, "revin_eps", "must be positive");
  try {
    const auto em = embb();
    const auto ur = urllc();
    (void)em;
    (void)ur;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("frame_len", fmt::format("frame_len: {}", e.what()));
  }
}

Scenario load_scenario(std::string_view config_text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(config_text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("", fmt::format("parse error at line {}: {}", e.line(), e.message()));
  }
  Scenario s;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError(section, fmt::format("key '{}' outside of any section", section));
    }
    for (const auto& [key, node] : body) {
      const KeyDef* def = find_key(section, key);
      const std::string name = fmt::format("{}.{}", section, key);
      if (def == nullptr) throw ConfigError(key, fmt::format("unknown key '{}'", name));
      const std::string text = node.get_value<std::string>();
      std::visit(
          [&](auto member) {
            using T = std::remove_reference_t<decltype(s.*member)>;
            if constexpr (std::is_same_v<T, bool>) {
              s.*member = parse_bool(key, text);
            } else {
              s.*member = parse_number<T>(key, text);
            }
          },
          def->field);
    }
  }
  s.validate();
  return s;
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", fmt::format("cannot open scenario file '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return load_scenario(buf.str());
}

std::string serialize(const Scenario& s) {
  std::string out;
  std::string current;
  for (const auto& k : kKeys) {
    if (current != k.section) {
      if (!current.empty()) out += '\n';
      current = k.section;
      out += fmt::format("[{}]\n", current);
    }
    std::visit(
        [&](auto member) {
          using T = std::remove_reference_t<decltype(s.*member)>;
          if constexpr (std::is_same_v<T, bool>) {
            out += fmt::format("{} = {}\n", k.key, s.*member ? "true" : "false");
          } else {
            out += fmt::format("{} = {}\n", k.key, s.*member);
          }
        },
        k.field);
  }
  return out;
}

}  // namespace msmu
