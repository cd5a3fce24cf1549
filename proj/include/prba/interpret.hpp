#pragma once

#include <string>
#include <vector>

#include "prba/training.hpp"
#include "prba/transformer.hpp"

namespace prba {

// N x 2: row k = a(theta)[k] * (J p_k)^T. Column 0 is the co-polarized
// response a^C(theta).
CMatrix array_net_response(const PolarizationAngles& angles, double chi_ant, double theta,
                           AntennaGainForm form = AntennaGainForm::printed);

// 721 points over [-pi/2, pi/2].
std::vector<double> default_theta_grid(int points = 721);

// transmit: |a^C(theta)^T w|^2 (radiated pattern); receive: |w^H a^C(theta)|^2.
enum class ResponseSide { transmit, receive };

struct ArrayResponseCurve {
    std::vector<double> theta;
    std::vector<double> power;
    std::vector<double> power_db;
    std::size_t argmax = 0;
    double argmax_theta = 0.0;
    std::string tag;
};

ArrayResponseCurve response_power(const CVector& w, const PolarizationAngles& angles, double chi_ant,
                                  const std::vector<double>& grid, ResponseSide side,
                                  AntennaGainForm form = AntennaGainForm::printed);

// {"layers": [{"layer": i, "heads": [{"head": h, "rows": [[...]]}]}]}
Json export_attention(const AttentionTrace& trace);
AttentionTrace parse_attention(const Json& j);

enum class HeadSelection { first, random };

// Applies the same head subset to every layer of both sides.
PolicyPair isolate_pair(const PolicyPair& pair, const std::vector<int>& subset);

struct AblationRow {
    int head_count = 0;
    std::vector<int> heads;
    double mean_linear = 0.0;  // final stage
    double mean_db = 0.0;
    double stderr_db = 0.0;
};

std::vector<AblationRow> head_ablation_gain(const PolicyPair& pair, const std::vector<int>& counts,
                                            const ChannelConfig& channel,
                                            const ProtocolConfig& protocol, long episodes,
                                            std::uint64_t seed, HeadSelection selection,
                                            int threads = 1);

}  // namespace prba
