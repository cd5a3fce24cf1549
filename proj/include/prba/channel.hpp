#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "prba/common.hpp"
#include "prba/random.hpp"

namespace prba {

enum class PsiMode { fixed, uniform };
enum class PathGainNormalization { none, sqrt_paths };

// `printed` is [[G_C, G_X], [G_X, -G_X]]; `symmetric` is [[G_C, G_X], [G_X, G_C]].
enum class AntennaGainForm { printed, symmetric };

struct ChannelConfig {
    std::size_t n_tx = 16;
    std::size_t n_rx = 8;
    std::size_t n_paths = 1;
    double chi = 0.2;      // inverse XPD of the depolarization matrix
    double chi_ant = 0.3;  // inverse XPD of the antennas
    PsiMode psi_mode = PsiMode::uniform;
    double psi_value = 0.0;  // used when psi_mode == fixed
    PathGainNormalization path_gain_normalization = PathGainNormalization::none;
    AntennaGainForm antenna_gain = AntennaGainForm::printed;

    void validate() const;
};

struct PathParams {
    cplx beta{1.0, 0.0};
    double aoa = 0.0;  // radians, [-pi/2, pi/2]
    double aod = 0.0;  // radians, [-pi/2, pi/2]
    double alpha_hh = 0.0;
    double alpha_hv = 0.0;
    double alpha_vh = 0.0;
    double alpha_vv = 0.0;
    double psi = 0.0;
};

// H_dp, shape 2 n_rx x 2 n_tx. Row/column 2k is the H component of antenna k
// and 2k+1 the V component.
struct DepolarizedChannel {
    CMatrix matrix;
    std::vector<PathParams> paths;
    ChannelConfig config;
    std::uint64_t seed = 0;
};

// Half-wavelength ULA: entry k is exp(-j pi k sin(phi)).
CVector steering_vector(std::size_t n, double phi);

Eigen::Matrix2d rotation_matrix(double psi);

// alphas = {hh, hv, vh, vv}.
Eigen::Matrix2cd depolarization_matrix(double chi, const std::array<double, 4>& alphas);

Eigen::Matrix2d antenna_gain_matrix(double chi_ant, AntennaGainForm form = AntennaGainForm::printed);

RMatrix antenna_gain_blockdiag(std::size_t n, double chi_ant,
                               AntennaGainForm form = AntennaGainForm::printed);

std::vector<PathParams> sample_paths(const ChannelConfig& config, Rng& rng);

DepolarizedChannel assemble_channel(std::vector<PathParams> paths, const ChannelConfig& config);

// sample_paths + assemble_channel on a stream seeded by `seed`.
DepolarizedChannel generate_channel(const ChannelConfig& config, std::uint64_t seed);

// Channel #index of an experiment seeded by `base_seed`.
DepolarizedChannel experiment_channel(const ChannelConfig& config, std::uint64_t base_seed,
                                      std::uint64_t index);

// Channel corpus files: JSON with a leading schema tag.
inline constexpr const char* kChannelCorpusSchema = "prba.channel-corpus/1";

void write_channel_corpus(const std::filesystem::path& path,
                          const std::vector<DepolarizedChannel>& channels, bool include_matrix);
std::vector<DepolarizedChannel> read_channel_corpus(const std::filesystem::path& path);

}  // namespace prba
