#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "repst/matrix.hpp"
#include "repst/tensor.hpp"

namespace repst {

// Spatio-temporal series: N nodes by time_count steps, with a per-cell
// missing mask until forward_fill clears it.
struct Dataset {
    Tensor values;  // N x time_count
    std::vector<std::uint8_t> missing;
    std::string frequency = "unknown";

    int nodes() const { return values.rank() == 2 ? values.dim(0) : 0; }
    int steps() const { return values.rank() == 2 ? values.dim(1) : 0; }
    bool has_missing() const {
        for (auto m : missing) {
            if (m) return true;
        }
        return false;
    }
};

struct WindowSample {
    Tensor input;   // N x T
    Tensor target;  // N x tau
    int anchor = 0;  // time index of the last input step
};

enum class Layout { kNodesAsRows, kNodesAsCols };

// CSV (comma-delimited, optional auto-detected header, empty field = missing)
// or the binary checkpoint container holding a rank-2 "values" entry.
Dataset load_matrix(const std::string& path, Layout layout);

// Replace each missing cell with the latest earlier observation of the same
// node; a leading missing run is backfilled from the first observation.
Dataset forward_fill(const Dataset& ds);

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

// Contiguous chronological split. Lengths are floor(fraction * time_count)
// with the remainder assigned to train. Every split must reach min_len.
std::array<Dataset, 3> chrono_split(const Dataset& ds, const SplitFractions& fractions,
                                    int min_len = 0);
std::array<Dataset, 3> chrono_split_lengths(const Dataset& ds, const std::array<int, 3>& lengths,
                                            int min_len = 0);

std::vector<WindowSample> make_windows(const Dataset& ds, int t_hist, int tau, int stride);

enum class SynthMode { kLinearSystem, kPeriodicDiffusion };

struct SynthSpec {
    int nodes = 8;
    int steps = 256;
    std::uint64_t seed = 0;
    SynthMode mode = SynthMode::kLinearSystem;
    int rank = 3;      // linear-system: rank of the stable generator
    double snr = 0.0;  // periodic-diffusion: signal-to-noise ratio; <= 0 disables noise
};

struct SynthResult {
    Dataset data;
    Matrix generator;  // linear-system: the evolution matrix A
    Tensor clean;      // periodic-diffusion: noise-free signal
    double snr = 0.0;  // realized variance ratio; 0 when noiseless
    int rank = 0;
};

SynthResult synth_generate(const SynthSpec& spec);

}  // namespace repst
