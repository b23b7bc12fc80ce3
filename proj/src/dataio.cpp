#include "repst/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "repst/checkpoint.hpp"
#include "repst/errors.hpp"
#include "repst/rng.hpp"

namespace repst {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool parse_number(const std::string& field, double& out) {
    if (field.empty()) return false;
    const char* begin = field.c_str();
    char* end = nullptr;
    out = std::strtod(begin, &end);
    return end == begin + field.size();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

Dataset load_csv(const std::string& path, Layout layout) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open file: " + path);

    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
        line_numbers.push_back(line_no);
    }
    if (rows.empty()) throw InputError(path + ": no data rows");

    // Header row: any non-empty field of the first row that fails to parse.
    bool header = false;
    for (const auto& f : rows[0]) {
        double v;
        if (!f.empty() && !parse_number(f, v)) {
            header = true;
            break;
        }
    }
    const std::size_t first = header ? 1 : 0;
    if (first >= rows.size()) throw InputError(path + ": header only, no data rows");

    const std::size_t width = rows[first].size();
    const std::size_t height = rows.size() - first;
    for (std::size_t r = first; r < rows.size(); ++r) {
        if (rows[r].size() != width) {
            throw InputError(path + ": ragged row at line " + std::to_string(line_numbers[r]) +
                             " (expected " + std::to_string(width) + " fields, got " +
                             std::to_string(rows[r].size()) + ")");
        }
    }

    const bool rows_are_nodes = (layout == Layout::kNodesAsRows);
    const int n = static_cast<int>(rows_are_nodes ? height : width);
    const int t = static_cast<int>(rows_are_nodes ? width : height);

    Dataset ds;
    ds.values = Tensor({n, t});
    ds.missing.assign(static_cast<std::size_t>(n) * t, 0);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            double v = 0.0;
            const bool ok = parse_number(rows[first + r][c], v);
            const int node = rows_are_nodes ? static_cast<int>(r) : static_cast<int>(c);
            const int step = rows_are_nodes ? static_cast<int>(c) : static_cast<int>(r);
            if (ok) {
                ds.values.at2(node, step) = v;
            } else {
                ds.missing[static_cast<std::size_t>(node) * t + step] = 1;
            }
        }
    }
    return ds;
}

bool file_has_container_magic(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open file: " + path);
    char magic[8] = {};
    in.read(magic, 8);
    return in.gcount() == 8 && std::string(magic, 8) == "RPSTCKPT";
}

Dataset load_container(const std::string& path, Layout layout) {
    ParamStore store = load_checkpoint(path);
    for (const auto& e : store.entries()) {
        if (e.value.rank() == 2) {
            Dataset ds;
            if (layout == Layout::kNodesAsRows) {
                ds.values = e.value;
            } else {
                const int r = e.value.dim(0), c = e.value.dim(1);
                ds.values = Tensor({c, r});
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) ds.values.at2(j, i) = e.value.at2(i, j);
                }
            }
            ds.missing.assign(static_cast<std::size_t>(ds.values.numel()), 0);
            return ds;
        }
    }
    throw InputError(path + ": container holds no rank-2 tensor entry");
}

}  // namespace

Dataset load_matrix(const std::string& path, Layout layout) {
    if (file_has_container_magic(path)) {
        return load_container(path, layout);
    }
    return load_csv(path, layout);
}

Dataset forward_fill(const Dataset& ds) {
    Dataset out = ds;
    const int n = ds.nodes();
    const int t = ds.steps();
    for (int node = 0; node < n; ++node) {
        int first_obs = -1;
        for (int step = 0; step < t; ++step) {
            if (!ds.missing[static_cast<std::size_t>(node) * t + step]) {
                first_obs = step;
                break;
            }
        }
        if (first_obs < 0) {
            throw InputError("forward_fill: node " + std::to_string(node) +
                             " has no observed values");
        }
        // Leading gap backfills from the first observation.
        for (int step = 0; step < first_obs; ++step) {
            out.values.at2(node, step) = ds.values.at2(node, first_obs);
        }
        double last = ds.values.at2(node, first_obs);
        for (int step = first_obs; step < t; ++step) {
            if (ds.missing[static_cast<std::size_t>(node) * t + step]) {
                out.values.at2(node, step) = last;
            } else {
                last = ds.values.at2(node, step);
            }
        }
    }
    out.missing.assign(static_cast<std::size_t>(n) * t, 0);
    return out;
}

namespace {

Dataset take_range(const Dataset& ds, int start, int len) {
    const int n = ds.nodes();
    const int t = ds.steps();
    Dataset out;
    out.frequency = ds.frequency;
    out.values = Tensor({n, len});
    out.missing.assign(static_cast<std::size_t>(n) * len, 0);
    for (int node = 0; node < n; ++node) {
        for (int step = 0; step < len; ++step) {
            out.values.at2(node, step) = ds.values.at2(node, start + step);
            out.missing[static_cast<std::size_t>(node) * len + step] =
                ds.missing[static_cast<std::size_t>(node) * t + start + step];
        }
    }
    return out;
}

}  // namespace

std::array<Dataset, 3> chrono_split_lengths(const Dataset& ds, const std::array<int, 3>& lengths,
                                            int min_len) {
    const int total = lengths[0] + lengths[1] + lengths[2];
    if (total != ds.steps()) {
        throw ConfigError("chrono_split: lengths sum to " + std::to_string(total) +
                          " but dataset has " + std::to_string(ds.steps()) + " steps");
    }
    for (int len : lengths) {
        if (len < min_len) {
            throw ConfigError("chrono_split: split length " + std::to_string(len) +
                              " is shorter than the required minimum " + std::to_string(min_len));
        }
    }
    return {take_range(ds, 0, lengths[0]), take_range(ds, lengths[0], lengths[1]),
            take_range(ds, lengths[0] + lengths[1], lengths[2])};
}

std::array<Dataset, 3> chrono_split(const Dataset& ds, const SplitFractions& fractions,
                                    int min_len) {
    const double sum = fractions.train + fractions.val + fractions.test;
    if (fractions.train <= 0.0 || fractions.val <= 0.0 || fractions.test <= 0.0) {
        throw ConfigError("chrono_split: fractions must be positive");
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("chrono_split: fractions sum to " + std::to_string(sum) +
                          ", expected 1");
    }
    const int t = ds.steps();
    const int val_len = static_cast<int>(std::floor(fractions.val * t));
    const int test_len = static_cast<int>(std::floor(fractions.test * t));
    const int train_len = t - val_len - test_len;  // remainder goes to train
    return chrono_split_lengths(ds, {train_len, val_len, test_len}, min_len);
}

std::vector<WindowSample> make_windows(const Dataset& ds, int t_hist, int tau, int stride) {
    if (t_hist < 1 || tau < 1 || stride < 1) {
        throw ContractViolation("make_windows: T, tau and stride must be >= 1");
    }
    std::vector<WindowSample> out;
    const int n = ds.nodes();
    const int total = ds.steps();
    for (int anchor = t_hist - 1; anchor + tau < total; anchor += stride) {
        WindowSample w;
        w.anchor = anchor;
        w.input = Tensor({n, t_hist});
        w.target = Tensor({n, tau});
        for (int node = 0; node < n; ++node) {
            for (int i = 0; i < t_hist; ++i) {
                w.input.at2(node, i) = ds.values.at2(node, anchor - t_hist + 1 + i);
            }
            for (int i = 0; i < tau; ++i) {
                w.target.at2(node, i) = ds.values.at2(node, anchor + 1 + i);
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

namespace {

// Orthonormal columns from seeded Gaussians via modified Gram-Schmidt.
Matrix random_orthonormal(int n, int cols, Rng& rng) {
    Matrix q(n, cols);
    for (int j = 0; j < cols; ++j) {
        std::vector<double> v(n);
        for (int i = 0; i < n; ++i) v[i] = rng.gaussian();
        for (int k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += v[i] * q(i, k);
            for (int i = 0; i < n; ++i) v[i] -= dot * q(i, k);
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // Essentially impossible for Gaussian draws; restart the column.
            --j;
            continue;
        }
        for (int i = 0; i < n; ++i) q(i, j) = v[i] / norm;
    }
    return q;
}

SynthResult synth_linear(const SynthSpec& spec) {
    const int n = spec.nodes;
    const int steps = spec.steps;
    const int r = spec.rank;
    Rng rng(splitmix64(spec.seed ^ 0x11AEA11ULL));

    Matrix q = random_orthonormal(n, r, rng);

    // Stable block-diagonal core: conjugate rotation pairs plus one real
    // eigenvalue when the rank is odd.
    Matrix core(r, r);
    int filled = 0;
    if (r % 2 == 1) {
        core(0, 0) = 0.9 + 0.09 * rng.uniform();
        filled = 1;
    }
    while (filled < r) {
        const double radius = 0.9 + 0.099 * rng.uniform();
        const double angle = 0.25 + 2.2 * rng.uniform();
        core(filled, filled) = radius * std::cos(angle);
        core(filled, filled + 1) = -radius * std::sin(angle);
        core(filled + 1, filled) = radius * std::sin(angle);
        core(filled + 1, filled + 1) = radius * std::cos(angle);
        filled += 2;
    }

    Matrix a = matmul(matmul(q, core), transpose(q));

    // Start inside the generator's range so the trajectory stays rank r.
    std::vector<double> w(r);
    for (int i = 0; i < r; ++i) w[i] = rng.gaussian() + (rng.gaussian() > 0 ? 0.5 : -0.5);
    std::vector<double> x(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < r; ++k) x[i] += q(i, k) * w[k];
    }

    SynthResult out;
    out.generator = a;
    out.rank = r;
    out.data.frequency = "synthetic-linear";
    out.data.values = Tensor({n, steps});
    out.data.missing.assign(static_cast<std::size_t>(n) * steps, 0);
    for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < n; ++i) out.data.values.at2(i, t) = x[i];
        std::vector<double> next(n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) next[i] += a(i, j) * x[j];
        }
        x = std::move(next);
    }
    return out;
}

SynthResult synth_periodic(const SynthSpec& spec) {
    const int n = spec.nodes;
    const int steps = spec.steps;
    Rng rng(splitmix64(spec.seed ^ 0x9E4105D1ULL));

    const double periods[2] = {24.0, 12.0};
    const double base_amp[2] = {1.0, 0.45};

    // Per-node amplitudes and phase offsets, smoothed over a ring graph so
    // neighbours co-evolve.
    std::vector<std::vector<double>> amp(2, std::vector<double>(n));
    std::vector<std::vector<double>> phase(2, std::vector<double>(n));
    std::vector<double> global_phase(2);
    for (int f = 0; f < 2; ++f) {
        global_phase[f] = 6.283185307179586 * rng.uniform();
        for (int i = 0; i < n; ++i) {
            amp[f][i] = base_amp[f] * (0.6 + 0.8 * rng.uniform());
            phase[f][i] = 0.5 * rng.gaussian();
        }
        for (int round = 0; round < 3; ++round) {
            std::vector<double> amp2(n), ph2(n);
            for (int i = 0; i < n; ++i) {
                const int l = (i + n - 1) % n;
                const int rr = (i + 1) % n;
                amp2[i] = 0.5 * amp[f][i] + 0.25 * (amp[f][l] + amp[f][rr]);
                ph2[i] = 0.5 * phase[f][i] + 0.25 * (phase[f][l] + phase[f][rr]);
            }
            amp[f] = std::move(amp2);
            phase[f] = std::move(ph2);
        }
    }

    Tensor clean({n, steps});
    double var_acc = 0.0;
    double mean_acc = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < steps; ++t) {
            double v = 0.0;
            for (int f = 0; f < 2; ++f) {
                v += amp[f][i] *
                     std::sin(6.283185307179586 * t / periods[f] + global_phase[f] + phase[f][i]);
            }
            clean.at2(i, t) = v;
            mean_acc += v;
        }
    }
    const double mean = mean_acc / static_cast<double>(clean.numel());
    for (std::int64_t i = 0; i < clean.numel(); ++i) {
        const double d = clean[i] - mean;
        var_acc += d * d;
    }
    const double clean_var = var_acc / static_cast<double>(clean.numel());

    SynthResult out;
    out.clean = clean;
    out.rank = 0;
    out.data.frequency = "synthetic-periodic";
    out.data.values = clean;
    out.data.missing.assign(static_cast<std::size_t>(n) * steps, 0);
    if (spec.snr > 0.0) {
        const double sigma = std::sqrt(clean_var / spec.snr);
        double noise_var = 0.0;
        for (std::int64_t i = 0; i < out.data.values.numel(); ++i) {
            const double e = sigma * rng.gaussian();
            out.data.values[i] += e;
            noise_var += e * e;
        }
        noise_var /= static_cast<double>(out.data.values.numel());
        out.snr = noise_var > 0.0 ? clean_var / noise_var : 0.0;
    }
    return out;
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
    if (spec.nodes < 2) throw ConfigError("synth: nodes must be >= 2");
    if (spec.steps < 8) throw ConfigError("synth: steps must be >= 8");
    if (spec.mode == SynthMode::kLinearSystem) {
        if (spec.rank < 1 || spec.rank > spec.nodes) {
            throw ConfigError("synth: rank must lie in [1, nodes], got " +
                              std::to_string(spec.rank));
        }
        return synth_linear(spec);
    }
    return synth_periodic(spec);
}

}  // namespace repst
