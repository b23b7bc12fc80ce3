#include "repst/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "repst/errors.hpp"

namespace repst {

// ---------------------------------------------------------------------------
// ParamStore and checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'P', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void append_f32_le(std::vector<unsigned char>& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    buf.push_back(static_cast<unsigned char>(bits & 0xFF));
    buf.push_back(static_cast<unsigned char>((bits >> 8) & 0xFF));
    buf.push_back(static_cast<unsigned char>((bits >> 16) & 0xFF));
    buf.push_back(static_cast<unsigned char>((bits >> 24) & 0xFF));
}

std::vector<unsigned char> payload_bytes(const Tensor& value) {
    std::vector<unsigned char> buf;
    buf.reserve(static_cast<std::size_t>(value.numel()) * 4);
    for (std::int64_t i = 0; i < value.numel(); ++i) {
        append_f32_le(buf, static_cast<float>(value[i]));
    }
    return buf;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == EOF) throw CheckpointError("unexpected end of file while reading " + what);
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t len, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= kFnvPrime;
    }
    return h;
}

void ParamStore::add(const std::string& name, Tensor value, bool frozen) {
    if (index_.count(name)) {
        throw CheckpointError("duplicate parameter entry: " + name);
    }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), frozen});
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

const ParamStore::Entry& ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw CheckpointError("missing parameter entry: " + name);
    }
    return entries_[it->second];
}

Tensor& ParamStore::value(const std::string& name) {
    return const_cast<Entry&>(find(name)).value;
}

const Tensor& ParamStore::value(const std::string& name) const { return find(name).value; }

bool ParamStore::is_frozen(const std::string& name) const { return find(name).frozen; }

std::uint64_t ParamStore::digest_all() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : entries_) {
        const auto bytes = payload_bytes(e.value);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    return h;
}

std::uint64_t ParamStore::digest_frozen() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : entries_) {
        if (!e.frozen) continue;
        const auto bytes = payload_bytes(e.value);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    return h;
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 8);
    write_le<std::uint16_t>(out, kVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.entries().size()));

    std::uint64_t digest = kFnvOffset;
    for (const auto& e : store.entries()) {
        write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        out.put(static_cast<char>(e.value.rank()));
        for (int d = 0; d < e.value.rank(); ++d) {
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.dim(d)));
        }
        out.put(e.frozen ? 1 : 0);
        const auto bytes = payload_bytes(e.value);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        digest = fnv1a64(bytes.data(), bytes.size(), digest);
    }
    write_le<std::uint64_t>(out, digest);
    if (!out) throw CheckpointError("write failed for checkpoint: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[8] = {};
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw CheckpointError(path + ": bad magic bytes");
    }
    const auto version = read_le<std::uint16_t>(in, "version");
    if (version != kVersion) {
        throw CheckpointError(path + ": unsupported version " + std::to_string(version));
    }
    const auto count = read_le<std::uint32_t>(in, "entry count");

    ParamStore store;
    std::uint64_t digest = kFnvOffset;
    for (std::uint32_t idx = 0; idx < count; ++idx) {
        const auto name_len = read_le<std::uint16_t>(in, "entry name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != name_len) {
            throw CheckpointError(path + ": truncated name in entry " + std::to_string(idx));
        }
        const int ndim = in.get();
        if (ndim == EOF || ndim < 0 || ndim > 8) {
            throw CheckpointError(path + ": bad rank in entry '" + name + "'");
        }
        std::vector<int> shape(static_cast<std::size_t>(ndim));
        std::int64_t numel = 1;
        for (int d = 0; d < ndim; ++d) {
            shape[static_cast<std::size_t>(d)] =
                static_cast<int>(read_le<std::uint32_t>(in, "shape of entry '" + name + "'"));
            numel *= shape[static_cast<std::size_t>(d)];
        }
        const int frozen = in.get();
        if (frozen == EOF) {
            throw CheckpointError(path + ": truncated flags in entry '" + name + "'");
        }
        std::vector<unsigned char> bytes(static_cast<std::size_t>(numel) * 4);
        in.read(reinterpret_cast<char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
        if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
            throw CheckpointError(path + ": payload shorter than declared shape in entry '" +
                                  name + "'");
        }
        digest = fnv1a64(bytes.data(), bytes.size(), digest);

        Tensor value(shape);
        for (std::int64_t i = 0; i < numel; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) {
                bits |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(i) * 4 + b])
                        << (8 * b);
            }
            float f;
            std::memcpy(&f, &bits, 4);
            value[i] = static_cast<double>(f);
        }
        store.add(name, std::move(value), frozen != 0);
    }
    const auto stored_digest = read_le<std::uint64_t>(in, "digest");
    if (stored_digest != digest) {
        throw CheckpointError(path + ": payload digest mismatch (file corrupt)");
    }
    return store;
}

// ---------------------------------------------------------------------------
// Backbone network
// ---------------------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;

Tensor gaussian_tensor(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.gaussian();
    return t;
}

Tensor ones_tensor(std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0;
    return t;
}

std::string layer_prefix(int layer) { return "backbone.l" + std::to_string(layer) + "."; }

}  // namespace

void BackboneConfig::validate() const {
    if (layers < 1) throw ConfigError("backbone: layers must be >= 1");
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("backbone: dim " + std::to_string(dim) +
                          " must be divisible by heads " + std::to_string(heads));
    }
    if (ffn_dim < 1 || max_seq < 1) throw ConfigError("backbone: bad ffn_dim or max_seq");
}

void append_backbone_entries(ParamStore& store, const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.dim;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = layer_prefix(l);
        store.add(p + "ln1.gain", ones_tensor({d}), true);
        store.add(p + "ln1.bias", Tensor({d}), true);
        store.add(p + "attn.wq", gaussian_tensor({d, d}, 0.02, rng), true);
        store.add(p + "attn.bq", Tensor({d}), true);
        store.add(p + "attn.wk", gaussian_tensor({d, d}, 0.02, rng), true);
        store.add(p + "attn.bk", Tensor({d}), true);
        store.add(p + "attn.wv", gaussian_tensor({d, d}, 0.02, rng), true);
        store.add(p + "attn.bv", Tensor({d}), true);
        store.add(p + "attn.wo", gaussian_tensor({d, d}, 0.02, rng), true);
        store.add(p + "attn.bo", Tensor({d}), true);
        store.add(p + "ln2.gain", ones_tensor({d}), true);
        store.add(p + "ln2.bias", Tensor({d}), true);
        store.add(p + "ffn.w1", gaussian_tensor({d, cfg.ffn_dim}, 0.02, rng), true);
        store.add(p + "ffn.b1", Tensor({cfg.ffn_dim}), true);
        store.add(p + "ffn.w2", gaussian_tensor({cfg.ffn_dim, d}, 0.02, rng), true);
        store.add(p + "ffn.b2", Tensor({d}), true);
    }
}

ParamStore init_seeded(const BackboneConfig& cfg, std::uint64_t seed) {
    ParamStore store;
    Rng rng = derive_rng(seed, rng_stream::kInit);
    append_backbone_entries(store, cfg, rng);
    return store;
}

diff::Var backbone_forward(diff::Tape& tape, diff::Var z, const ParamStore& store,
                           const BackboneConfig& cfg) {
    cfg.validate();
    const Tensor& zv = tape.value(z);
    if (zv.rank() != 2 || zv.dim(1) != cfg.dim) {
        throw ContractViolation("backbone_forward: expected (S," + std::to_string(cfg.dim) +
                                ") tokens, got " + zv.shape_str());
    }
    const int seq = zv.dim(0);
    if (seq > cfg.max_seq) {
        throw ContractViolation("backbone_forward: sequence length " + std::to_string(seq) +
                                " exceeds max_seq " + std::to_string(cfg.max_seq) +
                                "; partition the nodes into smaller subgraphs");
    }
    const int d = cfg.dim;
    const int dh = d / cfg.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    diff::Var mask;
    if (cfg.causal) {
        Tensor m({seq, seq});
        for (int i = 0; i < seq; ++i) {
            for (int j = i + 1; j < seq; ++j) m.at2(i, j) = -1e30;
        }
        mask = tape.constant(std::move(m));
    }

    auto weight = [&](const std::string& name) { return tape.constant(store.value(name)); };

    diff::Var x = z;
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = layer_prefix(l);

        diff::Var h = tape.layer_norm(x, 1, kLnEps);
        h = tape.add(tape.ewmul(h, weight(p + "ln1.gain")), weight(p + "ln1.bias"));

        diff::Var q = tape.add(tape.matmul(h, weight(p + "attn.wq")), weight(p + "attn.bq"));
        diff::Var k = tape.add(tape.matmul(h, weight(p + "attn.wk")), weight(p + "attn.bk"));
        diff::Var v = tape.add(tape.matmul(h, weight(p + "attn.wv")), weight(p + "attn.bv"));

        std::vector<diff::Var> heads;
        for (int hh = 0; hh < cfg.heads; ++hh) {
            diff::Var qh = tape.slice(q, 1, hh * dh, dh);
            diff::Var kh = tape.slice(k, 1, hh * dh, dh);
            diff::Var vh = tape.slice(v, 1, hh * dh, dh);
            diff::Var scores =
                tape.scalar_scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            if (cfg.causal) scores = tape.add(scores, mask);
            diff::Var attn = tape.softmax(scores, 1);
            heads.push_back(tape.matmul(attn, vh));
        }
        diff::Var merged = cfg.heads == 1 ? heads[0] : tape.concat(heads, 1);
        diff::Var att_out =
            tape.add(tape.matmul(merged, weight(p + "attn.wo")), weight(p + "attn.bo"));
        x = tape.add(x, att_out);

        diff::Var h2 = tape.layer_norm(x, 1, kLnEps);
        h2 = tape.add(tape.ewmul(h2, weight(p + "ln2.gain")), weight(p + "ln2.bias"));
        diff::Var f = tape.add(tape.matmul(h2, weight(p + "ffn.w1")), weight(p + "ffn.b1"));
        f = tape.gelu(f);
        f = tape.add(tape.matmul(f, weight(p + "ffn.w2")), weight(p + "ffn.b2"));
        x = tape.add(x, f);
    }
    return x;
}

diff::Var project_head(diff::Tape& tape, diff::Var z_text, diff::Var weight, diff::Var bias,
                       int nodes, int patches, int dim, int horizon) {
    const Tensor& zv = tape.value(z_text);
    if (zv.rank() != 2 || zv.dim(0) != nodes * patches || zv.dim(1) != dim) {
        throw ContractViolation("project: tokens " + zv.shape_str() + " do not match N=" +
                                std::to_string(nodes) + " P=" + std::to_string(patches) +
                                " d=" + std::to_string(dim));
    }
    const Tensor& wv = tape.value(weight);
    if (wv.rank() != 2 || wv.dim(0) != patches * dim || wv.dim(1) != horizon) {
        throw ContractViolation("project: weight " + wv.shape_str() + " does not match (P*d=" +
                                std::to_string(patches * dim) + ", tau=" +
                                std::to_string(horizon) + ")");
    }
    diff::Var flat = tape.reshape(z_text, {nodes, patches * dim});
    return tape.add(tape.matmul(flat, weight), bias);
}

}  // namespace repst
