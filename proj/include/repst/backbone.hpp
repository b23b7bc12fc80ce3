#pragma once

#include <cstdint>
#include <string>

#include "repst/autodiff.hpp"
#include "repst/checkpoint.hpp"
#include "repst/rng.hpp"

namespace repst {

struct BackboneConfig {
    int layers = 3;
    int dim = 128;  // model width d, shared with the vocabulary embedding
    int heads = 4;
    int ffn_dim = 512;
    int max_seq = 512;
    bool causal = false;

    void validate() const;
};

// Deterministic Gaussian(0, 0.02) weights, zero biases, unit layer-norm
// gains; every entry flagged frozen. Same (cfg, seed) gives a bit-identical
// store.
ParamStore init_seeded(const BackboneConfig& cfg, std::uint64_t seed);

// Appends the frozen backbone entries to an existing store (used by the
// full-model initializer).
void append_backbone_entries(ParamStore& store, const BackboneConfig& cfg, Rng& rng);

// Applies L pre-norm blocks (self-attention + FFN with residuals) to a
// flattened token sequence z of shape (S, d). Backbone weights enter the tape
// as constants, so no gradient ever reaches them; gradients still flow
// through to upstream trainables.
diff::Var backbone_forward(diff::Tape& tape, diff::Var z, const ParamStore& store,
                           const BackboneConfig& cfg);

// Trainable output head: per node, flatten the P tokens of width d and map
// them to the tau forecast steps.
diff::Var project_head(diff::Tape& tape, diff::Var z_text, diff::Var weight, diff::Var bias,
                       int nodes, int patches, int dim, int horizon);

}  // namespace repst
