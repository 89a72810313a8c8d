#pragma once

// Attentive statistics pooling (per-channel attention over time), the
// embedding decoder (linear + batchnorm, no nonlinearity), and the cosine
// classifier head whose rows are unit-normalized so logits are cos(theta).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "titanet/autograd.hpp"
#include "titanet/encoder.hpp"
#include "titanet/features.hpp"

namespace titanet {

struct AttentivePooling {
    Parameter w1, b1;  // [d_att, C_e], [d_att]
    Parameter w2, b2;  // [C_e, d_att], [C_e]
};

struct Decoder {
    Parameter w;     // [emb_dim, 2*C_e]
    Parameter bias;  // [emb_dim]
    Parameter gamma, beta;
    BnState bn;
};

struct ClassifierHead {
    Parameter w;  // [n_classes, emb_dim], no bias; rows renormalized in-graph
};

struct SpeakerModel {
    Encoder encoder;
    AttentivePooling pooling;
    Decoder decoder;
    ClassifierHead head;  // empty when n_classes == 0
    int n_classes = 0;
    int emb_dim = 192;
    int d_att = 128;

    std::vector<Parameter*> parameters();          // head included when present
    std::vector<Parameter*> parameters_no_head();  // the size-independent trunk
    std::vector<BnState*> bn_states();
};

SpeakerModel build_model(const EncoderConfig& cfg, int n_classes, uint64_t seed, int emb_dim = 192,
                         int d_att = 128);

// h: [B, C_e, T] node. Returns [B, 2*C_e]: concat of attention-weighted mean
// and std, with variance floored at 1e-9.
int attentive_stats_pool(SpeakerModel& m, Graph& g, int h);

// pooled: [B, 2*C_e] -> [B, emb_dim] (linear + batchnorm, no nonlinearity).
int decode_embedding(SpeakerModel& m, Graph& g, int pooled, Mode mode);

// emb: [B, emb_dim] -> [B, n_classes] of cosines in [-1, 1].
int cosine_logits(SpeakerModel& m, Graph& g, int emb);

struct ForwardNodes {
    int pooled = -1;
    int embedding = -1;
    int logits = -1;  // -1 when the model has no head
};

// mel: [B, T, n_mels], already normalized per frequency.
ForwardNodes model_forward(SpeakerModel& m, Graph& g, const Tensor& mel, Mode mode,
                           Rng* dropout_rng = nullptr);

// Full inference path for one spectrogram: per-frequency normalization is
// applied here, so pass raw log-mel values. Returns a unit-norm [emb_dim]
// vector; deterministic (eval mode).
Tensor extract_embedding(SpeakerModel& m, const MelSpectrogram& mel);

// Trainable scalars excluding the class-dependent head.
int64_t count_parameters(SpeakerModel& m);
// (group label, parameter count) per architectural group; head listed last
// when present.
std::vector<std::pair<std::string, int64_t>> parameter_breakdown(SpeakerModel& m);

}  // namespace titanet
