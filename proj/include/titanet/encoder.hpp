#pragma once

// TitaNet encoder: a prologue convolution, B mega blocks of R depthwise-
// separable sub-blocks with squeeze-excitation residuals, and an epilogue
// projection. All strides are 1, so time length is preserved end to end.

#include <cstdint>
#include <string>
#include <vector>

#include "titanet/autograd.hpp"
#include "titanet/rng.hpp"
#include "titanet/tensor.hpp"

namespace titanet {

struct EncoderConfig {
    int mega_blocks = 3;  // B
    int repeats = 3;      // R
    int channels = 256;   // C
    std::vector<int> mega_kernels = {7, 11, 15};
    int prologue_kernel = 3;
    int epilogue_kernel = 1;
    int epilogue_channels = 1536;
    double dropout = 0.1;
    int se_reduction = 8;
    int n_mels = 80;

    void validate() const;  // throws std::invalid_argument
};

// titanet_s | titanet_m | titanet_l | toy
EncoderConfig encoder_preset(const std::string& name);

struct ConvBnRelu {
    Parameter w;  // full conv [Co, Ci, K] or pointwise [Co, Ci]
    Parameter bias;
    Parameter gamma, beta;
    BnState bn;
};

struct SubBlock {
    Parameter dw;       // [C, K]
    Parameter pw;       // [C, C]
    Parameter pw_bias;  // [C]
    Parameter gamma, beta;
    BnState bn;
};

struct SeBlock {
    Parameter w1, b1;  // [C/r, C], [C/r]
    Parameter w2, b2;  // [C, C/r], [C]
};

struct MegaBlock {
    std::vector<SubBlock> subs;
    SeBlock se;
};

struct Encoder {
    EncoderConfig cfg;
    ConvBnRelu prologue;  // n_mels -> C, k = prologue_kernel, no bias
    std::vector<MegaBlock> blocks;
    ConvBnRelu epilogue;  // C -> epilogue_channels, k = 1, with bias

    std::vector<Parameter*> parameters();  // deterministic order
    std::vector<BnState*> bn_states();
};

Encoder build_encoder(const EncoderConfig& cfg, uint64_t seed);

// mel: [B, T, n_mels]. Returns node id for [B, epilogue_channels, T].
// dropout_rng is required in train mode when cfg.dropout > 0.
int encoder_forward(Encoder& enc, Graph& g, const Tensor& mel, Mode mode, Rng* dropout_rng = nullptr);

// Forward from an existing graph node holding [B, n_mels, T] (channel-major).
int encoder_forward_node(Encoder& enc, Graph& g, int mel_cmajor, Mode mode, Rng* dropout_rng = nullptr);

int64_t count_parameters(Encoder& enc);

// Uniform fan-in init bound 1/sqrt(fan_in), shared with the decoder layers.
void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng);

}  // namespace titanet
