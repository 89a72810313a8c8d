#include "titanet/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace titanet {

void EncoderConfig::validate() const {
    if (mega_blocks < 1) throw std::invalid_argument("encoder config: mega_blocks must be >= 1");
    if (repeats < 1) throw std::invalid_argument("encoder config: repeats must be >= 1");
    if (channels < 1) throw std::invalid_argument("encoder config: channels must be >= 1");
    if (static_cast<int>(mega_kernels.size()) != mega_blocks)
        throw std::invalid_argument("encoder config: expected " + std::to_string(mega_blocks) +
                                    " mega kernels, got " + std::to_string(mega_kernels.size()));
    for (int k : mega_kernels)
        if (k < 1 || k % 2 == 0)
            throw std::invalid_argument("encoder config: mega kernel " + std::to_string(k) +
                                        " must be odd and positive");
    if (prologue_kernel % 2 == 0 || prologue_kernel < 1)
        throw std::invalid_argument("encoder config: prologue kernel must be odd");
    if (epilogue_kernel != 1) throw std::invalid_argument("encoder config: epilogue kernel must be 1");
    if (epilogue_channels < 1) throw std::invalid_argument("encoder config: epilogue_channels must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("encoder config: dropout must be in [0, 1)");
    if (se_reduction < 1 || channels % se_reduction != 0)
        throw std::invalid_argument("encoder config: se_reduction must divide channels (" +
                                    std::to_string(channels) + " % " + std::to_string(se_reduction) + " != 0)");
    if (n_mels < 1) throw std::invalid_argument("encoder config: n_mels must be >= 1");
}

EncoderConfig encoder_preset(const std::string& name) {
    EncoderConfig cfg;
    if (name == "titanet_s") {
        cfg.channels = 256;
    } else if (name == "titanet_m") {
        cfg.channels = 512;
    } else if (name == "titanet_l") {
        cfg.channels = 1024;
    } else if (name == "toy") {
        cfg.mega_blocks = 1;
        cfg.repeats = 1;
        cfg.channels = 8;
        cfg.mega_kernels = {7};
        cfg.epilogue_channels = 16;
    } else {
        throw std::invalid_argument("unknown encoder preset '" + name +
                                    "' (expected titanet_s|titanet_m|titanet_l|toy)");
    }
    cfg.validate();
    return cfg;
}

void init_uniform_fan_in(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
}

namespace {

Parameter make_param(const std::string& name, std::vector<int> shape, int fan_in, Rng& rng) {
    Parameter p(name, Tensor(std::move(shape)));
    init_uniform_fan_in(p.value, fan_in, rng);
    return p;
}

Parameter make_gamma(const std::string& name, int c) { return Parameter(name, Tensor::full({c}, 1.0)); }
Parameter make_beta(const std::string& name, int c) { return Parameter(name, Tensor::zeros({c})); }

}  // namespace

Encoder build_encoder(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Encoder enc;
    enc.cfg = cfg;
    const int C = cfg.channels;

    enc.prologue.w = make_param("prologue.w", {C, cfg.n_mels, cfg.prologue_kernel},
                                cfg.n_mels * cfg.prologue_kernel, rng);
    enc.prologue.gamma = make_gamma("prologue.bn.gamma", C);
    enc.prologue.beta = make_beta("prologue.bn.beta", C);
    enc.prologue.bn = BnState(C);

    for (int b = 0; b < cfg.mega_blocks; ++b) {
        MegaBlock mb;
        const int K = cfg.mega_kernels[static_cast<size_t>(b)];
        const std::string bp = "block" + std::to_string(b) + ".";
        for (int r = 0; r < cfg.repeats; ++r) {
            const std::string sp = bp + "sub" + std::to_string(r) + ".";
            SubBlock sb;
            sb.dw = make_param(sp + "dw", {C, K}, K, rng);
            sb.pw = make_param(sp + "pw", {C, C}, C, rng);
            sb.pw_bias = make_param(sp + "pw.bias", {C}, C, rng);
            sb.gamma = make_gamma(sp + "bn.gamma", C);
            sb.beta = make_beta(sp + "bn.beta", C);
            sb.bn = BnState(C);
            mb.subs.push_back(std::move(sb));
        }
        const int hidden = C / cfg.se_reduction;
        mb.se.w1 = make_param(bp + "se.w1", {hidden, C}, C, rng);
        mb.se.b1 = make_param(bp + "se.b1", {hidden}, C, rng);
        mb.se.w2 = make_param(bp + "se.w2", {C, hidden}, hidden, rng);
        mb.se.b2 = make_param(bp + "se.b2", {C}, hidden, rng);
        enc.blocks.push_back(std::move(mb));
    }

    enc.epilogue.w = make_param("epilogue.w", {cfg.epilogue_channels, C}, C, rng);
    enc.epilogue.bias = make_param("epilogue.bias", {cfg.epilogue_channels}, C, rng);
    enc.epilogue.gamma = make_gamma("epilogue.bn.gamma", cfg.epilogue_channels);
    enc.epilogue.beta = make_beta("epilogue.bn.beta", cfg.epilogue_channels);
    enc.epilogue.bn = BnState(cfg.epilogue_channels);
    return enc;
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    out.push_back(&prologue.w);
    out.push_back(&prologue.gamma);
    out.push_back(&prologue.beta);
    for (auto& mb : blocks) {
        for (auto& sb : mb.subs) {
            out.push_back(&sb.dw);
            out.push_back(&sb.pw);
            out.push_back(&sb.pw_bias);
            out.push_back(&sb.gamma);
            out.push_back(&sb.beta);
        }
        out.push_back(&mb.se.w1);
        out.push_back(&mb.se.b1);
        out.push_back(&mb.se.w2);
        out.push_back(&mb.se.b2);
    }
    out.push_back(&epilogue.w);
    out.push_back(&epilogue.bias);
    out.push_back(&epilogue.gamma);
    out.push_back(&epilogue.beta);
    return out;
}

std::vector<BnState*> Encoder::bn_states() {
    std::vector<BnState*> out;
    out.push_back(&prologue.bn);
    for (auto& mb : blocks)
        for (auto& sb : mb.subs) out.push_back(&sb.bn);
    out.push_back(&epilogue.bn);
    return out;
}

int encoder_forward_node(Encoder& enc, Graph& g, int x, Mode mode, Rng* dropout_rng) {
    const EncoderConfig& cfg = enc.cfg;
    if (mode == Mode::train && cfg.dropout > 0.0 && dropout_rng == nullptr)
        throw std::invalid_argument("encoder_forward: train mode with dropout needs an rng");

    // Prologue: full conv, batchnorm, relu. No residual, no dropout.
    x = g.conv1d_full(x, g.param(enc.prologue.w));
    x = g.batchnorm(x, g.param(enc.prologue.gamma), g.param(enc.prologue.beta), enc.prologue.bn, mode);
    x = g.relu(x);

    for (auto& mb : enc.blocks) {
        const int block_in = x;
        for (auto& sb : mb.subs) {
            x = g.conv1d_depthwise(x, g.param(sb.dw));
            x = g.conv1d_pointwise(x, g.param(sb.pw), g.param(sb.pw_bias));
            x = g.batchnorm(x, g.param(sb.gamma), g.param(sb.beta), sb.bn, mode);
            x = g.relu(x);
            if (cfg.dropout > 0.0 && mode == Mode::train) x = g.dropout(x, cfg.dropout, mode, *dropout_rng);
        }
        // Squeeze-excitation on the residual path, then add to the block input.
        int gate = g.global_avg_pool(x);
        gate = g.relu(g.linear(gate, g.param(mb.se.w1), g.param(mb.se.b1)));
        gate = g.sigmoid(g.linear(gate, g.param(mb.se.w2), g.param(mb.se.b2)));
        x = g.relu(g.add(block_in, g.scale_channels(x, gate)));
    }

    x = g.conv1d_pointwise(x, g.param(enc.epilogue.w), g.param(enc.epilogue.bias));
    x = g.batchnorm(x, g.param(enc.epilogue.gamma), g.param(enc.epilogue.beta), enc.epilogue.bn, mode);
    return g.relu(x);
}

int encoder_forward(Encoder& enc, Graph& g, const Tensor& mel, Mode mode, Rng* dropout_rng) {
    if (mel.rank() != 3 || mel.dim(2) != enc.cfg.n_mels)
        throw std::invalid_argument("encoder_forward: expected [B, T, " + std::to_string(enc.cfg.n_mels) +
                                    "] input, got shape " + mel.shape_str());
    const int B = mel.dim(0), T = mel.dim(1), F = mel.dim(2);
    Tensor cm({B, F, T});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int f = 0; f < F; ++f) cm.at(b, f, t) = mel.at(b, t, f);
    return encoder_forward_node(enc, g, g.leaf(std::move(cm)), mode, dropout_rng);
}

int64_t count_parameters(Encoder& enc) {
    int64_t n = 0;
    for (Parameter* p : enc.parameters()) n += p->value.numel();
    return n;
}

}  // namespace titanet
