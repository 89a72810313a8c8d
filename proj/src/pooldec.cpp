#include "titanet/pooldec.hpp"

#include <cmath>
#include <stdexcept>

namespace titanet {

SpeakerModel build_model(const EncoderConfig& cfg, int n_classes, uint64_t seed, int emb_dim, int d_att) {
    if (n_classes < 0) throw std::invalid_argument("build_model: n_classes must be >= 0");
    if (emb_dim < 1 || d_att < 1) throw std::invalid_argument("build_model: emb_dim and d_att must be >= 1");
    SpeakerModel m;
    m.encoder = build_encoder(cfg, seed);
    m.n_classes = n_classes;
    m.emb_dim = emb_dim;
    m.d_att = d_att;

    Rng rng(hash_combine(seed, 0x9e3779b97f4a7c15ull));
    const int ce = cfg.epilogue_channels;
    m.pooling.w1 = Parameter("pooling.w1", Tensor({d_att, ce}));
    init_uniform_fan_in(m.pooling.w1.value, ce, rng);
    m.pooling.b1 = Parameter("pooling.b1", Tensor({d_att}));
    init_uniform_fan_in(m.pooling.b1.value, ce, rng);
    m.pooling.w2 = Parameter("pooling.w2", Tensor({ce, d_att}));
    init_uniform_fan_in(m.pooling.w2.value, d_att, rng);
    m.pooling.b2 = Parameter("pooling.b2", Tensor({ce}));
    init_uniform_fan_in(m.pooling.b2.value, d_att, rng);

    m.decoder.w = Parameter("decoder.w", Tensor({emb_dim, 2 * ce}));
    init_uniform_fan_in(m.decoder.w.value, 2 * ce, rng);
    m.decoder.bias = Parameter("decoder.bias", Tensor({emb_dim}));
    init_uniform_fan_in(m.decoder.bias.value, 2 * ce, rng);
    m.decoder.gamma = Parameter("decoder.bn.gamma", Tensor::full({emb_dim}, 1.0));
    m.decoder.beta = Parameter("decoder.bn.beta", Tensor::zeros({emb_dim}));
    m.decoder.bn = BnState(emb_dim);

    if (n_classes > 0) {
        m.head.w = Parameter("head.w", Tensor({n_classes, emb_dim}));
        init_uniform_fan_in(m.head.w.value, emb_dim, rng);
    }
    return m;
}

std::vector<Parameter*> SpeakerModel::parameters_no_head() {
    std::vector<Parameter*> out = encoder.parameters();
    out.push_back(&pooling.w1);
    out.push_back(&pooling.b1);
    out.push_back(&pooling.w2);
    out.push_back(&pooling.b2);
    out.push_back(&decoder.w);
    out.push_back(&decoder.bias);
    out.push_back(&decoder.gamma);
    out.push_back(&decoder.beta);
    return out;
}

std::vector<Parameter*> SpeakerModel::parameters() {
    auto out = parameters_no_head();
    if (n_classes > 0) out.push_back(&head.w);
    return out;
}

std::vector<BnState*> SpeakerModel::bn_states() {
    auto out = encoder.bn_states();
    out.push_back(&decoder.bn);
    return out;
}

int attentive_stats_pool(SpeakerModel& m, Graph& g, int h) {
    int hidden = g.tanh_(g.conv1d_pointwise(h, g.param(m.pooling.w1), g.param(m.pooling.b1)));
    int scores = g.conv1d_pointwise(hidden, g.param(m.pooling.w2), g.param(m.pooling.b2));
    int alpha = g.softmax_time(scores);
    int mu = g.weighted_sum_time(h, alpha);
    int ex2 = g.weighted_sum_time(g.mul(h, h), alpha);
    int var = g.clamp_min(g.sub(ex2, g.mul(mu, mu)), 1e-9);
    return g.concat_cols(mu, g.sqrt_(var));
}

int decode_embedding(SpeakerModel& m, Graph& g, int pooled, Mode mode) {
    int emb = g.linear(pooled, g.param(m.decoder.w), g.param(m.decoder.bias));
    return g.batchnorm(emb, g.param(m.decoder.gamma), g.param(m.decoder.beta), m.decoder.bn, mode);
}

int cosine_logits(SpeakerModel& m, Graph& g, int emb) {
    if (m.n_classes < 1) throw std::logic_error("cosine_logits: model has no classifier head");
    return g.matmul_nt(g.l2_normalize_rows(emb), g.l2_normalize_rows(g.param(m.head.w)));
}

ForwardNodes model_forward(SpeakerModel& m, Graph& g, const Tensor& mel, Mode mode, Rng* dropout_rng) {
    ForwardNodes out;
    int h = encoder_forward(m.encoder, g, mel, mode, dropout_rng);
    out.pooled = attentive_stats_pool(m, g, h);
    out.embedding = decode_embedding(m, g, out.pooled, mode);
    if (m.n_classes > 0) out.logits = cosine_logits(m, g, out.embedding);
    return out;
}

Tensor extract_embedding(SpeakerModel& m, const MelSpectrogram& mel) {
    MelSpectrogram nrm = normalize_per_frequency(mel);
    const int T = nrm.values.dim(0), F = nrm.values.dim(1);
    Tensor batch({1, T, F});
    for (int t = 0; t < T; ++t)
        for (int f = 0; f < F; ++f) batch.at(0, t, f) = nrm.values.at(t, f);
    Graph g;
    int h = encoder_forward(m.encoder, g, batch, Mode::eval);
    int emb = g.l2_normalize_rows(decode_embedding(m, g, attentive_stats_pool(m, g, h), Mode::eval));
    const Tensor& v = g.val(emb);
    Tensor out({m.emb_dim});
    for (int i = 0; i < m.emb_dim; ++i) out.data[i] = v.at(0, i);
    return out;
}

int64_t count_parameters(SpeakerModel& m) {
    int64_t n = 0;
    for (Parameter* p : m.parameters_no_head()) n += p->value.numel();
    return n;
}

std::vector<std::pair<std::string, int64_t>> parameter_breakdown(SpeakerModel& m) {
    std::vector<std::pair<std::string, int64_t>> out;
    auto add = [&](const std::string& label, std::initializer_list<const Parameter*> ps) {
        int64_t n = 0;
        for (const Parameter* p : ps) n += p->value.numel();
        out.emplace_back(label, n);
    };
    Encoder& e = m.encoder;
    add("prologue", {&e.prologue.w, &e.prologue.gamma, &e.prologue.beta});
    for (size_t b = 0; b < e.blocks.size(); ++b) {
        int64_t n = 0;
        for (auto& sb : e.blocks[b].subs)
            n += sb.dw.value.numel() + sb.pw.value.numel() + sb.pw_bias.value.numel() +
                 sb.gamma.value.numel() + sb.beta.value.numel();
        auto& se = e.blocks[b].se;
        n += se.w1.value.numel() + se.b1.value.numel() + se.w2.value.numel() + se.b2.value.numel();
        out.emplace_back("mega_block_" + std::to_string(b), n);
    }
    add("epilogue", {&e.epilogue.w, &e.epilogue.bias, &e.epilogue.gamma, &e.epilogue.beta});
    add("pooling", {&m.pooling.w1, &m.pooling.b1, &m.pooling.w2, &m.pooling.b2});
    add("decoder", {&m.decoder.w, &m.decoder.bias, &m.decoder.gamma, &m.decoder.beta});
    if (m.n_classes > 0) add("head (class-dependent, excluded from totals)", {&m.head.w});
    return out;
}

}  // namespace titanet
