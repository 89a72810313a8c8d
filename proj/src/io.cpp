#include "titanet/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "titanet/checkpoint.hpp"

namespace titanet {

namespace {

std::string slurp(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(std::string(what) + ": cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void spill(const std::string& path, const std::string& bytes, const char* what) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(std::string(what) + ": cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(std::string(what) + ": write failed for " + path);
}

[[noreturn]] void line_error(const std::string& origin, int line, const std::string& msg) {
    throw std::runtime_error(origin + ": line " + std::to_string(line) + ": " + msg);
}

// Splits on runs of blanks/tabs; no quoting.
std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::vector<std::string> split_on(const std::string& line, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == sep) {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

double parse_double_field(const std::string& s, const std::string& origin, int line,
                          const char* field) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        line_error(origin, line, std::string("bad ") + field + " '" + s + "'");
    return v;
}

std::string format_seconds(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// Iterates lines without pulling the whole file through getline twice; keeps
// 1-based line numbers for diagnostics.
template <typename Fn>
void for_each_line(const std::string& path, const char* what, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(std::string(what) + ": cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(line, lineno);
    }
}

}  // namespace

// ===== corpus manifest =====

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::vector<ManifestEntry> out;
    for_each_line(path, "read_manifest", [&](const std::string& line, int lineno) {
        if (line.empty()) return;
        const std::vector<std::string> f = split_on(line, '\t');
        if (f.size() != 3)
            line_error(path, lineno,
                       "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        if (f[0].empty()) line_error(path, lineno, "empty path");
        if (f[2].empty()) line_error(path, lineno, "empty speaker");
        ManifestEntry e;
        e.path = f[0];
        e.duration = parse_double_field(f[1], path, lineno, "duration");
        if (e.duration <= 0.0) line_error(path, lineno, "duration must be positive");
        e.speaker = f[2];
        out.push_back(std::move(e));
    });
    return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const ManifestEntry& e : entries) {
        out += e.path;
        out += '\t';
        out += format_seconds(e.duration);
        out += '\t';
        out += e.speaker;
        out += '\n';
    }
    spill(path, out, "write_manifest");
}

std::string utterance_id(const std::string& path) {
    const size_t slash = path.find_last_of("/\\");
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    const size_t dot = name.find_last_of('.');
    if (dot != std::string::npos && dot > 0) name.resize(dot);
    return name;
}

// ===== verification trials =====

std::vector<Trial> read_trials(const std::string& path) {
    std::vector<Trial> out;
    for_each_line(path, "read_trials", [&](const std::string& line, int lineno) {
        if (line.empty()) return;
        const std::vector<std::string> f = split_ws(line);
        if (f.size() != 3)
            line_error(path, lineno, "expected '<0|1> <enroll> <test>', got " +
                                         std::to_string(f.size()) + " fields");
        if (f[0] != "0" && f[0] != "1") line_error(path, lineno, "bad label '" + f[0] + "'");
        out.push_back({f[1], f[2], f[0] == "1"});
    });
    return out;
}

void write_trials(const std::string& path, const std::vector<Trial>& trials) {
    std::string out;
    for (const Trial& t : trials) {
        out += t.target ? "1 " : "0 ";
        out += t.enroll_id;
        out += ' ';
        out += t.test_id;
        out += '\n';
    }
    spill(path, out, "write_trials");
}

// ===== RTTM =====

std::map<std::string, std::vector<RttmSegment>> parse_rttm(const std::string& path) {
    std::map<std::string, std::vector<RttmSegment>> out;
    for_each_line(path, "parse_rttm", [&](const std::string& line, int lineno) {
        const std::vector<std::string> f = split_ws(line);
        if (f.empty() || f[0] != "SPEAKER") return;
        if (f.size() != 10)
            line_error(path, lineno,
                       "SPEAKER line needs 10 fields, got " + std::to_string(f.size()));
        RttmSegment seg;
        seg.session = f[1];
        seg.onset = parse_double_field(f[3], path, lineno, "onset");
        seg.duration = parse_double_field(f[4], path, lineno, "duration");
        seg.speaker = f[7];
        if (seg.onset < 0.0) line_error(path, lineno, "negative onset");
        if (seg.duration <= 0.0) line_error(path, lineno, "duration must be positive");
        out[seg.session].push_back(std::move(seg));
    });
    return out;
}

void write_rttm(const std::string& path, const std::vector<RttmSegment>& segments) {
    std::string out;
    for (const RttmSegment& s : segments) {
        out += "SPEAKER ";
        out += s.session;
        out += " 1 ";
        out += format_seconds(s.onset);
        out += ' ';
        out += format_seconds(s.duration);
        out += " <NA> <NA> ";
        out += s.speaker;
        out += " <NA> <NA>\n";
    }
    spill(path, out, "write_rttm");
}

// ===== binary primitives =====

namespace {

void put_u32(std::string& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.append(b, 4);
}

void put_f64(std::string& out, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    out.append(b, 8);
}

// Cursor over an in-memory blob; every read checks the remaining length so a
// truncated file fails loudly instead of yielding a partial object.
struct BinReader {
    const std::string& buf;
    size_t pos = 0;
    std::string origin;

    void need(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw std::runtime_error(origin + ": truncated file (wanted " + std::to_string(n) +
                                     " bytes for " + what + " at offset " + std::to_string(pos) +
                                     ", have " + std::to_string(buf.size() - pos) + ")");
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t u = 0;
        for (int i = 0; i < 8; ++i)
            u |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

}  // namespace

// ===== embedding store =====

void write_embeddings(const std::string& path,
                      const std::vector<std::pair<std::string, Tensor>>& embeddings) {
    std::string out;
    for (const auto& [id, emb] : embeddings) {
        if (emb.rank() != 1 || emb.dim(0) != kEmbeddingDim)
            throw std::invalid_argument("write_embeddings: '" + id + "' has shape " +
                                        emb.shape_str() + ", expected [" +
                                        std::to_string(kEmbeddingDim) + "]");
        if (id.empty()) throw std::invalid_argument("write_embeddings: empty utterance id");
        put_u32(out, static_cast<uint32_t>(id.size()));
        out += id;
        for (double v : emb.data) put_f64(out, v);
    }
    spill(path, out, "write_embeddings");
}

std::vector<std::pair<std::string, Tensor>> read_embeddings(const std::string& path) {
    const std::string buf = slurp(path, "read_embeddings");
    BinReader r{buf, 0, "read_embeddings: " + path};
    std::vector<std::pair<std::string, Tensor>> out;
    while (!r.done()) {
        const uint32_t len = r.u32("id length");
        if (len == 0 || len > 4096)
            throw std::runtime_error(r.origin + ": implausible id length " + std::to_string(len) +
                                     " at offset " + std::to_string(r.pos - 4));
        std::string id = r.bytes(len, "utterance id");
        Tensor emb({kEmbeddingDim});
        for (int i = 0; i < kEmbeddingDim; ++i) emb.at(i) = r.f64("embedding value");
        out.emplace_back(std::move(id), std::move(emb));
    }
    return out;
}

// ===== config files =====

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t");
        line = line.substr(first, last - first + 1);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) line_error(origin, lineno, "expected key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        const auto kl = key.find_last_not_of(" \t");
        key = kl == std::string::npos ? "" : key.substr(0, kl + 1);
        const auto vf = val.find_first_not_of(" \t");
        val = vf == std::string::npos ? "" : val.substr(vf);
        if (key.empty()) line_error(origin, lineno, "empty key");
        if (out.count(key)) line_error(origin, lineno, "duplicate key '" + key + "'");
        out.emplace(std::move(key), std::move(val));
    }
    return out;
}

std::map<std::string, std::string> read_config(const std::string& path) {
    return parse_config_text(slurp(path, "read_config"), path);
}

// ===== checkpoints =====

namespace {

constexpr char kCkptMagic[8] = {'T', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string meta_to_config_text(const SpeakerModel& model, const CheckpointMeta& meta) {
    const EncoderConfig& e = model.encoder.cfg;
    std::string ks;
    for (size_t i = 0; i < e.mega_kernels.size(); ++i) {
        if (i) ks += ',';
        ks += std::to_string(e.mega_kernels[i]);
    }
    std::string t;
    t += "encoder.mega_blocks=" + std::to_string(e.mega_blocks) + "\n";
    t += "encoder.repeats=" + std::to_string(e.repeats) + "\n";
    t += "encoder.channels=" + std::to_string(e.channels) + "\n";
    t += "encoder.mega_kernels=" + ks + "\n";
    t += "encoder.prologue_kernel=" + std::to_string(e.prologue_kernel) + "\n";
    t += "encoder.epilogue_kernel=" + std::to_string(e.epilogue_kernel) + "\n";
    t += "encoder.epilogue_channels=" + std::to_string(e.epilogue_channels) + "\n";
    t += "encoder.dropout=" + fmt_g17(e.dropout) + "\n";
    t += "encoder.se_reduction=" + std::to_string(e.se_reduction) + "\n";
    t += "encoder.n_mels=" + std::to_string(e.n_mels) + "\n";
    t += "model.n_classes=" + std::to_string(model.n_classes) + "\n";
    t += "model.emb_dim=" + std::to_string(model.emb_dim) + "\n";
    t += "model.d_att=" + std::to_string(model.d_att) + "\n";
    t += "aam.margin=" + fmt_g17(meta.aam.margin) + "\n";
    t += "aam.scale=" + fmt_g17(meta.aam.scale) + "\n";
    t += "train.epochs=" + std::to_string(meta.train.epochs) + "\n";
    t += "train.initial_lr=" + fmt_g17(meta.train.initial_lr) + "\n";
    t += "train.min_lr=" + fmt_g17(meta.train.min_lr) + "\n";
    t += "train.momentum=" + fmt_g17(meta.train.momentum) + "\n";
    t += "train.batch_size=" + std::to_string(meta.train.batch_size) + "\n";
    t += "train.seed=" + std::to_string(meta.train.seed) + "\n";
    return t;
}

const std::string& cfg_get(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("checkpoint config: missing key '" + key + "'");
    return it->second;
}

int cfg_int(const std::map<std::string, std::string>& kv, const std::string& key) {
    return static_cast<int>(
        parse_double_field(cfg_get(kv, key), "checkpoint config", 0, key.c_str()));
}

double cfg_double(const std::map<std::string, std::string>& kv, const std::string& key) {
    return parse_double_field(cfg_get(kv, key), "checkpoint config", 0, key.c_str());
}

CheckpointMeta meta_from_config_text(const std::string& text) {
    const std::map<std::string, std::string> kv = parse_config_text(text, "checkpoint config");
    CheckpointMeta m;
    m.encoder.mega_blocks = cfg_int(kv, "encoder.mega_blocks");
    m.encoder.repeats = cfg_int(kv, "encoder.repeats");
    m.encoder.channels = cfg_int(kv, "encoder.channels");
    m.encoder.mega_kernels.clear();
    for (const std::string& tok : split_on(cfg_get(kv, "encoder.mega_kernels"), ','))
        m.encoder.mega_kernels.push_back(
            static_cast<int>(parse_double_field(tok, "checkpoint config", 0, "mega_kernels")));
    m.encoder.prologue_kernel = cfg_int(kv, "encoder.prologue_kernel");
    m.encoder.epilogue_kernel = cfg_int(kv, "encoder.epilogue_kernel");
    m.encoder.epilogue_channels = cfg_int(kv, "encoder.epilogue_channels");
    m.encoder.dropout = cfg_double(kv, "encoder.dropout");
    m.encoder.se_reduction = cfg_int(kv, "encoder.se_reduction");
    m.encoder.n_mels = cfg_int(kv, "encoder.n_mels");
    m.n_classes = cfg_int(kv, "model.n_classes");
    m.emb_dim = cfg_int(kv, "model.emb_dim");
    m.d_att = cfg_int(kv, "model.d_att");
    m.aam.margin = cfg_double(kv, "aam.margin");
    m.aam.scale = cfg_double(kv, "aam.scale");
    m.train.epochs = cfg_int(kv, "train.epochs");
    m.train.initial_lr = cfg_double(kv, "train.initial_lr");
    m.train.min_lr = cfg_double(kv, "train.min_lr");
    m.train.momentum = cfg_double(kv, "train.momentum");
    m.train.batch_size = cfg_int(kv, "train.batch_size");
    m.train.seed = std::strtoull(cfg_get(kv, "train.seed").c_str(), nullptr, 10);
    return m;
}

void put_named_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : t.data) put_f64(out, v);
}

CheckpointMeta fill_from_checkpoint(const std::string& path, SpeakerModel& model) {
    const std::string buf = slurp(path, "load_checkpoint");
    BinReader r{buf, 0, "load_checkpoint: " + path};
    const std::string magic = r.bytes(8, "magic");
    if (std::memcmp(magic.data(), kCkptMagic, 8) != 0)
        throw std::runtime_error(r.origin + ": not a checkpoint file (bad magic)");
    const uint32_t version = r.u32("version");
    if (version != kCkptVersion)
        throw std::runtime_error(r.origin + ": incompatible format version " +
                                 std::to_string(version) + " (supported: " +
                                 std::to_string(kCkptVersion) + ")");
    const uint32_t cfg_len = r.u32("config length");
    CheckpointMeta meta = meta_from_config_text(r.bytes(cfg_len, "config text"));

    // Everything is read and validated into temporaries first so an error of
    // any kind leaves the model untouched.
    const std::vector<Parameter*> params = model.parameters();
    const uint32_t n_params = r.u32("parameter count");
    if (n_params != params.size())
        throw std::runtime_error(r.origin + ": has " + std::to_string(n_params) +
                                 " parameters, model expects " + std::to_string(params.size()));
    std::vector<std::vector<double>> param_data(params.size());
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const Parameter* p = params[pi];
        const uint32_t name_len = r.u32("parameter name length");
        const std::string name = r.bytes(name_len, "parameter name");
        if (name != p->name)
            throw std::runtime_error(r.origin + ": parameter '" + name + "' where model expects '" +
                                     p->name + "'");
        const uint32_t rank = r.u32("parameter rank");
        std::vector<int> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32("parameter dim"));
        if (shape != p->value.shape)
            throw std::runtime_error(r.origin + ": parameter '" + name + "' has shape " +
                                     shape_to_string(shape) + ", model expects " +
                                     p->value.shape_str());
        param_data[pi].resize(p->value.data.size());
        for (double& v : param_data[pi]) v = r.f64("parameter value");
    }

    const std::vector<BnState*> bns = model.bn_states();
    const uint32_t n_bn = r.u32("batchnorm state count");
    if (n_bn != bns.size())
        throw std::runtime_error(r.origin + ": has " + std::to_string(n_bn) +
                                 " batchnorm states, model expects " + std::to_string(bns.size()));
    std::vector<std::vector<double>> bn_mean(bns.size()), bn_var(bns.size());
    for (size_t bi = 0; bi < bns.size(); ++bi) {
        const uint32_t C = r.u32("batchnorm width");
        if (static_cast<int>(C) != bns[bi]->running_mean.dim(0))
            throw std::runtime_error(r.origin + ": batchnorm state width " + std::to_string(C) +
                                     ", model expects " +
                                     std::to_string(bns[bi]->running_mean.dim(0)));
        bn_mean[bi].resize(C);
        bn_var[bi].resize(C);
        for (double& v : bn_mean[bi]) v = r.f64("running mean");
        for (double& v : bn_var[bi]) v = r.f64("running var");
    }

    const uint32_t n_metrics = r.u32("metric count");
    meta.metrics.clear();
    for (uint32_t i = 0; i < n_metrics; ++i) {
        const uint32_t len = r.u32("metric name length");
        std::string name = r.bytes(len, "metric name");
        const double value = r.f64("metric value");
        meta.metrics.emplace_back(std::move(name), value);
    }
    if (!r.done())
        throw std::runtime_error(r.origin + ": " + std::to_string(buf.size() - r.pos) +
                                 " trailing bytes after checkpoint payload");

    for (size_t pi = 0; pi < params.size(); ++pi) params[pi]->value.data = std::move(param_data[pi]);
    for (size_t bi = 0; bi < bns.size(); ++bi) {
        bns[bi]->running_mean.data = std::move(bn_mean[bi]);
        bns[bi]->running_var.data = std::move(bn_var[bi]);
    }
    return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, SpeakerModel& model, const CheckpointMeta& meta) {
    std::string out;
    out.append(kCkptMagic, 8);
    put_u32(out, kCkptVersion);
    const std::string cfg = meta_to_config_text(model, meta);
    put_u32(out, static_cast<uint32_t>(cfg.size()));
    out += cfg;

    const std::vector<Parameter*> params = model.parameters();
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const Parameter* p : params) put_named_tensor(out, p->name, p->value);

    const std::vector<BnState*> bns = model.bn_states();
    put_u32(out, static_cast<uint32_t>(bns.size()));
    for (const BnState* s : bns) {
        put_u32(out, static_cast<uint32_t>(s->running_mean.dim(0)));
        for (double v : s->running_mean.data) put_f64(out, v);
        for (double v : s->running_var.data) put_f64(out, v);
    }

    put_u32(out, static_cast<uint32_t>(meta.metrics.size()));
    for (const auto& [name, value] : meta.metrics) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_f64(out, value);
    }
    spill(path, out, "save_checkpoint");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    // First pass reads only the config block to size the shell.
    const std::string buf = slurp(path, "load_checkpoint");
    BinReader r{buf, 0, "load_checkpoint: " + path};
    const std::string magic = r.bytes(8, "magic");
    if (std::memcmp(magic.data(), kCkptMagic, 8) != 0)
        throw std::runtime_error(r.origin + ": not a checkpoint file (bad magic)");
    const uint32_t version = r.u32("version");
    if (version != kCkptVersion)
        throw std::runtime_error(r.origin + ": incompatible format version " +
                                 std::to_string(version) + " (supported: " +
                                 std::to_string(kCkptVersion) + ")");
    const uint32_t cfg_len = r.u32("config length");
    const CheckpointMeta meta = meta_from_config_text(r.bytes(cfg_len, "config text"));

    LoadedCheckpoint lc{meta, build_model(meta.encoder, meta.n_classes, /*seed=*/0, meta.emb_dim,
                                          meta.d_att)};
    lc.meta = fill_from_checkpoint(path, lc.model);
    return lc;
}

CheckpointMeta load_checkpoint_into(const std::string& path, SpeakerModel& model) {
    return fill_from_checkpoint(path, model);
}

}  // namespace titanet
