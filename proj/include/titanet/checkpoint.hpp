#pragma once

// Versioned binary model container: magic `TNETCKPT`, u32 format version,
// the build configs, named f64 little-endian parameter blobs, batch-norm
// running statistics, and a metric summary. Loading reconstructs a model that
// is forward-bit-identical to the saved one; config or shape mismatches and
// truncation fail with explicit errors.

#include <string>
#include <utility>
#include <vector>

#include "titanet/pooldec.hpp"
#include "titanet/train.hpp"

namespace titanet {

struct CheckpointMeta {
    EncoderConfig encoder;
    int n_classes = 0;  // 0 when the head is absent
    int emb_dim = 192;
    int d_att = 128;
    AAMConfig aam;
    TrainConfig train;
    std::vector<std::pair<std::string, double>> metrics;  // e.g. {"val_acc", 0.98}
};

// The architecture fields of `meta` (encoder, n_classes, emb_dim, d_att) are
// taken from `model` itself; only aam/train/metrics pass through from `meta`.
void save_checkpoint(const std::string& path, SpeakerModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    SpeakerModel model;
};

// Rebuilds the model from the stored config, then fills weights and stats.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Fills an existing shell instead; throws std::runtime_error when the
// checkpoint's parameter names or shapes do not match the shell.
CheckpointMeta load_checkpoint_into(const std::string& path, SpeakerModel& model);

}  // namespace titanet
