// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tensorize/checkpoint.hpp"
#include "tensorize/manifest.hpp"
#include "tensorize/plan.hpp"
#include "tensorize/report.hpp"

namespace tensorize {

struct CompressOptions {
    /// Worker threads for per-layer work; output does not depend on it.
    unsigned threads = 1;
};

struct CompressionResult {
    Checkpoint checkpoint;
    CompressionReport report;
};

/// Applies `plan` to every manifest layer. Tensors not named by the manifest
/// and kept layers are copied verbatim; metadata is carried over.
CompressionResult compress_model(const Checkpoint& ckpt, const ModelManifest& manifest, const CompressionPlan& plan,
                                 const CompressOptions& options = {});

struct VerifyRow {
    std::string name;
    std::string storage; // "mpo", "quantized" or "dense"
    double rel_error = 0.0;
    double bound = 0.0;  // largest rel_error the stored layer may show
    bool ok = true;
    std::string detail;
};

/// Reconstructs every transformed layer of `compressed` and compares it with
/// `original`. MPO layers must stay within their recorded error, quantized
/// layers within half a step per element, and every other tensor must match
/// bit for bit.
std::vector<VerifyRow> verify_compressed(const Checkpoint& original, const Checkpoint& compressed);

std::string verify_table(const std::vector<VerifyRow>& rows);

} // namespace tensorize
