#pragma once

#include <string>
#include <vector>

#include "lac/skeleton.hpp"

namespace lac {

struct RenderOptions {
  int canvas = 256;            // square canvas, pixels
  bool per_frame_pngs = true;  // <prefix>_fNNNNN.png
  bool animation = true;       // <prefix>.gif
};

struct RenderResult {
  std::vector<std::string> files;
};

/// Draws joints and topology edges per frame on a fixed canvas computed from
/// the whole sequence's bounding box. Colors are fixed per limb; output bytes
/// are deterministic.
RenderResult render_sequence(const SkeletonSequence& seq,
                             const SkeletonTopology& topo,
                             const std::string& out_prefix,
                             const RenderOptions& options);

/// 8-bit RGB image writer (zlib-backed PNG).
void write_png(const std::string& path, const std::vector<unsigned char>& rgb,
               int width, int height);

}  // namespace lac
