#pragma once

#include <string>

#include "protorefine/types.hpp"

namespace protorefine {

// .pemb: magic "PEMB", u32 LE version=1, u64 LE count, u32 LE dim,
// then count*dim f32 LE row-major.
MatrixF load_embedding_file(const std::string& path);
void save_embedding_file(const MatrixF& m, const std::string& path);

// Slide manifest (.jsonl) + embedding file (.pemb).  Manifest line i
// corresponds to embedding row i.
SlideDataset load_slide(const std::string& manifest_path, const std::string& embedding_path);
void save_slide(const SlideDataset& slide, const std::string& manifest_path,
                const std::string& embedding_path);

// Prototype vectors in .pemb format at `path`, JSON sidecar at `path`+".json"
// carrying {"level","source_slide","member_counts"}.
PrototypeSet load_prototypes(const std::string& path);
void save_prototypes(const PrototypeSet& set, const std::string& path);

// Label table CSV: header "patch_id,label,score", score printed with 9
// significant digits (exact for f32).
LabelTable load_label_table(const std::string& path, const std::string& slide_id);
void save_label_table(const LabelTable& table, const std::string& path);

// Binary PGM (P5) mask over the slide's grid: 255 where the label is 1,
// 0 where 0, 128 for grid cells with no patch.
void render_label_mask(const std::vector<PatchRecord>& patches, const LabelTable& labels,
                       const std::string& path);

} // namespace protorefine
