#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stackgen/image.hpp"
#include "stackgen/rng.hpp"

namespace stackgen {

struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

struct ManifestRecord {
  std::string image;  // path relative to the dataset directory
  int class_id = 0;
  std::optional<BBox> bbox;
  int emb_index = 0;
};

// Row-major table of caption/attribute embeddings.
struct EmbeddingTable {
  int count = 0;
  int dim = 0;
  std::vector<float> values;

  const float* row(int i) const { return values.data() + static_cast<std::size_t>(i) * dim; }
};

// EMB1 file format: magic "EMB1", u32 LE count, u32 LE dim, then count*dim
// IEEE-754 32-bit LE values, row-major.
EmbeddingTable load_embeddings(const std::string& path);
void save_embeddings(const std::string& path, const EmbeddingTable& table);

// Manifest: JSON lines, one record per line with keys
// image, class, bbox (optional [x, y, w, h]), emb_index.
std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

// Deterministic shuffled partition of class ids into disjoint, exhaustive
// train/test sets (outputs sorted).
std::pair<std::vector<int>, std::vector<int>> class_disjoint_split(std::vector<int> class_ids,
                                                                   int n_train,
                                                                   std::uint64_t seed);

// Square crop centered on the bbox with side max(bbox_w, bbox_h)/target_ratio
// (rounded up, capped at the image), translated minimally to keep the bbox
// contained. Guarantees max(bbox_w, bbox_h)/side >= target_ratio whenever
// geometrically possible.
ImageU8 crop_to_ratio(const ImageU8& image, BBox bbox, double target_ratio = 0.75);

// ---------------------------------------------------------------------------
// Procedural caption-conditioned shapes: 3 shapes x 8 colors = 24 classes.
// ---------------------------------------------------------------------------

inline constexpr int kSyntheticShapes = 3;   // circle, square, triangle
inline constexpr int kSyntheticColors = 8;
inline constexpr int kSyntheticClasses = kSyntheticShapes * kSyntheticColors;
inline constexpr int kSyntheticEmbedDim = 64;

struct SyntheticSpec {
  int shape = 0;               // 0 circle, 1 square, 2 triangle
  int color = 0;               // index into the named color table
  double size_fraction = 0.5;  // bounding-box side as a fraction of the canvas, in [0.3, 0.9]
  double off_x = 0.0;          // center offsets as canvas fractions, in [-0.2, 0.2]
  double off_y = 0.0;
};

struct SyntheticSample {
  std::vector<float> image_chw;    // 3*size*size values in [-1, 1]
  std::vector<float> embedding;    // kSyntheticEmbedDim values
  int class_label = 0;             // shape * kSyntheticColors + color
};

SyntheticSpec random_synthetic_spec(Rng& rng);

// Anti-aliased raster of the spec plus its attribute embedding. The
// embedding is one-hot shape + one-hot color + (size, off_x, off_y),
// zero-padded to kSyntheticEmbedDim and perturbed by N(0, 0.05) noise.
// size must be one of {16, 32, 64}.
SyntheticSample render_synthetic(const SyntheticSpec& spec, int size, Rng& rng);

// Writes a complete synthetic dataset directory: images/*.png, manifest
// (manifest.jsonl), embeddings (embeddings.emb) and the class-disjoint
// split (split.json, 18 train / 6 test classes).
void build_synthetic_dataset(const std::string& dir, int n, int size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Loaded dataset
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<ManifestRecord> records;
  EmbeddingTable embeddings;
  std::vector<int> train_classes, test_classes;
  int image_size = 0;                       // size images are held at
  std::vector<std::vector<float>> images;   // CHW floats in [-1, 1]

  bool is_train_class(int class_id) const;
  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

// Reads a dataset directory (manifest.jsonl, embeddings.emb, split.json) and
// decodes every image at target_size: bbox records are cropped to the 0.75
// ratio first, then everything is resampled (exact box filter when the sizes
// divide evenly, bilinear otherwise).
Dataset load_dataset(const std::string& dir, int target_size);

// Epoch-shuffled minibatch index stream over a fixed record set; the final
// partial batch is dropped. Deterministic per (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(std::vector<int> indices, int batch_size, std::uint64_t seed);

  int batches_per_epoch() const;
  std::vector<int> epoch_order(int epoch) const;
  std::vector<int> batch(int epoch, int b) const;

 private:
  std::vector<int> indices_;
  int batch_size_;
  std::uint64_t seed_;
};

}  // namespace stackgen
