#include "stackgen/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stackgen/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stackgen {

namespace {

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path, std::streamoff offset,
                          const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4)
    throw FormatError("embedding file '" + path + "': truncated " + what + " at byte offset " +
                      std::to_string(offset));
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("embedding file '" + path + "': cannot open");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "EMB1", 4) != 0)
    throw FormatError("embedding file '" + path + "': bad magic at byte offset 0");
  EmbeddingTable t;
  t.count = static_cast<int>(read_u32_le(is, path, 4, "count"));
  t.dim = static_cast<int>(read_u32_le(is, path, 8, "dim"));
  const std::size_t n = static_cast<std::size_t>(t.count) * static_cast<std::size_t>(t.dim);
  t.values.resize(n);
  if (n > 0) {
    is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * 4));
    if (static_cast<std::size_t>(is.gcount()) != n * 4)
      throw FormatError("embedding file '" + path + "': truncated payload at byte offset " +
                        std::to_string(12 + is.gcount()));
  }
  return t;
}

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  if (static_cast<std::size_t>(table.count) * table.dim != table.values.size())
    throw DimensionError("save_embeddings: count*dim does not match value buffer");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("embedding file '" + path + "': cannot open for writing");
  os.write("EMB1", 4);
  write_u32_le(os, static_cast<std::uint32_t>(table.count));
  write_u32_le(os, static_cast<std::uint32_t>(table.dim));
  os.write(reinterpret_cast<const char*>(table.values.data()),
           static_cast<std::streamsize>(table.values.size() * 4));
  if (!os) throw FormatError("embedding file '" + path + "': write failed");
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("manifest '" + path + "': cannot open");
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    ManifestRecord r;
    try {
      r.image = j.at("image").get<std::string>();
      r.class_id = j.at("class").get<int>();
      r.emb_index = j.at("emb_index").get<int>();
      if (j.contains("bbox")) {
        const auto& b = j.at("bbox");
        if (!b.is_array() || b.size() != 4)
          throw FormatError("bbox must be [x, y, w, h]");
        r.bbox = BBox{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      }
    } catch (const json::exception& e) {
      throw FormatError("manifest '" + path + "' line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("manifest '" + path + "': cannot open for writing");
  for (const auto& r : records) {
    json j;
    j["image"] = r.image;
    j["class"] = r.class_id;
    if (r.bbox) j["bbox"] = {r.bbox->x, r.bbox->y, r.bbox->w, r.bbox->h};
    j["emb_index"] = r.emb_index;
    os << j.dump() << "\n";
  }
}

std::pair<std::vector<int>, std::vector<int>> class_disjoint_split(std::vector<int> class_ids,
                                                                   int n_train,
                                                                   std::uint64_t seed) {
  std::sort(class_ids.begin(), class_ids.end());
  class_ids.erase(std::unique(class_ids.begin(), class_ids.end()), class_ids.end());
  if (n_train <= 0 || n_train >= static_cast<int>(class_ids.size()))
    throw ConfigError("class_disjoint_split: n_train " + std::to_string(n_train) +
                      " must lie strictly inside (0, " + std::to_string(class_ids.size()) + ")");
  Rng rng(seed);
  rng.shuffle(class_ids);
  std::vector<int> train(class_ids.begin(), class_ids.begin() + n_train);
  std::vector<int> test(class_ids.begin() + n_train, class_ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

ImageU8 crop_to_ratio(const ImageU8& image, BBox bbox, double target_ratio) {
  const int W = image.width, H = image.height;
  // Clamp the box to the canvas; an oversized box degenerates to the whole
  // image, whose ratio is already maximal.
  bbox.x = std::clamp(bbox.x, 0, W);
  bbox.y = std::clamp(bbox.y, 0, H);
  bbox.w = std::clamp(bbox.w, 0, W - bbox.x);
  bbox.h = std::clamp(bbox.h, 0, H - bbox.y);
  const int longest = std::max(bbox.w, bbox.h);
  if (longest <= 0) throw ContractError("crop_to_ratio: empty bbox");

  // Rounding the side down keeps longest/side >= target_ratio for every
  // integer side; rounding up would undershoot the ratio whenever the
  // division is inexact.
  int side = std::max(longest, static_cast<int>(static_cast<double>(longest) / target_ratio));
  side = std::min(side, std::min(W, H));

  auto place = [&](double center, int blo, int blen, int limit) {
    int o = static_cast<int>(std::lround(center - side / 2.0));
    if (side >= blen) {
      o = std::min(o, blo);                 // keep bbox inside the crop
      o = std::max(o, blo + blen - side);
    }
    return std::clamp(o, 0, limit - side);
  };
  const int x0 = place(bbox.x + bbox.w / 2.0, bbox.x, bbox.w, W);
  const int y0 = place(bbox.y + bbox.h / 2.0, bbox.y, bbox.h, H);

  ImageU8 out;
  out.width = side;
  out.height = side;
  out.pixels.resize(static_cast<std::size_t>(3) * side * side);
  for (int y = 0; y < side; ++y)
    std::memcpy(out.pixels.data() + static_cast<std::size_t>(y) * side * 3,
                image.pixels.data() + (static_cast<std::size_t>(y0 + y) * W + x0) * 3,
                static_cast<std::size_t>(side) * 3);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

namespace {

// Named colors, RGB in [0, 1].
constexpr double kColors[kSyntheticColors][3] = {
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
    {0.0, 1.0, 1.0},  // cyan
    {1.0, 0.0, 1.0},  // magenta
    {1.0, 0.5, 0.0},  // orange
    {1.0, 1.0, 1.0},  // white
};

bool inside_shape(const SyntheticSpec& spec, double x, double y, double cx, double cy,
                  double half) {
  switch (spec.shape) {
    case 0: {  // circle
      const double dx = x - cx, dy = y - cy;
      return dx * dx + dy * dy <= half * half;
    }
    case 1:  // axis-aligned square
      return std::abs(x - cx) <= half && std::abs(y - cy) <= half;
    default: {  // triangle: apex up, inscribed in the bounding box
      const double dy = y - (cy - half);
      if (dy < 0.0 || dy > 2.0 * half) return false;
      const double width_at = half * (dy / (2.0 * half));
      return std::abs(x - cx) <= width_at;
    }
  }
}

}  // namespace

SyntheticSpec random_synthetic_spec(Rng& rng) {
  SyntheticSpec s;
  s.shape = static_cast<int>(rng.bounded(kSyntheticShapes));
  s.color = static_cast<int>(rng.bounded(kSyntheticColors));
  s.size_fraction = rng.uniform(0.3, 0.9);
  const double max_off = std::min(0.2, 0.5 - s.size_fraction / 2.0);
  s.off_x = rng.uniform(-max_off, max_off);
  s.off_y = rng.uniform(-max_off, max_off);
  return s;
}

SyntheticSample render_synthetic(const SyntheticSpec& spec, int size, Rng& rng) {
  if (size != 16 && size != 32 && size != 64)
    throw ConfigError("render_synthetic: size must be one of {16, 32, 64}, got " +
                      std::to_string(size));
  if (spec.shape < 0 || spec.shape >= kSyntheticShapes || spec.color < 0 ||
      spec.color >= kSyntheticColors)
    throw ConfigError("render_synthetic: shape/color index out of range");

  const double sf = std::clamp(spec.size_fraction, 0.05, 1.0);
  const double half = sf * size / 2.0;
  // Keep the object fully inside the canvas.
  const double max_off = std::max(0.0, 0.5 - sf / 2.0);
  const double cx = size * (0.5 + std::clamp(spec.off_x, -max_off, max_off));
  const double cy = size * (0.5 + std::clamp(spec.off_y, -max_off, max_off));

  SyntheticSample out;
  out.class_label = spec.shape * kSyntheticColors + spec.color;
  out.image_chw.assign(static_cast<std::size_t>(3) * size * size, -1.0f);

  constexpr int kSS = 4;  // supersampling grid per pixel side
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hit = 0;
      for (int sy = 0; sy < kSS; ++sy)
        for (int sx = 0; sx < kSS; ++sx) {
          const double px = x + (sx + 0.5) / kSS;
          const double py = y + (sy + 0.5) / kSS;
          if (inside_shape(spec, px, py, cx, cy, half)) ++hit;
        }
      if (hit == 0) continue;
      const double alpha = static_cast<double>(hit) / (kSS * kSS);
      for (int c = 0; c < 3; ++c) {
        const double fg = 2.0 * kColors[spec.color][c] - 1.0;
        const double bg = -1.0;
        out.image_chw[c * plane + static_cast<std::int64_t>(y) * size + x] =
            static_cast<float>(bg + alpha * (fg - bg));
      }
    }

  out.embedding.assign(kSyntheticEmbedDim, 0.0f);
  out.embedding[static_cast<std::size_t>(spec.shape)] = 1.0f;
  out.embedding[static_cast<std::size_t>(kSyntheticShapes + spec.color)] = 1.0f;
  out.embedding[kSyntheticShapes + kSyntheticColors + 0] = static_cast<float>(sf);
  out.embedding[kSyntheticShapes + kSyntheticColors + 1] = static_cast<float>(spec.off_x);
  out.embedding[kSyntheticShapes + kSyntheticColors + 2] = static_cast<float>(spec.off_y);
  for (auto& v : out.embedding) v = static_cast<float>(v + 0.05 * rng.normal());
  return out;
}

void build_synthetic_dataset(const std::string& dir, int n, int size, std::uint64_t seed) {
  if (n <= 0) throw ConfigError("build_synthetic_dataset: n must be positive");
  fs::create_directories(fs::path(dir) / "images");
  Rng rng(seed);

  EmbeddingTable table;
  table.count = n;
  table.dim = kSyntheticEmbedDim;
  table.values.reserve(static_cast<std::size_t>(n) * kSyntheticEmbedDim);
  std::vector<ManifestRecord> records;
  records.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const SyntheticSpec spec = random_synthetic_spec(rng);
    const SyntheticSample sample = render_synthetic(spec, size, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05d.png", i);
    write_png((fs::path(dir) / name).string(), chw_to_u8(sample.image_chw.data(), size, size));
    table.values.insert(table.values.end(), sample.embedding.begin(), sample.embedding.end());
    ManifestRecord r;
    r.image = name;
    r.class_id = sample.class_label;
    r.emb_index = i;
    records.push_back(std::move(r));
  }

  save_embeddings((fs::path(dir) / "embeddings.emb").string(), table);
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), records);

  std::vector<int> all_classes(kSyntheticClasses);
  for (int c = 0; c < kSyntheticClasses; ++c) all_classes[static_cast<std::size_t>(c)] = c;
  auto [train, test] = class_disjoint_split(all_classes, 18, seed);
  json split;
  split["train_classes"] = train;
  split["test_classes"] = test;
  std::ofstream os(fs::path(dir) / "split.json");
  os << split.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

bool Dataset::is_train_class(int class_id) const {
  return std::binary_search(train_classes.begin(), train_classes.end(), class_id);
}

std::vector<int> Dataset::train_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (is_train_class(records[i].class_id)) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!is_train_class(records[i].class_id)) out.push_back(static_cast<int>(i));
  return out;
}

Dataset load_dataset(const std::string& dir, int target_size) {
  Dataset ds;
  ds.image_size = target_size;
  ds.records = read_manifest((fs::path(dir) / "manifest.jsonl").string());
  ds.embeddings = load_embeddings((fs::path(dir) / "embeddings.emb").string());

  const std::string split_path = (fs::path(dir) / "split.json").string();
  std::ifstream sf(split_path);
  if (!sf) throw FormatError("dataset '" + dir + "': missing split.json");
  json split;
  try {
    sf >> split;
    ds.train_classes = split.at("train_classes").get<std::vector<int>>();
    ds.test_classes = split.at("test_classes").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw FormatError("dataset split '" + split_path + "': " + e.what());
  }
  std::sort(ds.train_classes.begin(), ds.train_classes.end());
  std::sort(ds.test_classes.begin(), ds.test_classes.end());

  ds.images.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.emb_index < 0 || r.emb_index >= ds.embeddings.count)
      throw FormatError("dataset '" + dir + "': record " + std::to_string(i) + " emb_index " +
                        std::to_string(r.emb_index) + " exceeds embedding table rows (" +
                        std::to_string(ds.embeddings.count) + ")");
    ImageU8 img = read_png((fs::path(dir) / r.image).string());
    if (r.bbox) img = crop_to_ratio(img, *r.bbox);
    std::vector<float> chw = u8_to_chw(img);
    if (img.width != target_size || img.height != target_size) {
      if (img.width == img.height && img.width % target_size == 0)
        chw = box_downsample_chw(chw, img.height, img.width, img.width / target_size);
      else
        chw = resize_bilinear_chw(chw, img.height, img.width, target_size, target_size);
    }
    ds.images.push_back(std::move(chw));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Batch iteration
// ---------------------------------------------------------------------------

BatchIterator::BatchIterator(std::vector<int> indices, int batch_size, std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed) {
  if (indices_.empty()) throw ContractError("BatchIterator: empty record set");
  if (batch_size_ <= 0) throw ConfigError("BatchIterator: batch_size must be positive");
}

int BatchIterator::batches_per_epoch() const {
  return static_cast<int>(indices_.size()) / batch_size_;
}

std::vector<int> BatchIterator::epoch_order(int epoch) const {
  std::vector<int> order = indices_;
  Rng rng(seed_ ^ (static_cast<std::uint64_t>(epoch) + 1) * 0x9e3779b97f4a7c15ull);
  rng.shuffle(order);
  return order;
}

std::vector<int> BatchIterator::batch(int epoch, int b) const {
  if (b < 0 || b >= batches_per_epoch()) throw ContractError("BatchIterator: batch out of range");
  std::vector<int> order = epoch_order(epoch);
  return std::vector<int>(order.begin() + static_cast<std::ptrdiff_t>(b) * batch_size_,
                          order.begin() + static_cast<std::ptrdiff_t>(b + 1) * batch_size_);
}

}  // namespace stackgen
