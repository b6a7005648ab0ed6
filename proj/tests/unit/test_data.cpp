#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "stackgen/data.hpp"
#include "stackgen/error.hpp"

using namespace stackgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("stackgen_test_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("EMB1 round trip is bit-exact; empty table is valid") {
    const fs::path dir = temp_dir("emb");
    EmbeddingTable t;
    t.count = 2;
    t.dim = 3;
    t.values = {1.5f, -2.25f, 0.0f, 3.0f, 4.5f, -6.75f};
    const std::string path = (dir / "e.emb").string();
    save_embeddings(path, t);
    EmbeddingTable back = load_embeddings(path);
    CHECK(back.count == 2);
    CHECK(back.dim == 3);
    CHECK(back.values == t.values);
    CHECK(back.row(1)[2] == -6.75f);

    EmbeddingTable empty;
    save_embeddings((dir / "empty.emb").string(), empty);
    EmbeddingTable back_empty = load_embeddings((dir / "empty.emb").string());
    CHECK(back_empty.count == 0);
    CHECK(back_empty.values.empty());
  }

  TEST_CASE("EMB1 format errors carry byte offsets") {
    const fs::path dir = temp_dir("embbad");
    {
      std::ofstream os(dir / "bad.emb", std::ios::binary);
      os << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_embeddings((dir / "bad.emb").string()),
                         doctest::Contains("byte offset 0"), FormatError);

    EmbeddingTable t;
    t.count = 2;
    t.dim = 3;
    t.values.assign(6, 1.0f);
    save_embeddings((dir / "trunc.emb").string(), t);
    fs::resize_file(dir / "trunc.emb", 20);  // header is 12 bytes, payload should be 24
    CHECK_THROWS_WITH_AS(load_embeddings((dir / "trunc.emb").string()),
                         doctest::Contains("truncated"), FormatError);
  }

  TEST_CASE("manifest JSONL round trip with optional bbox") {
    const fs::path dir = temp_dir("manifest");
    std::vector<ManifestRecord> records(2);
    records[0].image = "images/a.png";
    records[0].class_id = 3;
    records[0].emb_index = 7;
    records[1].image = "images/b.png";
    records[1].class_id = 5;
    records[1].bbox = BBox{4, 6, 20, 10};
    records[1].emb_index = 1;
    const std::string path = (dir / "m.jsonl").string();
    write_manifest(path, records);
    const auto back = read_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].image == "images/a.png");
    CHECK_FALSE(back[0].bbox.has_value());
    CHECK(back[1].bbox->w == 20);
    CHECK(back[1].emb_index == 1);

    std::ofstream os(dir / "bad.jsonl");
    os << "{not json}\n";
    os.close();
    CHECK_THROWS_AS(read_manifest((dir / "bad.jsonl").string()), FormatError);
  }

  TEST_CASE("class-disjoint split: 200 -> 150/50 and 102 -> 82/20") {
    std::vector<int> cub(200);
    for (int i = 0; i < 200; ++i) cub[static_cast<std::size_t>(i)] = i;
    auto [train, test] = class_disjoint_split(cub, 150, 7);
    CHECK(train.size() == 150);
    CHECK(test.size() == 50);

    std::vector<int> flowers(102);
    for (int i = 0; i < 102; ++i) flowers[static_cast<std::size_t>(i)] = i + 1;
    auto [ftrain, ftest] = class_disjoint_split(flowers, 82, 7);
    CHECK(ftrain.size() == 82);
    CHECK(ftest.size() == 20);
  }

  TEST_CASE("class-disjoint split is a deterministic partition") {
    std::vector<int> ids{5, 9, 1, 12, 3, 7, 21, 14};
    for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
      auto [train, test] = class_disjoint_split(ids, 5, seed);
      std::set<int> all(train.begin(), train.end());
      for (int t : test) {
        CHECK(all.count(t) == 0);
        all.insert(t);
      }
      CHECK(all == std::set<int>(ids.begin(), ids.end()));
      auto [train2, test2] = class_disjoint_split(ids, 5, seed);
      CHECK(train == train2);
      CHECK(test == test2);
    }
    CHECK_THROWS_AS(class_disjoint_split(ids, 8, 1), ConfigError);
    CHECK_THROWS_AS(class_disjoint_split(ids, 0, 1), ConfigError);
  }

  TEST_CASE("crop_to_ratio: centered 60x40 bbox in 100x100 gives an 80px crop") {
    ImageU8 img;
    img.width = 100;
    img.height = 100;
    img.pixels.assign(3 * 100 * 100, 10);
    ImageU8 crop = crop_to_ratio(img, BBox{20, 30, 60, 40});
    CHECK(crop.width == 80);   // 60 / 0.75
    CHECK(crop.height == 80);
    CHECK(60.0 / crop.width == doctest::Approx(0.75));
  }

  TEST_CASE("crop_to_ratio: whole-image bbox returns the image unchanged") {
    ImageU8 img;
    img.width = 50;
    img.height = 50;
    img.pixels.assign(3 * 50 * 50, 77);
    ImageU8 crop = crop_to_ratio(img, BBox{0, 0, 50, 50});
    CHECK(crop.width == 50);
    CHECK(crop.pixels == img.pixels);
  }

  TEST_CASE("crop_to_ratio: crop shifts off the edge to keep the bbox contained") {
    ImageU8 img;
    img.width = 100;
    img.height = 100;
    img.pixels.resize(3 * 100 * 100);
    // Mark the bbox region so containment is checkable from pixel values.
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) {
        const bool inside = x < 30 && y >= 35 && y < 65;
        for (int c = 0; c < 3; ++c)
          img.pixels[(static_cast<std::size_t>(y) * 100 + x) * 3 + c] = inside ? 255 : 0;
      }
    ImageU8 crop = crop_to_ratio(img, BBox{0, 35, 30, 30});  // flush against the left edge
    CHECK(crop.width == 40);
    long lit = 0;
    for (std::size_t i = 0; i < crop.pixels.size(); i += 3) lit += crop.pixels[i] == 255;
    CHECK(lit == 30 * 30);  // the whole bbox survived the crop
  }

  TEST_CASE("crop_to_ratio: random geometries keep ratio >= 0.75 and containment") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const int W = 20 + static_cast<int>(rng.bounded(200));
      const int H = 20 + static_cast<int>(rng.bounded(200));
      BBox box;
      box.w = 1 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(W)));
      box.h = 1 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(H)));
      box.x = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(W - box.w + 1)));
      box.y = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(H - box.h + 1)));
      ImageU8 img;
      img.width = W;
      img.height = H;
      img.pixels.assign(static_cast<std::size_t>(3) * W * H, 0);
      for (int y = box.y; y < box.y + box.h; ++y)
        for (int x = box.x; x < box.x + box.w; ++x)
          img.pixels[(static_cast<std::size_t>(y) * W + x) * 3] = 255;
      ImageU8 crop = crop_to_ratio(img, box);
      CHECK(crop.width == crop.height);
      const int longest = std::max(box.w, box.h);
      if (crop.width < std::min(W, H)) {
        // Uncapped crop: the ratio contract holds exactly.
        CHECK(static_cast<double>(longest) / crop.width >= 0.75);
      } else {
        // Capped at the image: the ratio is already maximal.
        CHECK(crop.width == std::min(W, H));
      }
      // The bbox is never cut whenever a square crop can hold it.
      if (longest <= crop.width) {
        long lit = 0;
        for (std::size_t i = 0; i < crop.pixels.size(); i += 3) lit += crop.pixels[i] == 255;
        CHECK(lit == static_cast<long>(box.w) * box.h);
      }
    }
  }

  TEST_CASE("render: red circle at the center lights the red channel maximally") {
    SyntheticSpec spec;
    spec.shape = 0;
    spec.color = 0;  // red
    spec.size_fraction = 0.5;
    Rng rng(21);
    SyntheticSample s = render_synthetic(spec, 16, rng);
    const int mid = 8 * 16 + 8;
    CHECK(s.image_chw[0 * 256 + mid] == doctest::Approx(1.0f));   // red
    CHECK(s.image_chw[1 * 256 + mid] == doctest::Approx(-1.0f));  // green
    CHECK(s.image_chw[2 * 256 + mid] == doctest::Approx(-1.0f));  // blue
    CHECK(s.class_label == 0);
    for (float v : s.image_chw) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
    Rng rng2(21);
    CHECK(render_synthetic(spec, 16, rng2).image_chw == s.image_chw);
    CHECK_THROWS_AS(render_synthetic(spec, 20, rng), ConfigError);
  }

  TEST_CASE("render: embedding is a noisy one-hot of length 64") {
    SyntheticSpec spec;
    spec.shape = 2;
    spec.color = 5;
    spec.size_fraction = 0.6;
    Rng rng(22);
    SyntheticSample s = render_synthetic(spec, 32, rng);
    REQUIRE(s.embedding.size() == kSyntheticEmbedDim);
    CHECK(s.class_label == 2 * 8 + 5);
    // One dominant coordinate among the first three (shape one-hot + noise).
    int dominant = 0;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(s.embedding[static_cast<std::size_t>(i)]) > 0.5) ++dominant;
      else CHECK(std::abs(s.embedding[static_cast<std::size_t>(i)]) < 0.5);
    }
    CHECK(dominant == 1);
    CHECK(s.embedding[2] > 0.5f);
    CHECK(s.embedding[3 + 5] > 0.5f);
  }

  TEST_CASE("render: colors share the identical coverage mask") {
    SyntheticSpec a;
    a.shape = 1;
    a.color = 2;
    a.size_fraction = 0.7;
    a.off_x = 0.1;
    SyntheticSpec b = a;
    b.color = 6;
    Rng r1(23), r2(23);
    SyntheticSample sa = render_synthetic(a, 16, r1);
    SyntheticSample sb = render_synthetic(b, 16, r2);
    for (int i = 0; i < 256; ++i) {
      bool covered_a = false, covered_b = false;
      for (int c = 0; c < 3; ++c) {
        covered_a |= sa.image_chw[static_cast<std::size_t>(c) * 256 + i] > -1.0f;
        covered_b |= sb.image_chw[static_cast<std::size_t>(c) * 256 + i] > -1.0f;
      }
      CHECK(covered_a == covered_b);
    }
  }

  TEST_CASE("batch iterator: 130 records at batch 64 give 2 batches, no duplicates") {
    std::vector<int> idx(130);
    for (int i = 0; i < 130; ++i) idx[static_cast<std::size_t>(i)] = i * 3;
    BatchIterator it(idx, 64, 5);
    CHECK(it.batches_per_epoch() == 2);
    std::set<int> seen;
    for (int b = 0; b < 2; ++b)
      for (int v : it.batch(0, b)) {
        CHECK(seen.insert(v).second);  // no duplicates within the epoch
        CHECK(std::find(idx.begin(), idx.end(), v) != idx.end());
      }
    CHECK(seen.size() == 128);

    BatchIterator same(idx, 64, 5);
    CHECK(same.epoch_order(3) == it.epoch_order(3));
    CHECK(it.epoch_order(0) != it.epoch_order(1));
    CHECK_THROWS_AS(BatchIterator({}, 4, 1), ContractError);
  }

  TEST_CASE("synthetic dataset builds and loads end to end") {
    const fs::path dir = temp_dir("dataset");
    build_synthetic_dataset(dir.string(), 30, 16, 11);
    Dataset ds = load_dataset(dir.string(), 16);
    CHECK(ds.records.size() == 30);
    CHECK(ds.embeddings.count == 30);
    CHECK(ds.embeddings.dim == kSyntheticEmbedDim);
    CHECK(ds.train_classes.size() == 18);
    CHECK(ds.test_classes.size() == 6);
    CHECK(ds.images.size() == 30);
    for (const auto& img : ds.images) {
      CHECK(img.size() == 3u * 16 * 16);
      for (float v : img) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
      }
    }
    CHECK(ds.train_indices().size() + ds.test_indices().size() == 30);

    // A record pointing past the embedding table is a format error.
    auto records = read_manifest((dir / "manifest.jsonl").string());
    records[0].emb_index = 500;
    write_manifest((dir / "manifest.jsonl").string(), records);
    CHECK_THROWS_WITH_AS(load_dataset(dir.string(), 16), doctest::Contains("emb_index"),
                         FormatError);
  }
}
