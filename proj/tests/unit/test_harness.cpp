#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "stackgen/image.hpp"
#include "stackgen/train.hpp"

using namespace stackgen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("stackgen_harness_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config: canonical text round trip; unknown keys rejected") {
    TrainConfig cfg;
    cfg.stage = 1;
    cfg.epochs = 50;
    cfg.image_size = 16;
    cfg.seed = 42;
    cfg.lr = 1e-3;
    cfg.data_dir = "data/synth";
    cfg = resolve_config(cfg);
    const std::string text = config_to_text(cfg);
    TrainConfig back = parse_config_text(text);
    CHECK(config_to_text(back) == text);
    CHECK(back.base_channels == 16);  // desk default resolved
    CHECK(back.n_down == 1);

    CHECK_THROWS_WITH_AS(parse_config_text("bogus_key=3\n"), doctest::Contains("unknown key"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config_text("stage\n"), ConfigError);
    CHECK_THROWS_AS(resolve_config(parse_config_text("stage=5\n")), ConfigError);
    CHECK_THROWS_AS(resolve_config(parse_config_text("epochs=0\n")), ConfigError);

    TrainConfig st2 = resolve_config(parse_config_text("stage=2\nimage_size=64\n"));
    CHECK(st2.lr == doctest::Approx(2e-3));
    CHECK(st2.n_down == 3);
    TrainConfig st1 = resolve_config(parse_config_text("stage=1\nimage_size=64\n"));
    CHECK(st1.lr == doctest::Approx(2e-4));
  }

  TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
    const fs::path dir = temp_dir("ckpt");
    Checkpoint ck;
    ck.config_text = "stage=1\n";
    ck.epoch = 7;
    ck.rng_state = "123 456 789";
    ck.entries.push_back({"zeta", {2, 2}, {1.0f, 2.5f, -3.0f, 0.125f}});
    ck.entries.push_back({"alpha", {3}, {9.0f, 8.0f, 7.0f}});
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    save_checkpoint(p1, ck);
    Checkpoint back = load_checkpoint(p1);
    CHECK(back.epoch == 7);
    CHECK(back.rng_state == ck.rng_state);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].name == "alpha");  // sorted on save
    CHECK(back.find("zeta")->data == std::vector<float>{1.0f, 2.5f, -3.0f, 0.125f});
    save_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));
  }

  TEST_CASE("checkpoint: corruption diagnostics carry byte offsets") {
    const fs::path dir = temp_dir("ckptbad");
    {
      std::ofstream os(dir / "bad.ckpt", std::ios::binary);
      os << "NOPE";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint((dir / "bad.ckpt").string()),
                         doctest::Contains("byte offset 0"), FormatError);

    Checkpoint ck;
    ck.entries.push_back({"w", {4}, {1, 2, 3, 4}});
    const std::string p = (dir / "trunc.ckpt").string();
    save_checkpoint(p, ck);
    fs::resize_file(p, fs::file_size(p) - 6);
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("truncated"), FormatError);
  }

  TEST_CASE("loss log: rows parse back exactly, minibatches increase per series") {
    const fs::path dir = temp_dir("log");
    const std::string path = (dir / "losses.csv").string();
    {
      LossLog log(path);
      log.append(0, 0, "lr", 0.0002);
      log.append(0, 0, "total", 123.4567890123);
      log.append(0, 1, "total", 99.5);
      log.append(1, 0, "total", 0.125);
    }
    const auto rows = read_loss_log(path);
    REQUIRE(rows.size() == 4);
    CHECK(rows[1].value == 123.4567890123);
    CHECK(rows[3].epoch == 1);
    std::map<std::pair<int, std::string>, int> last;
    for (const auto& r : rows) {
      const auto key = std::make_pair(r.epoch, r.name);
      if (last.count(key)) CHECK(r.minibatch > last[key]);
      last[key] = r.minibatch;
    }
  }

  TEST_CASE("pixel mapping: endpoints and u8 round trip") {
    std::vector<float> chw = {-1.0f, 0.0f, 1.0f};
    ImageU8 img = chw_to_u8(chw.data(), 1, 1);
    CHECK(img.pixels[0] == 0);
    CHECK(img.pixels[1] == 128);  // round(127.5)
    CHECK(img.pixels[2] == 255);

    Rng rng(4);
    ImageU8 rnd;
    rnd.width = 7;
    rnd.height = 5;
    rnd.pixels.resize(3 * 7 * 5);
    for (auto& p : rnd.pixels) p = static_cast<std::uint8_t>(rng.bounded(256));
    ImageU8 back = chw_to_u8(u8_to_chw(rnd).data(), 5, 7);
    CHECK(back.pixels == rnd.pixels);
  }

  TEST_CASE("png round trip and byte determinism") {
    const fs::path dir = temp_dir("png");
    Rng rng(5);
    ImageU8 img;
    img.width = 16;
    img.height = 16;
    img.pixels.resize(3 * 16 * 16);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.bounded(256));
    write_png((dir / "a.png").string(), img);
    write_png((dir / "b.png").string(), img);
    CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
    ImageU8 back = read_png((dir / "a.png").string());
    CHECK(back.width == 16);
    CHECK(back.pixels == img.pixels);
    CHECK_THROWS_AS(read_png((dir / "missing.png").string()), FormatError);
  }

  TEST_CASE("grid: 64 tiles of 64px at 8 columns with no gutter is 512px square") {
    std::vector<ImageU8> tiles(64);
    for (auto& t : tiles) {
      t.width = 64;
      t.height = 64;
      t.pixels.assign(3 * 64 * 64, 100);
    }
    ImageU8 grid = make_grid(tiles, 8, 0);
    CHECK(grid.width == 512);
    CHECK(grid.height == 512);
  }

  TEST_CASE("box downsample averages blocks; bilinear preserves constants") {
    std::vector<float> chw(3 * 4 * 4, 0.0f);
    for (int i = 0; i < 4; ++i) chw[static_cast<std::size_t>(i)] = 1.0f;  // one 2x2 block lit in ch0
    chw[4] = chw[5] = 1.0f;
    // channel 0 top-left block: rows 0..1, cols 0..1 all 1
    std::vector<float> small = box_downsample_chw(chw, 4, 4, 2);
    CHECK(small[0] == doctest::Approx(1.0f));
    CHECK(small[1] == doctest::Approx(0.5f));
    CHECK_THROWS_AS(box_downsample_chw(chw, 4, 4, 3), DimensionError);

    std::vector<float> flat(3 * 6 * 6, 0.25f);
    for (float v : resize_bilinear_chw(flat, 6, 6, 4, 4)) CHECK(v == doctest::Approx(0.25f));
  }

  TEST_CASE("mini pipeline: train both stages, generate, verify guards") {
    const fs::path dir = temp_dir("mini");
    build_synthetic_dataset((dir / "data").string(), 48, 64, 3);

    TrainConfig c1;
    c1.stage = 1;
    c1.epochs = 2;
    c1.batch_size = 8;
    c1.image_size = 16;
    c1.seed = 3;
    c1.lr = 1e-3;
    c1.checkpoint_every = 1;
    c1.data_dir = (dir / "data").string();
    c1.out_dir = (dir / "run1").string();
    const std::string s1 = train_stage1(c1);
    CHECK(fs::exists(s1));
    CHECK(fs::exists(dir / "run1" / "stage1_losses.csv"));

    TrainConfig c2 = c1;
    c2.stage = 2;
    c2.lr = 1e-3;
    c2.out_dir = (dir / "run2").string();
    const std::string s2 = train_stage2(c2, s1);
    CHECK(fs::exists(s2));
    const auto rows = read_loss_log((dir / "run2" / "stage2_losses.csv").string());
    bool saw_d = false, saw_g = false;
    for (const auto& r : rows) {
      if (r.name == "d_loss") saw_d = true;
      if (r.name == "g_loss") saw_g = true;
    }
    CHECK(saw_d);
    CHECK(saw_g);

    generate_cmd(s1, s2, (dir / "data" / "embeddings.emb").string(), 3, 9,
                 (dir / "gen").string());
    CHECK(fs::exists(dir / "gen" / "gen_00002.png"));
    ImageU8 img = read_png((dir / "gen" / "gen_00000.png").string());
    CHECK(img.width == 64);
    CHECK(fs::exists(dir / "gen" / "grid.png"));

    // Stage-2 training against a checkpoint with a different declared size
    // is a configuration error.
    TrainConfig c3 = c2;
    c3.image_size = 32;
    c3.out_dir = (dir / "run3").string();
    CHECK_THROWS_WITH_AS(train_stage2(c3, s1), doctest::Contains("image_size"), ConfigError);

    // Loading a stage-1 checkpoint as stage-2 is a format error (missing tensors).
    CHECK_THROWS_AS(load_stage2(s1), FormatError);
  }

  TEST_CASE("classifier checkpoints round trip") {
    const fs::path dir = temp_dir("cls");
    SurrogateClassifier cls(16, 24, 5);
    cls.set_test_accuracy(0.93);
    const std::string path = (dir / "cls.ckpt").string();
    save_classifier(path, cls);
    SurrogateClassifier back = load_classifier(path);
    CHECK(back.image_size() == 16);
    CHECK(back.n_classes() == 24);
    CHECK(back.test_accuracy() == doctest::Approx(0.93));
    Rng rng(6);
    Tensor<float> x = stackgen::tanh(Tensor<float>::randn({2, 3, 16, 16}, rng));
    auto [p1, f1] = cls.predict(x);
    auto [p2, f2] = back.predict(x);
    CHECK(p1.data() == p2.data());
  }
}
