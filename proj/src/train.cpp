#include "stackgen/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "stackgen/image.hpp"
#include "stackgen/optim.hpp"

namespace fs = std::filesystem;

namespace stackgen {

namespace {

std::string format_value(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CvaeConfig cvae_config_from(const TrainConfig& cfg) {
  CvaeConfig mc;
  mc.image_size = cfg.image_size;
  mc.latent_dim = cfg.latent_dim;
  mc.cond_dim = cfg.cond_dim;
  mc.embed_dim = cfg.embed_dim;
  mc.base_channels = cfg.base_channels;
  return mc;
}

Stage2Config stage2_config_from(const TrainConfig& cfg) {
  Stage2Config sc;
  sc.input_size = cfg.image_size;
  sc.cond_dim = cfg.cond_dim;
  sc.embed_dim = cfg.embed_dim;
  sc.gen_base = cfg.gen_base;
  sc.n_down = cfg.n_down;
  return sc;
}

template <typename Named>
void add_entries(Checkpoint& ck, const Named& named) {
  for (const auto& [name, tensor] : named) {
    NamedTensorF e;
    e.name = name;
    e.shape = tensor.shape();
    e.data.assign(tensor.data().begin(), tensor.data().end());
    ck.entries.push_back(std::move(e));
  }
}

// Optimizer moments are stored as "<prefix>.<param name>.m/.v" plus a
// one-element "<prefix>.step_count".
template <typename Named>
void add_opt_entries(Checkpoint& ck, const std::string& prefix, const Named& named,
                     Adam<float>& opt) {
  std::size_t pi = 0;
  for (const auto& [name, tensor] : named) {
    if (CvaeModel<float>::is_buffer_name(name)) continue;
    NamedTensorF m{prefix + "." + name + ".m", tensor.shape(), opt.moment1(pi)};
    NamedTensorF v{prefix + "." + name + ".v", tensor.shape(), opt.moment2(pi)};
    ck.entries.push_back(std::move(m));
    ck.entries.push_back(std::move(v));
    ++pi;
  }
  ck.entries.push_back(
      {prefix + ".step_count", Shape{1}, {static_cast<float>(opt.step_count())}});
}

template <typename Named>
void restore_opt(const Checkpoint& ck, const std::string& prefix, const Named& named,
                 Adam<float>& opt) {
  std::size_t pi = 0;
  for (const auto& [name, tensor] : named) {
    if (CvaeModel<float>::is_buffer_name(name)) continue;
    const NamedTensorF* m = ck.find(prefix + "." + name + ".m");
    const NamedTensorF* v = ck.find(prefix + "." + name + ".v");
    if (!m || !v)
      throw FormatError("checkpoint is missing optimizer state for '" + name + "'");
    opt.moment1(pi) = m->data;
    opt.moment2(pi) = v->data;
    ++pi;
  }
  const NamedTensorF* t = ck.find(prefix + ".step_count");
  if (!t || t->data.size() != 1)
    throw FormatError("checkpoint is missing optimizer step count");
  opt.set_step_count(static_cast<std::int64_t>(t->data[0]));
}

void require_same(const char* what, int a, int b) {
  if (a != b)
    throw ConfigError(std::string("checkpoint/config mismatch on ") + what + ": " +
                      std::to_string(a) + " vs " + std::to_string(b));
}

void require_resume_compatible(const TrainConfig& run, const TrainConfig& ck) {
  require_same("stage", run.stage, ck.stage);
  require_same("image_size", run.image_size, ck.image_size);
  require_same("cond_dim", run.cond_dim, ck.cond_dim);
  require_same("latent_dim", run.latent_dim, ck.latent_dim);
  require_same("embed_dim", run.embed_dim, ck.embed_dim);
  require_same("base_channels", run.base_channels, ck.base_channels);
  require_same("gen_base", run.gen_base, ck.gen_base);
  require_same("n_down", run.n_down, ck.n_down);
  require_same("batch_size", run.batch_size, ck.batch_size);
  require_same("epochs", run.epochs, ck.epochs);
  if (run.seed != ck.seed || run.lr != ck.lr || run.decay_factor != ck.decay_factor ||
      run.decay_every != ck.decay_every || run.data_dir != ck.data_dir)
    throw ConfigError("resume checkpoint was produced by a different run configuration");
}

// Concatenated bytes of every tensor in a stage-1 model, for freeze checks.
std::vector<float> snapshot_tensors(CvaeModel<float>& model) {
  std::vector<float> out;
  for (auto& [name, t] : model.named_tensors())
    out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss log
// ---------------------------------------------------------------------------

LossLog::LossLog(const std::string& path) : path_(path), os_(path, std::ios::trunc) {
  if (!os_) throw FormatError("loss log '" + path + "': cannot open for writing");
  os_ << "epoch,minibatch,name,value\n";
}

void LossLog::append(int epoch, int minibatch, const std::string& name, double value) {
  os_ << epoch << ',' << minibatch << ',' << name << ',' << format_value(value) << '\n';
  os_.flush();
}

std::vector<LossRow> read_loss_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("loss log '" + path + "': cannot open");
  std::string line;
  if (!std::getline(is, line) || line != "epoch,minibatch,name,value")
    throw FormatError("loss log '" + path + "': bad header");
  std::vector<LossRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    LossRow r;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto take_int = [&](int& out) {
      const auto res = std::from_chars(p, end, out);
      if (res.ec != std::errc() || res.ptr == end || *res.ptr != ',')
        throw FormatError("loss log '" + path + "' line " + std::to_string(lineno) +
                          ": malformed row");
      p = res.ptr + 1;
    };
    take_int(r.epoch);
    take_int(r.minibatch);
    const char* comma = std::find(p, end, ',');
    if (comma == end)
      throw FormatError("loss log '" + path + "' line " + std::to_string(lineno) +
                        ": malformed row");
    r.name.assign(p, comma);
    p = comma + 1;
    const auto res = std::from_chars(p, end, r.value);
    if (res.ec != std::errc() || res.ptr != end)
      throw FormatError("loss log '" + path + "' line " + std::to_string(lineno) +
                        ": malformed value");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

Tensor<float> gather_images(const Dataset& ds, const std::vector<int>& record_indices) {
  const int S = ds.image_size;
  const std::size_t pix = static_cast<std::size_t>(3) * S * S;
  Tensor<float> t(Shape{static_cast<int>(record_indices.size()), 3, S, S});
  for (std::size_t i = 0; i < record_indices.size(); ++i)
    std::copy_n(ds.images[static_cast<std::size_t>(record_indices[i])].data(), pix,
                t.data().data() + i * pix);
  return t;
}

Tensor<float> gather_embeddings(const Dataset& ds, const std::vector<int>& record_indices) {
  const int E = ds.embeddings.dim;
  Tensor<float> t(Shape{static_cast<int>(record_indices.size()), E});
  for (std::size_t i = 0; i < record_indices.size(); ++i) {
    const auto& rec = ds.records[static_cast<std::size_t>(record_indices[i])];
    std::copy_n(ds.embeddings.row(rec.emb_index), E,
                t.data().data() + i * static_cast<std::size_t>(E));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

namespace {

void save_stage1_ckpt(const std::string& path, const TrainConfig& cfg, CvaeModel<float>& model,
                      Adam<float>* opt, int completed_epochs, const Rng& rng) {
  Checkpoint ck;
  ck.config_text = config_to_text(cfg);
  ck.epoch = static_cast<std::uint32_t>(completed_epochs);
  ck.rng_state = rng.state_string();
  add_entries(ck, model.named_tensors());
  if (opt) add_opt_entries(ck, "opt", model.named_tensors(), *opt);
  save_checkpoint(path, std::move(ck));
}

}  // namespace

Stage1Bundle load_stage1(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = resolve_config(parse_config_text(ck.config_text));
  if (cfg.embed_dim <= 0)
    throw FormatError("stage-1 checkpoint '" + ckpt_path + "' lacks an embedding dimension");
  Rng init(0);
  Stage1Bundle out{cfg, CvaeModel<float>(cvae_config_from(cfg), init)};
  restore_named_tensors(ck, out.model.named_tensors(), "stage-1 checkpoint");
  return out;
}

std::string train_stage1(TrainConfig cfg, const std::string& resume_ckpt) {
  cfg = resolve_config(std::move(cfg));
  if (cfg.stage != 1) throw ConfigError("train_stage1: config must declare stage=1");
  if (cfg.data_dir.empty()) throw ConfigError("train_stage1: data_dir is required");

  Dataset ds = load_dataset(cfg.data_dir, cfg.image_size);
  if (cfg.embed_dim == 0) cfg.embed_dim = ds.embeddings.dim;
  if (cfg.embed_dim != ds.embeddings.dim)
    throw ConfigError("train_stage1: config embed_dim " + std::to_string(cfg.embed_dim) +
                      " does not match dataset embedding dim " +
                      std::to_string(ds.embeddings.dim));
  fs::create_directories(cfg.out_dir);

  Rng rng(cfg.seed);
  CvaeModel<float> model(cvae_config_from(cfg), rng);
  Adam<float> opt(model.parameters());
  int start_epoch = 0;
  if (!resume_ckpt.empty()) {
    Checkpoint ck = load_checkpoint(resume_ckpt);
    require_resume_compatible(cfg, resolve_config(parse_config_text(ck.config_text)));
    restore_named_tensors(ck, model.named_tensors(), "stage-1 resume");
    restore_opt(ck, "opt", model.named_tensors(), opt);
    rng = Rng::from_state(ck.rng_state);
    start_epoch = static_cast<int>(ck.epoch);
  }
  model.finite_checks = true;

  BatchIterator it(ds.train_indices(), cfg.batch_size, cfg.seed);
  const int nb = it.batches_per_epoch();
  if (nb == 0)
    throw ConfigError("train_stage1: batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds the " + std::to_string(ds.train_indices().size()) +
                      " training records");
  LossLog log((fs::path(cfg.out_dir) / "stage1_losses.csv").string());
  const LrSchedule sched{cfg.lr, cfg.decay_factor, cfg.decay_every};

  int epoch = start_epoch, b = 0;
  try {
    for (epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
      const double lr = lr_at(sched, epoch);
      log.append(epoch, 0, "lr", lr);
      const std::vector<int> order = it.epoch_order(epoch);
      for (b = 0; b < nb; ++b) {
        const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(b) * cfg.batch_size,
                                   order.begin() +
                                       static_cast<std::ptrdiff_t>(b + 1) * cfg.batch_size);
        Tensor<float> images = gather_images(ds, idx);
        Tensor<float> phis = gather_embeddings(ds, idx);
        const auto r = cvae_train_step(model, images, phis, opt, static_cast<float>(lr), rng);
        log.append(epoch, b, "recon", r.recon);
        log.append(epoch, b, "kl", r.kl);
        log.append(epoch, b, "cond_kl", r.cond_kl);
        log.append(epoch, b, "total", r.total);
      }
      const int completed = epoch + 1;
      if (completed % cfg.checkpoint_every == 0 || completed == cfg.epochs) {
        char name[32];
        std::snprintf(name, sizeof(name), "stage1_e%04d.ckpt", completed);
        save_stage1_ckpt((fs::path(cfg.out_dir) / name).string(), cfg, model, &opt, completed,
                         rng);
      }
    }
  } catch (const NumericError& e) {
    const std::string emergency = (fs::path(cfg.out_dir) / "stage1_emergency.ckpt").string();
    save_stage1_ckpt(emergency, cfg, model, &opt, epoch, rng);
    throw NumericError("stage-1 training aborted at epoch " + std::to_string(epoch) +
                       " minibatch " + std::to_string(b) + ": " + e.what() +
                       " (emergency checkpoint: " + emergency + ")");
  }

  const std::string final_path = (fs::path(cfg.out_dir) / "stage1_final.ckpt").string();
  save_stage1_ckpt(final_path, cfg, model, &opt, cfg.epochs, rng);
  return final_path;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

namespace {

void save_stage2_ckpt(const std::string& path, const TrainConfig& cfg, Stage2Generator<float>& gen,
                      Stage2Discriminator<float>& disc, Adam<float>* opt_g, Adam<float>* opt_d,
                      int completed_epochs, const Rng& rng) {
  Checkpoint ck;
  ck.config_text = config_to_text(cfg);
  ck.epoch = static_cast<std::uint32_t>(completed_epochs);
  ck.rng_state = rng.state_string();
  add_entries(ck, gen.named_tensors());
  add_entries(ck, disc.named_tensors());
  if (opt_g) add_opt_entries(ck, "opt_g", gen.named_tensors(), *opt_g);
  if (opt_d) add_opt_entries(ck, "opt_d", disc.named_tensors(), *opt_d);
  save_checkpoint(path, std::move(ck));
}

void emit_sample_grid(const std::string& path, CvaeModel<float>& stage1,
                      Stage2Generator<float>& gen, const Dataset& ds,
                      const std::vector<int>& source_records, std::uint64_t seed) {
  constexpr int kGrid = 8;
  std::vector<int> idx(kGrid * kGrid);
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = source_records[i % source_records.size()];
  Rng rng(seed);
  std::vector<ImageU8> tiles;
  tiles.reserve(idx.size());
  for (std::size_t at = 0; at < idx.size(); at += 32) {
    const std::vector<int> part(idx.begin() + static_cast<std::ptrdiff_t>(at),
                                idx.begin() + static_cast<std::ptrdiff_t>(
                                                  std::min(at + 32, idx.size())));
    Tensor<float> phi = gather_embeddings(ds, part);
    Tensor<float> imgs = generate_pipeline(stage1, gen, phi, rng);
    const int S = imgs.dim(2);
    const std::size_t pix = static_cast<std::size_t>(3) * S * S;
    for (std::size_t i = 0; i < part.size(); ++i)
      tiles.push_back(chw_to_u8(imgs.data().data() + i * pix, S, S));
  }
  write_png(path, make_grid(tiles, kGrid, 0));
}

}  // namespace

Stage2Bundle load_stage2(const std::string& ckpt_path) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  TrainConfig cfg = resolve_config(parse_config_text(ck.config_text));
  Rng init(0);
  const Stage2Config sc = stage2_config_from(cfg);
  Stage2Bundle out{cfg, Stage2Generator<float>(sc, init), Stage2Discriminator<float>(sc, init)};
  restore_named_tensors(ck, out.gen.named_tensors(), "stage-2 checkpoint");
  restore_named_tensors(ck, out.disc.named_tensors(), "stage-2 checkpoint");
  return out;
}

std::string train_stage2(TrainConfig cfg, const std::string& stage1_ckpt,
                         const std::string& resume_ckpt) {
  cfg = resolve_config(std::move(cfg));
  if (cfg.stage != 2) throw ConfigError("train_stage2: config must declare stage=2");
  if (cfg.data_dir.empty()) throw ConfigError("train_stage2: data_dir is required");
  if (!stage1_ckpt.empty()) cfg.stage1_ckpt = stage1_ckpt;
  if (cfg.stage1_ckpt.empty())
    throw ConfigError("train_stage2: a stage-1 checkpoint is required (stage1_ckpt)");

  Stage1Bundle s1 = load_stage1(cfg.stage1_ckpt);
  require_same("image_size", cfg.image_size, s1.cfg.image_size);
  require_same("cond_dim", cfg.cond_dim, s1.cfg.cond_dim);
  require_same("latent_dim", cfg.latent_dim, s1.cfg.latent_dim);
  if (cfg.embed_dim == 0) cfg.embed_dim = s1.cfg.embed_dim;
  require_same("embed_dim", cfg.embed_dim, s1.cfg.embed_dim);

  const int full_size = 4 * cfg.image_size;
  Dataset ds = load_dataset(cfg.data_dir, full_size);
  if (ds.embeddings.dim != cfg.embed_dim)
    throw ConfigError("train_stage2: dataset embedding dim " + std::to_string(ds.embeddings.dim) +
                      " does not match stage-1 checkpoint embed_dim " +
                      std::to_string(cfg.embed_dim));
  fs::create_directories(cfg.out_dir);

  s1.model.set_requires_grad(false);
  const std::vector<float> frozen = snapshot_tensors(s1.model);

  Rng rng(cfg.seed);
  const Stage2Config sc = stage2_config_from(cfg);
  Stage2Generator<float> gen(sc, rng);
  Stage2Discriminator<float> disc(sc, rng);
  Adam<float> opt_g(gen.parameters());
  Adam<float> opt_d(disc.parameters());
  int start_epoch = 0;
  if (!resume_ckpt.empty()) {
    Checkpoint ck = load_checkpoint(resume_ckpt);
    require_resume_compatible(cfg, resolve_config(parse_config_text(ck.config_text)));
    restore_named_tensors(ck, gen.named_tensors(), "stage-2 resume");
    restore_named_tensors(ck, disc.named_tensors(), "stage-2 resume");
    restore_opt(ck, "opt_g", gen.named_tensors(), opt_g);
    restore_opt(ck, "opt_d", disc.named_tensors(), opt_d);
    rng = Rng::from_state(ck.rng_state);
    start_epoch = static_cast<int>(ck.epoch);
  }
  gen.finite_checks = true;
  disc.finite_checks = true;

  const std::vector<int> train_records = ds.train_indices();
  BatchIterator it(train_records, cfg.batch_size, cfg.seed);
  const int nb = it.batches_per_epoch();
  if (nb == 0)
    throw ConfigError("train_stage2: batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds the " + std::to_string(train_records.size()) +
                      " training records");
  LossLog log((fs::path(cfg.out_dir) / "stage2_losses.csv").string());
  const LrSchedule sched{cfg.lr, cfg.decay_factor, cfg.decay_every};

  int epoch = start_epoch, b = 0;
  try {
    for (epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
      const double lr = lr_at(sched, epoch);
      log.append(epoch, 0, "lr", lr);
      const std::vector<int> order = it.epoch_order(epoch);
      for (b = 0; b < nb; ++b) {
        const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(b) * cfg.batch_size,
                                   order.begin() +
                                       static_cast<std::ptrdiff_t>(b + 1) * cfg.batch_size);
        Tensor<float> reals = gather_images(ds, idx);
        Tensor<float> phis = gather_embeddings(ds, idx);
        const auto r = cgan_train_step(gen, disc, s1.model, reals, phis, opt_g, opt_d,
                                       static_cast<float>(lr), static_cast<float>(lr),
                                       static_cast<float>(cfg.lambda), rng);
        log.append(epoch, b, "d_loss", r.loss_d);
        log.append(epoch, b, "g_loss", r.loss_g);
      }
      const int completed = epoch + 1;
      if (completed % 10 == 0 || completed == cfg.epochs) {
        char gname[32];
        std::snprintf(gname, sizeof(gname), "samples_e%04d.png", completed);
        emit_sample_grid((fs::path(cfg.out_dir) / gname).string(), s1.model, gen, ds,
                         train_records,
                         cfg.seed ^ (static_cast<std::uint64_t>(completed) * 0x5851f42d4c957f2dull));
      }
      if (completed % cfg.checkpoint_every == 0 || completed == cfg.epochs) {
        char name[32];
        std::snprintf(name, sizeof(name), "stage2_e%04d.ckpt", completed);
        save_stage2_ckpt((fs::path(cfg.out_dir) / name).string(), cfg, gen, disc, &opt_g, &opt_d,
                         completed, rng);
      }
    }
  } catch (const NumericError& e) {
    const std::string emergency = (fs::path(cfg.out_dir) / "stage2_emergency.ckpt").string();
    save_stage2_ckpt(emergency, cfg, gen, disc, &opt_g, &opt_d, epoch, rng);
    throw NumericError("stage-2 training aborted at epoch " + std::to_string(epoch) +
                       " minibatch " + std::to_string(b) + ": " + e.what() +
                       " (emergency checkpoint: " + emergency + ")");
  }

  if (snapshot_tensors(s1.model) != frozen)
    throw ContractError("stage-2 training mutated stage-1 parameters");

  const std::string final_path = (fs::path(cfg.out_dir) / "stage2_final.ckpt").string();
  save_stage2_ckpt(final_path, cfg, gen, disc, &opt_g, &opt_d, cfg.epochs, rng);
  return final_path;
}

// ---------------------------------------------------------------------------
// Generation / evaluation
// ---------------------------------------------------------------------------

Tensor<float> generate_pipeline(CvaeModel<float>& stage1, Stage2Generator<float>& gen,
                                const Tensor<float>& phi, Rng& rng) {
  NoGradGuard ng;
  const int B = phi.dim(0);
  const CvaeConfig& cfg = stage1.config();
  auto [mu_c, lv_c] = stage1.cond().to_gaussian(phi);
  Tensor<float> eps_c = Tensor<float>::randn({B, cfg.cond_dim}, rng);
  Tensor<float> c_hat = sample_condition(mu_c, lv_c, eps_c);
  Tensor<float> z = Tensor<float>::randn({B, cfg.latent_dim}, rng);
  Tensor<float> s0 = stage1.decode(z, c_hat, BnMode::kEval);
  return gen.generate(s0, c_hat, BnMode::kEval);
}

namespace {

void require_pipeline_compatible(const TrainConfig& s1, const TrainConfig& s2) {
  require_same("image_size", s1.image_size, s2.image_size);
  require_same("cond_dim", s1.cond_dim, s2.cond_dim);
  require_same("embed_dim", s1.embed_dim, s2.embed_dim);
}

}  // namespace

void generate_cmd(const std::string& stage1_ckpt, const std::string& stage2_ckpt,
                  const std::string& emb_path, int n, std::uint64_t seed,
                  const std::string& out_dir) {
  if (n <= 0) throw ConfigError("generate: n must be positive");
  Stage1Bundle s1 = load_stage1(stage1_ckpt);
  Stage2Bundle s2 = load_stage2(stage2_ckpt);
  require_pipeline_compatible(s1.cfg, s2.cfg);
  const EmbeddingTable emb = load_embeddings(emb_path);
  if (emb.count == 0) throw FormatError("generate: embedding file '" + emb_path + "' is empty");
  if (emb.dim != s1.cfg.embed_dim)
    throw ConfigError("generate: embedding dim " + std::to_string(emb.dim) +
                      " does not match checkpoint embed_dim " +
                      std::to_string(s1.cfg.embed_dim));
  fs::create_directories(out_dir);

  Rng rng(seed);
  std::vector<ImageU8> tiles;
  tiles.reserve(static_cast<std::size_t>(n));
  int written = 0;
  while (written < n) {
    const int batch = std::min(64, n - written);
    Tensor<float> phi(Shape{batch, emb.dim});
    for (int i = 0; i < batch; ++i)
      std::copy_n(emb.row((written + i) % emb.count), emb.dim,
                  phi.data().data() + static_cast<std::size_t>(i) * emb.dim);
    Tensor<float> imgs = generate_pipeline(s1.model, s2.gen, phi, rng);
    const int S = imgs.dim(2);
    const std::size_t pix = static_cast<std::size_t>(3) * S * S;
    for (int i = 0; i < batch; ++i) {
      ImageU8 img = chw_to_u8(imgs.data().data() + static_cast<std::size_t>(i) * pix, S, S);
      char name[32];
      std::snprintf(name, sizeof(name), "gen_%05d.png", written + i);
      write_png((fs::path(out_dir) / name).string(), img);
      tiles.push_back(std::move(img));
    }
    written += batch;
  }
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  write_png((fs::path(out_dir) / "grid.png").string(), make_grid(tiles, cols, 0));
}

// ---------------------------------------------------------------------------
// Classifier persistence
// ---------------------------------------------------------------------------

void save_classifier(const std::string& path, SurrogateClassifier& cls) {
  Checkpoint ck;
  std::ostringstream cfg;
  cfg << "type=classifier\n";
  cfg << "image_size=" << cls.image_size() << "\n";
  cfg << "n_classes=" << cls.n_classes() << "\n";
  cfg << "accuracy=" << format_value(cls.test_accuracy()) << "\n";
  cfg << "id=" << cls.id() << "\n";
  ck.config_text = cfg.str();
  add_entries(ck, cls.named_tensors());
  save_checkpoint(path, std::move(ck));
}

SurrogateClassifier load_classifier(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  int image_size = 0, n_classes = 0;
  double accuracy = 0;
  std::istringstream is(ck.config_text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "image_size") image_size = std::stoi(value);
    else if (key == "n_classes") n_classes = std::stoi(value);
    else if (key == "accuracy") accuracy = std::stod(value);
  }
  if (image_size == 0 || n_classes == 0)
    throw FormatError("classifier checkpoint '" + path + "': missing geometry");
  SurrogateClassifier cls(image_size, n_classes, 0);
  restore_named_tensors(ck, cls.named_tensors(), "classifier checkpoint");
  cls.set_test_accuracy(accuracy);
  return cls;
}

// ---------------------------------------------------------------------------
// Evaluate
// ---------------------------------------------------------------------------

MetricReport evaluate_cmd(const std::string& stage1_ckpt, const std::string& stage2_ckpt,
                          const std::string& data_dir, const std::string& classifier_ckpt,
                          const EvaluateOptions& opts) {
  Stage1Bundle s1 = load_stage1(stage1_ckpt);
  Stage2Bundle s2 = load_stage2(stage2_ckpt);
  require_pipeline_compatible(s1.cfg, s2.cfg);
  const int full_size = 4 * s1.cfg.image_size;
  Dataset ds = load_dataset(data_dir, full_size);
  if (ds.embeddings.dim != s1.cfg.embed_dim)
    throw ConfigError("evaluate: dataset embedding dim does not match checkpoints");
  if (opts.n_samples < kIsSplits)
    throw ConfigError("evaluate: n must be at least " + std::to_string(kIsSplits));

  MetricReport report;
  report.n_samples = opts.n_samples;

  SurrogateClassifier cls;
  if (fs::exists(classifier_ckpt)) {
    cls = load_classifier(classifier_ckpt);
    if (cls.image_size() != full_size)
      throw ConfigError("evaluate: classifier expects " + std::to_string(cls.image_size()) +
                        "px images but the pipeline emits " + std::to_string(full_size) + "px");
  } else {
    std::vector<int> labels;
    labels.reserve(ds.records.size());
    for (const auto& r : ds.records) labels.push_back(r.class_id);
    const int n_classes = 1 + *std::max_element(labels.begin(), labels.end());
    cls = SurrogateClassifier(full_size, n_classes, opts.seed);
    train_classifier(cls, ds.images, labels, opts.classifier_epochs, 64, 2e-3, opts.seed);
    save_classifier(classifier_ckpt, cls);
  }
  report.classifier_id = cls.id();
  if (cls.test_accuracy() < 0.90)
    report.warnings.push_back("classifier test accuracy " + format_value(cls.test_accuracy()) +
                              " is below 0.90; metrics unreliable");

  const std::vector<int> test_records = ds.test_indices();
  if (test_records.empty()) throw ConfigError("evaluate: dataset has no test-split records");

  // Generated-sample probabilities and features.
  Rng rng(opts.seed);
  Eigen::MatrixXd probs(opts.n_samples, cls.n_classes());
  Eigen::MatrixXd fake_feats(opts.n_samples, cls.feature_dim());
  int done = 0;
  while (done < opts.n_samples) {
    const int batch = std::min(64, opts.n_samples - done);
    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i)
      idx[static_cast<std::size_t>(i)] =
          test_records[static_cast<std::size_t>(done + i) % test_records.size()];
    Tensor<float> phi = gather_embeddings(ds, idx);
    Tensor<float> imgs = generate_pipeline(s1.model, s2.gen, phi, rng);
    auto [p, f] = cls.predict(imgs);
    for (int i = 0; i < batch; ++i) {
      for (int k = 0; k < cls.n_classes(); ++k)
        probs(done + i, k) = p.data()[static_cast<std::size_t>(i) * cls.n_classes() + k];
      for (int k = 0; k < cls.feature_dim(); ++k)
        fake_feats(done + i, k) = f.data()[static_cast<std::size_t>(i) * cls.feature_dim() + k];
    }
    done += batch;
  }

  // Real features from test-split images.
  const int n_real = std::min<int>(opts.n_samples, static_cast<int>(test_records.size()));
  Eigen::MatrixXd real_feats(n_real, cls.feature_dim());
  for (int at = 0; at < n_real; at += 64) {
    const int batch = std::min(64, n_real - at);
    std::vector<int> idx(test_records.begin() + at, test_records.begin() + at + batch);
    Tensor<float> imgs = gather_images(ds, idx);
    auto [p, f] = cls.predict(imgs);
    for (int i = 0; i < batch; ++i)
      for (int k = 0; k < cls.feature_dim(); ++k)
        real_feats(at + i, k) = f.data()[static_cast<std::size_t>(i) * cls.feature_dim() + k];
  }

  auto [is_mean, is_std] = inception_score(probs, kIsSplits);
  report.inception_score_mean = is_mean;
  report.inception_score_std = is_std;

  GaussianStats real_stats = fit_gaussian(real_feats);
  GaussianStats fake_stats = fit_gaussian(fake_feats);
  if (opts.n_samples < cls.feature_dim() + 1 || n_real < cls.feature_dim() + 1) {
    report.warnings.push_back("sample count below feature_dim+1; adding 1e-6 covariance ridge");
    const Eigen::MatrixXd ridge =
        1e-6 * Eigen::MatrixXd::Identity(cls.feature_dim(), cls.feature_dim());
    real_stats.cov += ridge;
    fake_stats.cov += ridge;
  }
  report.fid = fid(real_stats, fake_stats);

  write_metric_report((fs::path(stage2_ckpt).parent_path() / "metrics.json").string(), report);
  return report;
}

}  // namespace stackgen
