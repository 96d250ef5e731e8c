#include "trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "binary_io.hpp"
#include "mi_baselines.hpp"

namespace vaeas {

namespace fs = std::filesystem;

namespace {

constexpr char kModelMagic[8] = {'V', 'A', 'E', 'A', 'S', 'M', 'O', 'D'};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kTestBinarizeEpoch = 0xFFFFFF;

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

Dataset from_gray(const Matrix& gray, const RunConfig& c, Split split, std::uint32_t epoch) {
  if (c.binarize == "dynamic") {
    Dataset d = binarize_dynamic(gray, c.seed, epoch);
    d.split = split;
    return d;
  }
  Dataset d;
  d.split = split;
  d.pixels = (gray.array() >= 128.0 / 255.0).cast<double>();
  d.indices.resize(static_cast<std::size_t>(gray.cols()));
  for (std::size_t i = 0; i < d.indices.size(); ++i) d.indices[i] = static_cast<std::uint32_t>(i);
  return d;
}

// 2 x 8 grid: originals on top, decoder means of the posterior means below.
void write_recon_grid(const fs::path& path, const VaeModel& model, const MatrixRef& x) {
  const Eigen::Index n = std::min<Eigen::Index>(8, x.cols());
  if (n == 0 || x.rows() != kImagePixels) return;
  const GaussianBatch g = encode_batch(model, x.leftCols(n));
  const Matrix logits = mlp_apply(model.decoder, g.mu);
  const Eigen::Index w = n * kImageSide, h = 2 * kImageSide;
  std::vector<unsigned char> img(static_cast<std::size_t>(w * h));
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index r = 0; r < kImageSide; ++r)
      for (Eigen::Index c = 0; c < kImageSide; ++c) {
        const Eigen::Index p = r * kImageSide + c;
        const double top = x(p, k);
        const double bottom = sigmoid(std::clamp(logits(p, k), -kLogitClamp, kLogitClamp));
        img[static_cast<std::size_t>(r * w + k * kImageSide + c)] =
            static_cast<unsigned char>(std::lround(255.0 * top));
        img[static_cast<std::size_t>((r + kImageSide) * w + k * kImageSide + c)] =
            static_cast<unsigned char>(std::lround(255.0 * bottom));
      }
  auto out = open_out(path, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

bool all_finite(const std::vector<std::span<const double>>& blocks) {
  for (const auto& b : blocks)
    for (double v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

RunData load_run_data(const RunConfig& c) {
  c.validate();
  RunData data;
  const std::size_t holdout = c.test_path.empty() ? c.holdout : 0;
  if (c.dataset == "random") {
    Dataset all = synth_random_images(c.limit + holdout, c.p_on, c.seed);
    auto [train, test] = holdout_split(all, holdout);
    data.train = std::move(train);
    data.test = std::move(test);
    return data;
  }
  // mnist and omniglot share the IDX image layout
  const std::size_t want = c.limit == 0 ? 0 : c.limit + holdout;
  Matrix gray = load_idx_gray(c.data_path, want);
  if (c.limit == 0 || static_cast<std::size_t>(gray.cols()) < want) {
    require(static_cast<std::size_t>(gray.cols()) > holdout, ErrorCode::data_dims,
            "dataset has " + std::to_string(gray.cols()) + " images, not enough for a holdout of " +
                std::to_string(holdout));
  }
  const Eigen::Index n_test = static_cast<Eigen::Index>(holdout);
  const Eigen::Index n_train = gray.cols() - n_test;
  data.train_gray = gray.leftCols(n_train);
  data.train = from_gray(data.train_gray, c, Split::train, 0);
  if (!c.test_path.empty()) {
    const Matrix test_gray = load_idx_gray(c.test_path, c.test_limit);
    data.test = from_gray(test_gray, c, Split::test, kTestBinarizeEpoch);
  } else {
    data.test = from_gray(gray.rightCols(n_test), c, Split::test, kTestBinarizeEpoch);
    for (auto& i : data.test.indices) i += static_cast<std::uint32_t>(n_train);
  }
  if (c.binarize != "dynamic") data.train_gray.resize(0, 0);
  return data;
}

void write_checkpoint(const fs::path& path, const VaeModel& model, const Classifier* cls) {
  const fs::path tmp = path.string() + ".tmp";
  {
    auto out = open_out(tmp, std::ios::binary);
    out.write(kModelMagic, sizeof kModelMagic);
    binio::put_u32le(out, kModelVersion);
    binio::put_u32le(out, static_cast<std::uint32_t>(model.latent_dim));
    binio::put_u32le(out, cls ? 1u : 0u);
    write_mlp(out, model.encoder);
    write_mlp(out, model.decoder);
    if (cls) write_classifier(out, *cls);
    if (!out) fail(ErrorCode::io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

TrainedModel read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::checkpoint, "missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  require(in.gcount() == 8 && std::equal(magic, magic + 8, kModelMagic), ErrorCode::checkpoint,
          "not a model checkpoint: " + path.string());
  const auto version = binio::get_u32le(in);
  require(version == kModelVersion, ErrorCode::checkpoint, "unsupported checkpoint version " + std::to_string(version));
  TrainedModel t;
  t.model.latent_dim = binio::get_u32le(in);
  const bool has_cls = binio::get_u32le(in) != 0;
  t.model.encoder = read_mlp(in);
  t.model.decoder = read_mlp(in);
  require(t.model.encoder.output_dim() == 2 * t.model.latent_dim && t.model.decoder.input_dim() == t.model.latent_dim,
          ErrorCode::checkpoint, "checkpoint shapes disagree with the latent dimension");
  if (has_cls) t.classifier = read_classifier(in);
  return t;
}

TrainResult train(const RunConfig& c, const RunData& data, const fs::path& out_dir, const Logger& log) {
  c.validate();
  const bool write = !out_dir.empty();
  const auto n_train = static_cast<std::size_t>(data.train.size());
  require(n_train >= 1, ErrorCode::data_dims, "empty training set");

  TrainResult result;
  TrainedModel& tm = result.trained;
  SeededRng init = SeededRng::substream(c.seed, 0, 0, SeededRng::Purpose::init);
  VaeShape shape;
  shape.input_dim = data.train.dim();
  shape.latent_dim = c.latent;
  shape.hidden = c.hidden;
  shape.encoder_layers = c.enc_layers;
  shape.decoder_layers = c.dec_layers;
  shape.hidden_act = c.activation;
  tm.model = make_vae(shape, init);

  const std::uint32_t v = c.use_classifier ? c.effective_labels(n_train) : 0;
  if (c.use_classifier) {
    tm.labels = assign_labels(n_train, v, c.seed);
    ClassifierShape cs;
    cs.latent_dim = c.latent;
    cs.hidden = c.cls_hidden > 0 ? c.cls_hidden : c.hidden;
    cs.layers = c.cls_layers;
    cs.num_categories = v;
    cs.mode = c.classifier;
    cs.hidden_act = c.activation;
    cs.quadratic = c.cls_quadratic;
    tm.classifier = make_classifier(cs, init);
  }
  Classifier* cls = tm.classifier ? &*tm.classifier : nullptr;

  std::ofstream csv;
  if (write) {
    fs::create_directories(out_dir);
    RunConfig echo = c;
    if (!echo.data_path.empty()) echo.data_path = fs::absolute(echo.data_path).lexically_normal().string();
    if (!echo.test_path.empty()) echo.test_path = fs::absolute(echo.test_path).lexically_normal().string();
    write_text(out_dir / "config.json", to_json(echo).dump(2) + "\n");
    if (cls) {
      auto lab = open_out(out_dir / "labels.bin", std::ios::binary);
      write_labels(lab, tm.labels);
    }
    csv = open_out(out_dir / "metrics.csv");
    csv << kMetricsHeader << "\n";
  }
  auto add_row = [&](const MetricsRow& row) {
    result.rows.push_back(row);
    if (write) csv << format_metrics_row(row) << "\n" << std::flush;
  };

  const ObjectiveConfig oc = c.objective_config();
  AdamOptimizer vae_opt(c.adam);
  AdamConfig cls_adam = c.adam;
  if (c.cls_lr > 0.0) cls_adam.learning_rate = c.cls_lr;
  AdamOptimizer cls_opt(cls_adam);
  std::optional<double> ema_mi, ema_md;
  auto ema = [&](std::optional<double>& acc, double x) {
    if (!std::isfinite(x)) return;
    acc = acc ? c.ema_decay * *acc + (1.0 - c.ema_decay) * x : x;
  };

  std::vector<std::uint32_t> batch_labels;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    const auto ep = static_cast<std::uint32_t>(epoch);
    Dataset dynamic;
    const Dataset* train_set = &data.train;
    if (c.binarize == "dynamic" && data.train_gray.size() > 0) {
      dynamic = binarize_dynamic(data.train_gray, c.seed, ep);
      train_set = &dynamic;
    }
    BatchPlan plan{c.seed, ep, c.batch, false};
    double recon = 0, kl = 0, sc = 0, pe = 0, mi_fano = 0;
    double seen = 0;
    std::uint32_t b_index = 0;
    for (const Batch& batch : batches(*train_set, plan)) {
      SeededRng noise = SeededRng::substream(c.seed, ep, b_index++, SeededRng::Purpose::noise);
      batch_labels.clear();
      if (cls)
        for (auto p : batch.positions) batch_labels.push_back(tm.labels.labels[p]);
      ObjectiveResult r = vae_as_loss(tm.model, cls, batch.pixels, batch_labels, oc, noise);
      const auto& t = r.terms;
      if (!std::isfinite(t.loss))
        fail(ErrorCode::numerical, "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                       std::to_string(b_index - 1));

      auto vae_params = param_blocks(tm.model.encoder);
      auto dec_params = param_blocks(tm.model.decoder);
      vae_params.insert(vae_params.end(), dec_params.begin(), dec_params.end());
      auto vae_grads = grad_blocks(r.encoder);
      auto dec_grads = grad_blocks(r.decoder);
      vae_grads.insert(vae_grads.end(), dec_grads.begin(), dec_grads.end());
      require(all_finite(vae_grads), ErrorCode::numerical, "non-finite gradient at epoch " + std::to_string(epoch));
      vae_opt.step(vae_params, vae_grads);
      if (cls && r.classifier) {
        const auto g = r.classifier->blocks();
        require(all_finite(g), ErrorCode::numerical, "non-finite classifier gradient");
        cls_opt.step(param_blocks(*cls), g);
      }

      const double w = static_cast<double>(batch.pixels.cols());
      seen += w;
      recon += w * t.recon_ll;
      kl += w * t.kl;
      if (cls) {
        sc += w * t.sc;
        pe += w * t.pe;
        mi_fano += w * t.mi_fano;
        ema(ema_mi, t.mi);
        ema(ema_md, t.md);
      }
    }

    const int au_train = active_units(tm.model, data.train.pixels, c.au_threshold).count;
    MetricsRow row;
    row.epoch = epoch;
    row.alpha = c.objective == Objective::vae_as ? c.alpha : 0.0;
    row.beta = c.objective == Objective::vae_as ? c.beta : 0.0;
    row.labels = v;
    row.seed = c.seed;
    row.split = "train";
    row.estimator = "aux";
    row.nll = -recon / seen;
    row.kl = kl / seen;
    row.au = au_train;
    if (cls) {
      if (ema_mi) row.mi = ema_mi;
      if (ema_md) row.md = ema_md;
      row.sc = sc / seen;
      row.pe = pe / seen;
    }
    add_row(row);
    if (cls) {
      MetricsRow f = row;
      f.estimator = "fano";
      f.nll.reset();
      f.kl.reset();
      f.md.reset();
      f.sc.reset();
      f.au.reset();
      f.mi = mi_fano / seen;
      add_row(f);
    }
    std::string msg = "epoch " + std::to_string(epoch) + " recon " + fixed(-recon / seen) + " kl " + fixed(kl / seen) +
                      " au " + std::to_string(au_train);
    if (cls) msg += " mi " + fixed(ema_mi.value_or(NAN)) + " md " + fixed(ema_md.value_or(NAN)) + " sc " + fixed(sc / seen);

    const bool eval_now = data.test.size() > 0 && c.eval_every > 0 && (epoch % c.eval_every == 0 || epoch == c.epochs);
    if (eval_now) {
      const Eigen::Index n_eval =
          c.eval_limit > 0 ? std::min<Eigen::Index>(static_cast<Eigen::Index>(c.eval_limit), data.test.size())
                           : data.test.size();
      SeededRng erng = SeededRng::substream(c.seed, ep, 0, SeededRng::Purpose::eval);
      const auto test_x = data.test.pixels.leftCols(n_eval);
      MetricsRow tr;
      tr.epoch = epoch;
      tr.split = "test";
      tr.estimator = "iwae";
      tr.alpha = row.alpha;
      tr.beta = row.beta;
      tr.labels = v;
      tr.seed = c.seed;
      tr.nll = importance_nll(tm.model, test_x, c.epoch_eval_k, erng).mean;
      tr.kl = kl_to_standard_cols(encode_batch(tm.model, data.test.pixels)).mean();
      tr.au = active_units(tm.model, data.test.pixels, c.au_threshold).count;
      add_row(tr);
      msg += " test_nll " + fixed(*tr.nll);
    }
    emit(log, msg);

    if (write) {
      if (c.dump_recon) write_recon_grid(out_dir / ("recon_epoch" + std::to_string(epoch) + ".pgm"), tm.model,
                                         data.test.size() > 0 ? data.test.pixels : data.train.pixels);
      if (c.save_every > 0 && epoch % c.save_every == 0)
        write_checkpoint(out_dir / ("model_epoch" + std::to_string(epoch) + ".bin"), tm.model, cls);
    }
  }
  if (write) write_checkpoint(out_dir / "model.bin", tm.model, cls);
  return result;
}

TrainResult run_train(const RunConfig& config, const fs::path& out_dir, const Logger& log) {
  const RunData data = load_run_data(config);
  emit(log, "train images " + std::to_string(data.train.size()) + ", test images " + std::to_string(data.test.size()));
  return train(config, data, out_dir, log);
}

LoadedRun load_run(const fs::path& run_dir) {
  LoadedRun run;
  const fs::path cfg = run_dir / "config.json";
  require(fs::exists(cfg), ErrorCode::checkpoint, "no config.json in " + run_dir.string());
  run.config = load_run_config(cfg.string());
  run.trained = read_checkpoint(run_dir / "model.bin");
  if (run.trained.classifier) {
    std::ifstream in(run_dir / "labels.bin", std::ios::binary);
    if (!in) fail(ErrorCode::checkpoint, "missing labels.bin in " + run_dir.string());
    run.trained.labels = read_labels(in, run.trained.classifier->num_categories);
  }
  return run;
}

namespace {

void check_labels(const TrainedModel& t, const Dataset& train) {
  if (t.classifier)
    require(t.labels.labels.size() == static_cast<std::size_t>(train.size()), ErrorCode::checkpoint,
            "labels.bin has " + std::to_string(t.labels.labels.size()) + " entries but the training set has " +
                std::to_string(train.size()) + " images");
}

}  // namespace

EvalReport run_eval(const fs::path& run_dir, const EvalOptions& options, const fs::path& out_dir,
                    const Logger& log) {
  LoadedRun run = load_run(run_dir);
  const RunConfig& c = run.config;
  const RunData data = load_run_data(c);
  check_labels(run.trained, data.train);
  ReportOptions ro;
  ro.nll_samples = options.nll_samples > 0 ? options.nll_samples : c.eval_k;
  ro.au_threshold = c.au_threshold;
  ro.train_nll_limit = options.train_nll_limit;
  const Eigen::Index n_test = options.limit > 0
                                  ? std::min<Eigen::Index>(static_cast<Eigen::Index>(options.limit), data.test.size())
                                  : data.test.size();
  SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFE, 0, SeededRng::Purpose::eval);
  const Classifier* cls = run.trained.classifier ? &*run.trained.classifier : nullptr;
  const EvalReport r = assemble_report(run.trained.model, cls, run.trained.labels.labels, data.train.pixels,
                                       data.test.pixels.leftCols(n_test), ro, rng);
  emit(log, "nll_test " + fixed(r.nll_test) + " kl_test " + fixed(r.kl_test) + " au " + std::to_string(r.au));

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const std::uint32_t v = cls ? cls->num_categories : 0;
    auto base = [&](const char* split, const char* est) {
      MetricsRow row;
      row.epoch = c.epochs;
      row.split = split;
      row.estimator = est;
      row.alpha = c.objective == Objective::vae_as ? c.alpha : 0.0;
      row.beta = c.objective == Objective::vae_as ? c.beta : 0.0;
      row.labels = v;
      row.seed = c.seed;
      return row;
    };
    auto csv = open_out(out_dir / "eval.csv");
    csv << kMetricsHeader << "\n";
    MetricsRow test = base("test", "iwae");
    test.nll = finite_or_empty(r.nll_test);
    test.kl = finite_or_empty(r.kl_test);
    test.au = r.au;
    csv << format_metrics_row(test) << "\n";
    MetricsRow train_aux = base("train", "aux");
    train_aux.nll = r.nll_train_recon;
    train_aux.kl = r.kl_train;
    train_aux.mi = finite_or_empty(r.mi);
    train_aux.md = finite_or_empty(r.md);
    train_aux.sc = finite_or_empty(r.sc);
    train_aux.pe = finite_or_empty(r.pe);
    csv << format_metrics_row(train_aux) << "\n";
    MetricsRow train_iwae = base("train", "iwae");
    train_iwae.nll = r.nll_train;
    csv << format_metrics_row(train_iwae) << "\n";
    if (cls) {
      MetricsRow fano = base("train", "fano");
      fano.mi = finite_or_empty(r.mi_fano);
      fano.pe = finite_or_empty(r.pe);
      csv << format_metrics_row(fano) << "\n";
    }
    nlohmann::ordered_json j;
    j["nll_test"] = r.nll_test;
    j["kl_test"] = r.kl_test;
    j["au"] = r.au;
    j["nll_train_recon"] = r.nll_train_recon;
    j["nll_train"] = r.nll_train;
    j["kl_train"] = r.kl_train;
    auto put = [&](const char* k, double x) {
      if (std::isfinite(x))
        j[k] = x;
      else
        j[k] = nullptr;
    };
    put("mi", r.mi);
    put("mi_fano", r.mi_fano);
    put("md", r.md);
    put("sc", r.sc);
    put("pe", r.pe);
    j["eval_samples"] = r.eval_samples;
    j["train_nll_limit"] = options.train_nll_limit;
    j["test_images"] = n_test;
    write_text(out_dir / "report.json", j.dump(2) + "\n");
  }
  return r;
}

namespace {

std::vector<MetricsRow> estimate_rows(const RunConfig& c, const TrainedModel& t, const Matrix& x,
                                      const EstimateOptions& options, const Logger& log) {
  std::vector<MetricsRow> rows;
  const Classifier* cls = t.classifier ? &*t.classifier : nullptr;
  const std::uint32_t v = cls ? cls->num_categories : 0;
  auto base = [&](const std::string& est) {
    MetricsRow row;
    row.epoch = c.epochs;
    row.split = "train";
    row.estimator = est;
    row.alpha = c.objective == Objective::vae_as ? c.alpha : 0.0;
    row.beta = c.objective == Objective::vae_as ? c.beta : 0.0;
    row.labels = v;
    row.seed = c.seed;
    return row;
  };
  std::optional<Classifier> refit;
  if (cls && options.refit_epochs > 0) {
    SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFE, 0, SeededRng::Purpose::noise);
    RefitConfig rc;
    rc.epochs = options.refit_epochs;
    rc.batch_size = static_cast<Eigen::Index>(options.refit_batch > 0 ? options.refit_batch : c.batch);
    rc.adam = c.adam;
    if (c.cls_lr > 0.0) rc.adam.learning_rate = c.cls_lr;
    if (options.refit_lr > 0.0) rc.adam.learning_rate = options.refit_lr;
    refit = *cls;
    const double ce = refit_classifier(t.model, *refit, x, t.labels.labels, rc, rng);
    emit(log, "classifier refit " + std::to_string(rc.epochs) + " epochs, cross-entropy " + fixed(ce));
    cls = &*refit;
  }
  if (cls) {
    SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFD, 0, SeededRng::Purpose::eval);
    const AuxEstimates a = aux_estimates(t.model, *cls, x, t.labels.labels, options.aux_draws, rng);
    MetricsRow aux = base("aux");
    aux.kl = a.mean_kl;
    aux.mi = finite_or_empty(a.mi);
    aux.md = a.md;
    aux.sc = a.sc;
    aux.pe = a.pe;
    rows.push_back(aux);
    MetricsRow fano = base("fano");
    fano.mi = a.mi_fano;
    fano.pe = a.pe;
    rows.push_back(fano);
    emit(log, "aux mi " + fixed(a.mi) + " md " + fixed(a.md) + " fano " + fixed(a.mi_fano));
  }
  std::uint32_t k = 0;
  for (std::size_t s : options.subsets) {
    SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFD, k++, SeededRng::Purpose::mc);
    McEstimatorConfig mc;
    mc.subset = s;
    mc.draws_per_point = 1;
    const McEstimate e = mc_estimate(t.model, x, mc, rng);
    MetricsRow row = base(s == 0 ? "mc_full" : "mc_" + std::to_string(s));
    row.kl = e.mean_kl;
    row.mi = e.mi;
    row.md = e.md;
    rows.push_back(row);
    emit(log, row.estimator + " mi " + fixed(e.mi) + " md " + fixed(e.md));
  }
  if (options.mine_steps > 0) {
    SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFD, 0, SeededRng::Purpose::mine);
    MineConfig mc;
    mc.steps = options.mine_steps;
    const PairSampler sampler = vae_pair_sampler(t.model, x);
    const MineNet net = mine_train(sampler, x.rows(), t.model.latent_dim, mc, rng);
    const MineEstimate e = mine_estimate(net, sampler, 20, mc.batch_size, rng);
    MetricsRow row = base("mine");
    row.mi = e.value;
    rows.push_back(row);
    emit(log, "mine mi " + fixed(e.value));
  }
  return rows;
}

void write_rows(const fs::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) out << format_metrics_row(r) << "\n";
}

}  // namespace

std::vector<MetricsRow> run_estimate_mi(const fs::path& run_dir, const EstimateOptions& options,
                                        const fs::path& out_dir, const Logger& log) {
  LoadedRun run = load_run(run_dir);
  const RunData data = load_run_data(run.config);
  check_labels(run.trained, data.train);
  TrainedModel& t = run.trained;
  Matrix x = data.train.pixels;
  if (options.limit > 0 && options.limit < static_cast<std::size_t>(x.cols())) {
    x = x.leftCols(static_cast<Eigen::Index>(options.limit)).eval();
    if (t.classifier) t.labels.labels.resize(options.limit);
  }
  auto rows = estimate_rows(run.config, t, x, options, log);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_rows(out_dir / "estimates.csv", rows);
  }
  return rows;
}

std::string format_summary_row(const SummaryRow& r) {
  auto f = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  char value[64];
  std::snprintf(value, sizeof value, "%g", r.value);
  return r.point + "," + r.param + "," + value + "," + std::to_string(r.epoch) + "," + f(r.nll_recon) + "," + f(r.kl) +
         "," + f(r.mi) + "," + f(r.mi_fano) + "," + f(r.md) + "," + f(r.sc) + "," + std::to_string(r.au) + "," + f(r.pe) +
         "," + f(r.nll_test) + "," + f(r.kl_test) + "," + std::to_string(r.au_test);
}

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids = {"random-collapse", "decoder-depth", "alpha-sweep", "beta-sweep",
                                               "estimator-compare"};
  return ids;
}

int worker_threads(int requested) {
  int n = requested;
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("VAEAS_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0) n = cap;
    }
  }
  return std::max(1, n);
}

namespace {

struct GridPoint {
  std::string name;
  std::string param;
  double value = 0.0;
  RunConfig config;
};

// Frozen end-of-run statistics for the summary table.
SummaryRow summarize(const GridPoint& p, const TrainResult& tr, const RunData& data) {
  const RunConfig& c = p.config;
  const TrainedModel& t = tr.trained;
  SummaryRow s;
  s.point = p.name;
  s.param = p.param;
  s.value = p.value;
  s.epoch = c.epochs;
  SeededRng rng = SeededRng::substream(c.seed, 0xFFFFFC, 0, SeededRng::Purpose::eval);
  const ElboBatch elbo = elbo_batch(t.model, data.train.pixels, 1, rng);
  s.nll_recon = -elbo.mean_recon_ll;
  s.kl = elbo.mean_kl;
  s.au = active_units(t.model, data.train.pixels, c.au_threshold).count;
  s.mi = s.mi_fano = s.md = s.sc = s.pe = std::nan("");
  if (t.classifier) {
    const AuxEstimates a = aux_estimates(t.model, *t.classifier, data.train.pixels, t.labels.labels, 1, rng);
    s.mi = a.mi;
    s.mi_fano = a.mi_fano;
    s.md = a.md;
    s.sc = a.sc;
    s.pe = a.pe;
  }
  s.nll_test = s.kl_test = std::nan("");
  if (data.test.size() > 0) {
    const Eigen::Index n_eval =
        c.eval_limit > 0 ? std::min<Eigen::Index>(static_cast<Eigen::Index>(c.eval_limit), data.test.size())
                         : data.test.size();
    s.nll_test = importance_nll(t.model, data.test.pixels.leftCols(n_eval), c.epoch_eval_k, rng).mean;
    s.kl_test = kl_to_standard_cols(encode_batch(t.model, data.test.pixels)).mean();
    s.au_test = active_units(t.model, data.test.pixels, c.au_threshold).count;
  }
  return s;
}

std::string point_name(const std::string& param, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%g", param.c_str(), value);
  return buf;
}

}  // namespace

std::vector<SummaryRow> run_experiment(const std::string& id, const RunConfig& base, const ExperimentOptions& options,
                                       const fs::path& out_dir, const Logger& log) {
  std::vector<GridPoint> points;
  if (id == "random-collapse") {
    RunConfig c = base;
    c.dataset = "random";
    c.objective = Objective::elbo;
    c.use_classifier = false;
    points.push_back({"random", "p_on", c.p_on, c});
  } else if (id == "decoder-depth") {
    for (int layers : options.layers) {
      RunConfig c = base;
      c.objective = Objective::elbo;
      c.use_classifier = false;
      c.dec_layers = layers;
      points.push_back({point_name("dec_layers", layers), "dec_layers", static_cast<double>(layers), c});
    }
  } else if (id == "alpha-sweep" || id == "beta-sweep") {
    const bool alpha = id == "alpha-sweep";
    for (double x : alpha ? options.alphas : options.betas) {
      RunConfig c = base;
      c.objective = Objective::vae_as;
      c.use_classifier = true;
      (alpha ? c.alpha : c.beta) = x;
      const std::string param = alpha ? "alpha" : "beta";
      points.push_back({point_name(param, x), param, x, c});
    }
  } else if (id == "estimator-compare") {
    RunConfig c = base;
    c.use_classifier = true;
    points.push_back({"model", "alpha", c.alpha, c});
  } else {
    fail(ErrorCode::config, "unknown experiment '" + id +
                                "' (random-collapse|decoder-depth|alpha-sweep|beta-sweep|estimator-compare)");
  }
  for (auto& p : points) p.config.validate();
  fs::create_directories(out_dir);
  write_text(out_dir / "base_config.json", to_json(base).dump(2) + "\n");

  // Points of a grid share the dataset.
  const RunData data = load_run_data(points.front().config);
  std::vector<SummaryRow> summary(points.size());
  std::vector<std::vector<MetricsRow>> estimates(points.size());
  std::vector<std::exception_ptr> errors(points.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const GridPoint& p = points[i];
      Logger point_log = [&](const std::string& m) {
        if (!log) return;
        std::lock_guard<std::mutex> lock(log_mutex);
        log("[" + p.name + "] " + m);
      };
      try {
        const TrainResult tr = train(p.config, data, out_dir / p.name, point_log);
        summary[i] = summarize(p, tr, data);
        if (id == "estimator-compare") {
          EstimateOptions eo;
          eo.subsets = options.subsets;
          eo.refit_epochs = options.refit_epochs;
          eo.refit_lr = options.refit_lr;
          eo.refit_batch = options.refit_batch;
          estimates[i] = estimate_rows(p.config, tr.trained, data.train.pixels, eo, point_log);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(worker_threads(options.threads), static_cast<int>(points.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n_threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  auto out = open_out(out_dir / "summary.csv");
  out << kSummaryHeader << "\n";
  for (const auto& s : summary) out << format_summary_row(s) << "\n";
  if (id == "estimator-compare") write_rows(out_dir / "estimates.csv", estimates.front());
  return summary;
}

}  // namespace vaeas
