// Acceptance run: one PASS/FAIL line per criterion, detail lines indented.
// Exit status is non-zero when any selected criterion fails.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "gradcheck.hpp"
#include "micro.hpp"
#include "slyk/evaluation.hpp"
#include "slyk/training.hpp"

using namespace slyk;
namespace fs = std::filesystem;
using B = losses::Batch<double>;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

struct Report {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << "    [" << (ok ? "ok" : "FAILED") << "] " << what << "\n";
  }
};

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

B rows(std::initializer_list<std::initializer_list<double>> r) {
  B m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

B random_batch(std::mt19937_64& rng, int n, int d) {
  std::uniform_real_distribution<double> u(-1, 1);
  B m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Independent oracles, written with plain loops.

double neg_cos_rows(const B& a, const B& b) {
  double total = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double ab = 0, aa = 0, bb = 0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      ab += a(i, j) * b(i, j);
      aa += a(i, j) * a(i, j);
      bb += b(i, j) * b(i, j);
    }
    total += -ab / std::sqrt(aa * bb);
  }
  return total / static_cast<double>(a.rows());
}

double ssl_oracle(const B& q, const B& q2, const B& z, const B& z2, const B& t, const B& t2) {
  return 0.25 * (neg_cos_rows(q, t2) + neg_cos_rows(q2, t) + neg_cos_rows(z, t2) + neg_cos_rows(z2, t));
}

struct EvOracle {
  double sse, sst, omega;
};

EvOracle ev_oracle(const B& y, const B& yhat, double omega_max) {
  std::vector<double> mean(static_cast<std::size_t>(y.cols()), 0.0);
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) mean[static_cast<std::size_t>(j)] += y(i, j) / y.rows();
  double sse = 0, sst = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      sse += (y(i, j) - yhat(i, j)) * (y(i, j) - yhat(i, j));
      sst += (y(i, j) - mean[static_cast<std::size_t>(j)]) * (y(i, j) - mean[static_cast<std::size_t>(j)]);
    }
  return {sse, sst, std::clamp(sse / sst, 0.0, omega_max)};
}

double mae_oracle(const B& y, const B& yhat) {
  double s = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double r = 0;
    for (Eigen::Index j = 0; j < y.cols(); ++j) r += (y(i, j) - yhat(i, j)) * (y(i, j) - yhat(i, j));
    s += std::sqrt(r);
  }
  return s / static_cast<double>(y.rows());
}

// ---------------------------------------------------------------------------
// 1. Geometry

Report geometry_suite() {
  Report r;
  const auto t0 = Clock::now();
  constexpr int kPitchSteps = 250, kYawSteps = 400;
  double worst = 0, worst_norm = 0;
  for (int i = 0; i < kPitchSteps; ++i)
    for (int j = 0; j < kYawSteps; ++j) {
      const geometry::GazeAngles g{-kDeg * 90 + kDeg * 180 * (i + 0.5) / kPitchSteps,
                                   -kDeg * 180 + kDeg * 360 * (j + 0.5) / kYawSteps};
      const auto v = geometry::angles_to_vector(g);
      const auto back = geometry::vector_to_angles(v);
      worst = std::max({worst, std::abs(back.pitch - g.pitch), std::abs(back.yaw - g.yaw)});
      worst_norm = std::max(worst_norm, std::abs(v.norm() - 1.0));
    }
  r.check(worst <= 1e-6, "angle -> vector -> angle over " + std::to_string(kPitchSteps * kYawSteps) +
                             " grid points, max error " + num(worst) + " rad (limit 1e-6)");
  r.check(worst_norm <= 1e-6, "unit norm, max deviation " + num(worst_norm));

  const geometry::GazeVector3 fwd{0, 0, 1};
  const double e0 = geometry::angular_error(fwd, fwd);
  const double e90 = geometry::angular_error(fwd, {1, 0, 0});
  const double e90b = geometry::angular_error(geometry::GazeAngles{0, 0}, geometry::GazeAngles{90 * kDeg, 0});
  const double e180 = geometry::angular_error(fwd, {0, 0, -1});
  r.check(std::abs(e0) <= 1e-9 && std::abs(e90 - 90) <= 1e-9 && std::abs(e90b - 90) <= 1e-9 &&
              std::abs(e180 - 180) <= 1e-9,
          "angular_error fixed points 0/90/90/180 deg: " + num(e0, 12) + " " + num(e90, 12) + " " + num(e90b, 12) +
              " " + num(e180, 12));
  const double secs = seconds_since(t0);
  r.check(secs < 10.0, "runtime " + num(secs) + " s (limit 10 s)");
  return r;
}

// ---------------------------------------------------------------------------
// 2. Loss oracles

Report loss_suite() {
  Report r;
  const double tol = 1e-9;
  const std::vector<double> x{1, 0}, d{1, 1};
  const double nc = losses::negative_cosine<double>(x, d);
  r.check(std::abs(nc + std::sqrt(2.0) / 2) <= tol, "negative_cosine((1,0),(1,1)) = " + num(nc, 15));

  {
    const B q = rows({{1, 0}}), q2 = rows({{0, 1}}), z = rows({{1, 1}}), z2 = rows({{1, -1}}), t = rows({{1, 0}}),
            t2 = rows({{0, 1}});
    const double got = losses::ssl_loss<double>(q, q2, z, z2, t, t2).value;
    const double want = ssl_oracle(q, q2, z, z2, t, t2);
    r.check(std::abs(got - want) <= tol && std::abs(want + std::sqrt(2.0) / 4) <= tol,
            "four-term ssl_loss hand example = " + num(got, 15) + " (oracle " + num(want, 15) + ")");
  }

  const B y = rows({{3, 4}, {0, 0}}), zero = rows({{0, 0}, {0, 0}});
  const double m = losses::mae<double>(y, zero);
  r.check(std::abs(m - 2.5) <= tol && std::abs(mae_oracle(y, zero) - 2.5) <= tol, "mae example = " + num(m, 15));

  {
    const B yy = rows({{1, 0}, {-1, 0}}), yh = rows({{0.5, 0}, {-0.5, 0}});
    const auto w = losses::ev_weight<double>(yy, yh);
    r.check(std::abs(w.sst - 2) <= tol && std::abs(w.sse - 0.5) <= tol && std::abs(w.omega - 0.25) <= tol,
            "ev_weight example SST " + num(w.sst) + " SSE " + num(w.sse) + " omega " + num(w.omega));
    const auto b = losses::sup_loss<double>(yy, yh);
    r.check(std::abs(b.total - 0.625) <= tol, "sup_loss example total = " + num(b.total, 15));
  }

  {
    // Two classes, logits (1, 0), label 0, weights (2, 1): -log(e / (e + 1)).
    const std::vector<int> label{0};
    const std::vector<double> w{2.0, 1.0};
    const double got = losses::weighted_cross_entropy<double>(rows({{1, 0}}), label, w).value;
    const double want = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    r.check(std::abs(got - want) <= tol, "weighted cross-entropy two-class example = " + num(got, 15));
  }

  std::mt19937_64 rng(2024);
  double worst_ssl = 0, worst_ev = 0, worst_sup = 0;
  bool in_range = true;
  const losses::EvConfig ev_cfg;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 2 + trial % 7, dim = 2 + trial % 5;
    const B a = random_batch(rng, n, dim), b = random_batch(rng, n, dim), c = random_batch(rng, n, dim),
            e = random_batch(rng, n, dim), f = random_batch(rng, n, dim), g = random_batch(rng, n, dim);
    const double v = losses::ssl_loss<double>(a, b, c, e, f, g).value;
    in_range = in_range && v >= -1.0 && v <= 1.0;
    worst_ssl = std::max(worst_ssl, std::abs(v - ssl_oracle(a, b, c, e, f, g)));
    const B yy = random_batch(rng, n, 2), yh = random_batch(rng, n, 2);
    const auto o = ev_oracle(yy, yh, ev_cfg.omega_max);
    const auto w = losses::ev_weight<double>(yy, yh, ev_cfg);
    worst_ev = std::max({worst_ev, std::abs(w.sse - o.sse), std::abs(w.sst - o.sst), std::abs(w.omega - o.omega)});
    const auto s = losses::sup_loss<double>(yy, yh, ev_cfg);
    worst_sup = std::max(worst_sup, std::abs(s.total - mae_oracle(yy, yh) * (o.omega + 1.0)));
  }
  r.check(in_range, "ssl_loss within [-1, 1] over 10^4 random inputs");
  r.check(worst_ssl <= tol, "ssl_loss vs brute-force oracle, max diff " + num(worst_ssl));
  r.check(worst_ev <= tol, "ev_weight vs brute-force oracle, max diff " + num(worst_ev));
  r.check(worst_sup <= tol, "sup_loss vs brute-force oracle, max diff " + num(worst_sup));

  double worst_shift = 0;
  losses::EvConfig wide;
  wide.omega_max = 1e12;
  std::uniform_real_distribution<double> shift(-5, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const B yy = random_batch(rng, 8, 2), yh = random_batch(rng, 8, 2);
    const Eigen::RowVector2d s(shift(rng), shift(rng));
    const B ys = yy.rowwise() + s, yhs = yh.rowwise() + s;
    worst_shift = std::max(worst_shift, std::abs(losses::ev_weight<double>(ys, yhs, wide).omega -
                                                 losses::ev_weight<double>(yy, yh, wide).omega));
  }
  r.check(worst_shift <= tol, "omega translation invariance, max diff " + num(worst_shift));
  return r;
}

// ---------------------------------------------------------------------------
// 3. Gradient checks on micro networks

template <class M>
std::size_t parameter_count(M& m) {
  std::size_t n = 0;
  for (auto& p : m.parameters()) n += p.var.value().size();
  return n;
}

Report gradient_suite() {
  Report r;
  const auto t0 = Clock::now();
  // Gradients below the floor are compared on an absolute scale; float64
  // central differences at eps 1e-6 carry about 1e-10 absolute noise.
  constexpr double kEps = 1e-6, kFloor = 1e-4, kTol = 1e-5;
  const nn::ForwardContext train{true, nullptr};

  {
    std::mt19937_64 rng(1);
    net::NetworkPair<double> pair(testing::micro_pair_config(), rng);
    auto in = [&](nn::Shape s) { return nn::constant(testing::random_tensor(std::move(s), rng, 0.0, 1.0)); };
    auto f1 = in({4, 3, 8, 8}), l1 = in({4, 3, 6, 10}), r1 = in({4, 3, 6, 10});
    auto f2 = in({4, 3, 8, 8}), l2 = in({4, 3, 6, 10}), r2 = in({4, 3, 6, 10});
    nn::Tensor<double> t1, t2;
    {
      nn::NoGradGuard guard;
      t1 = pair.target.forward(f1, l1, r1, train).z.value();
      t2 = pair.target.forward(f2, l2, r2, train).z.value();
    }
    std::vector<nn::Var<double>> leaves;
    for (auto& p : pair.online.parameters()) leaves.push_back(p.var);
    const std::size_t count = parameter_count(pair.online);
    const auto loss = [&] {
      const auto o1 = pair.online.forward(f1, l1, r1, train);
      const auto o2 = pair.online.forward(f2, l2, r2, train);
      return nn::ssl_loss(o1.q, o2.q, o1.z, o2.z, t1, t2, losses::SslTerms::kFour);
    };
    const auto g = testing::gradcheck(leaves, loss, kEps, kFloor);
    r.check(count <= 10000 && g.max_rel_error < kTol,
            "ssl_loss through the online encoder and heads: " + std::to_string(count) +
                " parameters, max relative error " + num(g.max_rel_error) + " (limit 1e-5)");
  }

  for (const bool in_graph : {true, false}) {
    std::mt19937_64 rng(2);
    pmn::GazeModel<double> model(testing::micro_model_config(), rng);
    auto in = [&](nn::Shape s) { return nn::constant(testing::random_tensor(std::move(s), rng, 0.0, 1.0)); };
    auto face = in({6, 3, 8, 8}), left = in({6, 3, 6, 10}), right = in({6, 3, 6, 10});
    const auto target = testing::random_tensor({6, 2}, rng, -0.8, 0.8);
    std::vector<nn::Var<double>> leaves;
    for (auto& p : model.parameters()) leaves.push_back(p.var);
    const std::size_t count = parameter_count(model);
    losses::EvConfig cfg;
    cfg.omega_in_graph = in_graph;
    const auto head = [&] { return model.forward(face, left, right, train).head; };
    const auto loss = [&] { return nn::sup_loss(head(), target, cfg); };
    testing::GradCheckResult g;
    if (in_graph) {
      g = testing::gradcheck(leaves, loss, kEps, kFloor);
    } else {
      // With omega detached the gradient is that of MAE scaled by (omega + 1)
      // at the current point.
      const auto b0 = losses::sup_loss<double>(target.matrix(), head().value().matrix(), cfg);
      const auto reference = [&] { return nn::scale(nn::mae_loss(head(), target), b0.omega + 1.0); };
      g = testing::gradcheck(leaves, loss, reference, kEps, kFloor);
    }
    r.check(count <= 10000 && g.max_rel_error < kTol,
            std::string("sup_loss (omega ") + (in_graph ? "in graph" : "detached") + ") through the gaze model: " +
                std::to_string(count) + " parameters, max relative error " + num(g.max_rel_error));
  }
  const double secs = seconds_since(t0);
  r.check(secs < 120.0, "runtime " + num(secs) + " s (limit 120 s)");
  return r;
}

// ---------------------------------------------------------------------------
// 4. Shapes

nn::Var<float> random_input(nn::Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return nn::constant(testing::random_tensor(std::move(s), rng, lo, hi).cast<float>());
}

Report shape_suite() {
  Report r;
  const nn::ForwardContext eval{false, nullptr};
  std::mt19937_64 rng(4);
  net::LocalBranch<float> local(net::LocalBranchConfig{}, true, rng);
  const auto lshape = local.forward(random_input({2, 3, 36, 60}, 1), eval).shape();
  r.check(lshape == nn::Shape{2, 52}, "eye patch 3x36x60 through the local branch -> " + nn::to_string(lshape));

  pmn::Bottleneck<float> bottleneck(pmn::BottleneckConfig{}, rng);
  const auto bshape = bottleneck.forward(random_input({2, 3, 36, 60}, 2), eval).shape();
  r.check(bshape == nn::Shape{2, 512}, "eye patch 3x36x60 through the bottleneck -> " + nn::to_string(bshape));

  const auto cfg = config::model_config(config::reference_preset());
  r.check(pmn::head_input_dim(cfg) == 1280, "fused width under reference dims = " +
                                                std::to_string(pmn::head_input_dim(cfg)));
  pmn::GazeModel<float> model(cfg, rng);
  const int fs = cfg.encoder.face_h;
  nn::NoGradGuard guard;
  const auto out = model.forward(random_input({2, 3, fs, fs}, 3), random_input({2, 3, 36, 60}, 4),
                                 random_input({2, 3, 36, 60}, 5), eval);
  r.check(out.features.f_eyes.shape() == nn::Shape{2, 512} && out.features.f_face.shape() == nn::Shape{2, 768} &&
              out.features.f_total.shape() == nn::Shape{2, 1280},
          "forward pass: F_eyes " + nn::to_string(out.features.f_eyes.shape()) + ", F_face " +
              nn::to_string(out.features.f_face.shape()) + ", F_T " + nn::to_string(out.features.f_total.shape()));

  pmn::GazeHead<float> head(1280, 2, cfg.head, true, rng);
  float worst = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto h = head.forward(random_input({64, 1280}, 100 + seed, -50.0, 50.0), eval).value();
    for (float v : h.values()) worst = std::max(worst, std::abs(v));
  }
  for (float v : out.head.value().values()) worst = std::max(worst, std::abs(v));
  r.check(worst < 1.0f, "bounded head output max |value| " + num(worst, 9) + " (strictly below 1)");
  return r;
}

// ---------------------------------------------------------------------------
// 5. EMA

config::RunConfig small_desk(std::uint64_t seed) {
  auto c = config::preset("desk");
  c.seed = seed;
  c.pretrain.batch_size = 8;
  c.pretrain.epochs = 1;
  return c;
}

data::LoadedDataset small_data(int count, std::uint64_t seed) {
  data::SynthConfig sc;
  sc.count = count;
  sc.subjects = 4;
  sc.size = 64;
  sc.seed = seed;
  return data::synth_samples(data::synth_generate(sc));
}

Report ema_suite() {
  Report r;
  std::mt19937_64 rng(5);
  net::NetworkPair<double> pair(testing::micro_pair_config(), rng);
  auto on = pair.online_tracked();
  auto tg = pair.target.parameters();
  for (auto& p : on) p.var.mutable_value() = testing::random_tensor(p.var.shape(), rng);
  std::vector<nn::Tensor<double>> before;
  for (auto& p : tg) before.push_back(p.var.value());
  pair.ema_update(1.0);
  bool keep = true;
  for (std::size_t i = 0; i < tg.size(); ++i) keep = keep && tg[i].var.value() == before[i];
  r.check(keep, "tau = 1 leaves the target bitwise unchanged");
  pair.ema_update(0.0);
  bool copy = true;
  for (std::size_t i = 0; i < tg.size(); ++i) copy = copy && tg[i].var.value() == on[i].var.value();
  r.check(copy, "tau = 0 copies the online network bitwise");

  const double start = net::tau_schedule(0, 1000, 0.996), end = net::tau_schedule(1000, 1000, 0.996);
  r.check(start == 0.996 && end == 1.0, "tau schedule endpoints " + num(start, 17) + " and " + num(end, 17));

  const auto ds = small_data(16, 7);
  train::PretrainSession session(small_desk(7), ds.samples);
  session.step();
  bool zero = true, frozen = true;
  for (auto& p : session.pair().target.parameters()) {
    frozen = frozen && !p.var.requires_grad();
    if (!p.var.has_grad()) continue;
    for (float g : p.var.grad().values()) zero = zero && g == 0.0f;
  }
  r.check(zero && frozen, "target parameters carry no gradient after a pretraining step");
  return r;
}

// ---------------------------------------------------------------------------
// 6. Desk-scale training trends

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Report training_suite(int seeds) {
  Report r;
  const auto t0 = Clock::now();
  const std::vector<std::string> variants{"full", "wo_ssl", "wo_pmn", "wo_inv_ev", "wo_mbyol"};
  std::map<std::string, std::vector<double>> errors;
  const train::Log quiet;
  for (int seed = 0; seed < seeds; ++seed) {
    auto base = config::preset("desk");
    base.seed = static_cast<std::uint64_t>(seed);
    data::SynthConfig sc;
    sc.count = 2000;
    sc.seed = base.seed;
    const auto loaded = data::synth_samples(data::synth_generate(sc));
    const auto split = data::split_random(loaded.samples.size(), {0.8, 0.1, 0.1}, base.seed);
    auto pick = [&](const std::vector<std::size_t>& idx) {
      std::vector<const data::Sample*> o;
      for (auto i : idx) o.push_back(&loaded.samples[i]);
      return o;
    };
    const auto tr = pick(split.train), va = pick(split.val), te = pick(split.test);
    std::vector<data::Sample> train_copy;
    for (auto i : split.train) train_copy.push_back(loaded.samples[i]);
    std::map<bool, ckpt::Checkpoint> encoders;
    for (const auto& v : variants) {
      const auto cfg = config::with_ablation(base, v);
      const ckpt::Checkpoint* init = nullptr;
      if (cfg.ablation.use_ssl_init) {
        const bool mods = cfg.ablation.use_mbyol_mods;
        if (!encoders.count(mods)) {
          train::PretrainSession p(cfg, train_copy);
          p.run(quiet);
          const auto& h = p.history().epoch_loss;
          if (v == "full")
            r.check(h.size() == 5 && h.back() < h.front(),
                    "seed " + std::to_string(seed) + " pretraining epoch-mean ssl_loss " + num(h.front(), 4) +
                        " -> " + num(h.back(), 4) + " over " + std::to_string(h.size()) + " epochs");
          encoders[mods] = p.encoder_checkpoint();
        }
        init = &encoders[mods];
      }
      train::FinetuneSession session(cfg, tr, va, init);
      const auto prepared = infer::prepare(te, cfg.architecture.face_size);
      const double before =
          train::mean_angular_error(prepared.labels, infer::run(session.model(), prepared, 64).angles);
      session.run(quiet);
      const double after =
          train::mean_angular_error(prepared.labels, infer::run(session.model(), prepared, 64).angles);
      errors[v].push_back(after);
      r.detail << "    seed " << seed << " " << std::left << std::setw(10) << v << " untrained " << num(before, 4)
               << " deg, trained " << num(after, 4) << " deg (" << session.history().epochs.size()
               << " epochs)\n";
      if (v == "full")
        r.check(after <= 0.5 * before, "seed " + std::to_string(seed) + " fine-tuning reduces held-out error by " +
                                           num(100.0 * (1.0 - after / before), 4) + "% (need >= 50%)");
    }
  }
  const double full = median(errors["full"]);
  for (const auto& v : variants) {
    if (v == "full") continue;
    const double m = median(errors[v]);
    r.check(full <= m, "median held-out error full " + num(full, 4) + " deg <= " + v + " " + num(m, 4) + " deg");
  }
  const double secs = seconds_since(t0);
  r.check(secs <= 3 * 3600.0, "runtime " + num(secs / 60.0) + " min (limit 180 min CPU-only)");
  return r;
}

// ---------------------------------------------------------------------------
// 7. Equivariance harness

std::string bytes_of(const cv::Mat& m) {
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  return {reinterpret_cast<const char*>(c.data), c.total() * c.elemSize()};
}

Report equivariance_suite() {
  Report r;
  data::SynthConfig sc;
  sc.count = 48;
  sc.size = 64;
  sc.seed = 21;
  const auto loaded = data::synth_samples(data::synth_generate(sc));
  std::vector<const data::Sample*> samples;
  for (const auto& s : loaded.samples) samples.push_back(&s);
  const std::vector<double> ranges{180, 20};
  const auto cfg = config::preset("desk");

  auto rng = make_rng(3, {});
  pmn::GazeModel<float> model(config::model_config(cfg), rng);
  const auto predict = infer::make_predictor(model, cfg.architecture.face_size, 16);
  const auto plain = eval::evaluate(predict, samples, ranges, "h");
  const auto curve = eval::equivariance_sweep(predict, samples, {0.0}, ranges, "h");
  r.check(curve.points.size() == 1 && curve.points[0].mean_error_deg == plain.mean_error_deg &&
              curve.points[0].count == plain.count && curve.points[0].excluded == 0,
          "theta = 0 sweep equals plain evaluation bitwise (" + num(plain.mean_error_deg, 17) + " deg)");

  // The oracle recognises each rotated face and answers with its label
  // rotated by an explicit 2x2 matrix.
  const std::vector<double> thetas{0, 5, 10, 15, 20, 25, 30};
  std::map<std::string, geometry::GazeAngles> answers;
  for (double theta : thetas)
    for (const auto* s : samples) {
      const double t = theta * kDeg;
      const geometry::GazeAngles g{std::cos(t) * s->label.pitch - std::sin(t) * s->label.yaw,
                                   std::sin(t) * s->label.pitch + std::cos(t) * s->label.yaw};
      answers[bytes_of(theta == 0 ? s->face : image::rotate(s->face, -theta))] = g;
    }
  int unknown = 0;
  const infer::Predictor oracle = [&](const std::vector<infer::ModelInput>& in) {
    std::vector<geometry::GazeAngles> out;
    for (const auto& m : in) {
      const auto it = answers.find(bytes_of(m.face));
      unknown += it == answers.end();
      out.push_back(it == answers.end() ? geometry::GazeAngles{} : it->second);
    }
    return out;
  };
  const auto sweep = eval::equivariance_sweep(oracle, samples, thetas, ranges, "h");
  double worst = 0;
  int scored = 0;
  for (const auto& p : sweep.points) {
    worst = std::max(worst, p.mean_error_deg);
    scored += p.count;
  }
  r.check(unknown == 0 && worst <= 1e-6 && scored > 0,
          "label-rotating oracle over " + std::to_string(thetas.size()) + " angles, " + std::to_string(scored) +
              " scored samples, max mean error " + num(worst) + " deg (limit 1e-6, the float64 acos floor)");

  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(-2, 2), th(-3.2, 3.2);
  double worst_iso = 0;
  for (int i = 0; i < 100000; ++i) {
    const geometry::GazeVector2 a{u(g), u(g)}, b{u(g), u(g)};
    const double t = th(g);
    const auto ra = geometry::rotate2d(a, t), rb = geometry::rotate2d(b, t);
    worst_iso = std::max({worst_iso, std::abs((ra - rb).norm() - (a - b).norm()), std::abs(ra.norm() - a.norm())});
  }
  r.check(worst_iso <= 1e-9, "rotation preserves distances and norms, max deviation " + num(worst_iso));
  return r;
}

// ---------------------------------------------------------------------------
// 8. Reproducibility through the command-line pipeline

int run_in(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(SLYK_CLI_PATH) + "' " + args + " -q > /dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
  return out;
}

Report reproducibility_suite() {
  Report r;
  const std::string sets =
      " --preset toy --set seed=13 --set data.synth.count=96 --set data.synth.subjects=3 --set data.synth.size=112"
      " --set pretrain.epochs=2 --set finetune.epochs=2 --set eval.equivariance_thetas_deg=[0,10]";
  const std::vector<std::pair<std::string, std::string>> stages{
      {"synth-data", "synth-data -o data" + sets},
      {"pretrain", "pretrain -d data -o pre" + sets},
      {"finetune", "finetune -d data --encoder pre/encoder.safetensors -o fine" + sets},
      {"eval", "eval -d data -m fine/model.safetensors -o eval" + sets},
      {"equivariance", "equivariance -d data -m fine/model.safetensors -o equi" + sets},
      {"corrupt-eval", "corrupt-eval -d data -m fine/model.safetensors -o corrupt" + sets},
      {"plot", "plot -d data -m fine/model.safetensors -o plot" + sets},
      {"loso", "loso -d data --encoder pre/encoder.safetensors -o loso" + sets + " --set finetune.epochs=1"},
  };
  const fs::path base = fs::temp_directory_path() / ("slyk_repro_" + std::to_string(::getpid()));
  fs::remove_all(base);
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = base / run;
    fs::create_directories(dir);
    for (const auto& [name, args] : stages) {
      const int rc = run_in(dir, args);
      if (rc != 0) {
        r.check(false, std::string("run ") + run + " stage " + name + " exited with " + std::to_string(rc));
        fs::remove_all(base);
        return r;
      }
    }
    trees.push_back(tree_contents(dir));
  }
  std::size_t reports = 0;
  std::vector<std::string> differing;
  for (const auto& [path, bytes] : trees[0]) {
    reports += path.ends_with(".json") && path.find("_det") != std::string::npos;
    const auto it = trees[1].find(path);
    if (it == trees[1].end() || it->second != bytes) differing.push_back(path);
  }
  if (trees[1].size() != trees[0].size()) differing.push_back("(file sets differ)");
  std::string list;
  for (const auto& d : differing) list += " " + d;
  r.check(differing.empty() && reports >= stages.size() - 2,
          std::to_string(stages.size()) + " stages run twice, " + std::to_string(trees[0].size()) + " files (" +
              std::to_string(reports) + " metrics reports) byte-identical" + (list.empty() ? "" : "; differing:" + list));
  fs::remove_all(base);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  int seeds = 3;
  app.add_option("--only", only, "Run only these criteria (repeatable)")->check(CLI::Range(1, 8));
  app.add_option("--seeds", seeds, "Seeds for the training-trend criterion")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());

  const std::vector<std::pair<std::string, std::function<Report()>>> criteria{
      {"geometry", geometry_suite},
      {"loss oracles", loss_suite},
      {"gradient checks", gradient_suite},
      {"shapes", shape_suite},
      {"ema", ema_suite},
      {"desk-scale training trends", [seeds] { return training_suite(seeds); }},
      {"equivariance harness", equivariance_suite},
      {"reproducibility", reproducibility_suite},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = Clock::now();
    Report rep;
    try {
      rep = criteria[i].second();
    } catch (const std::exception& e) {
      rep.check(false, std::string("exception: ") + e.what());
    }
    all = all && rep.pass;
    std::cout << (rep.pass ? "PASS" : "FAIL") << " criterion " << id << " " << criteria[i].first << " ("
              << num(seconds_since(t0)) << " s)\n"
              << rep.detail.str() << std::flush;
  }
  return all ? 0 : 1;
}
