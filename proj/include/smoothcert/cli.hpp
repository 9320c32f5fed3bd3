#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "smoothcert/cliopts.hpp"
#include "smoothcert/dataset.hpp"
#include "smoothcert/distill.hpp"
#include "smoothcert/eval.hpp"
#include "smoothcert/io.hpp"
#include "smoothcert/net.hpp"
#include "smoothcert/smoothing.hpp"

namespace smoothcert {

namespace clidetail {

// Resolved-config block echoed at the top of every artifact as '# key=value'
// lines, so a run can be reconstructed from its outputs alone.
struct MetaBlock {
  std::vector<std::pair<std::string, std::string>> items;

  void add(const std::string& k, const std::string& v) { items.emplace_back(k, v); }
  void add(const std::string& k, const char* v) { items.emplace_back(k, std::string(v)); }
  void add(const std::string& k, double v) { items.emplace_back(k, format_double(v)); }
  void add(const std::string& k, int v) { items.emplace_back(k, std::to_string(v)); }
  void add(const std::string& k, long long v) { items.emplace_back(k, std::to_string(v)); }
  void add(const std::string& k, std::uint64_t v) { items.emplace_back(k, std::to_string(v)); }
  void add(const std::string& k, bool v) { items.emplace_back(k, v ? "1" : "0"); }

  std::string echo() const {
    std::string s;
    for (const auto& [k, v] : items) s += "# " + k + "=" + v + "\n";
    return s;
  }
};

template <typename T, typename F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt(v[i]);
  }
  return s;
}

inline std::string join_ints(const std::vector<int>& v) {
  return join(v, [](int x) { return std::to_string(x); });
}
inline std::string join_doubles(const std::vector<double>& v) {
  return join(v, [](double x) { return format_double(x); });
}
inline std::string join_strings(const std::vector<std::string>& v) {
  return join(v, [](const std::string& x) { return x; });
}

inline NoiseSpec make_noise_spec(const std::string& family, double beta, double sigma, int dim) {
  switch (parse_family(family)) {
    case NoiseFamily::kGaussian: return NoiseSpec::gaussian(sigma, dim);
    case NoiseFamily::kLaplace: return NoiseSpec::laplace(sigma, dim);
    case NoiseFamily::kExponentialPower: return NoiseSpec::exponential_power(beta, sigma, dim);
    case NoiseFamily::kCauchy: return NoiseSpec::cauchy(sigma, dim);
    case NoiseFamily::kPareto: return NoiseSpec::pareto(sigma, dim, beta);
  }
  throw std::invalid_argument("unknown noise family: " + family);
}

inline void add_noise_meta(MetaBlock& meta, const NoiseSpec& spec) {
  meta.add("family", family_name(spec.family));
  meta.add("beta", spec.beta);
  meta.add("sigma", spec.scale());
  meta.add("noise_alpha", spec.alpha);
  meta.add("dim", spec.dim);
}

inline std::vector<Norm> parse_norms(const std::vector<std::string>& names) {
  std::vector<Norm> out;
  for (const auto& s : names) {
    Norm p = parse_norm(s);
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  if (out.empty()) throw std::invalid_argument("no norms requested");
  return out;
}

inline const char* radius_column(Norm p) {
  switch (p) {
    case Norm::kL1: return "R_l1";
    case Norm::kL2: return "R_l2";
    case Norm::kLinf: return "R_linf";
  }
  return "";
}

inline DatasetFile load_ds(const std::string& path, const std::string& format,
                           const std::string& idx_labels) {
  if (format == "csv") return load_dataset(path, DatasetFormat::kCsv);
  if (format == "idx") return load_dataset(path, DatasetFormat::kIdx, idx_labels);
  throw std::invalid_argument("unknown dataset format: " + format);
}

inline std::string file_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

inline double radius_or_nan(const CertifyOutcome& oc, Norm p) {
  auto it = oc.radii.find(p);
  return it == oc.radii.end() ? std::numeric_limits<double>::quiet_NaN() : it->second.radius;
}

inline std::vector<int> full_arch(int input_dim, const std::vector<int>& hidden, int classes) {
  std::vector<int> arch;
  arch.push_back(input_dim);
  for (int h : hidden) arch.push_back(h);
  arch.push_back(classes);
  return arch;
}

// ---- certify artifact parsing (score consumes these) --------------------

struct CertifyRow {
  long long id = 0;
  int decision = 0;
  double pa = 0.0, pb = 0.0;
  double r[3] = {0.0, 0.0, 0.0};  // l1, l2, linf
  int abstained = 0;
};

struct CertifyArtifact {
  std::map<std::string, std::string> meta;
  std::vector<CertifyRow> rows;
};

inline constexpr const char* kCertifyHeader =
    "input_id,decision,pA_lower,pB_upper,R_l1,R_l2,R_linf,abstained";

inline CertifyArtifact parse_certify_artifact(const std::string& path) {
  CertifyArtifact art;
  std::istringstream in(read_text(path));
  std::string line;
  bool header_seen = false;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
      std::size_t eq = body.find('=');
      if (eq != std::string::npos) art.meta[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    if (!header_seen) {
      if (line != kCertifyHeader) {
        throw ParseError(path + ": not a certify artifact (unexpected header)", lineno);
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() != 8) throw ParseError(path + ": expected 8 fields", lineno);
    CertifyRow row;
    row.id = std::strtoll(f[0].c_str(), nullptr, 10);
    row.decision = static_cast<int>(std::strtol(f[1].c_str(), nullptr, 10));
    row.pa = std::strtod(f[2].c_str(), nullptr);
    row.pb = std::strtod(f[3].c_str(), nullptr);
    for (int k = 0; k < 3; ++k) row.r[k] = std::strtod(f[4 + k].c_str(), nullptr);
    row.abstained = static_cast<int>(std::strtol(f[7].c_str(), nullptr, 10));
    art.rows.push_back(row);
  }
  if (!header_seen) throw ParseError(path + ": empty certify artifact", lineno);
  return art;
}

inline double meta_double(const CertifyArtifact& art, const std::string& path,
                          const std::string& key) {
  auto it = art.meta.find(key);
  if (it == art.meta.end()) {
    throw std::invalid_argument(path + ": artifact metadata lacks '" + key + "'");
  }
  return std::strtod(it->second.c_str(), nullptr);
}

inline std::vector<std::pair<CertifyOutcome, int>> artifact_outcomes(const CertifyArtifact& art,
                                                                     const std::string& path,
                                                                     const DatasetFile& labels) {
  std::vector<std::pair<CertifyOutcome, int>> out;
  for (const CertifyRow& row : art.rows) {
    if (row.id < 0 || row.id >= static_cast<long long>(labels.size())) {
      throw std::invalid_argument(path + ": input_id " + std::to_string(row.id) +
                                  " outside the label dataset");
    }
    CertifyOutcome oc;
    oc.decision = row.abstained ? kAbstain : row.decision;
    const Norm order[3] = {Norm::kL1, Norm::kL2, Norm::kLinf};
    for (int k = 0; k < 3; ++k) {
      if (std::isnan(row.r[k])) continue;
      RadiusResult r;
      r.radius = row.r[k];
      oc.radii[order[k]] = r;
    }
    out.emplace_back(std::move(oc), labels.labels[static_cast<std::size_t>(row.id)]);
  }
  return out;
}

}  // namespace clidetail

// ---- subcommand runners --------------------------------------------------

namespace clidetail {

inline void run_gen_data(const GenDataOpts& o, std::ostream& out) {
  DatasetFile ds = make_blobs(o.n, o.dim, o.classes, o.radius, o.sigma, o.shift, o.seed,
                              !o.unlabeled);
  MetaBlock meta;
  meta.add("command", "gen-data");
  meta.add("seed", o.seed);
  meta.add("n", o.n);
  meta.add("dim", o.dim);
  meta.add("classes", o.classes);
  meta.add("radius", o.radius);
  meta.add("sigma", o.sigma);
  meta.add("shift", o.shift);
  meta.add("labeled", !o.unlabeled);
  atomic_write_text(o.out_path, meta.echo() + dataset_to_csv(ds));
  out << "gen-data: wrote " << ds.size() << " rows (dim=" << o.dim << ", classes=" << o.classes
      << ") -> " << o.out_path << "\n";
}

inline void run_train_target(const TrainTargetOpts& o, std::ostream& out) {
  DatasetFile ds = load_ds(o.dataset, o.format, o.idx_labels);
  if (!ds.labeled) throw std::invalid_argument("train-target: dataset has no labels");
  Batch data;
  data.inputs = ds.features;
  data.labels = ds.labels;

  std::vector<int> arch = full_arch(ds.dim(), o.hidden, ds.num_classes());
  TrainConfig tc;
  tc.learning_rate = o.learning_rate;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.optimizer = parse_optimizer(o.optimizer);
  tc.seed = o.seed;
  DenseNetwork net = DenseNetwork::init(arch, parse_activation(o.activation), o.seed);

  TrainResult tr;
  bool augmented = !o.noise_family.empty();
  if (augmented) {
    NoiseSpec spec = make_noise_spec(o.noise_family, o.noise_beta, o.noise_sigma, ds.dim());
    tr = noise_train(net, data, spec, tc);
  } else {
    tr = train(net, data, tc);
  }

  MetaBlock meta;
  meta.add("command", "train-target");
  meta.add("seed", o.seed);
  meta.add("dataset", o.dataset);
  meta.add("layers", join_ints(arch));
  meta.add("activation", o.activation);
  meta.add("optimizer", o.optimizer);
  meta.add("learning_rate", o.learning_rate);
  meta.add("epochs", o.epochs);
  meta.add("batch_size", o.batch_size);
  meta.add("noise_family", augmented ? o.noise_family : std::string("none"));
  if (augmented) {
    meta.add("noise_beta", o.noise_beta);
    meta.add("noise_sigma", o.noise_sigma);
  }
  atomic_write_text(o.out_path, meta.echo() + checkpoint_to_string(tr.net));

  if (!o.loss_out.empty()) {
    std::string csv = meta.echo() + "epoch,loss\n";
    for (std::size_t e = 0; e < tr.loss_history.size(); ++e) {
      csv += std::to_string(e) + "," + format_double(tr.loss_history[e]) + "\n";
    }
    atomic_write_text(o.loss_out, csv);
  }

  double final_loss = tr.loss_history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                              : tr.loss_history.back();
  out << "train-target: epochs=" << o.epochs << " final_loss=" << format_double(final_loss)
      << " train_accuracy=" << format_double(accuracy(tr.net, ds.features, ds.labels)) << " -> "
      << o.out_path << "\n";
}

inline void run_distill(const DistillOpts& o, std::ostream& out) {
  DenseNetwork teacher = load_checkpoint(o.teacher);
  DatasetFile transfer = load_ds(o.transfer, o.format, o.idx_labels);
  if (transfer.dim() != teacher.input_dim()) {
    throw std::invalid_argument("distill: transfer dimension does not match the teacher");
  }

  BlackBoxHandle handle(as_classifier(teacher), o.budget,
                        o.label_only ? QueryMode::kLabelOnly : QueryMode::kLogits);
  std::vector<int> layers = full_arch(transfer.dim(), o.hidden, teacher.output_dim());
  TrainConfig tc;
  tc.learning_rate = o.learning_rate;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.seed = o.seed;
  Rng rng = make_rng(o.seed);
  DistillResult res = distill(handle, transfer.features, layers, o.budget, tc, rng);
  if (transfer.labeled) {
    fill_accuracy(res.report, as_classifier(res.student), as_classifier(teacher),
                  transfer.features, transfer.labels);
  }

  MetaBlock meta;
  meta.add("command", "distill");
  meta.add("seed", o.seed);
  meta.add("teacher", o.teacher);
  meta.add("transfer", o.transfer);
  meta.add("student_layers", join_ints(layers));
  meta.add("budget", o.budget);
  meta.add("label_only", o.label_only);
  meta.add("learning_rate", o.learning_rate);
  meta.add("epochs", o.epochs);
  meta.add("batch_size", o.batch_size);
  atomic_write_text(o.out_path, meta.echo() + checkpoint_to_string(res.student));

  std::string report_path = o.report_out.empty() ? o.out_path + ".report" : o.report_out;
  std::string rep = meta.echo();
  rep += "agreement=" + format_double(res.report.agreement) + "\n";
  rep += "student_accuracy=" + format_double(res.report.student_accuracy) + "\n";
  rep += "teacher_accuracy=" + format_double(res.report.teacher_accuracy) + "\n";
  rep += "accuracy_ratio=" + format_double(res.report.accuracy_ratio) + "\n";
  rep += "queries_spent=" + std::to_string(res.report.queries_spent) + "\n";
  rep += std::string("truncated=") + (res.report.truncated ? "1" : "0") + "\n";
  atomic_write_text(report_path, rep);

  std::string loss_path = o.loss_out.empty() ? o.out_path + ".loss.csv" : o.loss_out;
  std::string csv = meta.echo() + "epoch,loss\n";
  for (std::size_t e = 0; e < res.report.loss_history.size(); ++e) {
    csv += std::to_string(e) + "," + format_double(res.report.loss_history[e]) + "\n";
  }
  atomic_write_text(loss_path, csv);

  out << "distill: agreement=" << format_double(res.report.agreement)
      << " queries_spent=" << res.report.queries_spent
      << " truncated=" << (res.report.truncated ? 1 : 0) << " -> " << o.out_path << "\n";
}

inline SmoothingConfig smoothing_from_opts(const SmoothingOpts& o, int dim) {
  SmoothingConfig cfg;
  cfg.spec = make_noise_spec(o.family, o.beta, o.sigma, dim);
  cfg.n0 = o.n0;
  cfg.n = o.n;
  cfg.alpha = o.alpha;
  cfg.zeta = o.zeta;
  cfg.iota = o.iota;
  cfg.norms = parse_norms(o.norms);
  cfg.solver.mc_n = o.mc_n;
  cfg.solver.bisect_iters = o.bisect_iters;
  cfg.solver.k_threshold = o.k_threshold;
  cfg.solver.pso_particles = o.particles;
  cfg.solver.pso_iters = o.pso_iters;
  cfg.single_round = o.single_round;
  cfg.workers = o.workers;
  return cfg;
}

inline void add_smoothing_meta(MetaBlock& meta, const SmoothingOpts& o,
                               const SmoothingConfig& cfg) {
  add_noise_meta(meta, cfg.spec);
  meta.add("n0", cfg.n0);
  meta.add("n", cfg.n);
  meta.add("alpha", cfg.alpha);
  meta.add("zeta", cfg.zeta);
  meta.add("iota", cfg.iota);
  meta.add("norms", join_strings(o.norms));
  meta.add("mc_n", cfg.solver.mc_n);
  meta.add("bisect_iters", cfg.solver.bisect_iters);
  meta.add("k_threshold", cfg.solver.k_threshold);
  meta.add("particles", cfg.solver.pso_particles);
  meta.add("pso_iters", cfg.solver.pso_iters);
  meta.add("single_round", cfg.single_round);
  meta.add("workers", cfg.workers);
}

inline void run_certify(const CertifyOpts& o, std::ostream& out) {
  DenseNetwork net = load_checkpoint(o.model);
  DatasetFile ds = load_ds(o.dataset, o.format, o.idx_labels);
  if (ds.dim() != net.input_dim()) {
    throw std::invalid_argument("certify: dataset dimension does not match the model");
  }
  SmoothingConfig cfg = smoothing_from_opts(o.smoothing, ds.dim());
  Classifier clf = as_classifier(net);
  Rng rng = make_rng(o.seed);

  std::size_t count = ds.size();
  if (o.limit > 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(o.limit));

  MetaBlock meta;
  meta.add("command", "certify");
  meta.add("seed", o.seed);
  meta.add("model", o.model);
  meta.add("dataset", o.dataset);
  meta.add("limit", o.limit);
  add_smoothing_meta(meta, o.smoothing, cfg);

  std::string csv = meta.echo() + std::string(kCertifyHeader) + "\n";
  long long decided = 0;
  for (std::size_t i = 0; i < count; ++i) {
    CertifyOutcome oc = certify(clf, ds.features[i], cfg, rng);
    if (oc.decision != kAbstain) ++decided;
    csv += std::to_string(i) + "," + std::to_string(oc.decision) + "," +
           format_double(oc.pa_lower) + "," + format_double(oc.pb_upper) + "," +
           format_double(radius_or_nan(oc, Norm::kL1)) + "," +
           format_double(radius_or_nan(oc, Norm::kL2)) + "," +
           format_double(radius_or_nan(oc, Norm::kLinf)) + "," +
           (oc.decision == kAbstain ? "1" : "0") + "\n";
  }
  atomic_write_text(o.out_path, csv);
  out << "certify: " << count << " inputs, " << decided << " decided, "
      << (static_cast<long long>(count) - decided) << " abstained -> " << o.out_path << "\n";
}

inline void run_purify(const CertifyOpts& o, std::ostream& out) {
  DenseNetwork net = load_checkpoint(o.model);
  DatasetFile ds = load_ds(o.dataset, o.format, o.idx_labels);
  if (ds.dim() != net.input_dim()) {
    throw std::invalid_argument("purify: dataset dimension does not match the model");
  }
  SmoothingConfig cfg = smoothing_from_opts(o.smoothing, ds.dim());
  Rng rng = make_rng(o.seed);

  std::vector<std::vector<double>> inputs = ds.features;
  if (o.limit > 0 && static_cast<std::size_t>(o.limit) < inputs.size()) {
    inputs.resize(static_cast<std::size_t>(o.limit));
  }
  PurifyResult res = purify(as_classifier(net), inputs, cfg, rng);

  std::vector<char> passed(inputs.size(), 0);
  for (std::size_t id : res.certified_ids) passed[id] = 1;

  MetaBlock meta;
  meta.add("command", "purify");
  meta.add("seed", o.seed);
  meta.add("model", o.model);
  meta.add("dataset", o.dataset);
  meta.add("limit", o.limit);
  add_smoothing_meta(meta, o.smoothing, cfg);

  std::string csv = meta.echo() + "input_id,passed\n";
  for (std::size_t i = 0; i < passed.size(); ++i) {
    csv += std::to_string(i) + "," + (passed[i] ? "1" : "0") + "\n";
  }
  csv += "# summary passed=" + std::to_string(res.certified_ids.size()) + " total=" +
         std::to_string(inputs.size()) + " pass_rate=" + format_double(res.pass_rate) + "\n";
  atomic_write_text(o.out_path, csv);
  out << "purify: pass_rate=" << format_double(res.pass_rate) << " ("
      << res.certified_ids.size() << "/" << inputs.size() << ") -> " << o.out_path << "\n";
}

inline void run_radius(const RadiusOpts& o, bool pb_given, std::ostream& out) {
  NoiseSpec spec = make_noise_spec(o.family, o.beta, o.sigma, o.dim);
  Norm p = parse_norm(o.norm);
  RadiusSolverConfig solver;
  solver.mc_n = o.mc_n;
  solver.bisect_iters = o.bisect_iters;
  solver.k_threshold = o.k_threshold;
  solver.pso_particles = o.particles;
  solver.pso_iters = o.pso_iters;

  std::vector<std::pair<double, double>> probes;
  if (o.curve) {
    if (o.pa_steps < 2) throw std::invalid_argument("radius: curve mode needs --pa-steps >= 2");
    for (int i = 0; i < o.pa_steps; ++i) {
      double pa = o.pa_start + i * (o.pa_stop - o.pa_start) / (o.pa_steps - 1);
      probes.emplace_back(pa, pb_given ? o.pb : 1.0 - pa);
    }
  } else {
    probes.emplace_back(o.pa, pb_given ? o.pb : 1.0 - o.pa);
  }

  MetaBlock meta;
  meta.add("command", "radius");
  meta.add("seed", o.seed);
  add_noise_meta(meta, spec);
  meta.add("norm", o.norm);
  meta.add("mc_n", o.mc_n);
  meta.add("bisect_iters", o.bisect_iters);
  meta.add("k_threshold", o.k_threshold);
  meta.add("particles", o.particles);
  meta.add("pso_iters", o.pso_iters);
  meta.add("curve", o.curve);

  Rng rng = make_rng(o.seed);
  std::string csv = meta.echo() + "pA,pB,norm,R,lambda,residual_K\n";
  for (const auto& [pa, pb] : probes) {
    RadiusResult r = certified_radius(pa, pb, spec, p, solver, rng);
    csv += format_double(pa) + "," + format_double(pb) + "," + norm_name(p) + "," +
           format_double(r.radius) + "," + format_double(r.lambda) + "," +
           format_double(r.residual_k) + "\n";
  }
  atomic_write_text(o.out_path, csv);
  out << "radius: " << probes.size() << (probes.size() == 1 ? " row" : " rows") << " -> "
      << o.out_path << "\n";
}

inline void run_noise_search(const NoiseSearchOpts& o, std::ostream& out, std::ostream& err) {
  DatasetFile ds = load_ds(o.dataset, o.format, o.idx_labels);

  GridSearchConfig cfg;
  cfg.beta_grid = o.betas;
  cfg.sigma_set = o.sigmas;
  cfg.hidden_layers = o.hidden;
  cfg.train.learning_rate = o.learning_rate;
  cfg.train.epochs = o.epochs;
  cfg.train.batch_size = o.batch_size;
  cfg.norms = parse_norms(o.norms);
  cfg.eval_count = o.eval_count;
  cfg.train_fraction = o.train_fraction;
  cfg.curve_steps = o.curve_steps;
  cfg.smoothing = smoothing_from_opts(o.smoothing, std::max(1, ds.dim()));
  cfg.smoothing.norms = cfg.norms;

  Rng rng = make_rng(o.seed);
  GridSearchResult res = noise_grid_search(ds, cfg, rng);
  for (const auto& f : res.failures) {
    err << "warning: cell beta=" << format_double(f.beta) << " sigma=" << format_double(f.sigma)
        << " failed: " << f.error << "\n";
  }

  MetaBlock meta;
  meta.add("command", "noise-search");
  meta.add("seed", o.seed);
  meta.add("dataset", o.dataset);
  meta.add("betas", join_doubles(o.betas));
  meta.add("sigmas", join_doubles(o.sigmas));
  meta.add("hidden", join_ints(o.hidden));
  meta.add("learning_rate", o.learning_rate);
  meta.add("epochs", o.epochs);
  meta.add("batch_size", o.batch_size);
  meta.add("eval_count", o.eval_count);
  meta.add("train_fraction", o.train_fraction);
  meta.add("curve_steps", o.curve_steps);
  meta.add("norms", join_strings(o.norms));
  meta.add("n0", o.smoothing.n0);
  meta.add("n", o.smoothing.n);
  meta.add("alpha", o.smoothing.alpha);
  meta.add("zeta", o.smoothing.zeta);
  meta.add("iota", o.smoothing.iota);
  meta.add("mc_n", o.smoothing.mc_n);
  meta.add("particles", o.smoothing.particles);
  meta.add("pso_iters", o.smoothing.pso_iters);
  meta.add("workers", o.smoothing.workers);
  for (const auto& [p, beta] : res.best_beta) {
    meta.add(std::string("best_") + norm_name(p), beta);
  }

  std::string csv = meta.echo() + "norm,beta,score\n";
  for (Norm p : cfg.norms) {
    const std::vector<double>& col = res.scores.at(p);
    for (std::size_t bi = 0; bi < o.betas.size(); ++bi) {
      csv += std::string(norm_name(p)) + "," + format_double(o.betas[bi]) + "," +
             format_double(col[bi]) + "\n";
    }
  }
  atomic_write_text(o.out_scores, csv);

  if (!o.out_curves.empty()) {
    Norm cp = parse_norm(o.curve_norm);
    auto it = res.best_curves.find(cp);
    if (it == res.best_curves.end()) {
      throw std::runtime_error("noise-search: no surviving cell for curve norm " + o.curve_norm);
    }
    std::string cc = meta.echo() + "sigma,R,acc\n";
    for (const AccuracyCurve& c : it->second) {
      for (const auto& [r, a] : c.points) {
        cc += format_double(c.sigma) + "," + format_double(r) + "," + format_double(a) + "\n";
      }
    }
    atomic_write_text(o.out_curves, cc);
  }

  out << "noise-search:";
  for (const auto& [p, beta] : res.best_beta) {
    out << " best_" << norm_name(p) << "=" << format_double(beta);
  }
  out << " -> " << o.out_scores << "\n";
}

inline void run_score(const ScoreOpts& o, std::ostream& out) {
  DatasetFile labels = load_ds(o.dataset, o.format, o.idx_labels);
  if (!labels.labeled) throw std::invalid_argument("score: label dataset has no labels");
  std::vector<Norm> norms = parse_norms(o.norms);
  Norm curve_norm = parse_norm(o.curve_norm);

  struct FileData {
    double beta = 0.0;
    double sigma = 0.0;
    std::vector<std::pair<CertifyOutcome, int>> outcomes;
  };
  std::vector<FileData> files;
  for (const std::string& path : o.inputs) {
    CertifyArtifact art = parse_certify_artifact(path);
    FileData fd;
    fd.beta = meta_double(art, path, "beta");
    fd.sigma = meta_double(art, path, "sigma");
    fd.outcomes = artifact_outcomes(art, path, labels);
    if (fd.outcomes.empty()) throw std::invalid_argument(path + ": no certify rows");
    files.push_back(std::move(fd));
  }

  // Group files by beta; each file contributes one sigma curve.
  std::map<double, std::vector<std::size_t>> by_beta;
  for (std::size_t i = 0; i < files.size(); ++i) by_beta[files[i].beta].push_back(i);

  MetaBlock meta;
  meta.add("command", "score");
  meta.add("inputs", join_strings(o.inputs));
  meta.add("dataset", o.dataset);
  meta.add("grid_steps", o.grid_steps);
  meta.add("norms", join_strings(o.norms));
  meta.add("curve_norm", o.curve_norm);

  std::string csv = "norm,beta,score\n";
  std::map<Norm, double> best_beta;
  std::map<Norm, std::vector<AccuracyCurve>> best_curves;
  for (Norm p : norms) {
    double r_max = 0.0;
    for (const FileData& fd : files) {
      for (const auto& [oc, label] : fd.outcomes) {
        double r = radius_or_nan(oc, p);
        if (std::isfinite(r)) r_max = std::max(r_max, r);
      }
    }
    if (r_max <= 0.0) r_max = 1.0;
    double step = r_max / o.grid_steps;
    std::vector<double> grid;
    for (int i = 0; i <= o.grid_steps + 1; ++i) grid.push_back(i * step);

    double best_score = -1.0;
    for (const auto& [beta, idxs] : by_beta) {
      std::vector<AccuracyCurve> curves;
      for (std::size_t i : idxs) {
        curves.push_back(certified_accuracy_curve(files[i].outcomes, grid, p, files[i].sigma));
      }
      double score = robust_score(curves, grid.back());
      csv += std::string(norm_name(p)) + "," + format_double(beta) + "," + format_double(score) +
             "\n";
      if (score > best_score) {
        best_score = score;
        best_beta[p] = beta;
        best_curves[p] = curves;
      }
    }
  }
  for (const auto& [p, beta] : best_beta) meta.add(std::string("best_") + norm_name(p), beta);
  atomic_write_text(o.out_scores, meta.echo() + csv);

  if (!o.out_curves.empty()) {
    std::string cc = meta.echo() + "sigma,R,acc\n";
    for (const AccuracyCurve& c : best_curves.at(curve_norm)) {
      for (const auto& [r, a] : c.points) {
        cc += format_double(c.sigma) + "," + format_double(r) + "," + format_double(a) + "\n";
      }
    }
    atomic_write_text(o.out_curves, cc);
  }

  out << "score: " << files.size() << " artifacts, " << by_beta.size() << " betas -> "
      << o.out_scores << "\n";
}

inline void run_mia(const MiaOpts& o, std::ostream& out) {
  DatasetFile members = load_ds(o.members, o.format, o.idx_labels);
  DatasetFile nonmembers = load_ds(o.nonmembers, o.format, "");
  if (members.dim() != nonmembers.dim()) {
    throw std::invalid_argument("mia: member and nonmember dimensions differ");
  }

  MetaBlock meta;
  meta.add("command", "mia");
  meta.add("seed", o.seed);
  meta.add("members", o.members);
  meta.add("nonmembers", o.nonmembers);
  meta.add("models", join_strings(o.models));
  meta.add("scorer", o.scorer);
  SmoothingConfig scfg;
  if (o.scorer == "smoothed") {
    scfg = smoothing_from_opts(o.smoothing, members.dim());
    add_smoothing_meta(meta, o.smoothing, scfg);
  } else if (o.scorer != "confidence") {
    throw std::invalid_argument("mia: unknown scorer: " + o.scorer);
  }

  Rng rng = make_rng(o.seed);
  std::string csv = meta.echo() + "model,asr,threshold\n";
  for (const std::string& path : o.models) {
    DenseNetwork net = load_checkpoint(path);
    if (net.input_dim() != members.dim()) {
      throw std::invalid_argument("mia: model " + path + " does not match the data dimension");
    }
    Classifier clf = as_classifier(net);
    Scorer scorer = o.scorer == "smoothed" ? smoothed_scorer(clf, scfg, draw_seed(rng))
                                           : confidence_scorer(clf);
    MiaResult res = membership_inference_asr(scorer, members.features, nonmembers.features, rng);
    csv += file_stem(path) + "," + format_double(res.asr) + "," + format_double(res.threshold) +
           "\n";
  }
  atomic_write_text(o.out_path, csv);
  out << "mia: " << o.models.size() << (o.models.size() == 1 ? " model" : " models") << " -> "
      << o.out_path << "\n";
}

inline void run_attack(const AttackOpts& o, std::ostream& out) {
  DenseNetwork net = load_checkpoint(o.model);
  DatasetFile ds = load_ds(o.dataset, o.format, o.idx_labels);
  if (!ds.labeled) throw std::invalid_argument("attack: dataset has no labels");
  if (ds.dim() != net.input_dim()) {
    throw std::invalid_argument("attack: dataset dimension does not match the model");
  }
  Norm p = parse_norm(o.norm);
  // Default step: 2.5*eps/steps. A zero budget still needs a positive step
  // for the solver's sake; any value works since the ball is a single point.
  double step_size = o.step_size > 0.0
                         ? o.step_size
                         : (o.eps > 0.0 ? 2.5 * o.eps / std::max(1, o.steps) : 1.0);

  std::size_t count = ds.size();
  if (o.limit > 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(o.limit));

  MetaBlock meta;
  meta.add("command", "attack");
  meta.add("seed", o.seed);
  meta.add("model", o.model);
  meta.add("dataset", o.dataset);
  meta.add("norm", o.norm);
  meta.add("eps", o.eps);
  meta.add("steps", o.steps);
  meta.add("step_size", step_size);
  meta.add("random_start", o.random_start);
  meta.add("limit", o.limit);

  Rng rng = make_rng(o.seed);
  std::string csv = meta.echo() + "id,success,perturbation_norm\n";
  long long successes = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> adv = pgd_attack(net, ds.features[i], ds.labels[i], p, o.eps, o.steps,
                                         step_size, rng, o.random_start);
    bool success = argmax_lowest(net.forward(adv)) != ds.labels[i];
    if (success) ++successes;
    std::vector<double> delta(adv.size());
    for (std::size_t j = 0; j < adv.size(); ++j) delta[j] = adv[j] - ds.features[i][j];
    csv += std::to_string(i) + "," + (success ? "1" : "0") + "," +
           format_double(norm_value(delta, p)) + "\n";
  }
  atomic_write_text(o.out_path, csv);
  double rate = count == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(count);
  out << "attack: success_rate=" << format_double(rate) << " (" << successes << "/" << count
      << ") -> " << o.out_path << "\n";
}

}  // namespace clidetail

// ---- wiring ---------------------------------------------------------------

namespace clidetail {

inline void add_dataset_flags(CLI::App* sub, std::string& format, std::string& idx_labels) {
  sub->add_option("--format", format, "dataset format: csv or idx")
      ->check(CLI::IsMember({"csv", "idx"}));
  sub->add_option("--idx-labels", idx_labels, "IDX label file (idx format only)");
}

inline void add_smoothing_flags(CLI::App* sub, SmoothingOpts& o, bool with_norms) {
  sub->add_option("--family", o.family, "noise family");
  sub->add_option("--beta", o.beta, "exponential-power shape (pareto tail index)");
  sub->add_option("--sigma", o.sigma, "noise standard deviation (scale for cauchy/pareto)");
  sub->add_option("--n0", o.n0, "selection-round draws");
  sub->add_option("--n", o.n, "estimation-round draws");
  sub->add_option("--alpha", o.alpha, "certification failure probability");
  sub->add_option("--zeta", o.zeta, "competing-class veto ratio");
  sub->add_option("--iota", o.iota, "minimum top-class vote frequency");
  if (with_norms) sub->add_option("--norms", o.norms, "norms to certify")->delimiter(',');
  sub->add_option("--mc-n", o.mc_n, "Monte Carlo draws per solver estimate");
  sub->add_option("--bisect-iters", o.bisect_iters, "bisection iteration budget");
  sub->add_option("--k-threshold", o.k_threshold, "boundary margin tolerance");
  sub->add_option("--particles", o.particles, "swarm size for the direction search");
  sub->add_option("--pso-iters", o.pso_iters, "swarm iterations");
  sub->add_flag("--single-round", o.single_round, "select the class from the estimation draws");
  sub->add_option("--workers", o.workers, "deterministic sampling substreams");
}

}  // namespace clidetail

inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  using namespace clidetail;
  CLI::App app{"randomized-smoothing certification toolkit", "smoothcert"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "key=value config file with [subcommand] sections");

  GenDataOpts gen;
  CLI::App* gen_sub = app.add_subcommand("gen-data", "generate a synthetic blob dataset");
  gen_sub->add_option("--n", gen.n, "number of rows");
  gen_sub->add_option("--dim", gen.dim, "feature dimension");
  gen_sub->add_option("--classes", gen.classes, "class count");
  gen_sub->add_option("--radius", gen.radius, "distance of class centers from the origin");
  gen_sub->add_option("--sigma", gen.sigma, "within-class standard deviation");
  gen_sub->add_option("--shift", gen.shift, "constant added to every feature");
  gen_sub->add_option("--seed", gen.seed, "random seed");
  gen_sub->add_flag("--unlabeled", gen.unlabeled, "omit the label column");
  gen_sub->add_option("--out", gen.out_path, "output CSV path")->required();

  TrainTargetOpts tt;
  CLI::App* tt_sub = app.add_subcommand("train-target", "train a dense network on a dataset");
  tt_sub->add_option("--dataset", tt.dataset, "labeled dataset path")->required();
  add_dataset_flags(tt_sub, tt.format, tt.idx_labels);
  tt_sub->add_option("--hidden", tt.hidden, "hidden layer sizes")->delimiter(',');
  tt_sub->add_option("--activation", tt.activation, "hidden activation: relu or tanh");
  tt_sub->add_option("--optimizer", tt.optimizer, "adam or sgd");
  tt_sub->add_option("--lr", tt.learning_rate, "learning rate");
  tt_sub->add_option("--epochs", tt.epochs, "training epochs");
  tt_sub->add_option("--batch-size", tt.batch_size, "minibatch size");
  tt_sub->add_option("--seed", tt.seed, "random seed");
  tt_sub->add_option("--noise-family", tt.noise_family, "augment training with this noise family");
  tt_sub->add_option("--noise-beta", tt.noise_beta, "augmentation shape");
  tt_sub->add_option("--noise-sigma", tt.noise_sigma, "augmentation scale");
  tt_sub->add_option("--loss-out", tt.loss_out, "optional loss-history CSV path");
  tt_sub->add_option("--out", tt.out_path, "checkpoint output path")->required();

  DistillOpts di;
  CLI::App* di_sub = app.add_subcommand("distill", "train a surrogate from black-box queries");
  di_sub->add_option("--teacher", di.teacher, "teacher checkpoint")->required();
  di_sub->add_option("--transfer", di.transfer, "transfer dataset path")->required();
  add_dataset_flags(di_sub, di.format, di.idx_labels);
  di_sub->add_option("--hidden", di.hidden, "student hidden layer sizes")->delimiter(',');
  di_sub->add_option("--budget", di.budget, "query budget");
  di_sub->add_flag("--label-only", di.label_only, "teacher returns labels instead of logits");
  di_sub->add_option("--lr", di.learning_rate, "learning rate");
  di_sub->add_option("--epochs", di.epochs, "training epochs");
  di_sub->add_option("--batch-size", di.batch_size, "minibatch size");
  di_sub->add_option("--seed", di.seed, "random seed");
  di_sub->add_option("--report", di.report_out, "report path (default: <out>.report)");
  di_sub->add_option("--loss-out", di.loss_out, "loss-history CSV (default: <out>.loss.csv)");
  di_sub->add_option("--out", di.out_path, "surrogate checkpoint output path")->required();

  CertifyOpts ce;
  CLI::App* ce_sub = app.add_subcommand("certify", "certify inputs under smoothing");
  ce_sub->add_option("--model", ce.model, "model checkpoint")->required();
  ce_sub->add_option("--dataset", ce.dataset, "dataset path")->required();
  add_dataset_flags(ce_sub, ce.format, ce.idx_labels);
  add_smoothing_flags(ce_sub, ce.smoothing, true);
  ce_sub->add_option("--limit", ce.limit, "certify only the first N inputs");
  ce_sub->add_option("--seed", ce.seed, "random seed");
  ce_sub->add_option("--out", ce.out_path, "output CSV path")->required();

  CertifyOpts pu;
  CLI::App* pu_sub = app.add_subcommand("purify", "filter inputs by certification");
  pu_sub->add_option("--model", pu.model, "model checkpoint")->required();
  pu_sub->add_option("--dataset", pu.dataset, "dataset path")->required();
  add_dataset_flags(pu_sub, pu.format, pu.idx_labels);
  add_smoothing_flags(pu_sub, pu.smoothing, true);
  pu_sub->add_option("--limit", pu.limit, "filter only the first N inputs");
  pu_sub->add_option("--seed", pu.seed, "random seed");
  pu_sub->add_option("--out", pu.out_path, "output CSV path")->required();

  RadiusOpts ra;
  CLI::App* ra_sub = app.add_subcommand("radius", "solve certified radii for given bounds");
  ra_sub->add_option("--pa", ra.pa, "lower bound on the top-class probability");
  ra_sub->add_option("--pb", ra.pb, "upper bound on the runner-up probability (default 1-pA)");
  ra_sub->add_option("--family", ra.family, "noise family");
  ra_sub->add_option("--beta", ra.beta, "exponential-power shape (pareto tail index)");
  ra_sub->add_option("--sigma", ra.sigma, "noise standard deviation (scale for cauchy/pareto)");
  ra_sub->add_option("--norm", ra.norm, "perturbation norm: l1, l2, or linf");
  ra_sub->add_option("--dim", ra.dim, "input dimension");
  ra_sub->add_option("--mc-n", ra.mc_n, "Monte Carlo draws per solver estimate");
  ra_sub->add_option("--bisect-iters", ra.bisect_iters, "bisection iteration budget");
  ra_sub->add_option("--k-threshold", ra.k_threshold, "boundary margin tolerance");
  ra_sub->add_option("--particles", ra.particles, "swarm size for the direction search");
  ra_sub->add_option("--pso-iters", ra.pso_iters, "swarm iterations");
  ra_sub->add_flag("--curve", ra.curve, "sweep pA instead of a single probe");
  ra_sub->add_option("--pa-start", ra.pa_start, "curve sweep start");
  ra_sub->add_option("--pa-stop", ra.pa_stop, "curve sweep stop");
  ra_sub->add_option("--pa-steps", ra.pa_steps, "curve sweep points");
  ra_sub->add_option("--seed", ra.seed, "random seed");
  ra_sub->add_option("--out", ra.out_path, "output CSV path")->required();

  NoiseSearchOpts ns;
  CLI::App* ns_sub = app.add_subcommand("noise-search", "grid-search the noise shape");
  ns_sub->add_option("--dataset", ns.dataset, "labeled dataset path")->required();
  add_dataset_flags(ns_sub, ns.format, ns.idx_labels);
  ns_sub->add_option("--betas", ns.betas, "shape grid")->delimiter(',')->required();
  ns_sub->add_option("--sigmas", ns.sigmas, "scale set")->delimiter(',')->required();
  ns_sub->add_option("--hidden", ns.hidden, "hidden layer sizes")->delimiter(',');
  ns_sub->add_option("--lr", ns.learning_rate, "learning rate");
  ns_sub->add_option("--epochs", ns.epochs, "training epochs per cell");
  ns_sub->add_option("--batch-size", ns.batch_size, "minibatch size");
  ns_sub->add_option("--eval-count", ns.eval_count, "evaluation subset size");
  ns_sub->add_option("--train-fraction", ns.train_fraction, "train split fraction");
  ns_sub->add_option("--curve-steps", ns.curve_steps, "radius grid resolution");
  add_smoothing_flags(ns_sub, ns.smoothing, false);
  ns_sub->add_option("--norms", ns.norms, "norms to score")->delimiter(',');
  ns_sub->add_option("--curve-norm", ns.curve_norm, "norm for the curves artifact");
  ns_sub->add_option("--out-curves", ns.out_curves, "optional best-beta curve CSV");
  ns_sub->add_option("--seed", ns.seed, "random seed");
  ns_sub->add_option("--out", ns.out_scores, "score table CSV path")->required();

  ScoreOpts sc;
  CLI::App* sc_sub = app.add_subcommand("score", "aggregate certify artifacts into scores");
  sc_sub->add_option("inputs", sc.inputs, "certify CSV artifacts")->required()->expected(-1);
  sc_sub->add_option("--dataset", sc.dataset, "labeled dataset the artifacts index into")
      ->required();
  add_dataset_flags(sc_sub, sc.format, sc.idx_labels);
  sc_sub->add_option("--norms", sc.norms, "norms to score")->delimiter(',');
  sc_sub->add_option("--grid-steps", sc.grid_steps, "radius grid resolution");
  sc_sub->add_option("--curve-norm", sc.curve_norm, "norm for the curves artifact");
  sc_sub->add_option("--out-curves", sc.out_curves, "optional best-beta curve CSV");
  sc_sub->add_option("--out", sc.out_scores, "score table CSV path")->required();

  MiaOpts mi;
  CLI::App* mi_sub = app.add_subcommand("mia", "membership inference evaluation");
  mi_sub->add_option("models", mi.models, "model checkpoints")->required()->expected(-1);
  mi_sub->add_option("--members", mi.members, "training-member dataset")->required();
  mi_sub->add_option("--nonmembers", mi.nonmembers, "nonmember dataset")->required();
  add_dataset_flags(mi_sub, mi.format, mi.idx_labels);
  mi_sub->add_option("--scorer", mi.scorer, "confidence or smoothed")
      ->check(CLI::IsMember({"confidence", "smoothed"}));
  add_smoothing_flags(mi_sub, mi.smoothing, false);
  mi_sub->add_option("--seed", mi.seed, "random seed");
  mi_sub->add_option("--out", mi.out_path, "output CSV path")->required();

  AttackOpts at;
  CLI::App* at_sub = app.add_subcommand("attack", "projected gradient attack sweep");
  at_sub->add_option("--model", at.model, "model checkpoint")->required();
  at_sub->add_option("--dataset", at.dataset, "labeled dataset path")->required();
  add_dataset_flags(at_sub, at.format, at.idx_labels);
  at_sub->add_option("--norm", at.norm, "l2 or linf");
  at_sub->add_option("--eps", at.eps, "perturbation budget")->required();
  at_sub->add_option("--steps", at.steps, "attack iterations");
  at_sub->add_option("--step-size", at.step_size, "per-step size (default 2.5*eps/steps)");
  at_sub->add_flag("--random-start", at.random_start, "start from a random point in the ball");
  at_sub->add_option("--limit", at.limit, "attack only the first N inputs");
  at_sub->add_option("--seed", at.seed, "random seed");
  at_sub->add_option("--out", at.out_path, "output CSV path")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen_sub->parsed()) {
      run_gen_data(gen, out);
    } else if (tt_sub->parsed()) {
      run_train_target(tt, out);
    } else if (di_sub->parsed()) {
      run_distill(di, out);
    } else if (ce_sub->parsed()) {
      run_certify(ce, out);
    } else if (pu_sub->parsed()) {
      run_purify(pu, out);
    } else if (ra_sub->parsed()) {
      run_radius(ra, ra_sub->count("--pb") > 0, out);
    } else if (ns_sub->parsed()) {
      run_noise_search(ns, out, err);
    } else if (sc_sub->parsed()) {
      run_score(sc, out);
    } else if (mi_sub->parsed()) {
      run_mia(mi, out);
    } else if (at_sub->parsed()) {
      run_attack(at, out);
    }
  } catch (const ParseError& e) {
    err << "error: data: " << e.what() << "\n";
    return 1;
  } catch (const BudgetError& e) {
    err << "error: budget: " << e.what() << "\n";
    return 1;
  } catch (const BracketError& e) {
    err << "error: solver: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace smoothcert
