// Experiment runner: JSON-configured subcommands over the attribution lab,
// emitting CSV tables, NFRT1 tensors, and PGM/PPM saliency renderings. Every
// derived seed comes from one master seed, so a (config, seed) pair fully
// pins the output bytes.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "nfr/csv.hpp"
#include "nfr/image_io.hpp"
#include "nfr/kis.hpp"
#include "nfr/lab.hpp"
#include "nfr/net.hpp"
#include "nfr/net_io.hpp"
#include "nfr/rng.hpp"
#include "nfr/rules.hpp"
#include "nfr/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nfr;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const json& j, const std::string& ctx,
                const std::set<std::string>& allowed) {
  if (!j.is_object()) fail("'" + ctx + "' must be an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      fail("unknown field '" + ctx + "." + item.key() + "'");
    }
  }
}

const json& require(const json& j, const std::string& ctx,
                    const std::string& key) {
  if (!j.contains(key)) fail("missing field '" + ctx + "." + key + "'");
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const std::string& ctx, const std::string& key) {
  try {
    return require(j, ctx, key).get<T>();
  } catch (const json::exception&) {
    fail("bad value for field '" + ctx + "." + key + "'");
  }
}

template <typename T>
T get_or(const json& j, const std::string& ctx, const std::string& key,
         T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail("bad value for field '" + ctx + "." + key + "'");
  }
}

DistSpec parse_dist(const json& j, const std::string& ctx,
                    std::uint64_t default_seed) {
  check_keys(j, ctx, {"kind", "scale", "seed"});
  DistSpec spec;
  spec.kind = dist_kind_from_name(get_as<std::string>(j, ctx, "kind"));
  spec.scale = get_or<double>(j, ctx, "scale", 1.0);
  spec.seed = get_or<std::uint64_t>(j, ctx, "seed", default_seed);
  spec.validate();
  return spec;
}

RuleSpec parse_rule(const json& j, const std::string& ctx) {
  if (j.is_string()) {
    return RuleSpec::of(rule_kind_from_name(j.get<std::string>()));
  }
  check_keys(j, ctx,
             {"kind", "percentile", "tau", "alpha", "beta", "epsilon", "lo",
              "hi"});
  RuleSpec rule;
  rule.kind = rule_kind_from_name(get_as<std::string>(j, ctx, "kind"));
  rule.rect_percentile = get_or<double>(j, ctx, "percentile", 90.0);
  if (j.contains("tau")) rule.rect_tau = get_as<double>(j, ctx, "tau");
  rule.alpha = get_or<double>(j, ctx, "alpha", 1.0);
  rule.beta = get_or<double>(j, ctx, "beta", 0.0);
  rule.epsilon = get_or<double>(j, ctx, "epsilon", 1e-9);
  return rule;  // dtd lo/hi are resolved once the input shape is known
}

void resolve_dtd_bounds(RuleSpec& rule, const json& j, const std::string& ctx,
                        const Shape& input_shape) {
  if (rule.kind != RuleKind::Dtd) return;
  if (!j.is_object()) fail("'" + ctx + "' must spell out dtd lo/hi bounds");
  const double lo = get_as<double>(j, ctx, "lo");
  const double hi = get_as<double>(j, ctx, "hi");
  rule.dtd_lo = Tensor::constant(input_shape, lo);
  rule.dtd_hi = Tensor::constant(input_shape, hi);
  rule.validate();
}

Network parse_model(const json& j, const std::string& ctx,
                    std::uint64_t master_seed) {
  if (!j.is_object() || j.size() != 1) {
    fail("'" + ctx +
         "' must hold exactly one of: path, mlp, orthogonal, trained_standin");
  }
  if (j.contains("path")) {
    return read_model_file(get_as<std::string>(j, ctx, "path"));
  }
  if (j.contains("mlp")) {
    const json& m = j.at("mlp");
    check_keys(m, ctx + ".mlp", {"dims", "dist"});
    const auto dims = get_as<std::vector<int>>(m, ctx + ".mlp", "dims");
    const DistSpec dist =
        parse_dist(require(m, ctx + ".mlp", "dist"), ctx + ".mlp.dist",
                   derive_seed(master_seed, 100, 0));
    return build_random_mlp(dims, dist);
  }
  if (j.contains("orthogonal")) {
    const json& m = j.at("orthogonal");
    check_keys(m, ctx + ".orthogonal", {"d", "n", "norm", "seed"});
    return build_orthogonal_net(
        get_as<int>(m, ctx + ".orthogonal", "d"),
        get_as<int>(m, ctx + ".orthogonal", "n"),
        get_or<double>(m, ctx + ".orthogonal", "norm", 1.0),
        get_or<std::uint64_t>(m, ctx + ".orthogonal", "seed",
                              derive_seed(master_seed, 101, 0)));
  }
  if (j.contains("trained_standin")) {
    const json& m = j.at("trained_standin");
    const std::string mctx = ctx + ".trained_standin";
    check_keys(m, mctx, {"dims", "train_samples", "epochs", "lr", "noise"});
    const auto dims = get_as<std::vector<int>>(m, mctx, "dims");
    if (dims.empty()) fail("'" + mctx + ".dims' must be nonempty");
    const int side = static_cast<int>(std::lround(std::sqrt(dims[0])));
    if (side * side != dims[0]) {
      fail("'" + mctx + ".dims[0]' must be a perfect square (blob images)");
    }
    const LabeledDataset data = synthetic_blob_dataset(
        get_or<int>(m, mctx, "train_samples", 150), side,
        get_or<double>(m, mctx, "noise", 0.5),
        derive_seed(master_seed, 102, 0));
    const Network net = build_random_mlp(
        dims, {DistKind::Gaussian, 1.0, derive_seed(master_seed, 103, 0)});
    return train_sgd(net, data, get_or<int>(m, mctx, "epochs", 10),
                     get_or<double>(m, mctx, "lr", 0.04),
                     derive_seed(master_seed, 104, 0));
  }
  fail("'" + ctx + "' must hold one of: path, mlp, orthogonal, trained_standin");
}

Tensor abs_gaussian_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Vec v(shape.count());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = std::abs(rng.next_normal());
  }
  return Tensor::from_flat(shape, std::move(v));
}

Tensor parse_input(const json& j, const std::string& ctx,
                   std::uint64_t master_seed) {
  if (!j.is_object() || j.size() != 1) {
    fail("'" + ctx + "' must hold exactly one of: path, abs_gaussian");
  }
  if (j.contains("path")) {
    return read_tensor_file(get_as<std::string>(j, ctx, "path"));
  }
  if (j.contains("abs_gaussian")) {
    const json& g = j.at("abs_gaussian");
    check_keys(g, ctx + ".abs_gaussian", {"shape", "seed"});
    const Shape shape(
        get_as<std::vector<int>>(g, ctx + ".abs_gaussian", "shape"));
    return abs_gaussian_tensor(
        shape, get_or<std::uint64_t>(g, ctx + ".abs_gaussian", "seed",
                                     derive_seed(master_seed, 110, 0)));
  }
  fail("'" + ctx + "' must hold one of: path, abs_gaussian");
}

std::vector<Tensor> parse_samples(const json& j, const std::string& ctx,
                                  const Shape& input_shape,
                                  std::uint64_t master_seed) {
  check_keys(j, ctx, {"count", "dataset"});
  if (j.contains("dataset")) {
    return load_dataset(get_as<std::string>(j, ctx, "dataset")).inputs;
  }
  const int count = get_as<int>(j, ctx, "count");
  if (count < 1) fail("'" + ctx + ".count' must be >= 1");
  std::vector<Tensor> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    samples.push_back(abs_gaussian_tensor(
        input_shape,
        derive_seed(master_seed, 111, static_cast<std::uint64_t>(i))));
  }
  return samples;
}

TargetClass parse_target(const json& cfg, const std::string& ctx) {
  if (!cfg.contains("k")) return TargetClass::argmax_logit();
  const json& j = cfg.at("k");
  if (j.is_string()) {
    if (j.get<std::string>() != "argmax") {
      fail("'" + ctx + ".k' must be \"argmax\" or an integer");
    }
    return TargetClass::argmax_logit();
  }
  if (!j.is_number_integer()) {
    fail("'" + ctx + ".k' must be \"argmax\" or an integer");
  }
  return TargetClass::of(j.get<int>());
}

struct RunContext {
  json config;
  fs::path out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;

  std::string path(const std::string& name) {
    outputs.push_back(name);
    return (out_dir / name).string();
  }
};

void write_manifest(RunContext& ctx, const std::string& subcommand,
                    const json& extra = json::object()) {
  json manifest;
  manifest["subcommand"] = subcommand;
  manifest["seed"] = ctx.seed;
  manifest["rng"] = kRngName;
  manifest["version"] = NFRLAB_VERSION;
  manifest["config"] = ctx.config;
  std::sort(ctx.outputs.begin(), ctx.outputs.end());
  manifest["outputs"] = ctx.outputs;
  for (const auto& item : extra.items()) manifest[item.key()] = item.value();
  std::ofstream out(ctx.out_dir / "manifest.json",
                    std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << "\n";
}

// ---- subcommand runners ----

int run_attribute(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config", {"model", "input", "rule", "k", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const Tensor x =
      parse_input(require(cfg, "config", "input"), "config.input", ctx.seed);
  RuleSpec rule = parse_rule(require(cfg, "config", "rule"), "config.rule");
  resolve_dtd_bounds(rule, cfg.at("rule"), "config.rule", net.input_shape);
  const ForwardTrace trace = forward(net, x);
  const int k = parse_target(cfg, "config").resolve(trace);

  const Attribution att = attribute(net, x, rule, k);
  write_tensor_file(ctx.path("attribution.nfrt"), att.values);
  const Shape& s = att.values.shape();
  Tensor image = att.values;
  if (s.rank() == 1) {
    image = att.values.reshaped(Shape{1, s.dims[0]});
  } else if (s.rank() == 3 && s.dims[0] == 1) {
    image = att.values.reshaped(Shape{s.dims[1], s.dims[2]});
  } else if (s.rank() != 2 && !(s.rank() == 3 && s.dims[0] == 3)) {
    image = att.values.reshaped(Shape{1, static_cast<int>(s.count())});
  }
  const bool color = image.shape().rank() == 3;
  render_saliency(image,
                  ctx.path(color ? "attribution.ppm" : "attribution.pgm"));
  write_manifest(ctx, "attribute",
                 {{"target_class", k}, {"seed_kind", att.seed_kind}});
  std::cout << "attribute: class " << k << ", wrote attribution.nfrt\n";  return 0;
}

int run_cascade(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config",
             {"model", "samples", "rules", "depths", "include_bottom",
              "percentile", "k", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const auto samples = parse_samples(require(cfg, "config", "samples"),
                                     "config.samples", net.input_shape,
                                     ctx.seed);
  int weighted = 0;
  for (const Layer& l : net.layers) weighted += l.has_weights() ? 1 : 0;
  std::vector<int> depths;
  if (cfg.contains("depths")) {
    depths = get_as<std::vector<int>>(cfg, "config", "depths");
  } else {
    for (int d = 0; d <= weighted; ++d) depths.push_back(d);
  }
  const bool include_bottom =
      get_or<bool>(cfg, "config", "include_bottom", false);
  const double percentile = get_or<double>(cfg, "config", "percentile", 90.0);
  const TargetClass k_mode = parse_target(cfg, "config");

  CsvWriter csv(ctx.path("cascade.csv"),
                {"rule", "depth", "mean", "std", "trials"});
  for (const std::string& name :
       get_as<std::vector<std::string>>(cfg, "config", "rules")) {
    CascadeTarget target = CascadeTarget::of_activation();
    if (name != "activation") {
      RuleSpec rule = RuleSpec::of(rule_kind_from_name(name));
      rule.rect_percentile = percentile;
      target = CascadeTarget::of_rule(rule);
    }
    const CascadeCurveResult curve =
        cascade_curve(net, samples, target, k_mode, depths, include_bottom);
    for (const CascadePoint& p : curve.points) {
      csv.row({curve.rule_label, CsvWriter::cell(p.depth),
               CsvWriter::cell(p.mean), CsvWriter::cell(p.stddev),
               CsvWriter::cell(p.trials)});
    }
  }
  write_manifest(ctx, "cascade");
  std::cout << "cascade: wrote cascade.csv\n";  return 0;
}

int run_theorem1(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(
      cfg, "config",
      {"d", "n_hidden", "dist", "rule", "trials", "scale", "out", "seed"});
  const int d = get_as<int>(cfg, "config", "d");
  std::vector<int> widths;
  if (require(cfg, "config", "n_hidden").is_array()) {
    widths = get_as<std::vector<int>>(cfg, "config", "n_hidden");
  } else {
    widths.push_back(get_as<int>(cfg, "config", "n_hidden"));
  }
  std::vector<std::string> dists;
  if (require(cfg, "config", "dist").is_array()) {
    dists = get_as<std::vector<std::string>>(cfg, "config", "dist");
  } else {
    dists.push_back(get_as<std::string>(cfg, "config", "dist"));
  }
  const std::string rule = get_or<std::string>(cfg, "config", "rule", "gbp");
  const int trials = get_as<int>(cfg, "config", "trials");
  const double scale = get_or<double>(cfg, "config", "scale", 1.0);

  CsvWriter csv(ctx.path("theorem1.csv"), {"dist", "d", "n", "mean", "std"});
  for (const std::string& dist_name : dists) {
    for (int n : widths) {
      DistSpec dist{dist_kind_from_name(dist_name), scale, 0};
      const TrialSummary s =
          theorem1_experiment(d, n, dist, rule, trials, ctx.seed);
      csv.row({dist_name, CsvWriter::cell(d), CsvWriter::cell(n),
               CsvWriter::cell(s.mean), CsvWriter::cell(s.stddev)});
    }
  }
  write_manifest(ctx, "theorem1");
  std::cout << "theorem1: wrote theorem1.csv\n";  return 0;
}

int run_theorem2(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config", {"d", "n", "trials", "out", "seed"});
  const int d = get_as<int>(cfg, "config", "d");
  const int n = get_as<int>(cfg, "config", "n");
  const int trials = get_as<int>(cfg, "config", "trials");
  const Theorem2Result res = theorem2_experiment(d, n, trials, ctx.seed);
  CsvWriter csv(ctx.path("theorem2.csv"), {"d", "n", "holds_fraction"});
  csv.row({CsvWriter::cell(d), CsvWriter::cell(n),
           CsvWriter::cell(res.holds_fraction)});
  write_manifest(ctx, "theorem2", {{"equality_gap", res.equality_gap}});
  std::cout << "theorem2: holds_fraction=" << format_double(res.holds_fraction)
            << " equality_gap=" << format_double(res.equality_gap) << "\n";  return 0;
}

int run_sanity(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config",
             {"model", "samples", "rule", "layers", "mode", "dist",
              "keep_fraction", "k", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const auto samples = parse_samples(require(cfg, "config", "samples"),
                                     "config.samples", net.input_shape,
                                     ctx.seed);
  RuleSpec rule = parse_rule(require(cfg, "config", "rule"), "config.rule");
  resolve_dtd_bounds(rule, cfg.at("rule"), "config.rule", net.input_shape);
  const auto layers = get_as<std::vector<int>>(cfg, "config", "layers");
  const std::string mode = get_as<std::string>(cfg, "config", "mode");
  PerturbSpec perturb;
  if (mode == "randomize") {
    perturb.mode = PerturbMode::Randomize;
    perturb.dist = parse_dist(require(cfg, "config", "dist"), "config.dist",
                              derive_seed(ctx.seed, 120, 0));
  } else if (mode == "remove") {
    perturb.mode = PerturbMode::Remove;
    perturb.keep_fraction = get_as<double>(cfg, "config", "keep_fraction");
  } else {
    fail("'config.mode' must be randomize or remove");
  }
  const auto rows = sanity_experiment(net, samples, rule, layers, perturb,
                                      parse_target(cfg, "config"));
  CsvWriter csv(ctx.path("sanity.csv"), {"sample", "before", "after", "delta"});
  for (const SanityRow& r : rows) {
    csv.row({CsvWriter::cell(r.sample), CsvWriter::cell(r.before),
             CsvWriter::cell(r.after), CsvWriter::cell(r.delta)});
  }
  write_manifest(ctx, "sanity");
  std::cout << "sanity: wrote sanity.csv\n";  return 0;
}

int run_split(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config",
             {"model", "samples", "layers", "fraction", "which", "rule", "k",
              "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const auto samples = parse_samples(require(cfg, "config", "samples"),
                                     "config.samples", net.input_shape,
                                     ctx.seed);
  RuleSpec rule = parse_rule(require(cfg, "config", "rule"), "config.rule");
  resolve_dtd_bounds(rule, cfg.at("rule"), "config.rule", net.input_shape);
  const auto layers = get_as<std::vector<int>>(cfg, "config", "layers");
  const double fraction = get_or<double>(cfg, "config", "fraction", 0.1);
  std::vector<SplitWhich> which;
  const std::string w = get_or<std::string>(cfg, "config", "which", "both");
  if (w == "max" || w == "both") which.push_back(SplitWhich::Max);
  if (w == "min" || w == "both") which.push_back(SplitWhich::Min);
  if (which.empty()) fail("'config.which' must be max, min, or both");
  const TargetClass k_mode = parse_target(cfg, "config");

  CsvWriter csv(
      ctx.path("split.csv"),
      {"sample", "layer", "which", "alpha_vs_full", "alpha_vs_input"});
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const ForwardTrace trace = forward(net, samples[s]);
    const int k = k_mode.resolve(trace);
    const Attribution full = attribute(net, samples[s], rule, k);
    for (int layer : layers) {
      for (SplitWhich ww : which) {
        const Attribution split =
            activation_split_attrib(net, trace, layer, fraction, ww, rule, k);
        const double vs_full =
            norm2(split.values) == 0.0 || norm2(full.values) == 0.0
                ? 0.0
                : alignment(split.values, full.values).value;
        const double vs_input =
            norm2(split.values) == 0.0
                ? 0.0
                : alignment(split.values, samples[s]).value;
        csv.row({CsvWriter::cell(static_cast<int>(s)), CsvWriter::cell(layer),
                 ww == SplitWhich::Max ? "max" : "min",
                 CsvWriter::cell(vs_full), CsvWriter::cell(vs_input)});
      }
    }
  }
  write_manifest(ctx, "split");
  std::cout << "split: wrote split.csv\n";  return 0;
}

int run_geometry(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config", {"model", "max_pairs", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const int max_pairs = get_or<int>(cfg, "config", "max_pairs", 10000);
  const auto stats = orthogonality_stats(net, max_pairs, ctx.seed);
  CsvWriter csv(ctx.path("geometry.csv"),
                {"layer", "mean_abs_cos", "norm_mean", "norm_std"});
  for (const LayerGeometry& g : stats) {
    csv.row({CsvWriter::cell(g.layer_index), CsvWriter::cell(g.mean_abs_cos),
             CsvWriter::cell(g.norm_mean), CsvWriter::cell(g.norm_std)});
  }
  write_manifest(ctx, "geometry");
  std::cout << "geometry: wrote geometry.csv\n";  return 0;
}

int run_kis(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config",
             {"model", "dataset", "rule", "variant", "bins", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const json& ds = require(cfg, "config", "dataset");
  LabeledDataset data;
  if (ds.is_object() && ds.contains("dir")) {
    check_keys(ds, "config.dataset", {"dir"});
    data = load_dataset(get_as<std::string>(ds, "config.dataset", "dir"));
  } else if (ds.is_object() && ds.contains("synthetic")) {
    check_keys(ds, "config.dataset", {"synthetic"});
    const json& sy = ds.at("synthetic");
    check_keys(sy, "config.dataset.synthetic", {"count", "side", "noise"});
    data = synthetic_blob_dataset(
        get_or<int>(sy, "config.dataset.synthetic", "count", 100),
        get_or<int>(sy, "config.dataset.synthetic", "side", 8),
        get_or<double>(sy, "config.dataset.synthetic", "noise", 0.5),
        derive_seed(ctx.seed, 130, 0));
  } else {
    fail("'config.dataset' must hold dir or synthetic");
  }
  RuleSpec rule = parse_rule(require(cfg, "config", "rule"), "config.rule");
  resolve_dtd_bounds(rule, cfg.at("rule"), "config.rule", net.input_shape);
  const KisVariant variant = kis_variant_from_name(
      get_or<std::string>(cfg, "config", "variant", "kis"));
  const int bins = get_or<int>(cfg, "config", "bins", 20);

  const KisReport report = kis_report(net, data, rule, variant);
  CsvWriter csv(ctx.path("kis.csv"),
                {"sample_id", "S", "pred", "label", "correct", "variant"});
  for (const KisRow& r : report.rows) {
    csv.row({CsvWriter::cell(r.sample_id), CsvWriter::cell(r.s),
             CsvWriter::cell(r.predicted), CsvWriter::cell(r.label),
             CsvWriter::cell(r.correct), r.variant});
  }
  CsvWriter hist(ctx.path("kis_histogram.csv"),
                 {"bin_lo", "bin_hi", "count_correct", "count_incorrect"});
  for (const HistogramBin& b : kis_histogram(report, bins)) {
    hist.row({CsvWriter::cell(b.lo), CsvWriter::cell(b.hi),
              CsvWriter::cell(b.count_correct),
              CsvWriter::cell(b.count_incorrect)});
  }
  json extra;
  extra["errors"] = report.errors;
  write_manifest(ctx, "kis", extra);
  std::cout << "kis: wrote kis.csv (" << report.rows.size() << " rows, "
            << report.errors.size() << " errors)\n";
  return report.errors.empty() ? 0 : 3;  // per-sample errors are recorded, not fatal
}

int run_nfr_check(RunContext& ctx) {
  const json& cfg = ctx.config;
  check_keys(cfg, "config", {"model", "input", "rule", "k", "out", "seed"});
  const Network net =
      parse_model(require(cfg, "config", "model"), "config.model", ctx.seed);
  const Tensor x =
      parse_input(require(cfg, "config", "input"), "config.input", ctx.seed);
  RuleSpec rule = parse_rule(require(cfg, "config", "rule"), "config.rule");
  resolve_dtd_bounds(rule, cfg.at("rule"), "config.rule", net.input_shape);
  const ForwardTrace trace = forward(net, x);
  const int k = parse_target(cfg, "config").resolve(trace);
  const NfrReport report = nfr_check(net, trace, rule, k);
  CsvWriter csv(ctx.path("nfr_check.csv"),
                {"layer_index", "lhs", "rhs", "noop", "holds"});
  for (const NfrLayerRecord& rec : report.layers) {
    csv.row({CsvWriter::cell(rec.layer_index), CsvWriter::cell(rec.lhs),
             CsvWriter::cell(rec.rhs), CsvWriter::cell(rec.filter_was_noop),
             CsvWriter::cell(rec.holds)});
  }
  write_manifest(ctx, "nfr-check",
                 {{"target_logit", report.target_logit},
                  {"all_hold", report.all_hold()}});
  std::cout << "nfr-check: " << (report.all_hold() ? "holds" : "violated")
            << " at " << report.layers.size()
            << " relu layers, f_k=" << format_double(report.target_logit)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modified-backpropagation attribution lab"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::uint64_t seed_override = 0;
  bool seed_given = false;

  const std::vector<std::pair<std::string, int (*)(RunContext&)>> commands = {
      {"attribute", run_attribute}, {"cascade", run_cascade},
      {"theorem1", run_theorem1},   {"theorem2", run_theorem2},
      {"sanity", run_sanity},       {"split", run_split},
      {"geometry", run_geometry},   {"kis", run_kis},
      {"nfr-check", run_nfr_check}};

  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path)->required();
    sub->add_option("--out", out_override);
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) {
      seed_override = s;
      seed_given = true;
    });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    RunContext ctx;
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "nfrlab: cannot open config '" << config_path << "'\n";
      return 2;
    }
    try {
      ctx.config = json::parse(in);
    } catch (const json::exception& e) {
      std::cerr << "nfrlab: config is not valid json: " << e.what() << "\n";
      return 2;
    }
    ctx.seed = seed_given
                   ? seed_override
                   : get_or<std::uint64_t>(ctx.config, "config", "seed", 0);
    const std::string out =
        !out_override.empty()
            ? out_override
            : get_or<std::string>(ctx.config, "config", "out", "out");
    ctx.out_dir = out;
    fs::create_directories(ctx.out_dir);

    for (const auto& [name, fn] : commands) {
      if (app.get_subcommand(name)->parsed()) {
        return fn(ctx);
      }
    }
    std::cerr << "nfrlab: unknown subcommand\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nfrlab: " << e.what() << "\n";
    return 1;
  }
}
