#include "nfr/kis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nfr {

NormalizedAttribution normalize_attribution(const Tensor& r, const Tensor& x) {
  if (!(r.shape() == x.shape())) {
    throw std::invalid_argument("normalize_attribution: shape mismatch");
  }
  const double rmin = r.flat().minCoeff();
  const double rmax = r.flat().maxCoeff();
  const double xmin = x.flat().minCoeff();
  const double xmax = x.flat().maxCoeff();
  NormalizedAttribution out;
  if (rmax == rmin) {
    out.values = Tensor::constant(x.shape(), xmin);
    out.degenerate = true;
    return out;
  }
  const double scale = (xmax - xmin) / (rmax - rmin);
  out.values = Tensor::from_flat(
      x.shape(), ((r.flat().array() - rmin) * scale + xmin).matrix());
  return out;
}

namespace {

double kis_from_features(const Network& net, const ForwardTrace& base,
                         const ForwardTrace& fed, int k) {
  const int lfeat = net.layer_count() - 1;  // features entering the top layer
  const Vec& a = base.activations[static_cast<std::size_t>(lfeat)].flat();
  const Vec& a_star = fed.activations[static_cast<std::size_t>(lfeat)].flat();
  const Vec v = net.final_weight_column(k);
  const double denom = v.cwiseProduct(a).cwiseAbs().sum();
  if (denom == 0.0) {
    throw std::runtime_error("kis: undefined, zero weighted-feature norm");
  }
  const double shift =
      (v.cwiseProduct(a_star) - v.cwiseProduct(a)).cwiseAbs().sum();
  return 1.0 - shift / denom;
}

}  // namespace

double kis(const Network& net, const Tensor& x, const Tensor& r, int k) {
  const NormalizedAttribution fed = normalize_attribution(r, x);
  const ForwardTrace base = forward(net, x);
  const ForwardTrace star = forward(net, fed.values);
  return kis_from_features(net, base, star, k);
}

Tensor insertion_input(const Tensor& r, const Tensor& x,
                       InsertionVariant variant) {
  if (!(r.shape() == x.shape())) {
    throw std::invalid_argument("insertion_input: shape mismatch");
  }
  Vec score = variant == InsertionVariant::Abs ? r.flat().cwiseAbs().eval()
                                               : r.flat();
  const double mean = score.mean();
  return Tensor::from_flat(
      x.shape(),
      x.flat().cwiseProduct((score.array() > mean).cast<double>().matrix()));
}

std::string kis_variant_name(KisVariant v) {
  switch (v) {
    case KisVariant::Kis: return "kis";
    case KisVariant::InsertionSigned: return "insertion_signed";
    case KisVariant::InsertionAbs: return "insertion_abs";
  }
  throw std::logic_error("kis_variant_name: bad enum");
}

KisVariant kis_variant_from_name(const std::string& name) {
  if (name == "kis") return KisVariant::Kis;
  if (name == "insertion_signed") return KisVariant::InsertionSigned;
  if (name == "insertion_abs") return KisVariant::InsertionAbs;
  throw std::invalid_argument("unknown kis variant '" + name + "'");
}

KisReport kis_report(const Network& net, const LabeledDataset& data,
                     const RuleSpec& rule, KisVariant variant) {
  if (data.inputs.size() != data.labels.size()) {
    throw std::invalid_argument("kis_report: inputs/labels length mismatch");
  }
  KisReport report;
  for (std::size_t s = 0; s < data.inputs.size(); ++s) {
    const Tensor& x = data.inputs[s];
    try {
      const ForwardTrace base = forward(net, x);
      Eigen::Index argmax = 0;
      base.logits().flat().maxCoeff(&argmax);
      const int k = static_cast<int>(argmax);
      const Tensor r = attribute(net, x, rule, k).values;

      Tensor fed;
      switch (variant) {
        case KisVariant::Kis:
          fed = normalize_attribution(r, x).values;
          break;
        case KisVariant::InsertionSigned:
          fed = insertion_input(r, x, InsertionVariant::Signed);
          break;
        case KisVariant::InsertionAbs:
          fed = insertion_input(r, x, InsertionVariant::Abs);
          break;
      }
      const ForwardTrace star = forward(net, fed);
      KisRow row;
      row.sample_id = static_cast<int>(s);
      row.s = kis_from_features(net, base, star, k);
      row.predicted = k;
      row.label = data.labels[s];
      row.correct = k == data.labels[s];
      row.variant = kis_variant_name(variant);
      report.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      report.errors.push_back("sample " + std::to_string(s) + ": " + e.what());
    }
  }
  return report;
}

std::vector<HistogramBin> kis_histogram(const KisReport& report, int bins) {
  if (bins < 1) throw std::invalid_argument("kis_histogram: bins must be >= 1");
  std::vector<HistogramBin> out;
  if (report.rows.empty()) return out;
  double lo = report.rows[0].s, hi = report.rows[0].s;
  for (const KisRow& r : report.rows) {
    lo = std::min(lo, r.s);
    hi = std::max(hi, r.s);
  }
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / bins;
  out.resize(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].lo = lo + b * width;
    out[static_cast<std::size_t>(b)].hi = lo + (b + 1) * width;
  }
  for (const KisRow& r : report.rows) {
    int b = static_cast<int>((r.s - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    if (r.correct) {
      ++out[static_cast<std::size_t>(b)].count_correct;
    } else {
      ++out[static_cast<std::size_t>(b)].count_incorrect;
    }
  }
  return out;
}

}  // namespace nfr
