#pragma once

#include <string>
#include <vector>

#include "nfr/net.hpp"
#include "nfr/rules.hpp"
#include "nfr/tensor.hpp"

namespace nfr {

struct NormalizedAttribution {
  Tensor values;
  bool degenerate = false;  // constant attribution mapped to constant min(x)
};

/// Affine rescaling of R into the value range of x:
///   (R - min R) * (max x - min x) / (max R - min R) + min x.
NormalizedAttribution normalize_attribution(const Tensor& r, const Tensor& x);

/// Key information sufficiency: S = 1 - |v_k.*A* - v_k.*A|_1 / |v_k.*A|_1,
/// where A are the features entering the final dense layer for x, A* the same
/// for the normalized attribution fed back in, and v_k the final layer's k-th
/// weight column. Throws on a zero denominator.
double kis(const Network& net, const Tensor& x, const Tensor& r, int k);

enum class InsertionVariant { Signed, Abs };

/// Signed: keeps x where R is strictly above mean(R); Abs: where |R| is
/// strictly above mean(|R|).
Tensor insertion_input(const Tensor& r, const Tensor& x,
                       InsertionVariant variant);

enum class KisVariant { Kis, InsertionSigned, InsertionAbs };

std::string kis_variant_name(KisVariant v);
KisVariant kis_variant_from_name(const std::string& name);

struct KisRow {
  int sample_id = 0;
  double s = 0.0;
  int predicted = 0;
  int label = 0;
  bool correct = false;
  std::string variant;
};

struct KisReport {
  std::vector<KisRow> rows;
  std::vector<std::string> errors;  // per-sample failures, never fatal
};

/// Per-sample S for the rule's attribution of the predicted class: the kis
/// variant feeds the normalized attribution, the insertion variants feed the
/// masked input through the same S formula.
KisReport kis_report(const Network& net, const LabeledDataset& data,
                     const RuleSpec& rule, KisVariant variant);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  int count_correct = 0;
  int count_incorrect = 0;
};

std::vector<HistogramBin> kis_histogram(const KisReport& report, int bins);

}  // namespace nfr
