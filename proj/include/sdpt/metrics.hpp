#ifndef SDPT_METRICS_HPP
#define SDPT_METRICS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "sdpt/flow.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

enum class AlignMode { affine, none };
enum class Granularity { per_sequence, per_frame };

struct MetricOptions {
  AlignMode align = AlignMode::affine;
  Granularity granularity = Granularity::per_sequence;
  double delta_threshold = 1.25;
  // Relative change below which a warped pixel counts as temporally
  // consistent.
  double tc_threshold = 0.05;
  // Intensity-change threshold for the static-pixel mask of the temporal
  // gradient metric.
  double flicker_tau = 0.05;
  double eps = 1e-6;
};

struct SequenceData {
  Tensor pred;                  // (t, 1, h, w) inverse depth
  Tensor gt;                    // (t, 1, h, w) inverse depth
  Tensor valid;                 // (t, 1, h, w) in {0, 1}; undefined -> all valid
  std::vector<FlowField> flows; // t-1 forward flows; empty -> temporal metrics skipped
  Tensor frames;                // (t, c, h, w) images; undefined -> everything static
};

struct EvalReport {
  double absrel = 0.0;
  double delta1 = 0.0;  // percent
  double tgm = 0.0;
  double opw = 0.0;
  double tc = 0.0;
  double tcc = 0.0;
  double tmc = 0.0;
  std::size_t valid_px = 0;       // support of the spatial metrics
  std::size_t warp_px = 0;        // support of the flow-based metrics
  std::size_t tcc_skipped = 0;    // degenerate pairs excluded from tcc
  std::size_t tgm_empty_pairs = 0;
};

// Value-only evaluation (no tape). Alignment solves least squares exactly;
// on a perfect prediction it returns scale 1, shift 0 bit-for-bit, so every
// metric hits its ideal value exactly.
EvalReport evaluate_sequence(const SequenceData& data, const MetricOptions& opt);

// Averages every numeric field over reports (counts are summed).
EvalReport average_reports(const std::vector<EvalReport>& reports);

enum class TieMode {
  // Ascending stable sort; for higher-is-better columns the ranking is
  // reversed (rank = n + 1 - ascending rank), so ties break by method order.
  stable,
  // Tied values share the mean of the positions they occupy.
  shared_mean,
};

struct MetricColumn {
  std::string name;
  bool higher_better = false;
  std::vector<double> values;  // one per method
};

// Mean rank per method across columns (1 = best).
std::vector<double> mean_ranks(const std::vector<MetricColumn>& columns, TieMode mode);

// Truncates toward zero to one decimal, e.g. 2.4857 -> 2.4.
double truncate1(double x);

}  // namespace sdpt

#endif
