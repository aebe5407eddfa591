#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aled/core_types.hpp"
#include "aled/dataset.hpp"
#include "aled/network.hpp"

namespace aled {

enum class DepthChangeClass { Same, Farther, Closer };

/// Same on the closed interval [-tau, +tau]; Farther above, Closer below.
DepthChangeClass classify_depth_change(double delta, double tau);

struct DenseErrorRow {
  double cutoff = 0.0;
  long count_bf = 0, count_af = 0;  // 0 marks the entry absent
  double mae_bf = 0.0, rel_bf = 0.0;
  double mae_af = 0.0, rel_af = 0.0;
};

/// Per-cutoff mean absolute and relative errors over valid pixels with
/// gt <= cutoff, separately against gt_begin (bf) and gt_end (af). Meters.
std::vector<DenseErrorRow> dense_errors(
    const DepthPair& pred, const DenseDepthGT& gt_begin, const DenseDepthGT& gt_end,
    const std::vector<double>& cutoffs = {10.0, 20.0, 30.0, 100.0, 200.0});

/// Depth of the nonzero pixel closest (Euclidean pixel distance) to each
/// event; ties go to the smallest row-major pixel index. Exhaustive scan.
std::vector<double> nn_associate(const EventWindow& window, const SparseDepthImage& sparse);

/// Grid-bucket accelerated variant; returns exactly the same values as
/// nn_associate, including tie-breaks.
std::vector<double> nn_associate_grid(const EventWindow& window, const SparseDepthImage& sparse);

struct RowBand {
  int row_min = 0;
  int row_max = 0;
};

/// First and last image rows containing any nonzero depth.
RowBand lidar_row_band(const SparseDepthImage& sparse);

/// map(y, x) for every event, in event order.
std::vector<double> sample_at_events(const Tensor& map, const EventWindow& window);

struct SparseErrors {
  long count_bf = 0, count_af = 0;
  double mae_bf = 0.0, mae_af = 0.0;
};

/// Mean per-event absolute errors inside the scan band: |depth_bf[i] -
/// gt_begin| and |depth_af[i] - gt_end| at each event pixel, restricted to
/// valid ground truth with gt <= cutoff. For the NN baseline pass the same
/// depths twice.
SparseErrors sparse_event_errors(const EventWindow& window, std::span<const double> depths_bf,
                                 std::span<const double> depths_af, const DenseDepthGT& gt_begin,
                                 const DenseDepthGT& gt_end, RowBand band,
                                 double cutoff = std::numeric_limits<double>::infinity());

struct ChangeMetrics {
  long count = 0;  // unique event pixels that qualified
  double mae = 0.0;
  double accuracy = 0.0;  // fraction in [0, 1]
};

/// Depth-change error and 3-class accuracy over the unique event pixels of
/// the window (each pixel counted once), using the +-tau closed-interval
/// classification. Pixels qualify when both ground truths are valid and
/// <= cutoff.
ChangeMetrics depth_change_metrics(const DepthPair& pred, const DenseDepthGT& gt_begin,
                                   const DenseDepthGT& gt_end, const EventWindow& window,
                                   double tau = 1.0,
                                   double cutoff = std::numeric_limits<double>::infinity());

struct EvalOptions {
  std::vector<double> cutoffs{10.0, 20.0, 30.0, 100.0, 200.0};
  double tau = 1.0;
  bool nn_only = false;  // skip network predictions entirely
  bool oracle = false;   // predictions := ground truth
  bool fast_nn = false;  // grid-indexed NN association (identical results)
};

/// Runs the full evaluation over every sequence: recurrent inference (unless
/// nn_only), the NN baseline against the latest scan, and all metric blocks.
/// Returns tab-separated tables, one block per sequence plus an aggregate.
std::string evaluate_dataset(const AledNet* net, const std::vector<SequenceData>& seqs,
                             const EvalOptions& options);

}  // namespace aled
