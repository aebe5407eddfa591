#include "aled/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "aled/errors.hpp"
#include "aled/representations.hpp"

namespace aled {

DepthChangeClass classify_depth_change(double delta, double tau) {
  if (delta > tau) return DepthChangeClass::Farther;
  if (delta < -tau) return DepthChangeClass::Closer;
  return DepthChangeClass::Same;
}

std::vector<DenseErrorRow> dense_errors(const DepthPair& pred, const DenseDepthGT& gt_begin,
                                        const DenseDepthGT& gt_end,
                                        const std::vector<double>& cutoffs) {
  if (!pred.d_bf.same_shape(gt_begin.data) || !pred.d_af.same_shape(gt_end.data))
    throw UsageError("dense_errors: prediction/ground-truth shape mismatch");
  std::vector<DenseErrorRow> rows;
  rows.reserve(cutoffs.size());
  for (const double c : cutoffs) {
    DenseErrorRow row;
    row.cutoff = c;
    double abs_bf = 0.0, rel_bf = 0.0, abs_af = 0.0, rel_af = 0.0;
    for (std::size_t i = 0; i < gt_begin.data.size(); ++i) {
      if (gt_begin.valid[i] && gt_begin.data[i] <= c && gt_begin.data[i] > 0.0) {
        const double e = std::abs(pred.d_bf[i] - gt_begin.data[i]);
        abs_bf += e;
        rel_bf += e / gt_begin.data[i];
        ++row.count_bf;
      }
      if (gt_end.valid[i] && gt_end.data[i] <= c && gt_end.data[i] > 0.0) {
        const double e = std::abs(pred.d_af[i] - gt_end.data[i]);
        abs_af += e;
        rel_af += e / gt_end.data[i];
        ++row.count_af;
      }
    }
    if (row.count_bf > 0) {
      row.mae_bf = abs_bf / row.count_bf;
      row.rel_bf = rel_bf / row.count_bf;
    }
    if (row.count_af > 0) {
      row.mae_af = abs_af / row.count_af;
      row.rel_af = rel_af / row.count_af;
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

struct Best {
  std::int64_t d2 = std::numeric_limits<std::int64_t>::max();
  std::int64_t idx = std::numeric_limits<std::int64_t>::max();

  void consider(std::int64_t d2_new, std::int64_t idx_new) {
    if (d2_new < d2 || (d2_new == d2 && idx_new < idx)) {
      d2 = d2_new;
      idx = idx_new;
    }
  }
};

std::vector<std::pair<int, int>> nonzero_pixels(const SparseDepthImage& sparse) {
  std::vector<std::pair<int, int>> px;  // (y, x) in row-major order
  for (int y = 0; y < sparse.data.h(); ++y)
    for (int x = 0; x < sparse.data.w(); ++x)
      if (sparse.data.at(y, x) != 0.0) px.emplace_back(y, x);
  return px;
}

}  // namespace

std::vector<double> nn_associate(const EventWindow& window, const SparseDepthImage& sparse) {
  const auto px = nonzero_pixels(sparse);
  if (px.empty()) throw UsageError("nn_associate: sparse image has no measurements");
  const int w = sparse.data.w();
  std::vector<double> out;
  out.reserve(window.events.size());
  for (const Event& e : window.events) {
    Best best;
    for (const auto& [y, x] : px) {
      const std::int64_t dx = x - e.x, dy = y - e.y;
      best.consider(dx * dx + dy * dy, static_cast<std::int64_t>(y) * w + x);
    }
    out.push_back(sparse.data[static_cast<std::size_t>(best.idx)]);
  }
  return out;
}

std::vector<double> nn_associate_grid(const EventWindow& window, const SparseDepthImage& sparse) {
  const auto px = nonzero_pixels(sparse);
  if (px.empty()) throw UsageError("nn_associate: sparse image has no measurements");
  const int h = sparse.data.h(), w = sparse.data.w();

  const int cell = std::max(
      1, static_cast<int>(std::sqrt(static_cast<double>(h) * w / static_cast<double>(px.size()))));
  const int gw = (w + cell - 1) / cell, gh = (h + cell - 1) / cell;
  std::vector<std::vector<std::pair<int, int>>> buckets(static_cast<std::size_t>(gw) * gh);
  for (const auto& [y, x] : px)
    buckets[static_cast<std::size_t>(y / cell) * gw + x / cell].emplace_back(y, x);

  std::vector<double> out;
  out.reserve(window.events.size());
  for (const Event& e : window.events) {
    const int ecx = std::clamp(e.x / cell, 0, gw - 1);
    const int ecy = std::clamp(e.y / cell, 0, gh - 1);
    Best best;
    const int max_ring = std::max(std::max(ecx, gw - 1 - ecx), std::max(ecy, gh - 1 - ecy));
    for (int r = 0; r <= max_ring; ++r) {
      if (best.idx != std::numeric_limits<std::int64_t>::max() && r >= 2) {
        // every pixel in ring r is at least (r-1)*cell away in some axis
        const std::int64_t lo = static_cast<std::int64_t>(r - 1) * cell;
        if (lo * lo > best.d2) break;
      }
      for (int cy = std::max(0, ecy - r); cy <= std::min(gh - 1, ecy + r); ++cy)
        for (int cx = std::max(0, ecx - r); cx <= std::min(gw - 1, ecx + r); ++cx) {
          if (std::max(std::abs(cy - ecy), std::abs(cx - ecx)) != r) continue;
          for (const auto& [y, x] : buckets[static_cast<std::size_t>(cy) * gw + cx]) {
            const std::int64_t dx = x - e.x, dy = y - e.y;
            best.consider(dx * dx + dy * dy, static_cast<std::int64_t>(y) * w + x);
          }
        }
    }
    out.push_back(sparse.data[static_cast<std::size_t>(best.idx)]);
  }
  return out;
}

RowBand lidar_row_band(const SparseDepthImage& sparse) {
  RowBand band{-1, -1};
  for (int y = 0; y < sparse.data.h(); ++y)
    for (int x = 0; x < sparse.data.w(); ++x)
      if (sparse.data.at(y, x) != 0.0) {
        if (band.row_min < 0) band.row_min = y;
        band.row_max = y;
        break;
      }
  if (band.row_min < 0) throw UsageError("lidar_row_band: sparse image has no measurements");
  return band;
}

std::vector<double> sample_at_events(const Tensor& map, const EventWindow& window) {
  std::vector<double> out;
  out.reserve(window.events.size());
  for (const Event& e : window.events) out.push_back(map.at(e.y, e.x));
  return out;
}

SparseErrors sparse_event_errors(const EventWindow& window, std::span<const double> depths_bf,
                                 std::span<const double> depths_af, const DenseDepthGT& gt_begin,
                                 const DenseDepthGT& gt_end, RowBand band, double cutoff) {
  if (depths_bf.size() != window.events.size() || depths_af.size() != window.events.size())
    throw UsageError("sparse_event_errors: depth list does not match the event count");
  SparseErrors out;
  double sum_bf = 0.0, sum_af = 0.0;
  const int w = gt_begin.data.w();
  for (std::size_t i = 0; i < window.events.size(); ++i) {
    const Event& e = window.events[i];
    if (e.y < band.row_min || e.y > band.row_max) continue;
    const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
    if (gt_begin.valid[pix] && gt_begin.data[pix] > 0.0 && gt_begin.data[pix] <= cutoff) {
      sum_bf += std::abs(depths_bf[i] - gt_begin.data[pix]);
      ++out.count_bf;
    }
    if (gt_end.valid[pix] && gt_end.data[pix] > 0.0 && gt_end.data[pix] <= cutoff) {
      sum_af += std::abs(depths_af[i] - gt_end.data[pix]);
      ++out.count_af;
    }
  }
  if (out.count_bf > 0) out.mae_bf = sum_bf / out.count_bf;
  if (out.count_af > 0) out.mae_af = sum_af / out.count_af;
  return out;
}

ChangeMetrics depth_change_metrics(const DepthPair& pred, const DenseDepthGT& gt_begin,
                                   const DenseDepthGT& gt_end, const EventWindow& window,
                                   double tau, double cutoff) {
  ChangeMetrics out;
  const int h = gt_begin.data.h(), w = gt_begin.data.w();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(h) * w, 0);
  double sum = 0.0;
  long correct = 0;
  for (const Event& e : window.events) {
    const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
    if (seen[pix]) continue;
    seen[pix] = 1;
    if (!gt_begin.valid[pix] || !gt_end.valid[pix]) continue;
    if (gt_begin.data[pix] > cutoff || gt_end.data[pix] > cutoff) continue;
    const double pred_delta = pred.d_af[pix] - pred.d_bf[pix];
    const double gt_delta = gt_end.data[pix] - gt_begin.data[pix];
    sum += std::abs(pred_delta - gt_delta);
    if (classify_depth_change(pred_delta, tau) == classify_depth_change(gt_delta, tau)) ++correct;
    ++out.count;
  }
  if (out.count > 0) {
    out.mae = sum / out.count;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.count);
  }
  return out;
}

// ---- dataset-level report ----

namespace {

struct CutoffAcc {
  double cutoff = 0.0;
  double dense_abs_bf = 0.0, dense_rel_bf = 0.0, dense_abs_af = 0.0, dense_rel_af = 0.0;
  long dense_n_bf = 0, dense_n_af = 0;
  double nn_abs_bf = 0.0, nn_abs_af = 0.0;
  long nn_n_bf = 0, nn_n_af = 0;
  double aled_abs_bf = 0.0, aled_abs_af = 0.0;
  long aled_n_bf = 0, aled_n_af = 0;
  double change_abs = 0.0;
  long change_n = 0, change_correct = 0;
};

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string ratio(double sum, long n) { return n > 0 ? fmt(sum / n) : std::string("-"); }

void emit_block(std::ostringstream& out, const std::string& title,
                const std::vector<CutoffAcc>& accs) {
  out << "# " << title << "\n";
  out << "cutoff_m\tdense_mae_bf\tdense_rel_bf\tdense_mae_af\tdense_rel_af"
         "\tsparse_nn_bf\tsparse_aled_bf\tsparse_nn_af\tsparse_aled_af"
         "\tchange_mae\tchange_acc_pct\n";
  for (const CutoffAcc& a : accs) {
    out << fmt(a.cutoff) << '\t' << ratio(a.dense_abs_bf, a.dense_n_bf) << '\t'
        << ratio(a.dense_rel_bf, a.dense_n_bf) << '\t' << ratio(a.dense_abs_af, a.dense_n_af)
        << '\t' << ratio(a.dense_rel_af, a.dense_n_af) << '\t' << ratio(a.nn_abs_bf, a.nn_n_bf)
        << '\t' << ratio(a.aled_abs_bf, a.aled_n_bf) << '\t' << ratio(a.nn_abs_af, a.nn_n_af)
        << '\t' << ratio(a.aled_abs_af, a.aled_n_af) << '\t' << ratio(a.change_abs, a.change_n)
        << '\t'
        << (a.change_n > 0 ? fmt(100.0 * a.change_correct / static_cast<double>(a.change_n))
                           : std::string("-"))
        << "\n";
  }
}

void merge_into(std::vector<CutoffAcc>& total, const std::vector<CutoffAcc>& part) {
  for (std::size_t i = 0; i < total.size(); ++i) {
    CutoffAcc& t = total[i];
    const CutoffAcc& p = part[i];
    t.dense_abs_bf += p.dense_abs_bf;
    t.dense_rel_bf += p.dense_rel_bf;
    t.dense_abs_af += p.dense_abs_af;
    t.dense_rel_af += p.dense_rel_af;
    t.dense_n_bf += p.dense_n_bf;
    t.dense_n_af += p.dense_n_af;
    t.nn_abs_bf += p.nn_abs_bf;
    t.nn_abs_af += p.nn_abs_af;
    t.nn_n_bf += p.nn_n_bf;
    t.nn_n_af += p.nn_n_af;
    t.aled_abs_bf += p.aled_abs_bf;
    t.aled_abs_af += p.aled_abs_af;
    t.aled_n_bf += p.aled_n_bf;
    t.aled_n_af += p.aled_n_af;
    t.change_abs += p.change_abs;
    t.change_n += p.change_n;
    t.change_correct += p.change_correct;
  }
}

}  // namespace

std::string evaluate_dataset(const AledNet* net, const std::vector<SequenceData>& seqs,
                             const EvalOptions& options) {
  if (seqs.empty()) throw UsageError("evaluate_dataset: no sequences");
  if (options.cutoffs.empty()) throw UsageError("evaluate_dataset: no cutoffs");
  if (!(options.tau > 0.0)) throw UsageError("evaluate_dataset: tau must be positive");

  std::ostringstream report;
  std::vector<CutoffAcc> total(options.cutoffs.size());
  for (std::size_t i = 0; i < options.cutoffs.size(); ++i) total[i].cutoff = options.cutoffs[i];

  for (const SequenceData& seq : seqs) {
    seq.camera.validate();
    std::vector<CutoffAcc> acc(options.cutoffs.size());
    for (std::size_t i = 0; i < options.cutoffs.size(); ++i) acc[i].cutoff = options.cutoffs[i];

    const bool use_net = net != nullptr && !options.nn_only && !options.oracle;
    if (net && (seq.volume_bins != net->config().bins))
      throw DataError("sequence " + seq.name + " was built with a different bin count");

    NetworkState state;
    if (use_net) state = net->init_state(seq.camera.height, seq.camera.width);

    bool have_scan = false;
    SparseDepthImage latest;
    RowBand band;

    for (const SequenceRecord& rec : seq.records) {
      if (rec.lidar) {
        SparseDepthImage sparse = project_lidar(*rec.lidar, seq.camera);
        if (use_net)
          state = net->encode_lidar(normalize_depth(sparse.data, seq.camera.max_range), state);
        bool nonzero = false;
        for (std::size_t i = 0; i < sparse.data.size() && !nonzero; ++i)
          nonzero = sparse.data[i] != 0.0;
        if (nonzero) {
          band = lidar_row_band(sparse);
          latest = std::move(sparse);
          have_scan = true;
        }
      }

      DepthPair pred;
      bool have_pred = false;
      if (use_net) {
        const EventVolume vol = build_event_volume(rec.window, net->config().bins,
                                                   seq.camera.height, seq.camera.width);
        state = net->encode_events(vol.data, state);
        const DepthPair norm = net->decode(state);
        pred.d_bf = denormalize_depth(norm.d_bf, seq.camera.max_range);
        pred.d_af = denormalize_depth(norm.d_af, seq.camera.max_range);
        have_pred = true;
      } else if (options.oracle) {
        pred.d_bf = rec.gt_begin.data;
        pred.d_af = rec.gt_end.data;
        have_pred = true;
      }

      if (have_pred) {
        const auto rows = dense_errors(pred, rec.gt_begin, rec.gt_end, options.cutoffs);
        for (std::size_t i = 0; i < rows.size(); ++i) {
          acc[i].dense_abs_bf += rows[i].mae_bf * rows[i].count_bf;
          acc[i].dense_rel_bf += rows[i].rel_bf * rows[i].count_bf;
          acc[i].dense_n_bf += rows[i].count_bf;
          acc[i].dense_abs_af += rows[i].mae_af * rows[i].count_af;
          acc[i].dense_rel_af += rows[i].rel_af * rows[i].count_af;
          acc[i].dense_n_af += rows[i].count_af;
        }
      }

      if (have_scan && !rec.window.events.empty()) {
        const std::vector<double> nn_depths = options.fast_nn
                                                  ? nn_associate_grid(rec.window, latest)
                                                  : nn_associate(rec.window, latest);
        std::vector<double> aled_bf, aled_af;
        if (have_pred) {
          aled_bf = sample_at_events(pred.d_bf, rec.window);
          aled_af = sample_at_events(pred.d_af, rec.window);
        }
        for (std::size_t i = 0; i < options.cutoffs.size(); ++i) {
          const SparseErrors nn_err = sparse_event_errors(
              rec.window, nn_depths, nn_depths, rec.gt_begin, rec.gt_end, band,
              options.cutoffs[i]);
          acc[i].nn_abs_bf += nn_err.mae_bf * nn_err.count_bf;
          acc[i].nn_n_bf += nn_err.count_bf;
          acc[i].nn_abs_af += nn_err.mae_af * nn_err.count_af;
          acc[i].nn_n_af += nn_err.count_af;
          if (have_pred) {
            const SparseErrors al_err = sparse_event_errors(
                rec.window, aled_bf, aled_af, rec.gt_begin, rec.gt_end, band, options.cutoffs[i]);
            acc[i].aled_abs_bf += al_err.mae_bf * al_err.count_bf;
            acc[i].aled_n_bf += al_err.count_bf;
            acc[i].aled_abs_af += al_err.mae_af * al_err.count_af;
            acc[i].aled_n_af += al_err.count_af;
          }
        }
      }

      if (have_pred && !rec.window.events.empty()) {
        for (std::size_t i = 0; i < options.cutoffs.size(); ++i) {
          const ChangeMetrics cm = depth_change_metrics(pred, rec.gt_begin, rec.gt_end,
                                                        rec.window, options.tau,
                                                        options.cutoffs[i]);
          acc[i].change_abs += cm.mae * cm.count;
          acc[i].change_n += cm.count;
          acc[i].change_correct += std::lround(cm.accuracy * cm.count);
        }
      }
    }

    emit_block(report, "sequence " + seq.name, acc);
    merge_into(total, acc);
  }

  emit_block(report, "aggregate (" + std::to_string(seqs.size()) + " sequences)", total);
  return report.str();
}

}  // namespace aled
