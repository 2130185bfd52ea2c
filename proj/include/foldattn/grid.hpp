#pragma once

// Costing of a grid of encoder configurations (layer-count mixes over one
// shared layer shape) under fitted size / GOPS / power models.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "foldattn/config.hpp"
#include "foldattn/cost_model.hpp"

namespace foldattn {

struct GridRow {
  ModelEntry entry;
  std::optional<std::uint64_t> layer_params;  // exact encoder-layer count, concrete grids only
  double work = 0.0;  // FLOPs/token (concrete) or standard-layer equivalents (abstract)
  ModelCost predicted;
};

struct GridReport {
  bool concrete = false;
  SizeModel size;
  GopsModel gops;
  PowerCoefficients power;
  std::vector<GridRow> rows;

  const GridRow& row(const std::string& id) const {
    for (const auto& r : rows)
      if (r.entry.id == id) return r;
    throw ConfigError("unknown model id '" + id + "'");
  }
};

/// Compute demand of one model: exact FLOPs per token when the layer shape is
/// known, otherwise standard-layer equivalents with a folding layer worth 1/N.
inline double model_work(const ModelDescription& m, const ModelEntry& e) {
  if (!m.concrete())
    return double(e.standard_layers) + double(e.folding_layers) / double(m.folding_factor);
  const auto std_spec = standard_layer_spec(m);
  const auto fold_spec = derive_folding_spec(std_spec, m.folding_factor);
  const std::uint64_t t = m.chunk_size + m.left_context;
  return double(e.standard_layers) * double(flops_per_token(std_spec, t).total()) +
         double(e.folding_layers) * double(flops_per_token(fold_spec, t).total());
}

inline std::uint64_t model_layer_params(const ModelDescription& m, const ModelEntry& e) {
  const auto std_spec = standard_layer_spec(m);
  const auto fold_spec = derive_folding_spec(std_spec, m.folding_factor);
  return e.standard_layers * count_params(std_spec) + e.folding_layers * count_params(fold_spec);
}

namespace detail {
inline const ModelEntry& anchor(const RunConfig& cfg, const std::string& id, const char* what,
                                bool need_size, bool need_gops, bool need_power) {
  const auto& e = cfg.find_model(id);
  if ((need_size && !e.reference.size_m) || (need_gops && !e.reference.gops) ||
      (need_power && !e.reference.power_mw))
    throw ConfigError(std::string(what) + " anchor '" + id + "' lacks reference values");
  return e;
}
}  // namespace detail

inline GridReport evaluate_grid(const RunConfig& cfg) {
  GridReport report;
  report.concrete = cfg.model.concrete();
  if (cfg.models.empty()) return report;

  for (const auto& e : cfg.models) {
    GridRow row{e, std::nullopt, model_work(cfg.model, e), {}};
    if (report.concrete) row.layer_params = model_layer_params(cfg.model, e);
    report.rows.push_back(row);
  }

  if (cfg.cost.coefficients) {
    const auto& c = *cfg.cost.coefficients;
    report.size = {c.base_m, c.per_layer_m, cfg.model.folding_factor};
    report.gops = {c.gops_per_unit, c.base_gops};
    report.power = {c.power_a, c.power_b};
  } else {
    std::vector<SizeRow> size_rows;
    for (const auto& id : cfg.cost.size_anchors) {
      const auto& e = detail::anchor(cfg, id, "size", true, false, false);
      size_rows.push_back({e.standard_layers, e.folding_layers, *e.reference.size_m});
    }
    report.size = fit_size_model(size_rows, cfg.model.folding_factor);

    std::vector<GopsRow> gops_rows;
    for (const auto& id : cfg.cost.gops_anchors) {
      const auto& e = detail::anchor(cfg, id, "GOPS", false, true, false);
      gops_rows.push_back({model_work(cfg.model, e), *e.reference.gops});
    }
    report.gops = fit_gops_model(gops_rows);
  }

  for (auto& row : report.rows) {
    row.predicted.size_m = report.size.predict(row.entry.standard_layers, row.entry.folding_layers);
    row.predicted.gops = report.gops.predict(row.work);
  }

  if (!cfg.cost.coefficients) {
    // Power anchors pair the models' own size/GOPS predictions with the
    // reference power, so anchors are reproduced exactly.
    std::vector<PowerPoint> points;
    for (const auto& id : cfg.cost.power_anchors) {
      detail::anchor(cfg, id, "power", false, false, true);
      const auto& r = report.row(id);
      points.push_back({r.predicted.size_m, r.predicted.gops, *r.entry.reference.power_mw});
    }
    report.power = fit_power_model(points);
  }
  for (auto& row : report.rows)
    row.predicted.power_mw = report.power.predict(row.predicted.size_m, row.predicted.gops);
  return report;
}

struct PairRow {
  std::string candidate;
  std::string baseline;
  ReductionReport predicted;
  std::optional<ReductionReport> reference;  // when both rows carry all three values
};

struct PairSummary {
  std::vector<PairRow> rows;
  double size_min = 0, size_max = 0, power_min = 0, power_max = 0, gops_min = 0, gops_max = 0;
};

inline PairSummary compare_pairs(const GridReport& grid, const std::vector<ModelPair>& pairs) {
  PairSummary out;
  for (const auto& [cand, base] : pairs) {
    const auto& c = grid.row(cand);
    const auto& b = grid.row(base);
    PairRow row{cand, base, compare(c.predicted, b.predicted), std::nullopt};
    const auto& cr = c.entry.reference;
    const auto& br = b.entry.reference;
    if (cr.size_m && cr.gops && cr.power_mw && br.size_m && br.gops && br.power_mw)
      row.reference = compare({*cr.size_m, *cr.gops, *cr.power_mw},
                              {*br.size_m, *br.gops, *br.power_mw});
    out.rows.push_back(row);
  }
  if (!out.rows.empty()) {
    auto range = [&](auto field, double& lo, double& hi) {
      lo = hi = field(out.rows.front());
      for (const auto& r : out.rows) {
        lo = std::min(lo, field(r));
        hi = std::max(hi, field(r));
      }
    };
    range([](const PairRow& r) { return r.predicted.size_pct; }, out.size_min, out.size_max);
    range([](const PairRow& r) { return r.predicted.power_pct; }, out.power_min, out.power_max);
    range([](const PairRow& r) { return r.predicted.gops_pct; }, out.gops_min, out.gops_max);
  }
  return out;
}

}  // namespace foldattn
