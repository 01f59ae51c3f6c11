#pragma once

// Scoring and loss kernels for structural embedding training. Every kernel
// comes as a serial reference (`*_serial`) and an OpenMP variant
// (`*_parallel`). The parallel variants reduce in the same order as the
// serial ones, so results agree bitwise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "kopa/kge.hpp"

namespace kopa::kernels {

enum class Role : std::uint8_t { head, relation, tail };

/// cos/sin of every RotatE phase, laid out per relation as [cos row | sin row].
/// Empty for the other families.
struct PhaseTrig {
  std::vector<double> values;
  std::size_t width = 0;

  const double* row(RelationId r) const { return values.empty() ? nullptr : values.data() + r * 2 * width; }
};

template <typename Real>
PhaseTrig phase_trig(const TableView<Real>& tables) {
  PhaseTrig pt;
  if (tables.family != ScoreFamily::RotatE) return pt;
  pt.width = tables.d_r;
  pt.values.resize(tables.relation.size() * 2);
  for (std::size_t r = 0; r < tables.num_relations(); ++r) {
    auto row = tables.relation_row(RelationId(r));
    double* out = pt.values.data() + r * 2 * pt.width;
    for (std::size_t k = 0; k < pt.width; ++k) {
      out[k] = std::cos(double(row[k]));
      out[pt.width + k] = std::sin(double(row[k]));
    }
  }
  return pt;
}

template <typename Real>
double score_rows(ScoreFamily family, std::span<const Real> h, std::span<const Real> r,
                  std::span<const Real> t, const double* trig = nullptr) {
  const std::size_t d = h.size();
  double f = 0.0;
  switch (family) {
    case ScoreFamily::TransE:
      for (std::size_t i = 0; i < d; ++i) f += std::abs(double(h[i]) + double(r[i]) - double(t[i]));
      return f;
    case ScoreFamily::DistMult:
      for (std::size_t i = 0; i < d; ++i) f += double(h[i]) * double(r[i]) * double(t[i]);
      return -f;
    case ScoreFamily::ComplEx: {
      const std::size_t n = d / 2;
      for (std::size_t k = 0; k < n; ++k) {
        double hr = h[k], hi = h[n + k], rr = r[k], ri = r[n + k], tr = t[k], ti = t[n + k];
        f += (hr * rr - hi * ri) * tr + (hr * ri + hi * rr) * ti;
      }
      return -f;
    }
    case ScoreFamily::RotatE: {
      const std::size_t n = d / 2;
      for (std::size_t k = 0; k < n; ++k) {
        double c = trig ? trig[k] : std::cos(double(r[k]));
        double s = trig ? trig[n + k] : std::sin(double(r[k]));
        double hr = h[k], hi = h[n + k];
        double dr = hr * c - hi * s - double(t[k]);
        double di = hr * s + hi * c - double(t[n + k]);
        f += std::sqrt(dr * dr + di * di);
      }
      return f;
    }
  }
  return f;
}

/// out += coef * dF/d(role row).
template <typename Real>
void accumulate_score_grad(ScoreFamily family, Role role, std::span<const Real> h,
                           std::span<const Real> r, std::span<const Real> t, double coef,
                           std::span<double> out, const double* trig = nullptr) {
  const std::size_t d = h.size();
  switch (family) {
    case ScoreFamily::TransE: {
      const double sign = role == Role::tail ? -coef : coef;
      for (std::size_t i = 0; i < d; ++i) {
        double x = double(h[i]) + double(r[i]) - double(t[i]);
        if (x > 0) out[i] += sign;
        else if (x < 0) out[i] -= sign;
      }
      return;
    }
    case ScoreFamily::DistMult:
      for (std::size_t i = 0; i < d; ++i) {
        double g = role == Role::head       ? double(r[i]) * double(t[i])
                   : role == Role::relation ? double(h[i]) * double(t[i])
                                            : double(h[i]) * double(r[i]);
        out[i] -= coef * g;
      }
      return;
    case ScoreFamily::ComplEx: {
      // F = -sum hr(rr tr + ri ti) + hi(rr ti - ri tr)
      const std::size_t n = d / 2;
      for (std::size_t k = 0; k < n; ++k) {
        double hr = h[k], hi = h[n + k], rr = r[k], ri = r[n + k], tr = t[k], ti = t[n + k];
        double gre = 0, gim = 0;
        switch (role) {
          case Role::head:
            gre = rr * tr + ri * ti;
            gim = rr * ti - ri * tr;
            break;
          case Role::relation:
            gre = hr * tr + hi * ti;
            gim = hr * ti - hi * tr;
            break;
          case Role::tail:
            gre = hr * rr - hi * ri;
            gim = hr * ri + hi * rr;
            break;
        }
        out[k] -= coef * gre;
        out[n + k] -= coef * gim;
      }
      return;
    }
    case ScoreFamily::RotatE: {
      const std::size_t n = d / 2;
      for (std::size_t k = 0; k < n; ++k) {
        double c = trig ? trig[k] : std::cos(double(r[k]));
        double s = trig ? trig[n + k] : std::sin(double(r[k]));
        double hr = h[k], hi = h[n + k];
        double dr = hr * c - hi * s - double(t[k]);
        double di = hr * s + hi * c - double(t[n + k]);
        double m = std::sqrt(dr * dr + di * di);
        if (m == 0.0) continue;
        double ur = coef * dr / m, ui = coef * di / m;
        switch (role) {
          case Role::head:
            out[k] += ur * c + ui * s;
            out[n + k] += -ur * s + ui * c;
            break;
          case Role::relation:
            // d(rot)/dtheta = (-hr s - hi c, hr c - hi s)
            out[k] += ur * (-hr * s - hi * c) + ui * (hr * c - hi * s);
            break;
          case Role::tail:
            out[k] -= ur;
            out[n + k] -= ui;
            break;
        }
      }
      return;
    }
  }
}

template <typename Real>
double score_triple(const TableView<Real>& tables, const Triple& t, const PhaseTrig* trig = nullptr) {
  return score_rows<Real>(tables.family, tables.entity_row(t.head), tables.relation_row(t.relation),
                          tables.entity_row(t.tail), trig ? trig->row(t.relation) : nullptr);
}

template <typename Real>
void score_batch_serial(const TableView<Real>& tables, std::span<const Triple> triples,
                        std::span<double> out) {
  const auto trig = phase_trig(tables);
  for (std::size_t i = 0; i < triples.size(); ++i) out[i] = score_triple(tables, triples[i], &trig);
}

template <typename Real>
void score_batch_parallel(const TableView<Real>& tables, std::span<const Triple> triples,
                          std::span<double> out) {
  const auto trig = phase_trig(tables);
  const auto n = static_cast<long long>(triples.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) out[i] = score_triple(tables, triples[i], &trig);
}

/// Loss value plus dL/dF for every triple of the batch, laid out as
/// [pos_0, neg_0_0..neg_0_{K-1}, pos_1, ...].
struct BatchLoss {
  double loss = 0.0;
  std::vector<Triple> triples;
  std::vector<double> scores;
  std::vector<double> coef;
  std::vector<double> weights;  // B x K adversarial weights actually used
};

/// -log(sigmoid(x)) without overflow.
inline double neg_log_sigmoid(double x) {
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// out_i = softmax_i(-alpha * scores_i), max-shifted.
inline void adversarial_softmax(std::span<const double> scores, double alpha, std::span<double> out) {
  double peak = -alpha * scores[0];
  for (double f : scores) peak = std::max(peak, -alpha * f);
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (out[i] = std::exp(-alpha * scores[i] - peak));
  for (double& w : out) w /= z;
}

namespace detail {

inline std::vector<Triple> flatten(const NegativeBatch& batch) {
  std::vector<Triple> out;
  out.reserve(batch.positives.size() * (batch.k + 1));
  for (std::size_t j = 0; j < batch.positives.size(); ++j) {
    out.push_back(batch.positives[j]);
    for (const auto& n : batch.negatives_of(j)) out.push_back(n);
  }
  return out;
}

// Per-positive loss term; fills coef/weights slots of positive j.
inline double positive_term(std::size_t j, std::size_t k, double gamma, double alpha,
                            double inv_b, const std::vector<double>* fixed_weights,
                            BatchLoss& bl) {
  const std::size_t base = j * (k + 1);
  const double f_pos = bl.scores[base];
  double term = neg_log_sigmoid(gamma - f_pos);
  bl.coef[base] = sigmoid(f_pos - gamma) * inv_b;

  double* w = bl.weights.data() + j * k;
  if (fixed_weights) {
    for (std::size_t i = 0; i < k; ++i) w[i] = (*fixed_weights)[j * k + i];
  } else {
    adversarial_softmax(std::span<const double>(bl.scores).subspan(base + 1, k), alpha,
                        std::span<double>(w, k));
  }
  for (std::size_t i = 0; i < k; ++i) {
    const double f = bl.scores[base + 1 + i];
    term += w[i] * neg_log_sigmoid(f - gamma);
    bl.coef[base + 1 + i] = -w[i] * sigmoid(gamma - f) * inv_b;
  }
  return term;
}

}  // namespace detail

template <typename Real>
BatchLoss loss_serial(const TableView<Real>& tables, const NegativeBatch& batch, double gamma,
                      double alpha, const std::vector<double>* fixed_weights = nullptr) {
  BatchLoss bl;
  const std::size_t b = batch.positives.size(), k = batch.k;
  bl.triples = detail::flatten(batch);
  bl.scores.resize(bl.triples.size());
  bl.coef.resize(bl.triples.size());
  bl.weights.resize(b * k);
  score_batch_serial(tables, std::span<const Triple>(bl.triples), std::span<double>(bl.scores));
  const double inv_b = b ? 1.0 / double(b) : 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    bl.loss += detail::positive_term(j, k, gamma, alpha, inv_b, fixed_weights, bl);
  }
  bl.loss *= inv_b;
  return bl;
}

template <typename Real>
BatchLoss loss_parallel(const TableView<Real>& tables, const NegativeBatch& batch, double gamma,
                        double alpha, const std::vector<double>* fixed_weights = nullptr) {
  BatchLoss bl;
  const std::size_t b = batch.positives.size(), k = batch.k;
  bl.triples = detail::flatten(batch);
  bl.scores.resize(bl.triples.size());
  bl.coef.resize(bl.triples.size());
  bl.weights.resize(b * k);
  score_batch_parallel(tables, std::span<const Triple>(bl.triples), std::span<double>(bl.scores));
  const double inv_b = b ? 1.0 / double(b) : 0.0;
  std::vector<double> terms(b);
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < static_cast<long long>(b); ++j) {
    terms[j] = detail::positive_term(std::size_t(j), k, gamma, alpha, inv_b, fixed_weights, bl);
  }
  for (double t : terms) bl.loss += t;  // fixed order
  bl.loss *= inv_b;
  return bl;
}

/// Gradient restricted to touched rows. Row lists are ascending; `*_grad`
/// holds one row of width d_e (d_r) per listed row.
struct SparseGrad {
  std::vector<std::uint32_t> entity_rows;
  std::vector<double> entity_grad;
  std::vector<std::uint32_t> relation_rows;
  std::vector<double> relation_grad;
};

namespace detail {

struct RowIndex {
  std::vector<std::uint32_t> rows;    // ascending touched rows
  std::vector<std::uint32_t> offset;  // CSR offsets into entries, rows.size()+1
  std::vector<std::uint32_t> entries;  // triple index << 2 | role
};

inline std::uint32_t pack(std::size_t triple, Role role) {
  return static_cast<std::uint32_t>(triple << 2) | static_cast<std::uint32_t>(role);
}

// Entries per row keep triple order (head before tail within a triple), the
// same order in which the serial kernel accumulates.
inline RowIndex build_index(std::span<const Triple> triples, bool entities) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(triples.size() * 2);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (entities) {
      pairs.emplace_back(t.head, pack(i, Role::head));
      pairs.emplace_back(t.tail, pack(i, Role::tail));
    } else {
      pairs.emplace_back(t.relation, pack(i, Role::relation));
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  RowIndex idx;
  idx.entries.reserve(pairs.size());
  for (const auto& [row, entry] : pairs) {
    if (idx.rows.empty() || idx.rows.back() != row) {
      idx.rows.push_back(row);
      idx.offset.push_back(static_cast<std::uint32_t>(idx.entries.size()));
    }
    idx.entries.push_back(entry);
  }
  idx.offset.push_back(static_cast<std::uint32_t>(idx.entries.size()));
  return idx;
}

template <typename Real>
void accumulate_entry(const TableView<Real>& tables, const PhaseTrig& trig, std::span<const Triple> triples,
                      std::span<const double> coef, std::uint32_t entry, std::span<double> out) {
  const std::size_t i = entry >> 2;
  const auto role = static_cast<Role>(entry & 3u);
  const auto& t = triples[i];
  accumulate_score_grad<Real>(tables.family, role, tables.entity_row(t.head),
                              tables.relation_row(t.relation), tables.entity_row(t.tail), coef[i],
                              out, trig.row(t.relation));
}

template <typename Real>
void fill_rows(const TableView<Real>& tables, const PhaseTrig& trig, std::span<const Triple> triples,
               std::span<const double> coef, const RowIndex& idx, std::size_t width,
               std::vector<double>& grad, bool parallel) {
  grad.assign(idx.rows.size() * width, 0.0);
  auto one_row = [&](std::size_t s) {
    std::span<double> out(grad.data() + s * width, width);
    for (auto e = idx.offset[s]; e < idx.offset[s + 1]; ++e) {
      accumulate_entry(tables, trig, triples, coef, idx.entries[e], out);
    }
  };
  const auto n = static_cast<long long>(idx.rows.size());
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (long long s = 0; s < n; ++s) one_row(std::size_t(s));
  } else {
    for (long long s = 0; s < n; ++s) one_row(std::size_t(s));
  }
}

}  // namespace detail

/// Reference: one pass over triples, scattering into touched rows.
template <typename Real>
SparseGrad gradient_serial(const TableView<Real>& tables, std::span<const Triple> triples,
                           std::span<const double> coef) {
  SparseGrad g;
  auto ent = detail::build_index(triples, true);
  auto rel = detail::build_index(triples, false);
  g.entity_rows = ent.rows;
  g.relation_rows = rel.rows;
  g.entity_grad.assign(ent.rows.size() * tables.d_e, 0.0);
  g.relation_grad.assign(rel.rows.size() * tables.d_r, 0.0);
  const auto trig = phase_trig(tables);
  auto slot = [](const std::vector<std::uint32_t>& rows, std::uint32_t r) {
    return std::size_t(std::lower_bound(rows.begin(), rows.end(), r) - rows.begin());
  };
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    auto h = tables.entity_row(t.head), r = tables.relation_row(t.relation),
         tl = tables.entity_row(t.tail);
    auto sh = slot(g.entity_rows, t.head), st = slot(g.entity_rows, t.tail),
         sr = slot(g.relation_rows, t.relation);
    const double* tr = trig.row(t.relation);
    accumulate_score_grad<Real>(tables.family, Role::head, h, r, tl, coef[i],
                                std::span<double>(g.entity_grad).subspan(sh * tables.d_e, tables.d_e), tr);
    accumulate_score_grad<Real>(tables.family, Role::tail, h, r, tl, coef[i],
                                std::span<double>(g.entity_grad).subspan(st * tables.d_e, tables.d_e), tr);
    accumulate_score_grad<Real>(
        tables.family, Role::relation, h, r, tl, coef[i],
        std::span<double>(g.relation_grad).subspan(sr * tables.d_r, tables.d_r), tr);
  }
  return g;
}

/// Row-owner reduction: each touched row is summed by one thread, walking its
/// contributions in triple order.
template <typename Real>
SparseGrad gradient_parallel(const TableView<Real>& tables, std::span<const Triple> triples,
                             std::span<const double> coef) {
  SparseGrad g;
  auto ent = detail::build_index(triples, true);
  auto rel = detail::build_index(triples, false);
  const auto trig = phase_trig(tables);
  detail::fill_rows(tables, trig, triples, coef, ent, tables.d_e, g.entity_grad, true);
  detail::fill_rows(tables, trig, triples, coef, rel, tables.d_r, g.relation_grad, true);
  g.entity_rows = std::move(ent.rows);
  g.relation_rows = std::move(rel.rows);
  return g;
}

}  // namespace kopa::kernels
