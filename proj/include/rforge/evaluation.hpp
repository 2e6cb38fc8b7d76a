#pragma once

#include <algorithm>
#include <array>
#include <exception>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rforge/error.hpp"
#include "rforge/models.hpp"
#include "rforge/relevance.hpp"
#include "rforge/volume.hpp"

namespace rforge {

// 2|a ∩ b| / (|a| + |b|); two empty masks score 1.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.dims != b.dims) throw DimensionError("dice: mask dims differ");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    na += a.values[i];
    nb += b.values[i];
    inter += a.values[i] & b.values[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

struct OptimalDice {
  double dsc = 0;
  std::uint32_t k_star = 1;
};

// Best DSC over the nested candidates "ranks 0..k-1", k = 1..B; ties keep
// the smallest k. Uses the ground truth, so it is an upper bound.
inline OptimalDice optimal_threshold_dice(const RelevanceMap& rm, const BinaryMask& truth) {
  if (rm.dims() != truth.dims) throw DimensionError("optimal_threshold_dice: dims differ");
  // Per-rank counts make every candidate O(B).
  std::vector<std::size_t> in_rank(rm.bins, 0), hit_rank(rm.bins, 0);
  std::size_t nt = 0;
  for (std::size_t i = 0; i < rm.ranks.size(); ++i) {
    ++in_rank[rm.ranks[i]];
    hit_rank[rm.ranks[i]] += truth.values[i];
    nt += truth.values[i];
  }
  OptimalDice best{-1.0, 1};
  std::size_t na = 0, inter = 0;
  for (std::uint32_t k = 1; k <= rm.bins; ++k) {
    na += in_rank[k - 1];
    inter += hit_rank[k - 1];
    const double d = na + nt == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nt);
    if (d > best.dsc) best = {d, k};
  }
  return best;
}

// Entry r: DSC of rank r alone against the truth.
inline std::vector<double> ranked_dice_table(const RelevanceMap& rm, const BinaryMask& truth) {
  if (rm.dims() != truth.dims) throw DimensionError("ranked_dice_table: dims differ");
  std::vector<double> out;
  for (std::uint32_t r = 0; r < rm.bins; ++r) out.push_back(dice(top_regions(rm, r), truth));
  return out;
}

// Occlusion baseline: per channel and superpixel, zero that superpixel in
// that channel and score it |y(v) - y(v')|. Scores are painted as-is, summed
// over channels and binned with larger = more relevant.
template <class T>
RelevanceMap blank_perturbation_baseline(const Volume& volume, const ModelParams<T>& classifier,
                                         const RelevanceConfig& cfg, std::size_t batch = 8) {
  cfg.validate();
  const double base = predict(classifier, volume);
  std::vector<Volume> painted;
  std::vector<SuperpixelMap> maps;
  for (std::uint32_t c = 0; c < volume.channels(); ++c) {
    SuperpixelMap sp = slic_segment(minmax_normalize(volume.channel_volume(c)), cfg.slic);
    std::vector<std::vector<std::size_t>> members(sp.count);
    for (std::size_t i = 0; i < sp.labels.size(); ++i) members[sp.labels[i]].push_back(i);
    std::vector<double> score(sp.count, 0.0);
    const std::size_t offset = c * volume.channel_size();
    for (std::size_t s0 = 0; s0 < sp.count; s0 += batch) {
      const std::size_t s1 = std::min<std::size_t>(sp.count, s0 + batch);
      std::vector<Volume> perturbed;
      for (std::size_t s = s0; s < s1; ++s) {
        Volume v = volume;
        for (auto i : members[s]) v.voxels()[offset + i] = 0.0f;
        perturbed.push_back(std::move(v));
      }
      std::vector<const Volume*> ptrs;
      for (const auto& v : perturbed) ptrs.push_back(&v);
      const auto ys = predict_batch(classifier, std::span<const Volume* const>(ptrs));
      for (std::size_t s = s0; s < s1; ++s) score[s] = std::abs(base - ys[s - s0]);
    }
    Volume out(1, volume.dims());
    for (std::size_t i = 0; i < sp.labels.size(); ++i) out.voxels()[i] = static_cast<float>(score[sp.labels[i]]);
    painted.push_back(std::move(out));
    maps.push_back(std::move(sp));
  }
  RelevanceMap rm = bin_ranks(combine_sequences(painted), cfg.bins, false);
  rm.painted = std::move(painted);
  rm.superpixels = std::move(maps);
  return rm;
}

// ---------------------------------------------------------------------------
// Dataset evaluation and reports.

inline constexpr const char* kMethodOurs = "ours";
inline constexpr const char* kMethodBlank = "blank";

struct EvalCase {
  std::string id;
  Volume volume;  // preprocessed
  BinaryMask truth;
};

struct CaseResult {
  std::string case_id;
  std::string method;
  bool ok = true;
  std::string error;
  double dsc_optimal = 0;
  std::uint32_t k_star = 0;
  std::vector<double> dsc_rank;
};

struct MethodSummary {
  std::string method;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double dsc_optimal = 0;
  double k_star = 0;
  std::vector<double> dsc_rank;
};

struct EvalReport {
  std::uint32_t bins = 0;
  std::vector<CaseResult> rows;  // case order, "ours" before "blank"
  std::vector<MethodSummary> summary;

  const MethodSummary& method(const std::string& name) const {
    for (const auto& s : summary)
      if (s.method == name) return s;
    throw UsageError("no summary for method " + name);
  }
};

inline CaseResult score_relevance(const std::string& id, const std::string& method, const RelevanceMap& rm,
                                  const BinaryMask& truth) {
  CaseResult r;
  r.case_id = id;
  r.method = method;
  const auto best = optimal_threshold_dice(rm, truth);
  r.dsc_optimal = best.dsc;
  r.k_star = best.k_star;
  r.dsc_rank = ranked_dice_table(rm, truth);
  return r;
}

inline CaseResult failed_row(const std::string& id, const std::string& method, const Error& e) {
  CaseResult r;
  r.case_id = id;
  r.method = method;
  r.ok = false;
  r.error = e.category();
  return r;
}

// Means per method over successful rows, in first-appearance method order.
inline std::vector<MethodSummary> summarize(const std::vector<CaseResult>& rows, std::uint32_t bins) {
  std::vector<MethodSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](auto& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method, 0, 0, 0, 0, std::vector<double>(bins, 0.0)});
      it = out.end() - 1;
    }
    if (!r.ok) {
      ++it->failures;
      continue;
    }
    ++it->cases;
    it->dsc_optimal += r.dsc_optimal;
    it->k_star += r.k_star;
    for (std::uint32_t b = 0; b < bins; ++b) it->dsc_rank[b] += r.dsc_rank[b];
  }
  for (auto& s : out) {
    if (s.cases == 0) continue;
    const double n = static_cast<double>(s.cases);
    s.dsc_optimal /= n;
    s.k_star /= n;
    for (auto& v : s.dsc_rank) v /= n;
  }
  return out;
}

// Both methods on every case. Degenerate relevance maps become failed rows.
// workers > 1 spreads cases over threads; rows stay in case order.
template <class T>
EvalReport evaluate_dataset(const std::vector<EvalCase>& cases, const ModelParams<T>& generator,
                            const ModelParams<T>& classifier, const RelevanceConfig& cfg,
                            unsigned workers = 1) {
  cfg.validate();
  if (cases.empty()) throw SpecError("evaluate_dataset needs at least one case");
  std::vector<std::array<CaseResult, 2>> results(cases.size());
  const auto run = [&](std::size_t i) {
    const EvalCase& ec = cases[i];
    try {
      const RelevanceMap rm = generate_relevance(ec.volume, generate_mask(generator, ec.volume), cfg);
      results[i][0] = score_relevance(ec.id, kMethodOurs, rm, ec.truth);
    } catch (const DegenerateMapError& e) {
      results[i][0] = failed_row(ec.id, kMethodOurs, e);
    }
    try {
      const RelevanceMap rm = blank_perturbation_baseline(ec.volume, classifier, cfg);
      results[i][1] = score_relevance(ec.id, kMethodBlank, rm, ec.truth);
    } catch (const DegenerateMapError& e) {
      results[i][1] = failed_row(ec.id, kMethodBlank, e);
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(cases.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < cases.size(); i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  EvalReport report;
  report.bins = cfg.bins;
  for (auto& pair : results)
    for (auto& r : pair) report.rows.push_back(std::move(r));
  report.summary = summarize(report.rows, cfg.bins);
  return report;
}

namespace detail {
inline std::string fixed6(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << x;
  return os.str();
}
}  // namespace detail

// TSV: case_id, method, dsc_optimal, k_star, dsc_rank_0..B-1; then one
// "MEAN" row per method. Failed rows carry NA values.
inline void write_report_tsv(const EvalReport& rep, std::ostream& os) {
  os << "case_id\tmethod\tdsc_optimal\tk_star";
  for (std::uint32_t b = 0; b < rep.bins; ++b) os << "\tdsc_rank_" << b;
  os << "\n";
  for (const auto& r : rep.rows) {
    os << r.case_id << '\t' << r.method;
    if (!r.ok) {
      os << "\tNA\tNA";
      for (std::uint32_t b = 0; b < rep.bins; ++b) os << "\tNA";
    } else {
      os << '\t' << detail::fixed6(r.dsc_optimal) << '\t' << r.k_star;
      for (double d : r.dsc_rank) os << '\t' << detail::fixed6(d);
    }
    os << "\n";
  }
  for (const auto& s : rep.summary) {
    os << "MEAN\t" << s.method << '\t' << detail::fixed6(s.dsc_optimal) << '\t' << detail::fixed6(s.k_star);
    for (double d : s.dsc_rank) os << '\t' << detail::fixed6(d);
    os << "\n";
  }
}

// Aligned text tables: mean optimal-threshold DSC per method, then mean DSC
// per rank (ranks printed 1-based).
inline void print_report_table(const EvalReport& rep, std::ostream& os, std::uint32_t ranks_shown = 3) {
  os << "Average DSC (best rank grouping)\n";
  os << std::left << std::setw(10) << "method" << std::setw(8) << "cases" << std::setw(10) << "failed"
     << "dsc\n";
  for (const auto& s : rep.summary)
    os << std::left << std::setw(10) << s.method << std::setw(8) << s.cases << std::setw(10) << s.failures
       << detail::fixed6(s.dsc_optimal).substr(0, 6) << "\n";
  os << "\nAverage DSC on ranked regions\n" << std::left << std::setw(6) << "rank";
  for (const auto& s : rep.summary) os << std::setw(10) << s.method;
  os << "\n";
  for (std::uint32_t r = 0; r < std::min(ranks_shown, rep.bins); ++r) {
    os << std::left << std::setw(6) << r + 1;
    for (const auto& s : rep.summary) os << std::setw(10) << detail::fixed6(s.dsc_rank[r]).substr(0, 6);
    os << "\n";
  }
}

}  // namespace rforge
