// Config-driven experiment grid at desk scale: main endpoint comparison,
// hard-delivery family comparison, annotator-count sweep with the
// sparse-target diagnostic, resampling-frequency probe, geometry pass, OOD
// pass, label-sampling identity check, and report emission.
//
// Pairing contract: every method cell with the same seed derives its split,
// initialization, batch order, and (in the sweep) subsampled counts from the
// same named streams, so per-seed differences between methods are paired.
// The whole result tree is a pure function of the config; reruns produce
// byte-identical CSVs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "votelab/dataset.hpp"
#include "votelab/delivery.hpp"
#include "votelab/error.hpp"
#include "votelab/geometry.hpp"
#include "votelab/metrics.hpp"
#include "votelab/mlp.hpp"
#include "votelab/ood.hpp"
#include "votelab/plot.hpp"
#include "votelab/stats.hpp"
#include "votelab/theory.hpp"
#include "votelab/train.hpp"

namespace votelab {

enum class ExperimentKind { main, family, sweep, resample_probe, geometry, ood, prop1 };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::main: return "main";
        case ExperimentKind::family: return "family";
        case ExperimentKind::sweep: return "sweep";
        case ExperimentKind::resample_probe: return "probe";
        case ExperimentKind::geometry: return "geometry";
        case ExperimentKind::ood: return "ood";
        case ExperimentKind::prop1: return "prop1";
    }
    return "?";
}

struct DataConfig {
    int n = 1200;
    int num_classes = 4;
    int dim = 8;
    double overlap = 0.9;
    int votes_per_example = 50;
    std::uint64_t data_seed = 1;
    std::string layout = "circle";  // circle | simplex

    Eigen::MatrixXd means(double angle_offset = 0.0) const {
        if (layout == "simplex") {
            Eigen::MatrixXd m = simplex_cluster_means(num_classes, dim);
            if (angle_offset != 0.0) {
                // rotate each center within its (e_k, e_{k+1 mod C}) plane
                for (int k = 0; k < num_classes; ++k) {
                    const int j = (k + 1) % num_classes;
                    const double r = m(k, k);
                    m(k, k) = r * std::cos(angle_offset);
                    m(k, j) += r * std::sin(angle_offset);
                }
            }
            return m;
        }
        if (layout != "circle") throw ConfigError("data layout must be circle or simplex");
        return default_cluster_means(num_classes, dim, angle_offset);
    }

    Dataset make() const {
        return make_cluster_task(means(), n, overlap, votes_per_example, data_seed);
    }
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::main;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<int> sweep_k = {5, 10, 25, 50};
    std::vector<int> hold_periods = {1, 5, 10, 50};
    std::vector<DeliveryMethod> methods;  // empty selects the per-kind default
    DataConfig data;
    TrainConfig train;
    std::string out_dir = "out";
    int diag_bins = 5;   // sparse-target diagnostic bins (equal mass)
    int eval_bins = 15;  // ECE / Brier bins
    double smooth_bandwidth = 0.05;
    int power_iters = 300;
    double power_tol = 1e-6;
    int hutchinson_probes = 300;
    int gradvar_draws = 400;
    OodParams ood;
    bool plots = false;

    std::vector<DeliveryMethod> methods_for(ExperimentKind k) const {
        if (!methods.empty()) return methods;
        switch (k) {
            case ExperimentKind::main:
                return {DeliveryMethod::soft, DeliveryMethod::sls, DeliveryMethod::majority,
                        DeliveryMethod::label_smoothing, DeliveryMethod::mixup};
            case ExperimentKind::family:
                return {DeliveryMethod::soft, DeliveryMethod::sls, DeliveryMethod::multipass,
                        DeliveryMethod::deterministic_control, DeliveryMethod::shuffled_sls};
            case ExperimentKind::sweep:
                return {DeliveryMethod::soft, DeliveryMethod::multipass,
                        DeliveryMethod::deterministic_control, DeliveryMethod::sls};
            default:
                return {DeliveryMethod::soft, DeliveryMethod::sls};
        }
    }
};

struct ResultRow {
    std::string experiment;
    std::string method;
    std::uint64_t seed = 0;
    long k = -1;  // annotator count in the sweep, hold period in the probe,
                  // partner seed for cka_within rows, -1 elsewhere
    std::string metric;
    double value = 0.0;
};

struct DiagRow {
    std::string variant;  // js | l1 | js_high
    std::string method;
    std::uint64_t seed = 0;
    int k = 0;
    int bin = 0;
    double mean_gap = 0.0;
    double mean_improvement = 0.0;
    int count = 0;
};

struct ExperimentResult {
    ExperimentKind kind = ExperimentKind::main;
    std::vector<ResultRow> rows;
    std::vector<DiagRow> diagnostics;
};

// --- single training cell ----------------------------------------------------

struct CellOutcome {
    RunRecord run;
    Dataset eval_split;
    Eigen::MatrixXd eval_preds;    // C x N_eval at the best checkpoint
    Eigen::MatrixXd eval_targets;  // full distributions
    EvalReport report;
};

inline Eigen::MatrixXd predict_columns(const Mlp& m, const Dataset& ds) {
    Eigen::MatrixXd x(ds.dim, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i)
        x.col(static_cast<Eigen::Index>(i)) = ds.examples[i].x;
    return detail::forward_trace(m, x).q;
}

inline Eigen::MatrixXd target_columns(const Dataset& ds) {
    Eigen::MatrixXd t(ds.num_classes, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i)
        t.col(static_cast<Eigen::Index>(i)) = ds.examples[i].full_dist.probs;
    return t;
}

inline CellOutcome run_cell(const Dataset& ds, DeliveryMethod method, std::uint64_t seed,
                            const ExperimentConfig& cfg, TargetSource source) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.delivery.method = method;
    tc.target_source = source;

    CellOutcome cell;
    cell.run = train_run(ds, tc);
    cell.eval_split = subset(ds, cell.run.eval_idx);
    cell.eval_preds = predict_columns(cell.run.best_model, cell.eval_split);
    cell.eval_targets = target_columns(cell.eval_split);
    cell.report = compute_eval_report(cell.eval_preds, cell.eval_targets, cfg.eval_bins,
                                      cfg.smooth_bandwidth);
    return cell;
}

inline void emit_eval_rows(std::vector<ResultRow>& rows, const std::string& experiment,
                           const std::string& method, std::uint64_t seed, long k,
                           const CellOutcome& cell) {
    const EvalReport& r = cell.report;
    auto put = [&](const std::string& metric, double value) {
        rows.push_back({experiment, method, seed, k, metric, value});
    };
    put("soft_nll", r.soft_nll);
    put("kl_to_annotator", r.kl_to_annotator);
    put("soft_brier", r.soft_brier);
    put("hard_acc_all", r.hard_acc_all);
    put("ece_eqmass", r.ece_eqmass);
    put("entropy_corr", r.entropy_corr);
    put("smooth_ece", r.smooth_ece);
    put("brier_reliability", r.brier_reliability);
    put("brier_resolution", r.brier_resolution);
    put("brier_uncertainty", r.brier_uncertainty);
    put("best_epoch", cell.run.best_epoch);
    const auto e95 = epochs_to_fraction(cell.run.history, 0.95);
    put("epochs_to_95", e95 ? static_cast<double>(*e95) : -1.0);
}

// --- experiments --------------------------------------------------------------

inline ExperimentResult run_main(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::main;
    const Dataset ds = cfg.data.make();
    for (std::uint64_t seed : cfg.seeds) {
        for (DeliveryMethod method : cfg.methods_for(ExperimentKind::main)) {
            try {
                const CellOutcome cell = run_cell(ds, method, seed, cfg, TargetSource::full_dist);
                emit_eval_rows(res.rows, "main", to_string(method), seed, -1, cell);
            } catch (const std::exception&) {
                res.rows.push_back({"main", to_string(method), seed, -1, "run_failed", 1.0});
            }
        }
    }
    return res;
}

inline ExperimentResult run_family(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::family;
    const Dataset ds = cfg.data.make();
    for (std::uint64_t seed : cfg.seeds) {
        for (DeliveryMethod method : cfg.methods_for(ExperimentKind::family)) {
            try {
                const CellOutcome cell = run_cell(ds, method, seed, cfg, TargetSource::full_dist);
                emit_eval_rows(res.rows, "family", to_string(method), seed, -1, cell);
            } catch (const std::exception&) {
                res.rows.push_back({"family", to_string(method), seed, -1, "run_failed", 1.0});
            }
        }
    }
    return res;
}

namespace detail {

// Per-example cross-entropy of each prediction column against its target.
inline std::vector<double> per_example_nll(const Eigen::MatrixXd& preds,
                                           const Eigen::MatrixXd& targets) {
    std::vector<double> nll(static_cast<std::size_t>(preds.cols()), 0.0);
    for (Eigen::Index j = 0; j < preds.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index kk = 0; kk < preds.rows(); ++kk) {
            const double p = targets(kk, j);
            if (p <= 0.0) continue;
            s -= p * std::log(std::max(preds(kk, j), 1e-12));
        }
        nll[static_cast<std::size_t>(j)] = s;
    }
    return nll;
}

// Equal-mass bin assignment by ascending value; the leading n % bins bins
// take one extra member.
inline std::vector<int> equal_mass_bins(const std::vector<double>& values, int bins) {
    const std::size_t n = values.size();
    if (static_cast<std::size_t>(bins) > n) bins = static_cast<int>(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<int> assignment(n, 0);
    const std::size_t base = n / static_cast<std::size_t>(bins);
    const std::size_t extra = n % static_cast<std::size_t>(bins);
    std::size_t pos = 0;
    for (int b = 0; b < bins; ++b) {
        const std::size_t count = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
        for (std::size_t j = 0; j < count; ++j) assignment[order[pos++]] = b;
    }
    return assignment;
}

}  // namespace detail

inline ExperimentResult run_sweep(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::sweep;
    if (cfg.sweep_k.empty()) throw ConfigError("sweep: K list must be non-empty");
    const Dataset base = cfg.data.make();
    const auto methods = cfg.methods_for(ExperimentKind::sweep);

    for (int k_votes : cfg.sweep_k) {
        for (std::uint64_t seed : cfg.seeds) {
            // Independent multinomial draw per K, coupled to the run seed.
            Stream sub(seed, "subsample", static_cast<std::uint64_t>(k_votes));
            const Dataset dsk = subsample_dataset(base, k_votes, sub);

            std::map<std::string, CellOutcome> cells;
            for (DeliveryMethod method : methods) {
                try {
                    cells.emplace(to_string(method),
                                  run_cell(dsk, method, seed, cfg, TargetSource::counts));
                    emit_eval_rows(res.rows, "sweep", to_string(method), seed, k_votes,
                                   cells.at(to_string(method)));
                } catch (const std::exception&) {
                    res.rows.push_back(
                        {"sweep", to_string(method), seed, k_votes, "run_failed", 1.0});
                }
            }
            const auto soft_it = cells.find("soft");
            if (soft_it == cells.end()) continue;
            const CellOutcome& soft_cell = soft_it->second;
            const auto nll_soft =
                detail::per_example_nll(soft_cell.eval_preds, soft_cell.eval_targets);

            // Sparse-target gaps on the shared eval split.
            const Dataset& eval_ds = soft_cell.eval_split;
            std::vector<double> js_gap(eval_ds.size()), l1_gap(eval_ds.size());
            for (std::size_t i = 0; i < eval_ds.size(); ++i) {
                const AnnotatorDistribution phat = counts_to_distribution(*eval_ds.examples[i].counts);
                js_gap[i] = js_distance(phat, eval_ds.examples[i].full_dist);
                l1_gap[i] = l1_distance(phat, eval_ds.examples[i].full_dist);
            }
            const SliceResult slice = high_disagreement_slice(eval_ds);

            for (const auto& [name, cell] : cells) {
                if (name == "soft") continue;
                const auto nll_hard = detail::per_example_nll(cell.eval_preds, cell.eval_targets);
                std::vector<double> improvement(nll_soft.size());
                for (std::size_t i = 0; i < nll_soft.size(); ++i)
                    improvement[i] = nll_soft[i] - nll_hard[i];  // positive favors hard delivery

                auto emit_variant = [&](const std::string& variant, const std::vector<double>& gap,
                                        const std::vector<std::size_t>& keep) {
                    if (keep.size() < 2) return;
                    std::vector<double> g, imp;
                    g.reserve(keep.size());
                    imp.reserve(keep.size());
                    for (std::size_t i : keep) {
                        g.push_back(gap[i]);
                        imp.push_back(improvement[i]);
                    }
                    const auto bins = detail::equal_mass_bins(g, cfg.diag_bins);
                    const int nb = 1 + *std::max_element(bins.begin(), bins.end());
                    std::vector<double> gs(static_cast<std::size_t>(nb), 0.0);
                    std::vector<double> is(static_cast<std::size_t>(nb), 0.0);
                    std::vector<int> cnt(static_cast<std::size_t>(nb), 0);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const auto b = static_cast<std::size_t>(bins[i]);
                        gs[b] += g[i];
                        is[b] += imp[i];
                        cnt[b] += 1;
                    }
                    for (int b = 0; b < nb; ++b) {
                        const auto bi = static_cast<std::size_t>(b);
                        if (cnt[bi] == 0) continue;
                        res.diagnostics.push_back({variant, name, seed, k_votes, b,
                                                   gs[bi] / cnt[bi], is[bi] / cnt[bi], cnt[bi]});
                    }
                    const SpearmanResult sr = spearman(g, imp);
                    res.rows.push_back({"sweep", name, seed, k_votes,
                                        "spearman_" + variant + "_improvement",
                                        sr.defined ? sr.rho : 0.0});
                };

                std::vector<std::size_t> all_idx(eval_ds.size());
                std::iota(all_idx.begin(), all_idx.end(), std::size_t{0});
                emit_variant("js", js_gap, all_idx);
                emit_variant("l1", l1_gap, all_idx);
                if (!slice.degenerate) emit_variant("js_high", js_gap, slice.indices);
            }
        }
    }
    return res;
}

inline ExperimentResult run_resample_probe(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::resample_probe;
    if (cfg.hold_periods.empty()) throw ConfigError("probe: hold period list must be non-empty");
    const Dataset ds = cfg.data.make();
    for (int hold : cfg.hold_periods) {
        for (std::uint64_t seed : cfg.seeds) {
            ExperimentConfig cell_cfg = cfg;
            cell_cfg.train.delivery.hold_period = hold;
            try {
                const CellOutcome cell =
                    run_cell(ds, DeliveryMethod::sls, seed, cell_cfg, TargetSource::full_dist);
                emit_eval_rows(res.rows, "probe", "sls", seed, hold, cell);
            } catch (const std::exception&) {
                res.rows.push_back({"probe", "sls", seed, hold, "run_failed", 1.0});
            }
        }
    }
    return res;
}

inline ExperimentResult run_geometry(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::geometry;
    const Dataset ds = cfg.data.make();
    const auto methods = cfg.methods_for(ExperimentKind::geometry);

    struct Trained {
        DeliveryMethod method;
        std::uint64_t seed;
        CellOutcome cell;
    };
    std::vector<Trained> trained;

    for (std::uint64_t seed : cfg.seeds) {
        for (DeliveryMethod method : methods) {
            CellOutcome cell = run_cell(ds, method, seed, cfg, TargetSource::full_dist);
            emit_eval_rows(res.rows, "geometry", to_string(method), seed, -1, cell);
            trained.push_back({method, seed, std::move(cell)});
        }
    }

    auto soft_batch = [&](const Dataset& split) {
        Batch b;
        b.inputs = detail::input_matrix(split);
        b.targets.reserve(split.size());
        for (const auto& ex : split.examples)
            b.targets.push_back(TrainingTarget::soft(ex.full_dist.probs));
        return b;
    };

    for (const Trained& t : trained) {
        const std::string method = to_string(t.method);
        const Mlp& model = t.cell.run.best_model;
        const Batch full = soft_batch(t.cell.eval_split);

        Stream power_rng(t.seed, "power_" + method);
        const PowerIterResult pi =
            top_eigenvalue(model, full, cfg.power_iters, cfg.power_tol, power_rng);
        Stream trace_rng(t.seed, "trace_" + method);
        const TraceEstimate tr = hessian_trace(model, full, cfg.hutchinson_probes, trace_rng);
        res.rows.push_back({"geometry", method, t.seed, -1, "lambda_max_full", pi.lambda});
        res.rows.push_back({"geometry", method, t.seed, -1, "power_residual_full", pi.residual});
        res.rows.push_back({"geometry", method, t.seed, -1, "trace_full", tr.trace});
        res.rows.push_back({"geometry", method, t.seed, -1, "trace_se_full", tr.standard_error});

        const SliceResult slice = high_disagreement_slice(t.cell.eval_split);
        if (!slice.degenerate && slice.indices.size() >= 2) {
            const Batch high = soft_batch(subset(t.cell.eval_split, slice.indices));
            Stream power_rng_h(t.seed, "power_high_" + method);
            const PowerIterResult pih =
                top_eigenvalue(model, high, cfg.power_iters, cfg.power_tol, power_rng_h);
            Stream trace_rng_h(t.seed, "trace_high_" + method);
            const TraceEstimate trh = hessian_trace(model, high, cfg.hutchinson_probes, trace_rng_h);
            res.rows.push_back({"geometry", method, t.seed, -1, "lambda_max_high", pih.lambda});
            res.rows.push_back({"geometry", method, t.seed, -1, "power_residual_high", pih.residual});
            res.rows.push_back({"geometry", method, t.seed, -1, "trace_high", trh.trace});
            res.rows.push_back({"geometry", method, t.seed, -1, "trace_se_high", trh.standard_error});
        }

        Stream gv_rng(t.seed, "gradvar_" + method);
        const GradientVarianceProbe gv =
            gradient_variance_probe(model, t.cell.eval_split, cfg.gradvar_draws, gv_rng);
        res.rows.push_back({"geometry", method, t.seed, -1, "gradvar_spearman",
                            gv.spearman_vs_entropy});
    }

    // Cross-method loss barriers on the full-dataset soft loss. Same-seed
    // pairs share their initialization stream (the bit-identity contract), so
    // they tend to land in one basin; the barrier diagnostic therefore pairs
    // each run with the other method's run at the NEXT seed in the list,
    // giving independently initialized endpoints. The same-seed (shared-init)
    // barrier is also recorded.
    {
        const Batch full_batch = soft_batch(ds);
        auto find_cell = [&](DeliveryMethod m, std::uint64_t s) -> const Trained* {
            for (const Trained& t : trained)
                if (t.method == m && t.seed == s) return &t;
            return nullptr;
        };
        for (std::size_t a = 0; a + 1 < methods.size(); ++a) {
            for (std::size_t b = a + 1; b < methods.size(); ++b) {
                const std::string pair =
                    std::string(to_string(methods[a])) + "_vs_" + to_string(methods[b]);
                for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
                    const std::uint64_t s0 = cfg.seeds[si];
                    const std::uint64_t s1 = cfg.seeds[(si + 1) % cfg.seeds.size()];
                    const Trained* ta = find_cell(methods[a], s0);
                    const Trained* tb_cross = find_cell(methods[b], s1);
                    const Trained* tb_same = find_cell(methods[b], s0);
                    if (ta == nullptr || tb_cross == nullptr || tb_same == nullptr) continue;
                    const BarrierResult cross =
                        loss_barrier(ta->cell.run.best_model, ta->cell.run.best_model.theta,
                                     tb_cross->cell.run.best_model.theta, full_batch);
                    res.rows.push_back(
                        {"geometry", pair, s0, static_cast<long>(s1), "loss_barrier", cross.barrier});
                    const BarrierResult same =
                        loss_barrier(ta->cell.run.best_model, ta->cell.run.best_model.theta,
                                     tb_same->cell.run.best_model.theta, full_batch);
                    res.rows.push_back({"geometry", pair, s0, static_cast<long>(s0),
                                        "loss_barrier_shared_init", same.barrier});
                }
            }
        }
    }

    // Within-method representation similarity across seed pairs, on the full
    // dataset inputs (split-independent). The k column holds the partner seed.
    for (DeliveryMethod method : methods) {
        std::vector<const Trained*> of_method;
        for (const Trained& t : trained)
            if (t.method == method) of_method.push_back(&t);
        if (of_method.size() < 2) continue;
        std::vector<Eigen::MatrixXd> feats;
        feats.reserve(of_method.size());
        for (const Trained* t : of_method) {
            Eigen::MatrixXd f(static_cast<Eigen::Index>(ds.size()),
                              t->cell.run.best_model.widths()[t->cell.run.best_model.widths().size() - 2]);
            for (std::size_t i = 0; i < ds.size(); ++i)
                f.row(static_cast<Eigen::Index>(i)) =
                    forward(t->cell.run.best_model, ds.examples[i].x).features;
            feats.push_back(std::move(f));
        }
        for (std::size_t a = 0; a < of_method.size(); ++a)
            for (std::size_t b = a + 1; b < of_method.size(); ++b) {
                const CkaResult cka = linear_cka(feats[a], feats[b]);
                res.rows.push_back({"geometry", to_string(method), of_method[a]->seed,
                                    static_cast<long>(of_method[b]->seed), "cka_within",
                                    cka.value});
            }
    }
    return res;
}

// Far-OOD stand-in: one synthetic cluster placed through the layout's
// central hole, offset along the last (class-uninformative) feature axis so
// that it sits at least 10 spreads from every training mean. Sitting between
// the classes keeps far points out of the network's confident extrapolation
// cones, which a plain along-axis shift would land in.
inline Dataset make_far_ood_set(const DataConfig& dc, int n) {
    const Eigen::MatrixXd means = dc.means();
    const int last = dc.dim - 1;
    for (int k = 0; k < dc.num_classes; ++k)
        if (means(k, last) != 0.0)
            throw ConfigError("far OOD set needs a class-uninformative last dimension (raise d)");
    double r = std::numeric_limits<double>::infinity();
    for (int k = 0; k < dc.num_classes; ++k) r = std::min(r, means.row(k).norm());
    const double target = 10.0 * dc.overlap;
    const double alpha = target > r ? std::sqrt(target * target - r * r) : 0.0;
    Eigen::MatrixXd far = Eigen::MatrixXd::Zero(dc.num_classes, dc.dim);
    far.col(last).array() = alpha;
    return make_cluster_task(far, n, dc.overlap, 1, dc.data_seed + 101);
}

inline ExperimentResult run_ood(const ExperimentConfig& cfg) {
    ExperimentResult res;
    res.kind = ExperimentKind::ood;
    const Dataset ds = cfg.data.make();
    const DataConfig& dc = cfg.data;

    // Far OOD: the whole cluster layout shifted by 10 spreads along the first
    // feature axis. Near OOD: the layout rotated halfway between classes.
    const int n_ood = std::max(2, static_cast<int>(std::llround(
                                      cfg.train.eval_frac * static_cast<double>(dc.n))));
    const Dataset far_ds = make_far_ood_set(dc, n_ood);
    const double near_offset =
        dc.dim == 1 ? 0.5 : M_PI / static_cast<double>(dc.num_classes);
    const Dataset near_ds =
        make_cluster_task(dc.means(near_offset), n_ood, dc.overlap, 1, dc.data_seed + 202);

    for (std::uint64_t seed : cfg.seeds) {
        for (DeliveryMethod method : cfg.methods_for(ExperimentKind::ood)) {
            const CellOutcome cell = run_cell(ds, method, seed, cfg, TargetSource::full_dist);
            const Mlp& model = cell.run.best_model;
            const Dataset train_split = subset(ds, cell.run.train_idx);

            OodParams params = cfg.ood;
            params.odin_feature_scale = mean_feature_std(train_split);
            const KnnIndex index(model, train_split, params.knn_k);

            for (OodScoreType type : all_ood_score_types()) {
                const auto in_scores =
                    score_dataset(model, cell.eval_split, type, params, &index);
                const auto far_scores = score_dataset(model, far_ds, type, params, &index);
                const auto near_scores = score_dataset(model, near_ds, type, params, &index);
                res.rows.push_back({"ood", to_string(method), seed, -1,
                                    std::string("auroc_far_") + to_string(type),
                                    auroc(in_scores, far_scores)});
                res.rows.push_back({"ood", to_string(method), seed, -1,
                                    std::string("auroc_near_") + to_string(type),
                                    auroc(in_scores, near_scores)});
            }
        }
    }
    return res;
}

// --- Proposition-1 check -------------------------------------------------------

// Closed forms against Monte-Carlo estimates; prints one line per identity
// and returns overall success.
inline bool prop1_check(std::uint64_t seed, std::ostream& os) {
    bool ok = true;
    auto report = [&](const std::string& name, double closed, double mc, double err, double tol) {
        const bool pass = err <= tol;
        ok = ok && pass;
        os << (pass ? "[pass] " : "[FAIL] ") << name << ": closed=" << closed << " mc=" << mc
           << " err=" << err << " tol=" << tol << "\n";
    };

    const int c = 6;
    Stream rng(seed, "prop1");
    Eigen::VectorXd p(c), z(c);
    for (int k = 0; k < c; ++k) p[k] = rng.gamma(1.0);
    p /= p.sum();
    for (int k = 0; k < c; ++k) z[k] = rng.gaussian();
    Eigen::VectorXd q = (z.array() - z.maxCoeff()).exp();
    q /= q.sum();

    {  // E[grad] = q - p, componentwise within 4 SE over 1e5 draws
        const int n = 100000;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
        Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(c);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd g = q;
            g[rng.categorical(p)] -= 1.0;
            sum += g;
            sumsq += g.cwiseAbs2();
        }
        const Eigen::VectorXd mean = sum / n;
        const Eigen::VectorXd closed = expected_logit_grad(q, p);
        double max_sigmas = 0.0;
        for (int k = 0; k < c; ++k) {
            const double var = (sumsq[k] - sum[k] * sum[k] / n) / (n - 1);
            const double se = std::sqrt(std::max(var, 1e-30) / n);
            max_sigmas = std::max(max_sigmas, std::abs(mean[k] - closed[k]) / se);
        }
        report("expected_logit_grad (max |dev|/SE)", 0.0, 0.0, max_sigmas, 4.0);
    }
    {  // Cov[grad] = Diag(p) - pp^T, Frobenius relative error over 1e6 draws
        const int n = 1000000;
        Eigen::VectorXd freq = Eigen::VectorXd::Zero(c);
        for (int i = 0; i < n; ++i) freq[rng.categorical(p)] += 1.0;
        freq /= static_cast<double>(n);
        const Eigen::MatrixXd mc_cov =
            (static_cast<double>(n) / (n - 1)) *
            (Eigen::MatrixXd(freq.asDiagonal()) - freq * freq.transpose());
        const Eigen::MatrixXd closed = logit_grad_covariance(p);
        const double rel = (mc_cov - closed).norm() / closed.norm();
        report("logit_grad_covariance (Frobenius rel)", closed.norm(), mc_cov.norm(), rel, 0.02);
    }
    {  // E||q-e_y||^2 within 3 SE over 1e5 draws
        const int n = 100000;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd g = q;
            g[rng.categorical(p)] -= 1.0;
            const double s = g.squaredNorm();
            sum += s;
            sumsq += s * s;
        }
        const double mean = sum / n;
        const double se = std::sqrt(((sumsq - sum * sum / n) / (n - 1)) / n);
        const double closed = expected_grad_sqnorm(q, p);
        report("expected_grad_sqnorm (|dev|/SE)", closed, mean, std::abs(mean - closed) / se, 3.0);
    }
    {  // parameter-space covariance on a tiny model, Frobenius rel error
        Mlp tiny({3, 4, c});
        Stream init(seed, "prop1_init");
        tiny.init_params(init);
        Eigen::VectorXd x(3);
        for (int j = 0; j < 3; ++j) x[j] = init.gaussian();
        const Eigen::MatrixXd jac = logit_jacobian(tiny, x);
        const Eigen::MatrixXd closed = param_grad_covariance(jac, p);

        const int n = 100000;
        const auto pc = static_cast<Eigen::Index>(tiny.param_count());
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(pc);
        Eigen::MatrixXd second = Eigen::MatrixXd::Zero(pc, pc);
        for (int i = 0; i < n; ++i) {
            Batch b;
            b.inputs = x;
            b.targets.push_back(TrainingTarget::hard(rng.categorical(p)));
            const Eigen::VectorXd g = loss_and_grad(tiny, b).second;
            mean += g;
            second += g * g.transpose();
        }
        mean /= static_cast<double>(n);
        const Eigen::MatrixXd mc_cov =
            (second - static_cast<double>(n) * mean * mean.transpose()) / (n - 1);
        const double rel = (mc_cov - closed).norm() / closed.norm();
        report("param_grad_covariance (Frobenius rel)", closed.norm(), mc_cov.norm(), rel, 0.05);
    }
    {  // trace identity, exact
        const double lhs = logit_grad_covariance(p).trace();
        const double rhs = 1.0 - p.squaredNorm();
        report("trace(Diag(p)-pp^T) = 1-||p||^2", rhs, lhs, std::abs(lhs - rhs), 1e-12);
        const double sq = expected_grad_sqnorm(q, p) - (q - p).squaredNorm();
        report("sqnorm variance term = trace", lhs, sq, std::abs(sq - lhs), 1e-12);
    }
    return ok;
}

// --- report emission -----------------------------------------------------------

inline std::string format_mean_sd(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double sd = 0.0;
    if (values.size() > 1) {
        for (double v : values) sd += (v - mean) * (v - mean);
        sd = std::sqrt(sd / static_cast<double>(values.size() - 1));
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, sd);
    return buf;
}

inline void write_result_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
    os << "experiment,method,seed,k,metric,value\n";
    for (const auto& r : rows)
        os << r.experiment << "," << r.method << "," << r.seed << "," << r.k << "," << r.metric
           << "," << detail::fmt_double(r.value) << "\n";
}

inline std::vector<ResultRow> load_result_csv(std::istream& is) {
    std::vector<ResultRow> rows;
    std::string line;
    if (!std::getline(is, line) || line != "experiment,method,seed,k,metric,value")
        throw InvalidInput("load_result_csv: bad header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ResultRow r;
        std::string field;
        std::getline(ss, r.experiment, ',');
        std::getline(ss, r.method, ',');
        std::getline(ss, field, ',');
        r.seed = std::stoull(field);
        std::getline(ss, field, ',');
        r.k = std::stol(field);
        std::getline(ss, r.metric, ',');
        std::getline(ss, field, ',');
        r.value = std::stod(field);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<ResultRow> load_result_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("load_result_csv: cannot open " + path);
    return load_result_csv(is);
}

inline void write_diagnostic_csv(const std::vector<DiagRow>& rows, std::ostream& os) {
    os << "variant,method,seed,k,bin,mean_gap,mean_improvement,count\n";
    for (const auto& r : rows)
        os << r.variant << "," << r.method << "," << r.seed << "," << r.k << "," << r.bin << ","
           << detail::fmt_double(r.mean_gap) << "," << detail::fmt_double(r.mean_improvement)
           << "," << r.count << "\n";
}

// Long-form summary: metric / method / k cells aggregated across seeds.
inline std::string summarize_rows(const std::vector<ResultRow>& rows) {
    std::map<std::tuple<std::string, std::string, long>, std::vector<double>> grouped;
    for (const auto& r : rows) grouped[{r.metric, r.method, r.k}].push_back(r.value);
    std::ostringstream os;
    os << "metric, method, k, mean ± sd (n)\n";
    for (const auto& [key, values] : grouped) {
        const auto& [metric, method, k] = key;
        os << metric << ", " << method << ", " << k << ", " << format_mean_sd(values) << " ("
           << values.size() << ")\n";
    }
    return os.str();
}

inline void emit_plots(const ExperimentResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    auto series_by_method = [&](const std::string& metric) {
        std::map<std::string, std::map<long, std::vector<double>>> acc;
        for (const auto& r : result.rows)
            if (r.metric == metric) acc[r.method][r.k].push_back(r.value);
        std::vector<PlotSeries> out;
        for (const auto& [method, by_k] : acc) {
            PlotSeries s;
            s.label = method;
            for (const auto& [k, vals] : by_k) {
                double mean = 0.0;
                for (double v : vals) mean += v;
                s.x.push_back(static_cast<double>(k));
                s.y.push_back(mean / static_cast<double>(vals.size()));
            }
            out.push_back(std::move(s));
        }
        return out;
    };
    if (result.kind == ExperimentKind::sweep) {
        write_svg_line_plot((fs::path(out_dir) / "sweep_soft_nll.svg").string(),
                            "Annotator-count sweep", "annotations per example K",
                            "eval soft NLL (vs full)", series_by_method("soft_nll"));
        // seed-averaged diagnostic: improvement per gap bin
        std::map<std::string, std::map<int, std::pair<double, int>>> diag;
        for (const auto& d : result.diagnostics)
            if (d.variant == "js") {
                auto& cell = diag[d.method][d.bin];
                cell.first += d.mean_improvement;
                cell.second += 1;
            }
        std::vector<PlotSeries> ds;
        for (const auto& [method, bins] : diag) {
            PlotSeries s;
            s.label = method;
            for (const auto& [bin, acc] : bins) {
                s.x.push_back(bin);
                s.y.push_back(acc.first / acc.second);
            }
            ds.push_back(std::move(s));
        }
        write_svg_line_plot((fs::path(out_dir) / "sweep_diagnostic_js.svg").string(),
                            "Sparse-target diagnostic", "JS-gap bin (low to high)",
                            "hard-delivery improvement", ds);
    }
    if (result.kind == ExperimentKind::resample_probe) {
        write_svg_line_plot((fs::path(out_dir) / "probe_soft_nll.svg").string(),
                            "Resampling-frequency probe", "hold period (epochs)",
                            "eval soft NLL", series_by_method("soft_nll"));
    }
}

// Writes results_<kind>.csv, summary_<kind>.txt, the sweep diagnostic CSV,
// and optional SVG plots under out_dir.
inline void emit_report(const ExperimentResult& result, const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const std::string kind = to_string(result.kind);
    {
        std::ofstream os(fs::path(cfg.out_dir) / ("results_" + kind + ".csv"));
        write_result_csv(result.rows, os);
    }
    {
        std::ofstream os(fs::path(cfg.out_dir) / ("summary_" + kind + ".txt"));
        os << summarize_rows(result.rows);
    }
    if (!result.diagnostics.empty()) {
        std::ofstream os(fs::path(cfg.out_dir) / ("diagnostic_" + kind + ".csv"));
        write_diagnostic_csv(result.diagnostics, os);
    }
    if (cfg.plots) emit_plots(result, cfg.out_dir);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::main: return run_main(cfg);
        case ExperimentKind::family: return run_family(cfg);
        case ExperimentKind::sweep: return run_sweep(cfg);
        case ExperimentKind::resample_probe: return run_resample_probe(cfg);
        case ExperimentKind::geometry: return run_geometry(cfg);
        case ExperimentKind::ood: return run_ood(cfg);
        case ExperimentKind::prop1: break;
    }
    throw ConfigError("run_experiment: prop1 runs through prop1_check");
}

// --- paired comparison tables ---------------------------------------------------

struct ComparisonCell {
    std::string method;
    long k = -1;
    int n = 0;
    double mean_diff = 0.0;  // method - baseline
    int n_negative = 0;      // seeds where method < baseline
    int n_positive = 0;
    double p_raw = 1.0;
    double p_holm = 1.0;
};

// Pairs every non-baseline method against the baseline on one metric, per K
// cell, with the Holm family spanning all cells of the invocation.
inline std::vector<ComparisonCell> compare_to_baseline(const std::vector<ResultRow>& rows,
                                                       const std::string& metric,
                                                       const std::string& baseline,
                                                       Alternative alternative) {
    std::map<std::tuple<std::string, long, std::uint64_t>, double> values;
    std::set<std::pair<std::string, long>> cells;
    std::set<std::uint64_t> seeds;
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        values[{r.method, r.k, r.seed}] = r.value;
        seeds.insert(r.seed);
        if (r.method != baseline) cells.insert({r.method, r.k});
    }
    std::vector<ComparisonCell> out;
    std::vector<double> raw;
    for (const auto& [method, k] : cells) {
        ComparisonCell cell;
        cell.method = method;
        cell.k = k;
        std::vector<double> diffs;
        for (std::uint64_t s : seeds) {
            const auto mit = values.find({method, k, s});
            const auto bit = values.find({baseline, k, s});
            if (mit == values.end() || bit == values.end()) continue;
            const double d = mit->second - bit->second;
            diffs.push_back(d);
            cell.mean_diff += d;
            if (d < 0.0) ++cell.n_negative;
            if (d > 0.0) ++cell.n_positive;
        }
        if (diffs.empty()) continue;
        cell.n = static_cast<int>(diffs.size());
        cell.mean_diff /= cell.n;
        cell.p_raw = wilcoxon_signed_rank(diffs, alternative).p;
        raw.push_back(cell.p_raw);
        out.push_back(std::move(cell));
    }
    const auto adjusted = holm_correct(raw);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].p_holm = adjusted[i];
    return out;
}

inline void write_comparison_table(const std::vector<ComparisonCell>& cells,
                                   const std::string& metric, const std::string& baseline,
                                   std::ostream& os) {
    os << "# paired comparison vs " << baseline << " on " << metric << "\n";
    os << "method,k,n,mean_diff,n_method_lower,n_method_higher,p_raw,p_holm\n";
    int perfect = 0;
    for (const auto& c : cells) {
        os << c.method << "," << c.k << "," << c.n << "," << detail::fmt_double(c.mean_diff) << ","
           << c.n_negative << "," << c.n_positive << "," << detail::fmt_double(c.p_raw) << ","
           << detail::fmt_double(c.p_holm) << "\n";
        if (c.n_negative == c.n || c.n_positive == c.n) ++perfect;
    }
    os << "# " << perfect << " of " << cells.size()
       << " cells have all paired seeds agreeing on direction\n";
}

}  // namespace votelab
