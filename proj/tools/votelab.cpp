// votelab command-line interface.
//
// Subcommands: gen-data, train, main, family, sweep, probe, geometry, ood,
// stats, prop1-check, report. Every subcommand accepts --config <file> with
// INI-style keys matching the option names ([data] n=..., [delivery]
// method=...); command-line flags override config values. The output root
// can also come from the VOTELAB_OUT environment variable.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "votelab/harness.hpp"

namespace fs = std::filesystem;
using namespace votelab;

namespace {

void add_data_options(CLI::App* cmd, DataConfig& data) {
    cmd->add_option("--data.n", data.n, "number of examples");
    cmd->add_option("--data.classes", data.num_classes, "class count C");
    cmd->add_option("--data.dim", data.dim, "feature dimension d");
    cmd->add_option("--data.overlap", data.overlap, "cluster spread (controls disagreement)");
    cmd->add_option("--data.votes", data.votes_per_example, "annotator votes per example");
    cmd->add_option("--data.seed", data.data_seed, "dataset generator seed");
    cmd->add_option("--data.layout", data.layout, "cluster layout: circle | simplex");
}

void add_train_options(CLI::App* cmd, TrainConfig& train) {
    cmd->add_option("--train.lr0", train.lr0, "initial learning rate");
    cmd->add_option("--train.momentum", train.momentum, "SGD momentum");
    cmd->add_option("--train.weight_decay", train.weight_decay, "weight decay");
    cmd->add_option("--train.epochs", train.epochs, "training epochs");
    cmd->add_option("--train.batch_size", train.batch_size, "batch size");
    cmd->add_option("--train.eval_frac", train.eval_frac, "held-out fraction");
    cmd->add_option("--train.hidden", train.hidden, "hidden layer widths")->delimiter(',');
    cmd->add_option_function<std::string>(
           "--train.activation",
           [&train](const std::string& s) {
               if (s == "tanh") train.activation = Activation::tanh;
               else if (s == "relu") train.activation = Activation::relu;
               else throw CLI::ValidationError("activation must be tanh or relu");
           },
           "activation: tanh | relu")
        ->default_str("tanh");
}

void add_delivery_options(CLI::App* cmd, DeliveryParams& delivery) {
    cmd->add_option("--delivery.hold_period", delivery.hold_period, "SLS resample interval");
    cmd->add_option("--delivery.smoothing_alpha", delivery.smoothing_alpha,
                    "label smoothing alpha");
    cmd->add_option("--delivery.mixup_alpha", delivery.mixup_alpha, "mixup Beta alpha");
}

void add_grid_options(CLI::App* cmd, ExperimentConfig& cfg, std::vector<std::string>& methods) {
    cmd->add_option("--seeds", cfg.seeds, "run seeds")->delimiter(',');
    cmd->add_option("--methods", methods, "delivery methods (default per experiment)")
        ->delimiter(',');
    cmd->add_option("--out", cfg.out_dir, "output directory")->envname("VOTELAB_OUT");
    cmd->add_flag("--plots", cfg.plots, "emit SVG plots");
    cmd->add_option("--diag-bins", cfg.diag_bins, "sparse-target diagnostic bins");
    cmd->add_option("--eval-bins", cfg.eval_bins, "calibration bins");
    add_data_options(cmd, cfg.data);
    add_train_options(cmd, cfg.train);
    add_delivery_options(cmd, cfg.train.delivery);
    cmd->set_config("--config");
}

int run_grid(ExperimentConfig cfg, ExperimentKind kind, const std::vector<std::string>& methods) {
    cfg.kind = kind;
    for (const auto& m : methods) cfg.methods.push_back(delivery_method_from_string(m));
    const ExperimentResult result = run_experiment(cfg);
    emit_report(result, cfg);
    std::cout << summarize_rows(result.rows);
    std::cout << "wrote "
              << (fs::path(cfg.out_dir) / ("results_" + std::string(to_string(kind)) + ".csv"))
                     .string()
              << "\n";
    int failures = 0;
    for (const auto& r : result.rows)
        if (r.metric == "run_failed") ++failures;
    if (failures > 0) std::cerr << failures << " cell(s) failed; rows recorded\n";
    return 0;
}

Batch soft_batch_of(const Dataset& ds) {
    Batch b;
    b.inputs.resize(ds.dim, static_cast<Eigen::Index>(ds.size()));
    b.targets.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        b.inputs.col(static_cast<Eigen::Index>(i)) = ds.examples[i].x;
        b.targets.push_back(TrainingTarget::soft(ds.examples[i].full_dist.probs));
    }
    return b;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"label-delivery experiments on annotator distributions"};
    app.require_subcommand(1);

    // gen-data -------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic annotator dataset");
    DataConfig gen_data;
    std::string gen_out = "dataset.txt";
    int gen_subsample = 0;
    std::uint64_t gen_subsample_seed = 1;
    add_data_options(gen, gen_data);
    gen->add_option("--subsample-k", gen_subsample,
                    "replace counts with a K-vote multinomial subsample");
    gen->add_option("--subsample-seed", gen_subsample_seed, "seed for the subsample stream");
    gen->add_option("--out", gen_out, "output file");
    gen->set_config("--config");

    // train ------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "run one training cell");
    ExperimentConfig train_cfg;
    std::string train_data_file, train_method = "soft", train_out = "out";
    std::uint64_t train_seed = 1;
    bool train_counts_target = false;
    train_cmd->add_option("--data", train_data_file, "dataset file (generated when omitted)");
    train_cmd->add_option("--method,--delivery.method", train_method, "delivery method");
    train_cmd->add_option("--seed", train_seed, "run seed");
    train_cmd->add_flag("--counts-target", train_counts_target,
                        "train against counts-derived targets");
    train_cmd->add_option("--out", train_out, "output directory")->envname("VOTELAB_OUT");
    add_data_options(train_cmd, train_cfg.data);
    add_train_options(train_cmd, train_cfg.train);
    add_delivery_options(train_cmd, train_cfg.train.delivery);
    train_cmd->set_config("--config");

    // grid experiments ---------------------------------------------------------
    ExperimentConfig main_cfg, family_cfg, sweep_cfg, probe_cfg;
    std::vector<std::string> main_methods, family_methods, sweep_methods, probe_methods;
    auto* main_cmd = app.add_subcommand("main", "main endpoint comparison");
    add_grid_options(main_cmd, main_cfg, main_methods);
    auto* family_cmd = app.add_subcommand("family", "hard-delivery family comparison");
    add_grid_options(family_cmd, family_cfg, family_methods);
    auto* sweep_cmd = app.add_subcommand("sweep", "annotator-count sweep + sparse diagnostic");
    add_grid_options(sweep_cmd, sweep_cfg, sweep_methods);
    sweep_cmd->add_option("--sweep.k", sweep_cfg.sweep_k, "annotator counts")->delimiter(',');
    auto* probe_cmd = app.add_subcommand("probe", "SLS resampling-frequency probe");
    add_grid_options(probe_cmd, probe_cfg, probe_methods);
    probe_cmd->add_option("--probe.holds", probe_cfg.hold_periods, "hold periods")->delimiter(',');

    // geometry -------------------------------------------------------------------
    auto* geo_cmd = app.add_subcommand(
        "geometry", "curvature/barrier report for checkpoints, or the seed grid");
    ExperimentConfig geo_cfg;
    std::vector<std::string> geo_methods;
    std::string geo_ckpt_a, geo_ckpt_b, geo_data_file, geo_split = "full";
    std::uint64_t geo_seed = 1;
    geo_cmd->add_option("--checkpoint", geo_ckpt_a, "checkpoint file (enables checkpoint mode)");
    geo_cmd->add_option("--checkpoint-b", geo_ckpt_b, "second checkpoint for barrier/CKA");
    geo_cmd->add_option("--data", geo_data_file, "dataset file for the loss context");
    geo_cmd->add_option("--split", geo_split, "full | high");
    geo_cmd->add_option("--probe-seed", geo_seed, "seed for power/Hutchinson streams");
    geo_cmd->add_option("--power-iters", geo_cfg.power_iters, "power iteration cap");
    geo_cmd->add_option("--hutchinson-probes", geo_cfg.hutchinson_probes, "trace probes");
    add_grid_options(geo_cmd, geo_cfg, geo_methods);

    // ood --------------------------------------------------------------------------
    auto* ood_cmd = app.add_subcommand(
        "ood", "per-score AUROC for a checkpoint and OOD set, or the seed grid");
    ExperimentConfig ood_cfg;
    std::vector<std::string> ood_methods;
    std::string ood_ckpt, ood_in_file, ood_out_file, ood_train_file;
    std::vector<std::string> ood_scores;
    ood_cmd->add_option("--checkpoint", ood_ckpt, "checkpoint file (enables checkpoint mode)");
    ood_cmd->add_option("--data-in", ood_in_file, "in-distribution dataset file");
    ood_cmd->add_option("--data-out", ood_out_file, "OOD dataset file");
    ood_cmd->add_option("--data-train", ood_train_file,
                        "training dataset for the KNN index (defaults to --data-in)");
    ood_cmd->add_option("--scores", ood_scores, "score types (default all)")->delimiter(',');
    ood_cmd->add_option("--knn-k", ood_cfg.ood.knn_k, "KNN neighbor rank");
    ood_cmd->add_option("--odin-temperature", ood_cfg.ood.odin_temperature, "ODIN temperature");
    ood_cmd->add_option("--odin-epsilon", ood_cfg.ood.odin_epsilon, "ODIN step size");
    add_grid_options(ood_cmd, ood_cfg, ood_methods);

    // stats --------------------------------------------------------------------------
    auto* stats_cmd = app.add_subcommand("stats", "paired Wilcoxon tables from result CSVs");
    std::string stats_results, stats_metric = "soft_nll", stats_baseline = "soft";
    std::string stats_alternative = "two_sided", stats_out;
    stats_cmd->add_option("--results", stats_results, "results CSV")->required();
    stats_cmd->add_option("--metric", stats_metric, "metric column to compare");
    stats_cmd->add_option("--baseline", stats_baseline, "baseline method");
    stats_cmd->add_option("--alternative", stats_alternative, "less | greater | two_sided");
    stats_cmd->add_option("--out", stats_out, "write the table to this file as well");
    stats_cmd->set_config("--config");

    // prop1-check ----------------------------------------------------------------------
    auto* prop1_cmd = app.add_subcommand("prop1-check",
                                         "closed forms vs Monte-Carlo for label sampling");
    std::uint64_t prop1_seed = 7;
    prop1_cmd->add_option("--seed", prop1_seed, "Monte-Carlo seed");

    // report ------------------------------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "re-summarize result CSVs");
    std::string report_results, report_out;
    report_cmd->add_option("--results", report_results, "results CSV")->required();
    report_cmd->add_option("--out", report_out, "write the summary to this file as well");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            Dataset ds = gen_data.make();
            if (gen_subsample > 0) {
                Stream sub(gen_subsample_seed, "subsample",
                           static_cast<std::uint64_t>(gen_subsample));
                ds = subsample_dataset(ds, gen_subsample, sub);
                ds.provenance.emplace_back("subsample_seed", gen_subsample_seed);
                ds.provenance.emplace_back("subsample_k",
                                           static_cast<std::uint64_t>(gen_subsample));
            }
            save_dataset(ds, gen_out);
            std::cout << "wrote " << gen_out << " (" << ds.size() << " examples, C="
                      << ds.num_classes << ", d=" << ds.dim << ")\n";
            return 0;
        }

        if (train_cmd->parsed()) {
            const Dataset ds =
                train_data_file.empty() ? train_cfg.data.make() : load_dataset(train_data_file);
            train_cfg.train.seed = train_seed;
            train_cfg.train.delivery.method = delivery_method_from_string(train_method);
            train_cfg.train.target_source =
                train_counts_target ? TargetSource::counts : TargetSource::full_dist;
            const CellOutcome cell = run_cell(ds, train_cfg.train.delivery.method, train_seed,
                                              train_cfg, train_cfg.train.target_source);
            fs::create_directories(train_out);
            const std::string tag = train_method + "_seed" + std::to_string(train_seed);
            save_run_csv(cell.run, (fs::path(train_out) / ("run_" + tag + ".csv")).string());
            save_checkpoint(cell.run.best_model, train_seed, cell.run.best_epoch,
                            cell.run.best_soft_nll,
                            (fs::path(train_out) / ("best_" + tag + ".ckpt")).string());
            save_checkpoint(cell.run.final_model, train_seed,
                            static_cast<int>(cell.run.history.size()) - 1,
                            cell.run.history.back().eval_soft_nll,
                            (fs::path(train_out) / ("final_" + tag + ".ckpt")).string());
            std::ofstream os(fs::path(train_out) / ("eval_" + tag + ".csv"));
            os << "method,seed," << EvalReport::csv_header() << "\n";
            const EvalReport& r = cell.report;
            os << train_method << "," << train_seed << "," << r.soft_nll << ","
               << r.kl_to_annotator << "," << r.soft_brier << "," << r.hard_acc_all << ","
               << r.ece_eqmass << "," << r.entropy_corr << "," << r.brier_reliability << ","
               << r.brier_resolution << "," << r.brier_uncertainty << "," << r.smooth_ece << ","
               << r.clamped << "\n";
            std::cout << "best epoch " << cell.run.best_epoch << "  eval soft NLL "
                      << cell.run.best_soft_nll << "  hard acc " << r.hard_acc_all << "\n";
            return 0;
        }

        if (main_cmd->parsed()) return run_grid(main_cfg, ExperimentKind::main, main_methods);
        if (family_cmd->parsed())
            return run_grid(family_cfg, ExperimentKind::family, family_methods);
        if (sweep_cmd->parsed()) return run_grid(sweep_cfg, ExperimentKind::sweep, sweep_methods);
        if (probe_cmd->parsed())
            return run_grid(probe_cfg, ExperimentKind::resample_probe, probe_methods);

        if (geo_cmd->parsed()) {
            if (geo_ckpt_a.empty())
                return run_grid(geo_cfg, ExperimentKind::geometry, geo_methods);
            if (geo_data_file.empty())
                throw ConfigError("geometry checkpoint mode needs --data");
            Dataset ds = load_dataset(geo_data_file);
            if (geo_split == "high") {
                const SliceResult slice = high_disagreement_slice(ds);
                if (slice.degenerate)
                    throw ConfigError("geometry: high-disagreement slice is degenerate");
                ds = subset(ds, slice.indices);
            } else if (geo_split != "full") {
                throw ConfigError("geometry: --split must be full or high");
            }
            const Checkpoint ck = load_checkpoint(geo_ckpt_a);
            const Batch batch = soft_batch_of(ds);
            Stream power_rng(geo_seed, "power_cli");
            const PowerIterResult pi = top_eigenvalue(ck.model, batch, geo_cfg.power_iters,
                                                      geo_cfg.power_tol, power_rng);
            Stream trace_rng(geo_seed, "trace_cli");
            const TraceEstimate tr =
                hessian_trace(ck.model, batch, geo_cfg.hutchinson_probes, trace_rng);

            fs::create_directories(geo_cfg.out_dir);
            std::ofstream os(fs::path(geo_cfg.out_dir) / "geometry_report.csv");
            os << "checkpoint,split,lambda_max,power_residual,trace,trace_se,probes";
            const bool pair = !geo_ckpt_b.empty();
            if (pair) os << ",loss_barrier,cka";
            os << "\n";
            os << geo_ckpt_a << "," << geo_split << "," << pi.lambda << "," << pi.residual << ","
               << tr.trace << "," << tr.standard_error << "," << tr.probes;
            if (pair) {
                const Checkpoint ckb = load_checkpoint(geo_ckpt_b);
                const BarrierResult br =
                    loss_barrier(ck.model, ck.model.theta, ckb.model.theta, batch);
                Eigen::MatrixXd fa(static_cast<Eigen::Index>(ds.size()),
                                   ck.model.widths()[ck.model.widths().size() - 2]);
                Eigen::MatrixXd fb = fa;
                for (std::size_t i = 0; i < ds.size(); ++i) {
                    fa.row(static_cast<Eigen::Index>(i)) =
                        forward(ck.model, ds.examples[i].x).features;
                    fb.row(static_cast<Eigen::Index>(i)) =
                        forward(ckb.model, ds.examples[i].x).features;
                }
                os << "," << br.barrier << "," << linear_cka(fa, fb).value;
            }
            os << "\n";
            std::cout << "lambda_max " << pi.lambda << " (residual " << pi.residual << ")  trace "
                      << tr.trace << " ± " << tr.standard_error << "\n";
            return 0;
        }

        if (ood_cmd->parsed()) {
            if (ood_ckpt.empty()) return run_grid(ood_cfg, ExperimentKind::ood, ood_methods);
            if (ood_in_file.empty() || ood_out_file.empty())
                throw ConfigError("ood checkpoint mode needs --data-in and --data-out");
            const Checkpoint ck = load_checkpoint(ood_ckpt);
            const Dataset in_ds = load_dataset(ood_in_file);
            const Dataset out_ds = load_dataset(ood_out_file);
            const Dataset train_ds =
                ood_train_file.empty() ? in_ds : load_dataset(ood_train_file);
            OodParams params = ood_cfg.ood;
            params.odin_feature_scale = mean_feature_std(train_ds);
            const KnnIndex index(ck.model, train_ds, params.knn_k);
            std::vector<OodScoreType> types;
            if (ood_scores.empty()) types = all_ood_score_types();
            else
                for (const auto& s : ood_scores) types.push_back(ood_score_type_from_string(s));

            fs::create_directories(ood_cfg.out_dir);
            std::ofstream os(fs::path(ood_cfg.out_dir) / "ood_report.csv");
            os << "score,auroc\n";
            for (OodScoreType type : types) {
                const auto in_scores = score_dataset(ck.model, in_ds, type, params, &index);
                const auto out_scores = score_dataset(ck.model, out_ds, type, params, &index);
                const double a = auroc(in_scores, out_scores);
                os << to_string(type) << "," << detail::fmt_double(a) << "\n";
                std::cout << to_string(type) << " auroc " << a << "\n";
            }
            return 0;
        }

        if (stats_cmd->parsed()) {
            Alternative alt = Alternative::two_sided;
            if (stats_alternative == "less") alt = Alternative::less;
            else if (stats_alternative == "greater") alt = Alternative::greater;
            else if (stats_alternative != "two_sided")
                throw ConfigError("stats: alternative must be less, greater, or two_sided");
            const auto rows = load_result_csv_file(stats_results);
            const auto cells = compare_to_baseline(rows, stats_metric, stats_baseline, alt);
            write_comparison_table(cells, stats_metric, stats_baseline, std::cout);
            if (!stats_out.empty()) {
                std::ofstream os(stats_out);
                write_comparison_table(cells, stats_metric, stats_baseline, os);
            }
            return 0;
        }

        if (prop1_cmd->parsed()) {
            const bool ok = prop1_check(prop1_seed, std::cout);
            std::cout << (ok ? "all identities within tolerance\n"
                             : "tolerance breach detected\n");
            return ok ? 0 : 1;
        }

        if (report_cmd->parsed()) {
            const auto rows = load_result_csv_file(report_results);
            const std::string summary = summarize_rows(rows);
            std::cout << summary;
            if (!report_out.empty()) {
                std::ofstream os(report_out);
                os << summary;
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
