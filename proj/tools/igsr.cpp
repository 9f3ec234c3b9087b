// igsr: batch symbolic-regression discovery driver.
//
// Subcommands: run, simulate, stress, eval, replay-record. Exit codes:
//   0 success, 2 usage error, 3 config error, 4 data/file error, 5 run error.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "igsr/config.hpp"
#include "igsr/http_client.hpp"
#include "igsr/metrics.hpp"
#include "igsr/report.hpp"
#include "igsr/search.hpp"
#include "igsr/simgen.hpp"
#include "igsr/stress.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitRun = 5;

std::shared_ptr<igsr::CompletionBackend> make_backend(const igsr::RunConfig& cfg,
                                                      const igsr::Dataset& data,
                                                      std::shared_ptr<igsr::BudgetMeter> meter) {
    if (cfg.proposer.kind == "grammar")
        return std::make_shared<igsr::GrammarProposer>(data, cfg.proposer.grammar);
    if (cfg.proposer.kind == "replay")
        return std::make_shared<igsr::ReplayBackend>(cfg.proposer.transcript, meter);
    return std::make_shared<igsr::LlmBackend>(cfg.proposer.llm, meter);
}

void write_timing(const fs::path& dir, double seconds) {
    ordered_json j;
    j["wall_seconds"] = seconds;
    std::ofstream out(dir / "timing.json", std::ios::binary);
    out << j.dump(2) << '\n';
}

// Executes run_search for one seed and writes the result files into out_dir.
igsr::RunReport run_one_seed(igsr::RunConfig cfg, std::uint64_t seed, const fs::path& out_dir,
                             const std::string& record_transcript) {
    fs::create_directories(out_dir);
    const auto start = std::chrono::steady_clock::now();

    igsr::Dataset data = igsr::make_dataset(cfg, seed);
    auto meter = std::make_shared<igsr::BudgetMeter>(cfg.proposer.llm.token_budget);
    std::shared_ptr<igsr::CompletionBackend> backend = make_backend(cfg, data, meter);
    std::shared_ptr<igsr::TranscriptRecorder> recorder;
    if (!record_transcript.empty()) {
        recorder = std::make_shared<igsr::TranscriptRecorder>(backend, record_transcript);
        backend = recorder;
    }

    cfg.search.seed = seed;
    std::string description =
        cfg.description.empty() ? igsr::build_default_description(data) : cfg.description;
    igsr::RunReport report = igsr::run_search(data, cfg.search, *backend, meter, description);

    igsr::write_trace_jsonl(report, (out_dir / "trace.jsonl").string());
    igsr::write_summary_json(report, seed, (out_dir / "summary.json").string());
    igsr::write_best_equation(report, (out_dir / "best_equation.txt").string());
    {
        std::ofstream out(out_dir / "config.effective.toml", std::ios::binary);
        out << igsr::serialize_config(cfg);
    }
    if (recorder) recorder->save();

    const auto stop = std::chrono::steady_clock::now();
    write_timing(out_dir, std::chrono::duration<double>(stop - start).count());
    return report;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed_override,
            const std::string& out, int jobs_override, const std::string& record_transcript) {
    igsr::RunConfig cfg = igsr::load_config(config_path);
    if (jobs_override > 0) cfg.search.jobs = jobs_override;
    std::vector<std::uint64_t> seeds =
        seed_override ? std::vector<std::uint64_t>{*seed_override} : cfg.seeds;

    for (std::uint64_t seed : seeds) {
        fs::path dir = seeds.size() == 1 ? fs::path(out)
                                         : fs::path(out) / ("seed_" + std::to_string(seed));
        std::string transcript = record_transcript;
        if (!transcript.empty() && seeds.size() > 1)
            transcript = (dir / "transcript.jsonl").string();
        igsr::RunReport report = run_one_seed(cfg, seed, dir, transcript);
        std::cout << "seed " << seed << ": " << report.status
                  << "  best=" << report.best_node_id
                  << "  val_mse=" << igsr::format_shortest(report.best_val_mse)
                  << "  test_mse=" << igsr::format_shortest(report.best_test_mse) << "\n";
        std::cout << report.best_equation << "\n";
        if (report.children_created == 0) {
            std::cerr << "error: no equation was discovered";
            if (!report.warnings.empty()) std::cerr << " (" << report.warnings.front() << ")";
            std::cerr << "\n";
            return kExitRun;
        }
    }
    return 0;
}

int cmd_simulate(const std::string& kind, const std::string& variant, int synthetic_variant,
                 std::size_t patients, std::uint64_t seed, std::size_t distractors,
                 const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    igsr::Dataset data;
    ordered_json manifest;
    manifest["kind"] = kind;
    manifest["patients"] = patients;
    manifest["seed"] = seed;
    manifest["distractor_features"] = distractors;
    if (kind == "pkpd") {
        igsr::PkpdVariant v = igsr::detail::pkpd_variant_from_name(variant);
        data = igsr::simulate_pkpd(v, patients, igsr::PkpdParams{}, seed);
        manifest["variant"] = variant;
        ordered_json gt;
        for (const auto& target : data.target_names()) {
            ordered_json terms = ordered_json::array();
            for (const auto& t : igsr::pkpd_ground_truth_terms(v, target)) terms.push_back(t);
            gt[target] = terms;
        }
        manifest["ground_truth_terms"] = gt;
    } else {
        igsr::SyntheticSpec spec;
        spec.variant = synthetic_variant;
        data = igsr::simulate_synthetic_variant(spec, patients, seed);
        manifest["variant"] = synthetic_variant;
        ordered_json params;
        params["gamma"] = spec.gamma;
        params["omega"] = spec.omega;
        params["delta"] = spec.delta;
        params["n_max"] = spec.n_max;
        params["eps"] = spec.eps;
        params["phi"] = spec.phi;
        params["theta"] = spec.theta;
        manifest["synthetic_params"] = params;
        manifest["note"] = "synthetic modification parameters are artifact defaults chosen for "
                           "well-conditioned data";
    }
    igsr::PkpdParams p;
    ordered_json base;
    base["growth_rate"] = p.growth_rate;
    base["carrying_capacity"] = p.carrying_capacity;
    base["radio_linear"] = p.radio_linear;
    base["radio_quadratic"] = p.radio_quadratic;
    base["chemo_kill"] = p.chemo_kill;
    base["max_diameter"] = p.max_diameter;
    base["chemo_bolus"] = p.chemo_bolus;
    base["radio_fraction"] = p.radio_fraction;
    base["horizon"] = p.horizon;
    manifest["pkpd_params"] = base;

    if (distractors > 0)
        data = igsr::add_distractor_features(data, distractors,
                                             igsr::derive_seed(seed, "distractors"));
    igsr::save_table(data, (dir / "data.csv").string());
    std::ofstream mo(dir / "manifest.json", std::ios::binary);
    mo << manifest.dump(2) << '\n';
    std::cout << "wrote " << (dir / "data.csv").string() << " (" << data.rows() << " rows)\n";
    return 0;
}

int cmd_stress_collinearity(const std::vector<double>& rhos, int seeds, std::size_t patients,
                            const std::string& influence, const std::string& out) {
    igsr::InfluenceVariant v = igsr::detail::influence_from_name(influence);
    std::ofstream csv;
    if (!out.empty()) {
        fs::create_directories(fs::path(out));
        csv.open(fs::path(out) / "collinearity_recall.csv", std::ios::binary);
        csv << "rho,seed,groups_covered,duplicate_groups,test_mse,kept\n";
    }
    bool all_ok = true;
    for (double rho : rhos) {
        int full_recall = 0;
        for (int s = 0; s < seeds; ++s) {
            auto trial = igsr::run_collinearity_trial(rho, static_cast<std::uint64_t>(s),
                                                      patients, v);
            if (trial.groups_covered == 6 && trial.duplicate_groups == 0) ++full_recall;
            if (csv.is_open()) {
                std::string kept;
                for (const auto& k : trial.kept) kept += (kept.empty() ? "" : "; ") + k;
                csv << igsr::format_shortest(rho) << ',' << s << ',' << trial.groups_covered
                    << ',' << trial.duplicate_groups << ','
                    << igsr::format_shortest(trial.test_mse) << ",\"" << kept << "\"\n";
            }
        }
        std::cout << "rho=" << igsr::format_shortest(rho) << ": 6/6 group recall in "
                  << full_recall << "/" << seeds << " seeds\n";
        all_ok &= (full_recall == seeds);
    }
    return all_ok ? 0 : kExitRun;
}

int cmd_stress_epistasis(int experiment, int seeds, std::size_t rows,
                         const std::string& influence, const std::string& out) {
    igsr::InfluenceVariant v = igsr::detail::influence_from_name(influence);
    std::ofstream csv;
    if (!out.empty()) {
        fs::create_directories(fs::path(out));
        csv.open(fs::path(out) / "epistasis_recall.csv", std::ios::binary);
        csv << "experiment,seed,interactions_top_ranked,test_mse,max_marginal_abs_delta\n";
    }
    int ok = 0;
    for (int s = 0; s < seeds; ++s) {
        auto trial = igsr::run_epistasis_trial(experiment, static_cast<std::uint64_t>(s), rows, v);
        if (trial.interactions_top_ranked) ++ok;
        if (csv.is_open())
            csv << experiment << ',' << s << ',' << (trial.interactions_top_ranked ? 1 : 0) << ','
                << igsr::format_shortest(trial.test_mse) << ','
                << igsr::format_shortest(trial.max_marginal_abs_delta) << "\n";
    }
    std::cout << "experiment " << experiment << ": interactions top-ranked in " << ok << "/"
              << seeds << " seeds\n";
    return ok == seeds ? 0 : kExitRun;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& pred_eq, const std::string& truth_eq) {
    igsr::Dataset truth = igsr::load_table(truth_path, {});
    igsr::Dataset pred = igsr::load_table(pred_path, {});
    std::vector<double> nmse_values;
    for (const auto& col : truth.feature_names()) {
        if (!pred.has_feature(col)) continue;
        double v = igsr::nmse(truth.feature(col), pred.feature(col));
        nmse_values.push_back(v);
        std::cout << "NMSE[" << col << "] = " << igsr::format_shortest(v) << "\n";
    }
    if (nmse_values.empty()) throw igsr::DataError("no shared columns between pred and truth");
    double mean = 0.0;
    for (double v : nmse_values) mean += v;
    mean /= static_cast<double>(nmse_values.size());
    std::cout << "NMSE mean = " << igsr::format_shortest(mean) << "\n";
    std::cout << "Acc_0.1 = " << igsr::format_shortest(igsr::acc_at_tol(nmse_values)) << "\n";

    if (!pred_eq.empty() && !truth_eq.empty()) {
        auto read_terms = [](const std::string& path) {
            std::ifstream in(path, std::ios::binary);
            if (!in) throw igsr::DataError("cannot open '" + path + "'");
            std::vector<igsr::Term> terms;
            std::string line;
            while (std::getline(in, line)) {
                std::string t = igsr::trim(line);
                if (!t.empty()) terms.push_back(igsr::Term::parse(t));
            }
            return terms;
        };
        double tr = igsr::term_recall(read_terms(truth_eq), read_terms(pred_eq));
        std::cout << "TermRecall = " << igsr::format_shortest(tr) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "igsr - influence-guided symbolic regression\n"
        "Exit codes: 0 success, 2 usage error, 3 config error, 4 data error, 5 run error."};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "Run an equation search from a config file");
    std::string run_config, run_out = "out";
    std::optional<std::uint64_t> run_seed;
    int run_jobs = 0;
    run->add_option("--config", run_config, "TOML or JSON config file")->required();
    run->add_option("--seed", run_seed, "Override the config seed list with one seed");
    run->add_option("--out", run_out, "Output directory")->required();
    run->add_option("--jobs", run_jobs, "Max concurrent successor cycles");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic benchmark dataset");
    simulate->require_subcommand(1);
    std::string sim_variant = "chemo_radio", sim_out = "sim";
    int sim_synth_variant = 1;
    std::size_t sim_patients = 1000, sim_distractors = 0;
    std::uint64_t sim_seed = 0;
    auto* sim_pkpd = simulate->add_subcommand("pkpd", "Lung-cancer PKPD trajectories");
    sim_pkpd->add_option("--variant", sim_variant, "none | chemo | chemo_radio")
        ->check(CLI::IsMember({"none", "chemo", "chemo_radio"}));
    sim_pkpd->add_option("--patients", sim_patients, "Trajectories to simulate");
    sim_pkpd->add_option("--seed", sim_seed, "Generator seed");
    sim_pkpd->add_option("--distractors", sim_distractors,
                         "Append this many irrelevant N(0,1) feature columns");
    sim_pkpd->add_option("--out", sim_out, "Output directory")->required();
    auto* sim_syn = simulate->add_subcommand("synthetic", "Structural-modification variants 1-5");
    sim_syn->add_option("--variant", sim_synth_variant, "Variant index 1-5")
        ->check(CLI::Range(1, 5));
    sim_syn->add_option("--patients", sim_patients, "Trajectories to simulate");
    sim_syn->add_option("--seed", sim_seed, "Generator seed");
    sim_syn->add_option("--distractors", sim_distractors,
                        "Append this many irrelevant N(0,1) feature columns");
    sim_syn->add_option("--out", sim_out, "Output directory")->required();

    // stress
    auto* stress = app.add_subcommand("stress", "Pruning stress protocols");
    stress->require_subcommand(1);
    std::vector<double> stress_rhos = {0.95, 0.99, 0.999};
    int stress_seeds = 15, stress_experiment = 1;
    std::size_t stress_patients = 200, stress_rows = 5000;
    std::string stress_influence = "no_refit", stress_out;
    auto* stress_coll = stress->add_subcommand("collinearity", "Correlated-clone recovery");
    stress_coll->add_option("--rho", stress_rhos, "Clone correlations to test");
    stress_coll->add_option("--seeds", stress_seeds, "Seeds per correlation");
    stress_coll->add_option("--patients", stress_patients, "Trajectories per dataset");
    stress_coll->add_option("--influence", stress_influence,
                            "no_refit | refit_full | refit_efficient");
    stress_coll->add_option("--out", stress_out, "Directory for the recall table CSV");
    auto* stress_epi = stress->add_subcommand("epistasis", "Interaction-only signal recovery");
    stress_epi->add_option("--experiment", stress_experiment, "1 or 2")->check(CLI::Range(1, 2));
    stress_epi->add_option("--seeds", stress_seeds, "Seeds to run");
    stress_epi->add_option("--rows", stress_rows, "Dataset rows");
    stress_epi->add_option("--influence", stress_influence,
                           "no_refit | refit_full | refit_efficient");
    stress_epi->add_option("--out", stress_out, "Directory for the recall table CSV");

    // eval
    auto* eval = app.add_subcommand("eval", "Score predictions against a reference table");
    std::string eval_pred, eval_truth, eval_pred_eq, eval_truth_eq;
    eval->add_option("--pred", eval_pred, "CSV of predicted columns")->required();
    eval->add_option("--truth", eval_truth, "CSV of reference columns")->required();
    eval->add_option("--pred-eq", eval_pred_eq, "Predicted terms, one per line");
    eval->add_option("--truth-eq", eval_truth_eq, "Ground-truth terms, one per line");

    // replay-record
    auto* record = app.add_subcommand(
        "replay-record", "Run a search while recording the proposer transcript");
    std::string rec_config, rec_out = "out", rec_transcript = "transcript.jsonl";
    std::optional<std::uint64_t> rec_seed;
    record->add_option("--config", rec_config, "TOML or JSON config file")->required();
    record->add_option("--seed", rec_seed, "Override the config seed list with one seed");
    record->add_option("--out", rec_out, "Output directory")->required();
    record->add_option("--transcript", rec_transcript, "Transcript output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (run->parsed()) return cmd_run(run_config, run_seed, run_out, run_jobs, "");
        if (record->parsed())
            return cmd_run(rec_config, rec_seed, rec_out, 0, rec_transcript);
        if (simulate->parsed()) {
            if (sim_pkpd->parsed())
                return cmd_simulate("pkpd", sim_variant, 0, sim_patients, sim_seed,
                                    sim_distractors, sim_out);
            return cmd_simulate("synthetic", "", sim_synth_variant, sim_patients, sim_seed,
                                sim_distractors, sim_out);
        }
        if (stress->parsed()) {
            if (stress_coll->parsed())
                return cmd_stress_collinearity(stress_rhos, stress_seeds, stress_patients,
                                               stress_influence, stress_out);
            return cmd_stress_epistasis(stress_experiment, stress_seeds, stress_rows,
                                        stress_influence, stress_out);
        }
        if (eval->parsed()) return cmd_eval(eval_pred, eval_truth, eval_pred_eq, eval_truth_eq);
    } catch (const igsr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const igsr::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRun;
    }
    return kExitUsage;
}
