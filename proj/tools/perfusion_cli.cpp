// perfusion: synth / fit / features / train / evaluate / inspect.
//
// Exit codes: 0 success, 1 usage / config / input error, 2 partial failure
// (some ROIs could not be processed), 3 no prediction for the inspected ROI.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "perfusion/perfusion.hpp"

namespace fs = std::filesystem;
using namespace perfusion;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPartial = 2;
constexpr int kExitNoPrediction = 3;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string out = ".";
};

RunConfig resolve_config(const CommonOptions& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed) c.seed = c.cohort.seed = *o.seed;
    if (o.jobs) c.jobs = *o.jobs;
    validate(c);
    return c;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool with_jobs = true) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "base random seed (overrides config)");
    if (with_jobs) cmd->add_option("--jobs", o.jobs, "worker threads (overrides config)")->check(CLI::PositiveNumber);
    cmd->add_option("--out", o.out, "output directory");
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot write " + path.string());
    return f;
}

void report_failures(const CohortRun& run) {
    for (const auto& r : run.rois)
        if (r.failed()) std::cerr << "error: " << r.patient_id << '/' << r.roi_id << ": " << r.error << '\n';
}

int partial_status(const CohortRun& run) { return run.failures() > 0 ? kExitPartial : kExitOk; }

CohortDataset dataset_from(const std::string& manifest, const std::string& signatures, const RunConfig& cfg, int& status) {
    if (!signatures.empty()) return read_signatures(signatures);
    const auto run = run_cohort(load_manifest(manifest), cfg);
    report_failures(run);
    status = partial_status(run);
    return to_dataset(run);
}

int cmd_synth(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const auto cohort = generate_cohort(cfg.cohort, cfg.class_profiles());
    write_cohort(o.out, cohort);
    std::size_t n = 0;
    for (const auto& p : cohort.patients) n += p.rois.size();
    std::cout << "wrote " << cohort.patients.size() << " patients, " << n << " ROIs to " << o.out << '\n';
    return kExitOk;
}

int cmd_fit(const CommonOptions& o, const std::string& manifest) {
    const RunConfig cfg = resolve_config(o);
    const auto run = run_cohort(load_manifest(manifest), cfg);
    auto f = open_out(fs::path(o.out) / "fits.csv");
    write_fits(f, run);
    report_failures(run);
    std::cout << "fitted " << run.rois.size() - run.failures() << '/' << run.rois.size() << " ROIs\n";
    return partial_status(run);
}

int cmd_features(const CommonOptions& o, const std::string& manifest, const std::string& fits) {
    const RunConfig cfg = resolve_config(o);
    std::optional<std::map<std::string, FitResult>> existing;
    if (!fits.empty()) existing = read_fits(fits);
    const auto run = run_cohort(load_manifest(manifest), cfg, true, existing ? &*existing : nullptr);
    auto f = open_out(fs::path(o.out) / "signatures.csv");
    write_signatures(f, run);
    report_failures(run);
    std::size_t accepted = 0;
    for (const auto& r : run.rois) accepted += r.accepted() != nullptr;
    std::cout << "signatures: " << accepted << " accepted of " << run.rois.size() << " ROIs\n";
    return partial_status(run);
}

int cmd_train(const CommonOptions& o, const std::string& manifest, const std::string& signatures) {
    const RunConfig cfg = resolve_config(o);
    int status = kExitOk;
    const auto data = dataset_from(manifest, signatures, cfg, status);
    const auto rows = normalized_rows(data, cfg.classifier.kinds);
    gbdt::Params params = cfg.classifier.booster;
    if (cfg.classifier.grid_search) params = grid_search(rows, cfg.classifier.scheme, cfg.classifier.grid, params, cfg.classifier.kinds);
    const auto model = train(rows, cfg.classifier.scheme, params, cfg.classifier.kinds);
    auto f = open_out(fs::path(o.out) / "model.json");
    f << to_json(model).dump(1) << '\n';
    std::cout << "trained on " << rows.size() << " normalised ROIs (" << to_string(cfg.classifier.scheme) << ")\n";
    return status;
}

int cmd_evaluate(const CommonOptions& o, const std::string& manifest, const std::string& signatures) {
    RunConfig cfg = resolve_config(o);
    int status = kExitOk;
    const auto data = dataset_from(manifest, signatures, cfg, status);
    auto ec = cfg.classifier.eval_config();
    if (cfg.classifier.grid_search)
        ec.booster = grid_search(normalized_rows(data, ec.kinds), ec.scheme, cfg.classifier.grid, ec.booster, ec.kinds);
    const auto report = loo_evaluate(data, ec, [&](std::size_t n, const auto& fn) { parallel_for(n, cfg.jobs, fn); });

    const fs::path out(o.out);
    auto j = to_json(report);
    j["scheme"] = std::string(to_string(ec.scheme));
    j["booster"] = ec.booster;
    open_out(out / "report.json") << j.dump(1) << '\n';
    auto table = open_out(out / "report.txt");
    write_table(table, report, "Leave-one-patient-out evaluation");
    auto preds = open_out(out / "predictions.csv");
    write_predictions(preds, report);
    write_table(std::cout, report, "Leave-one-patient-out evaluation");
    return status;
}

int cmd_inspect(const CommonOptions& o, const std::string& roi_file) {
    const RunConfig cfg = resolve_config(o);
    RoiSeries s = load_series(roi_file);
    s.patient_id = "inspect";
    s.roi_id = fs::path(roi_file).stem().string();
    const auto outcome = process_series(s, cfg);
    const auto floored = threshold_dispersion(s, cfg.dispersion_floor);

    std::ostringstream curve;
    curve << "t,data,fitted,weight\n";
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double t = s.time(k);
        curve << detail::format_double(t) << ',' << detail::format_double(s.intensity[k]) << ','
              << detail::format_double(response_unchecked(outcome.fit->params, t)) << ','
              << detail::format_double(weight(t, cfg.weights, s.duration()) / (floored.dispersion[k] * floored.dispersion[k]))
              << '\n';
    }

    nlohmann::json summary;
    const auto& p = outcome.fit->params;
    for (int i = 0; i < kParamCount; ++i) summary["params"][kParamNames[i]] = to_array(p)[i];
    summary["objective"] = outcome.fit->objective_value;
    summary["l1_relative_error"] = outcome.fit->l1_relative_error;
    summary["converged"] = outcome.fit->converged;
    const Signature* sig = outcome.accepted();
    summary["accepted"] = sig != nullptr;
    if (sig) {
        const auto f = sig->features();
        for (int i = 0; i < kFeatureCount; ++i) summary["signature"][std::string(kFeatureNames[i])] = f[i];
    } else {
        const auto& np = std::get<NoPrediction>(*outcome.signature);
        summary["reasons"] = join_reasons(np.verdict);
        summary["detail"] = np.detail;
    }

    if (o.out == "-") {
        std::cout << curve.str();
        std::cerr << summary.dump(1) << '\n';
    } else {
        const fs::path out(o.out);
        open_out(out / "inspect.csv") << curve.str();
        open_out(out / "inspect.json") << summary.dump(1) << '\n';
        std::cout << summary.dump(1) << '\n';
    }
    if (!sig) {
        std::cerr << "no prediction: " << summary["reasons"].get<std::string>() << '\n';
        return kExitNoPrediction;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Perfusion curve fitting, signatures and tissue classification"};
    app.require_subcommand(1);

    CommonOptions common;
    std::string manifest, fits, signatures, roi;

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort (series files, manifest.jsonl, truth.csv)");
    add_common(synth, common, false);

    auto* fit_cmd = app.add_subcommand("fit", "fit every ROI of a manifest, write fits.csv");
    add_common(fit_cmd, common);
    fit_cmd->add_option("--manifest", manifest, "cohort manifest (JSON lines)")->required()->check(CLI::ExistingFile);

    auto* features = app.add_subcommand("features", "fit, filter and extract signatures, write signatures.csv");
    add_common(features, common);
    features->add_option("--manifest", manifest, "cohort manifest (JSON lines)")->required()->check(CLI::ExistingFile);
    features->add_option("--fits", fits, "reuse parameters from a fits.csv")->check(CLI::ExistingFile);

    auto* train_cmd = app.add_subcommand("train", "train the ROI classifier on all patients, write model.json");
    add_common(train_cmd, common);
    auto* evaluate = app.add_subcommand("evaluate", "leave-one-patient-out evaluation, write report files");
    add_common(evaluate, common);
    for (auto* cmd : {train_cmd, evaluate}) {
        auto* m = cmd->add_option("--manifest", manifest, "cohort manifest (JSON lines)")->check(CLI::ExistingFile);
        auto* s = cmd->add_option("--signatures", signatures, "signatures.csv from 'features'")->check(CLI::ExistingFile);
        m->excludes(s);
        cmd->callback([m, s] {
            if (m->count() == 0 && s->count() == 0) throw CLI::ValidationError("one of --manifest or --signatures is required");
        });
    }

    auto* inspect = app.add_subcommand("inspect", "fit one series file; emit t,data,fitted,weight and the signature");
    add_common(inspect, common, false);
    inspect->add_option("--roi", roi, "ROI series file")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitError;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*fit_cmd) return cmd_fit(common, manifest);
        if (*features) return cmd_features(common, manifest, fits);
        if (*train_cmd) return cmd_train(common, manifest, signatures);
        if (*evaluate) return cmd_evaluate(common, manifest, signatures);
        if (*inspect) return cmd_inspect(common, roi);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
