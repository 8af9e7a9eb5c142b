#pragma once

// Batch processing of a cohort: load, floor dispersion, fit, filter and
// extract signatures for every ROI, then assemble the classification
// dataset. Also the fits / signatures table files.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "perfusion/classify.hpp"
#include "perfusion/config.hpp"
#include "perfusion/errors.hpp"
#include "perfusion/fitter.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/signature.hpp"

namespace perfusion {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// thrown by any call is rethrown after all workers finish.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Multi-start seed of one ROI; independent of processing order.
inline std::uint64_t roi_seed(std::uint64_t base, std::string_view patient_id, std::string_view roi_id) {
    return base ^ fnv1a(std::string(patient_id) + "/" + std::string(roi_id));
}

struct RoiOutcome {
    std::string patient_id;
    std::string roi_id;
    TissueLabel label = TissueLabel::normal;
    TissueLabel pathology = TissueLabel::normal;
    std::optional<FitResult> fit;
    std::optional<SignatureOutcome> signature;
    std::string error;  // non-empty when the ROI could not be loaded or fitted

    bool failed() const { return !error.empty(); }
    const Signature* accepted() const {
        return signature ? std::get_if<Signature>(&*signature) : nullptr;
    }
};

inline RoiOutcome process_series(RoiSeries series, const RunConfig& cfg, bool with_signature = true) {
    RoiOutcome out;
    out.patient_id = series.patient_id;
    out.roi_id = series.roi_id;
    out.label = series.label.value_or(TissueLabel::normal);
    series = threshold_dispersion(std::move(series), cfg.dispersion_floor);
    FitOptions fo = cfg.fit;
    fo.seed = roi_seed(cfg.seed, series.patient_id, series.roi_id);
    out.fit = fit(series, cfg.weights, cfg.bounds, fo);
    if (with_signature) out.signature = build_signature(series, *out.fit, cfg.signature_options());
    return out;
}

/// Signature from an already computed fit; the series is still needed for
/// its duration and sampling.
inline RoiOutcome signature_from_fit(RoiSeries series, const FitResult& f, const RunConfig& cfg) {
    RoiOutcome out;
    out.patient_id = series.patient_id;
    out.roi_id = series.roi_id;
    out.label = series.label.value_or(TissueLabel::normal);
    out.fit = f;
    out.signature = build_signature(series, f, cfg.signature_options());
    return out;
}

struct CohortRun {
    std::vector<RoiOutcome> rois;  // sorted by (patient_id, roi_id)

    std::size_t failures() const {
        return static_cast<std::size_t>(std::count_if(rois.begin(), rois.end(), [](const auto& r) { return r.failed(); }));
    }
};

inline void sort_outcomes(std::vector<RoiOutcome>& v) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return std::tie(a.patient_id, a.roi_id) < std::tie(b.patient_id, b.roi_id);
    });
}

/// `existing_fits` (keyed by patient_id/roi_id) skips refitting those ROIs.
inline CohortRun run_cohort(const CohortManifest& m, const RunConfig& cfg, bool with_signature = true,
                            const std::map<std::string, FitResult>* existing_fits = nullptr) {
    struct Job {
        const PatientEntry* patient;
        const RoiEntry* roi;
    };
    std::vector<Job> jobs;
    for (const auto& p : m.patients)
        for (const auto& r : p.rois) jobs.push_back({&p, &r});

    CohortRun run;
    run.rois.resize(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
        const auto& [p, r] = jobs[i];
        RoiOutcome out;
        try {
            RoiSeries s = load_series(r->file);
            s.patient_id = p->patient_id;
            s.roi_id = r->roi_id;
            s.label = r->label;
            const auto key = p->patient_id + "/" + r->roi_id;
            if (existing_fits && existing_fits->count(key))
                out = signature_from_fit(threshold_dispersion(std::move(s), cfg.dispersion_floor), existing_fits->at(key), cfg);
            else
                out = process_series(std::move(s), cfg, with_signature);
        } catch (const Error& e) {
            out.error = e.what();
        }
        out.patient_id = p->patient_id;
        out.roi_id = r->roi_id;
        out.label = r->label;
        out.pathology = p->pathology;
        run.rois[i] = std::move(out);
    });
    sort_outcomes(run.rois);
    return run;
}

inline CohortDataset to_dataset(const CohortRun& run) {
    CohortDataset d;
    for (const auto& r : run.rois) {
        if (d.patients.empty() || d.patients.back().patient_id != r.patient_id)
            d.patients.push_back({r.patient_id, r.pathology, {}});
        RoiRecord rec;
        rec.roi_id = r.roi_id;
        rec.label = r.label;
        if (const auto* s = r.accepted()) rec.signature = *s;
        else if (r.signature) rec.verdict = std::get<NoPrediction>(*r.signature).verdict;
        else rec.verdict.reject(QualityReason::fit_failed);
        d.patients.back().rois.push_back(std::move(rec));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Table files. Numbers are written with round-trip precision.

namespace detail {

inline std::vector<std::string> split_csv(std::string_view row) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = row.find(',', pos);
        out.emplace_back(trim(row.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

/// Rows of a CSV file with a known header, as column-name -> value maps.
inline std::vector<std::map<std::string, std::string>> read_table(const std::filesystem::path& path,
                                                                  const std::vector<std::string>& required) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (header.empty()) {
            header = std::move(fields);
            for (const auto& r : required)
                if (std::find(header.begin(), header.end(), r) == header.end())
                    throw ParseError(path.filename().string() + ": missing column '" + r + "'", lineno);
            continue;
        }
        if (fields.size() != header.size()) throw ParseError("wrong number of columns", lineno);
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
        row["__line"] = std::to_string(lineno);
        rows.push_back(std::move(row));
    }
    if (header.empty()) throw ParseError(path.filename().string() + ": empty file", 0);
    return rows;
}

inline double field_double(const std::map<std::string, std::string>& row, const std::string& key) {
    return parse_double(row.at(key), std::stoul(row.at("__line")), key.c_str());
}

}  // namespace detail

inline void write_fits(std::ostream& out, const CohortRun& run) {
    out << "patient_id,roi_id,label";
    for (const char* n : kParamNames) out << ',' << n;
    out << ",objective,l1_relative_error,iterations,converged,accepted,reasons,error\n";
    for (const auto& r : run.rois) {
        out << r.patient_id << ',' << r.roi_id << ',' << to_string(r.label);
        if (r.fit) {
            for (double v : to_array(r.fit->params)) out << ',' << detail::format_double(v);
            out << ',' << detail::format_double(r.fit->objective_value) << ','
                << detail::format_double(r.fit->l1_relative_error) << ',' << r.fit->n_iterations << ','
                << (r.fit->converged ? 1 : 0);
        } else {
            out << std::string(kParamCount + 4, ',');
        }
        std::string reasons;
        bool accepted = false;
        if (r.signature) {
            accepted = r.accepted() != nullptr;
            if (!accepted) reasons = join_reasons(std::get<NoPrediction>(*r.signature).verdict);
        }
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << ',' << (accepted ? 1 : 0) << ',' << reasons << ',' << err << '\n';
    }
}

/// Converged flags and parameters from a fits file, keyed by patient_id/roi_id.
inline std::map<std::string, FitResult> read_fits(const std::filesystem::path& path) {
    std::vector<std::string> req{"patient_id", "roi_id", "objective", "l1_relative_error", "iterations", "converged"};
    for (const char* n : kParamNames) req.emplace_back(n);
    std::map<std::string, FitResult> out;
    for (const auto& row : detail::read_table(path, req)) {
        if (row.at("converged").empty()) continue;  // ROI failed before fitting
        FitResult f;
        std::array<double, kParamCount> a{};
        for (int i = 0; i < kParamCount; ++i) a[i] = detail::field_double(row, kParamNames[i]);
        f.params = from_array(a);
        f.objective_value = detail::field_double(row, "objective");
        f.l1_relative_error = detail::field_double(row, "l1_relative_error");
        f.n_iterations = static_cast<int>(detail::field_double(row, "iterations"));
        f.converged = row.at("converged") == "1";
        out[row.at("patient_id") + "/" + row.at("roi_id")] = f;
    }
    return out;
}

inline void write_signatures(std::ostream& out, const CohortRun& run) {
    out << "patient_id,roi_id,label,pathology,accepted,reasons,l1_relative_error,objective";
    for (auto n : kFeatureNames) out << ',' << n;
    out << '\n';
    for (const auto& r : run.rois) {
        out << r.patient_id << ',' << r.roi_id << ',' << to_string(r.label) << ',' << to_string(r.pathology) << ',';
        if (const auto* s = r.accepted()) {
            out << "1,," << detail::format_double(s->l1_relative_error) << ',' << detail::format_double(s->objective_value);
            for (double v : s->features()) out << ',' << detail::format_double(v);
        } else {
            const std::string reasons = r.signature ? join_reasons(std::get<NoPrediction>(*r.signature).verdict)
                                                    : std::string(to_string(QualityReason::fit_failed));
            out << "0," << reasons << ',';
            if (r.fit) out << detail::format_double(r.fit->l1_relative_error) << ',' << detail::format_double(r.fit->objective_value);
            else out << ',';
            out << std::string(kFeatureCount, ',');
        }
        out << '\n';
    }
}

inline CohortDataset read_signatures(const std::filesystem::path& path) {
    std::vector<std::string> req{"patient_id", "roi_id", "label", "pathology", "accepted", "reasons", "l1_relative_error", "objective"};
    for (auto n : kFeatureNames) req.emplace_back(n);
    CohortDataset d;
    for (const auto& row : detail::read_table(path, req)) {
        const auto& pid = row.at("patient_id");
        const auto line = std::stoul(row.at("__line"));
        TissueLabel pathology, label;
        try {
            pathology = parse_label(row.at("pathology"));
            label = parse_label(row.at("label"));
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), line);
        }
        auto it = std::find_if(d.patients.begin(), d.patients.end(), [&](const auto& p) { return p.patient_id == pid; });
        if (it == d.patients.end()) {
            d.patients.push_back({pid, pathology, {}});
            it = std::prev(d.patients.end());
        } else if (it->pathology != pathology) {
            throw ParseError("inconsistent pathology for " + pid, line);
        }
        RoiRecord rec;
        rec.roi_id = row.at("roi_id");
        rec.label = label;
        if (row.at("accepted") == "1") {
            std::array<double, kFeatureCount> f{};
            for (int i = 0; i < kFeatureCount; ++i) f[i] = detail::field_double(row, std::string(kFeatureNames[i]));
            Signature s = Signature::from_features(f);
            s.l1_relative_error = detail::field_double(row, "l1_relative_error");
            s.objective_value = detail::field_double(row, "objective");
            rec.signature = s;
        } else {
            std::string_view reasons = row.at("reasons");
            while (!reasons.empty()) {
                const auto semi = reasons.find(';');
                try {
                    rec.verdict.reject(parse_quality_reason(reasons.substr(0, semi)));
                } catch (const InvalidInput& e) {
                    throw ParseError(e.what(), line);
                }
                if (semi == std::string_view::npos) break;
                reasons.remove_prefix(semi + 1);
            }
            if (rec.verdict.accepted) rec.verdict.reject(QualityReason::fit_failed);
        }
        it->rois.push_back(std::move(rec));
    }
    return d;
}

}  // namespace perfusion
