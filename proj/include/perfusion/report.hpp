#pragma once

// Evaluation report exports: JSON, a fixed-width metrics table and a
// per-ROI / per-patient predictions file that can be re-aggregated.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

#include "json.hpp"

#include "perfusion/classify.hpp"
#include "perfusion/pipeline.hpp"

namespace perfusion {

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json patients = nlohmann::json::array();
    for (const auto& p : r.patients) {
        nlohmann::json rois = nlohmann::json::array();
        for (const auto& roi : p.rois)
            rois.push_back({{"roi_id", roi.roi_id}, {"label", to_string(roi.label)},
                            {"predicted", to_string(roi.predicted)}, {"p_cancer", roi.p_cancer}});
        patients.push_back({{"patient_id", p.patient_id}, {"pathology", to_string(p.pathology)},
                            {"n_predicted", p.n_predicted}, {"n_cancer", p.n_cancer},
                            {"p_fp", p.rates.p_fp}, {"p_fn", p.rates.p_fn}, {"rates_fallback", p.rates_fallback},
                            {"has_prediction", p.has_prediction}, {"p_cancer", p.p_cancer},
                            {"predicted_cancer", p.predicted_cancer}, {"rois", rois}});
    }
    return {{"roi_accuracy", r.roi_accuracy},
            {"case_accuracy", r.case_accuracy},
            {"sensitivity", r.sensitivity},
            {"specificity", r.specificity},
            {"roi_total", r.roi_total},
            {"roi_correct", r.roi_correct},
            {"confusion", {{"tp", r.cases.tp}, {"fn", r.cases.fn}, {"tn", r.cases.tn}, {"fp", r.cases.fp}}},
            {"patients", patients}};
}

inline void write_table(std::ostream& out, const EvalReport& r, std::string_view title) {
    char buf[160];
    out << title << '\n';
    std::snprintf(buf, sizeof buf, "%-14s %-14s %-14s %-14s\n", "ROI Accuracy", "Case Accuracy", "Sensitivity",
                  "Specificity");
    out << buf;
    std::snprintf(buf, sizeof buf, "%-14s %-14s %-14s %-14s\n", "------------", "-------------", "-----------",
                  "-----------");
    out << buf;
    const auto pct = [](double x) {
        char s[32];
        std::snprintf(s, sizeof s, "%.2f%%", 100.0 * x);
        return std::string(s);
    };
    std::snprintf(buf, sizeof buf, "%-14s %-14s %-14s %-14s\n", pct(r.roi_accuracy).c_str(), pct(r.case_accuracy).c_str(),
                  pct(r.sensitivity).c_str(), pct(r.specificity).c_str());
    out << buf;
    out << "cases: TP=" << r.cases.tp << " FN=" << r.cases.fn << " TN=" << r.cases.tn << " FP=" << r.cases.fp
        << "  ROIs: " << r.roi_correct << '/' << r.roi_total << '\n';
    int none = 0;
    for (const auto& p : r.patients) none += !p.has_prediction;
    if (none > 0) out << "cases without prediction (counted as negative): " << none << '\n';
    int fallback = 0;
    for (const auto& p : r.patients) fallback += p.rates_fallback;
    if (fallback > 0) out << "folds with uninformative estimated rates (configured rates used): " << fallback << '\n';
}

/// One row per held-out ROI plus one "case" row per patient (roi_id "*").
inline void write_predictions(std::ostream& out, const EvalReport& r) {
    out << "patient_id,roi_id,label,predicted,p_cancer,n_predicted,n_cancer,p_fp,p_fn,rates_fallback,has_prediction\n";
    for (const auto& p : r.patients) {
        for (const auto& roi : p.rois)
            out << p.patient_id << ',' << roi.roi_id << ',' << to_string(roi.label) << ',' << to_string(roi.predicted)
                << ',' << detail::format_double(roi.p_cancer) << ",,,,,,\n";
        const char* call = !p.has_prediction ? "none" : p.predicted_cancer ? "cancer" : "benign";
        out << p.patient_id << ",*," << to_string(p.pathology) << ',' << call << ',' << detail::format_double(p.p_cancer)
            << ',' << p.n_predicted << ',' << p.n_cancer << ',' << detail::format_double(p.rates.p_fp) << ','
            << detail::format_double(p.rates.p_fn) << ',' << (p.rates_fallback ? 1 : 0) << ',' << (p.has_prediction ? 1 : 0) << '\n';
    }
}

/// Per-patient predictions back from a predictions file; feed to summarize().
inline std::vector<PatientPrediction> read_predictions(const std::filesystem::path& path) {
    const auto rows = detail::read_table(path, {"patient_id", "roi_id", "label", "predicted", "p_cancer", "n_predicted",
                                                "n_cancer", "p_fp", "p_fn", "rates_fallback", "has_prediction"});
    std::vector<PatientPrediction> out;
    std::vector<RoiPrediction> pending;
    for (const auto& row : rows) {
        const auto line = std::stoul(row.at("__line"));
        try {
            if (row.at("roi_id") != "*") {
                pending.push_back({row.at("roi_id"), parse_label(row.at("label")), parse_label(row.at("predicted")),
                                   detail::field_double(row, "p_cancer")});
                continue;
            }
            PatientPrediction p;
            p.patient_id = row.at("patient_id");
            p.pathology = parse_label(row.at("label"));
            p.has_prediction = row.at("has_prediction") == "1";
            p.predicted_cancer = row.at("predicted") == "cancer";
            p.p_cancer = detail::field_double(row, "p_cancer");
            p.n_predicted = static_cast<int>(detail::field_double(row, "n_predicted"));
            p.n_cancer = static_cast<int>(detail::field_double(row, "n_cancer"));
            p.rates = {detail::field_double(row, "p_fp"), detail::field_double(row, "p_fn")};
            p.rates_fallback = row.at("rates_fallback") == "1";
            p.rois = std::move(pending);
            pending.clear();
            out.push_back(std::move(p));
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), line);
        }
    }
    if (!pending.empty()) throw ParseError("ROI rows without a case row", rows.empty() ? 0 : std::stoul(rows.back().at("__line")));
    return out;
}

}  // namespace perfusion
