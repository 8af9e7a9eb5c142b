#pragma once

// ROI classification on healthy-reference-normalised signatures, patient
// level noisy-OR aggregation and leave-one-patient-out evaluation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "perfusion/errors.hpp"
#include "perfusion/gbdt.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/signature.hpp"

namespace perfusion {

// ---------------------------------------------------------------------------
// Normalisation against the patient's healthy reference ROI.

enum class FeatureKind { rate, absolute };

using FeatureKinds = std::array<FeatureKind, kFeatureCount>;

/// Times are absolute (differences); rates, slope, amplitudes and the
/// oscillation frequency scale with the patient and are taken as ratios.
inline constexpr FeatureKinds kDefaultFeatureKinds = {
    FeatureKind::absolute, FeatureKind::absolute, FeatureKind::absolute, FeatureKind::rate,
    FeatureKind::rate,     FeatureKind::rate,     FeatureKind::rate,     FeatureKind::rate,
    FeatureKind::rate,     FeatureKind::rate,     FeatureKind::rate,     FeatureKind::rate};

struct NormalizedSignature {
    std::array<double, kFeatureCount> features{};
    std::string reference_id;      // patient id of the reference
    std::string reference_roi_id;
};

inline NormalizedSignature normalize(const Signature& sig, const Signature& reference,
                                     const FeatureKinds& kinds = kDefaultFeatureKinds) {
    const auto f = sig.features();
    const auto r = reference.features();
    NormalizedSignature out;
    for (int i = 0; i < kFeatureCount; ++i) {
        if (kinds[i] == FeatureKind::absolute) {
            out.features[i] = f[i] - r[i];
        } else {
            if (r[i] == 0.0 || !std::isfinite(r[i]))
                throw NormalizationError(std::string("reference value of ") + std::string(kFeatureNames[i]) + " is zero");
            out.features[i] = f[i] / r[i];
        }
    }
    return out;
}

inline bool usable_as_reference(const Signature& s, const FeatureKinds& kinds = kDefaultFeatureKinds) {
    const auto f = s.features();
    for (int i = 0; i < kFeatureCount; ++i)
        if (!std::isfinite(f[i]) || (kinds[i] == FeatureKind::rate && f[i] == 0.0)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Cohort of signatures.

struct RoiRecord {
    std::string roi_id;
    TissueLabel label = TissueLabel::normal;
    std::optional<Signature> signature;  // empty: no prediction (failed quality)
    QualityVerdict verdict;
};

struct PatientRecord {
    std::string patient_id;
    TissueLabel pathology = TissueLabel::normal;
    std::vector<RoiRecord> rois;
};

struct CohortDataset {
    std::vector<PatientRecord> patients;
};

/// Accepted healthy ROI with the lowest fit L1 error whose rate features are
/// all non-zero; ties go to the lexicographically first ROI id.
inline const RoiRecord* select_reference(const PatientRecord& p, const FeatureKinds& kinds = kDefaultFeatureKinds) {
    const RoiRecord* best = nullptr;
    for (const auto& r : p.rois) {
        if (r.label != TissueLabel::normal || !r.signature || !usable_as_reference(*r.signature, kinds)) continue;
        if (!best || r.signature->l1_relative_error < best->signature->l1_relative_error ||
            (r.signature->l1_relative_error == best->signature->l1_relative_error && r.roi_id < best->roi_id))
            best = &r;
    }
    return best;
}

enum class Scheme { two_class, three_class };

inline std::string_view to_string(Scheme s) { return s == Scheme::two_class ? "two_class" : "three_class"; }

inline Scheme parse_scheme(std::string_view s) {
    if (s == "two_class") return Scheme::two_class;
    if (s == "three_class") return Scheme::three_class;
    throw ConfigError("unknown scheme '" + std::string(s) + "'");
}

inline std::vector<TissueLabel> scheme_classes(Scheme s) {
    if (s == Scheme::two_class) return {TissueLabel::benign, TissueLabel::cancer};
    return {TissueLabel::normal, TissueLabel::benign, TissueLabel::cancer};
}

/// Two-class models only see suspicious (benign / cancer) ROIs.
inline bool in_scheme(Scheme s, TissueLabel l) { return s == Scheme::three_class || l != TissueLabel::normal; }

struct LabeledRow {
    std::size_t patient = 0;  // index into CohortDataset::patients
    std::string roi_id;
    TissueLabel label = TissueLabel::normal;
    NormalizedSignature signature;
};

/// Normalised rows for every accepted, non-reference ROI of patients that
/// have a usable healthy reference.
inline std::vector<LabeledRow> normalized_rows(const CohortDataset& c, const FeatureKinds& kinds = kDefaultFeatureKinds) {
    std::vector<LabeledRow> rows;
    for (std::size_t pi = 0; pi < c.patients.size(); ++pi) {
        const auto& p = c.patients[pi];
        const RoiRecord* ref = select_reference(p, kinds);
        if (!ref) continue;
        for (const auto& r : p.rois) {
            if (!r.signature || &r == ref) continue;
            auto ns = normalize(*r.signature, *ref->signature, kinds);
            ns.reference_id = p.patient_id;
            ns.reference_roi_id = ref->roi_id;
            rows.push_back({pi, r.roi_id, r.label, std::move(ns)});
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Classifier.

struct ClassifierModel {
    Scheme scheme = Scheme::two_class;
    std::vector<TissueLabel> classes;
    gbdt::Model booster;
    FeatureKinds kinds = kDefaultFeatureKinds;
};

struct ClassProbabilities {
    std::vector<TissueLabel> classes;
    std::vector<double> p;

    TissueLabel argmax() const {
        return classes[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
    }
    double of(TissueLabel l) const {
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == l) return p[i];
        return 0.0;
    }
};

inline ClassifierModel train(const std::vector<LabeledRow>& rows, Scheme scheme, const gbdt::Params& params = {},
                             const FeatureKinds& kinds = kDefaultFeatureKinds) {
    ClassifierModel m;
    m.scheme = scheme;
    m.classes = scheme_classes(scheme);
    m.kinds = kinds;
    gbdt::Dataset data;
    for (const auto& r : rows) {
        if (!in_scheme(scheme, r.label)) continue;
        const auto it = std::find(m.classes.begin(), m.classes.end(), r.label);
        data.rows.emplace_back(r.signature.features.begin(), r.signature.features.end());
        data.labels.push_back(static_cast<int>(it - m.classes.begin()));
    }
    if (data.rows.empty()) throw TrainingError("no training rows in scheme");
    m.booster = gbdt::Model::train(data, static_cast<int>(m.classes.size()), params);
    return m;
}

inline ClassProbabilities predict(const ClassifierModel& m, const NormalizedSignature& s) {
    return {m.classes, m.booster.predict_proba(s.features)};
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const ClassifierModel& m) {
    nlohmann::json classes = nlohmann::json::array(), kinds = nlohmann::json::array(), names = nlohmann::json::array();
    for (auto c : m.classes) classes.push_back(std::string(to_string(c)));
    for (int i = 0; i < kFeatureCount; ++i) {
        kinds.push_back(m.kinds[i] == FeatureKind::rate ? "rate" : "absolute");
        names.push_back(std::string(kFeatureNames[i]));
    }
    return {{"format", "perfusion-classifier"}, {"version", kModelFormatVersion}, {"scheme", std::string(to_string(m.scheme))},
            {"classes", classes}, {"features", names}, {"feature_kinds", kinds}, {"booster", m.booster.to_json()}};
}

inline ClassifierModel classifier_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "perfusion-classifier") throw InvalidInput("not a classifier model file");
    if (j.value("version", 0) != kModelFormatVersion) throw InvalidInput("unsupported model version");
    ClassifierModel m;
    m.scheme = parse_scheme(j.at("scheme").get<std::string>());
    for (const auto& c : j.at("classes")) m.classes.push_back(parse_label(c.get<std::string>()));
    const auto& kinds = j.at("feature_kinds");
    if (kinds.size() != kFeatureCount) throw InvalidInput("model: feature kind count mismatch");
    for (int i = 0; i < kFeatureCount; ++i)
        m.kinds[i] = kinds[i].get<std::string>() == "rate" ? FeatureKind::rate : FeatureKind::absolute;
    m.booster = gbdt::Model::from_json(j.at("booster"));
    return m;
}

// ---------------------------------------------------------------------------
// Patient-level aggregation.

struct CaseAggregationConfig {
    double p_fp = 0.0;
    double p_fn = 0.0;
};

/// P(cancer) = c/n (1 - p_fp) + (n - c)/n p_fn.
inline double aggregate_case(int n, int c, const CaseAggregationConfig& cfg = {}) {
    if (n <= 0) throw NoPredictionForCase("case has no predicted ROIs");
    if (c < 0 || c > n) throw InvalidInput("aggregate_case: need 0 <= c <= n");
    if (!(cfg.p_fp >= 0.0 && cfg.p_fp <= 1.0 && cfg.p_fn >= 0.0 && cfg.p_fn <= 1.0))
        throw InvalidInput("aggregate_case: rates must lie in [0, 1]");
    const double nn = n, cc = c;
    return cc / nn * (1.0 - cfg.p_fp) + (nn - cc) / nn * cfg.p_fn;
}

// ---------------------------------------------------------------------------
// Leave-one-patient-out evaluation.

struct EvalConfig {
    Scheme scheme = Scheme::two_class;
    gbdt::Params booster;
    FeatureKinds kinds = kDefaultFeatureKinds;
    bool estimate_rates = true;  // inner LOO on the training folds
    CaseAggregationConfig fixed_rates;
    double decision_threshold = 0.5;
};

struct RoiPrediction {
    std::string roi_id;
    TissueLabel label = TissueLabel::normal;
    TissueLabel predicted = TissueLabel::normal;
    double p_cancer = 0.0;
};

struct PatientPrediction {
    std::string patient_id;
    TissueLabel pathology = TissueLabel::normal;
    int n_predicted = 0;
    int n_cancer = 0;
    CaseAggregationConfig rates;
    bool rates_fallback = false;  // estimated rates were uninformative
    bool has_prediction = false;  // false when no ROI reached the classifier
    double p_cancer = 0.0;
    bool predicted_cancer = false;
    std::vector<RoiPrediction> rois;
};

struct Confusion {
    int tp = 0, fn = 0, tn = 0, fp = 0;
};

struct EvalReport {
    double roi_accuracy = 0.0;
    double case_accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    int roi_total = 0;
    int roi_correct = 0;
    Confusion cases;
    std::vector<PatientPrediction> patients;
};

/// Metrics from per-patient predictions. Patients without any prediction
/// count as predicted non-cancer.
inline EvalReport summarize(std::vector<PatientPrediction> patients) {
    EvalReport r;
    for (const auto& p : patients) {
        for (const auto& roi : p.rois) {
            ++r.roi_total;
            r.roi_correct += roi.predicted == roi.label;
        }
        const bool truth = p.pathology == TissueLabel::cancer;
        const bool pred = p.has_prediction && p.predicted_cancer;
        if (truth) (pred ? r.cases.tp : r.cases.fn)++;
        else (pred ? r.cases.fp : r.cases.tn)++;
    }
    const auto frac = [](int a, int b) { return b > 0 ? static_cast<double>(a) / b : 0.0; };
    r.roi_accuracy = frac(r.roi_correct, r.roi_total);
    r.case_accuracy = frac(r.cases.tp + r.cases.tn, static_cast<int>(patients.size()));
    r.sensitivity = frac(r.cases.tp, r.cases.tp + r.cases.fn);
    r.specificity = frac(r.cases.tn, r.cases.tn + r.cases.fp);
    r.patients = std::move(patients);
    return r;
}

namespace detail {

inline std::vector<LabeledRow> rows_excluding(const std::vector<LabeledRow>& rows, std::size_t patient) {
    std::vector<LabeledRow> out;
    for (const auto& r : rows)
        if (r.patient != patient) out.push_back(r);
    return out;
}

inline bool has_two_classes(const std::vector<LabeledRow>& rows, Scheme scheme) {
    std::optional<TissueLabel> first;
    for (const auto& r : rows) {
        if (!in_scheme(scheme, r.label)) continue;
        if (!first) first = r.label;
        else if (*first != r.label) return true;
    }
    return false;
}

/// ROI-level false positive / false negative rates for the cancer call,
/// by leave-one-patient-out inside the given training rows.
inline CaseAggregationConfig estimate_rates(const std::vector<LabeledRow>& rows, const EvalConfig& cfg) {
    std::vector<std::size_t> patients;
    for (const auto& r : rows)
        if (std::find(patients.begin(), patients.end(), r.patient) == patients.end()) patients.push_back(r.patient);
    int fp = 0, neg = 0, fn = 0, pos = 0;
    for (std::size_t q : patients) {
        auto train_rows = rows_excluding(rows, q);
        if (!has_two_classes(train_rows, cfg.scheme)) continue;
        const auto model = train(train_rows, cfg.scheme, cfg.booster, cfg.kinds);
        for (const auto& r : rows) {
            if (r.patient != q || !in_scheme(cfg.scheme, r.label)) continue;
            const bool called = predict(model, r.signature).argmax() == TissueLabel::cancer;
            if (r.label == TissueLabel::cancer) {
                ++pos;
                fn += !called;
            } else {
                ++neg;
                fp += called;
            }
        }
    }
    return {neg > 0 ? static_cast<double>(fp) / neg : 0.0, pos > 0 ? static_cast<double>(fn) / pos : 0.0};
}

}  // namespace detail

/// Predictions for one held-out patient from a model trained on the others.
inline PatientPrediction evaluate_fold(const CohortDataset& cohort, const std::vector<LabeledRow>& rows,
                                       std::size_t held_out, const EvalConfig& cfg) {
    const auto& patient = cohort.patients[held_out];
    PatientPrediction pp;
    pp.patient_id = patient.patient_id;
    pp.pathology = patient.pathology;

    const auto train_rows = detail::rows_excluding(rows, held_out);
    if (!detail::has_two_classes(train_rows, cfg.scheme))
        throw EvalError("training fold for " + patient.patient_id + " has fewer than 2 classes");
    const auto model = train(train_rows, cfg.scheme, cfg.booster, cfg.kinds);
    pp.rates = cfg.fixed_rates;
    if (cfg.estimate_rates) {
        // With p_fp + p_fn >= 1 the ROI calls carry no information and the
        // aggregate would decrease with c; keep the configured rates instead.
        const auto est = detail::estimate_rates(train_rows, cfg);
        if (est.p_fp + est.p_fn < 1.0) pp.rates = est;
        else pp.rates_fallback = true;
    }

    for (const auto& r : rows) {
        if (r.patient != held_out || !in_scheme(cfg.scheme, r.label)) continue;
        const auto probs = predict(model, r.signature);
        const TissueLabel call = probs.argmax();
        pp.rois.push_back({r.roi_id, r.label, call, probs.of(TissueLabel::cancer)});
        ++pp.n_predicted;
        pp.n_cancer += call == TissueLabel::cancer;
    }
    if (pp.n_predicted > 0) {
        pp.has_prediction = true;
        pp.p_cancer = aggregate_case(pp.n_predicted, pp.n_cancer, pp.rates);
        pp.predicted_cancer = pp.p_cancer >= cfg.decision_threshold;
    }
    return pp;
}

inline void check_evaluable(const CohortDataset& cohort) {
    if (cohort.patients.size() < 3) throw EvalError("leave-one-out needs at least 3 patients");
    std::vector<TissueLabel> seen;
    for (const auto& p : cohort.patients)
        if (std::find(seen.begin(), seen.end(), p.pathology) == seen.end()) seen.push_back(p.pathology);
    if (seen.size() < 2) throw EvalError("leave-one-out needs at least 2 case labels");
}

/// Folds are evaluated through `run_folds(n, fn)`, which must call fn(i) for
/// every i in [0, n); callers may parallelise it.
template <class Runner>
EvalReport loo_evaluate(const CohortDataset& cohort, const EvalConfig& cfg, Runner&& run_folds) {
    check_evaluable(cohort);
    const auto rows = normalized_rows(cohort, cfg.kinds);
    std::vector<PatientPrediction> preds(cohort.patients.size());
    run_folds(cohort.patients.size(), [&](std::size_t i) { preds[i] = evaluate_fold(cohort, rows, i, cfg); });
    return summarize(std::move(preds));
}

inline EvalReport loo_evaluate(const CohortDataset& cohort, const EvalConfig& cfg = {}) {
    return loo_evaluate(cohort, cfg, [](std::size_t n, const auto& fn) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
    });
}

// ---------------------------------------------------------------------------
// Hyper-parameter grid search by grouped (per-patient) k-fold ROI accuracy.

struct GridSpec {
    std::vector<int> max_depth{2, 3, 4};
    std::vector<int> n_trees{100, 200};
    std::vector<double> learning_rate{0.05, 0.1, 0.2};
    int folds = 5;
};

inline gbdt::Params grid_search(const std::vector<LabeledRow>& rows, Scheme scheme, const GridSpec& grid,
                                gbdt::Params base = {}, const FeatureKinds& kinds = kDefaultFeatureKinds) {
    std::vector<std::size_t> patients;
    for (const auto& r : rows)
        if (std::find(patients.begin(), patients.end(), r.patient) == patients.end()) patients.push_back(r.patient);
    std::sort(patients.begin(), patients.end());
    const int k = std::max(2, std::min<int>(grid.folds, static_cast<int>(patients.size())));

    gbdt::Params best = base;
    double best_acc = -1.0;
    for (int depth : grid.max_depth)
        for (int trees : grid.n_trees)
            for (double lr : grid.learning_rate) {
                gbdt::Params p = base;
                p.max_depth = depth;
                p.n_trees = trees;
                p.learning_rate = lr;
                int correct = 0, total = 0;
                for (int fold = 0; fold < k; ++fold) {
                    std::vector<LabeledRow> tr, te;
                    for (const auto& r : rows) {
                        const auto pos = std::find(patients.begin(), patients.end(), r.patient) - patients.begin();
                        (pos % k == fold ? te : tr).push_back(r);
                    }
                    if (!detail::has_two_classes(tr, scheme)) continue;
                    const auto model = train(tr, scheme, p, kinds);
                    for (const auto& r : te) {
                        if (!in_scheme(scheme, r.label)) continue;
                        ++total;
                        correct += predict(model, r.signature).argmax() == r.label;
                    }
                }
                const double acc = total > 0 ? static_cast<double>(correct) / total : 0.0;
                if (acc > best_acc) {
                    best_acc = acc;
                    best = p;
                }
            }
    return best;
}

}  // namespace perfusion
