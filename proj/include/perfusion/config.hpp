#pragma once

// Run configuration, read from a JSON file. Every section is optional;
// unknown keys are rejected so typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "perfusion/classify.hpp"
#include "perfusion/errors.hpp"
#include "perfusion/fitter.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/signature.hpp"
#include "perfusion/synth.hpp"

namespace perfusion {

struct ClassifierConfig {
    Scheme scheme = Scheme::two_class;
    gbdt::Params booster;
    FeatureKinds kinds = kDefaultFeatureKinds;
    bool estimate_rates = true;
    CaseAggregationConfig fixed_rates;
    double decision_threshold = 0.5;
    bool grid_search = false;
    GridSpec grid;

    EvalConfig eval_config() const {
        return {scheme, booster, kinds, estimate_rates, fixed_rates, decision_threshold};
    }
};

struct RunConfig {
    std::uint64_t seed = 0;
    int jobs = 1;
    WeightConfig weights;
    FitBounds bounds;
    FitOptions fit;
    QualityRules quality;
    double dispersion_floor = kDefaultDispersionFloor;
    double grid_step = 0.0;
    ClassifierConfig classifier;
    CohortSpec cohort;
    std::string profiles = "default";  // or "overlapping"

    SignatureOptions signature_options() const { return {quality, grid_step}; }

    ClassProfiles class_profiles() const {
        if (profiles == "default") return default_profiles();
        if (profiles == "overlapping") return overlapping_profiles();
        throw ConfigError("unknown profiles '" + profiles + "'");
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const char* section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void validate(const RunConfig& c) {
    if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
    if (!(c.dispersion_floor > 0.0)) throw ConfigError("dispersion_floor must be > 0");
    if (c.grid_step < 0.0) throw ConfigError("grid_step must be >= 0");
    if (c.fit.starts < 1 || c.fit.max_iterations < 1) throw ConfigError("fit: starts and max_iterations must be >= 1");
    if (!(c.fit.gradient_tolerance > 0.0) || !(c.fit.step_tolerance > 0.0)) throw ConfigError("fit: tolerances must be > 0");
    const auto& q = c.quality;
    if (!(q.damping_low < q.damping_high) || !(q.tau_max > 0.0) || !(q.l1_max > 0.0) || q.min_duration < 0.0)
        throw ConfigError("quality: inconsistent thresholds");
    const auto& b = c.classifier.booster;
    if (b.max_depth < 1 || b.n_trees < 1 || !(b.learning_rate > 0.0) || b.l2 < 0.0 || !(b.subsample > 0.0 && b.subsample <= 1.0))
        throw ConfigError("classifier.booster: invalid hyper-parameters");
    const auto& r = c.classifier.fixed_rates;
    if (!(r.p_fp >= 0.0 && r.p_fp <= 1.0 && r.p_fn >= 0.0 && r.p_fn <= 1.0))
        throw ConfigError("classifier: p_fp and p_fn must lie in [0, 1]");
    if (!(c.classifier.decision_threshold >= 0.0 && c.classifier.decision_threshold <= 1.0))
        throw ConfigError("classifier: threshold must lie in [0, 1]");
    try {
        validate(c.weights);
        validate(c.bounds);
        validate(c.cohort);
        c.class_profiles();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read;
    RunConfig c;
    try {
        check_keys(j, "config", {"seed", "jobs", "weights", "bounds", "fit", "quality", "dispersion_floor", "grid_step",
                                 "classifier", "synth"});
        read(j, "seed", c.seed);
        read(j, "jobs", c.jobs);
        read(j, "dispersion_floor", c.dispersion_floor);
        read(j, "grid_step", c.grid_step);
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            check_keys(w, "weights", {"w1", "w2", "t0"});
            read(w, "w1", c.weights.w1);
            read(w, "w2", c.weights.w2);
            read(w, "t0", c.weights.t0);
        }
        if (j.contains("bounds")) {
            const auto& b = j["bounds"];
            check_keys(b, "bounds", {"lower", "upper"});
            read(b, "lower", c.bounds.lower);
            read(b, "upper", c.bounds.upper);
        }
        if (j.contains("fit")) {
            const auto& f = j["fit"];
            check_keys(f, "fit", {"gradient_tolerance", "step_tolerance", "max_iterations", "starts", "min_samples"});
            read(f, "gradient_tolerance", c.fit.gradient_tolerance);
            read(f, "step_tolerance", c.fit.step_tolerance);
            read(f, "max_iterations", c.fit.max_iterations);
            read(f, "starts", c.fit.starts);
            read(f, "min_samples", c.fit.min_samples);
        }
        if (j.contains("quality")) {
            const auto& q = j["quality"];
            check_keys(q, "quality", {"min_duration", "damping_low", "damping_high", "tau_max", "l1_max"});
            read(q, "min_duration", c.quality.min_duration);
            read(q, "damping_low", c.quality.damping_low);
            read(q, "damping_high", c.quality.damping_high);
            read(q, "tau_max", c.quality.tau_max);
            read(q, "l1_max", c.quality.l1_max);
        }
        if (j.contains("classifier")) {
            const auto& k = j["classifier"];
            check_keys(k, "classifier", {"scheme", "booster", "feature_kinds", "estimate_rates", "p_fp", "p_fn",
                                         "threshold", "grid_search", "grid"});
            if (k.contains("scheme")) c.classifier.scheme = parse_scheme(k["scheme"].get<std::string>());
            if (k.contains("booster")) {
                check_keys(k["booster"], "classifier.booster",
                           {"max_depth", "n_trees", "learning_rate", "l2", "min_child_hessian", "subsample", "seed"});
                c.classifier.booster = k["booster"].get<gbdt::Params>();
            }
            if (k.contains("feature_kinds")) {
                const auto& fk = k["feature_kinds"];
                if (!fk.is_object()) throw ConfigError("classifier.feature_kinds: expected an object");
                for (const auto& [name, kind] : fk.items()) {
                    int idx = -1;
                    for (int i = 0; i < kFeatureCount; ++i)
                        if (kFeatureNames[i] == name) idx = i;
                    if (idx < 0) throw ConfigError("classifier.feature_kinds: unknown feature '" + name + "'");
                    const auto s = kind.get<std::string>();
                    if (s != "rate" && s != "absolute") throw ConfigError("classifier.feature_kinds: kind must be rate or absolute");
                    c.classifier.kinds[idx] = s == "rate" ? FeatureKind::rate : FeatureKind::absolute;
                }
            }
            read(k, "estimate_rates", c.classifier.estimate_rates);
            read(k, "p_fp", c.classifier.fixed_rates.p_fp);
            read(k, "p_fn", c.classifier.fixed_rates.p_fn);
            read(k, "threshold", c.classifier.decision_threshold);
            read(k, "grid_search", c.classifier.grid_search);
            if (k.contains("grid")) {
                const auto& g = k["grid"];
                check_keys(g, "classifier.grid", {"max_depth", "n_trees", "learning_rate", "folds"});
                read(g, "max_depth", c.classifier.grid.max_depth);
                read(g, "n_trees", c.classifier.grid.n_trees);
                read(g, "learning_rate", c.classifier.grid.learning_rate);
                read(g, "folds", c.classifier.grid.folds);
            }
        }
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            check_keys(s, "synth", {"n_patients", "rois_per_patient", "n_cancer", "suspicious_fraction",
                                    "sample_interval_s", "duration_s", "gain_spread", "delay_spread", "profiles"});
            read(s, "n_patients", c.cohort.n_patients);
            read(s, "rois_per_patient", c.cohort.rois_per_patient);
            read(s, "n_cancer", c.cohort.n_cancer);
            read(s, "suspicious_fraction", c.cohort.suspicious_fraction);
            read(s, "sample_interval_s", c.cohort.sample_interval_s);
            read(s, "duration_s", c.cohort.duration_s);
            read(s, "gain_spread", c.cohort.gain_spread);
            read(s, "delay_spread", c.cohort.delay_spread);
            read(s, "profiles", c.profiles);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    c.cohort.seed = c.seed;
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return parse_config(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

}  // namespace perfusion
