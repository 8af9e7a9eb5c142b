#pragma once

// Synthetic cohorts: class-conditional model parameters, Gaussian noise and
// the same series files and manifest that ingest reads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "perfusion/errors.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/model.hpp"

namespace perfusion {

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    double sample(std::mt19937_64& rng) const { return lo + (hi - lo) * std::generate_canonical<double, 53>(rng); }
};

struct ClassProfile {
    Range tau, damping, gain, tau_input, delay, offset;
    double noise_fraction = 0.02;  // noise sd as a fraction of the noiseless peak
    double pixel_dispersion = 5.0;  // constant dispersion channel
};

struct ClassProfiles {
    ClassProfile normal, benign, cancer;

    const ClassProfile& of(TissueLabel l) const {
        return l == TissueLabel::normal ? normal : l == TissueLabel::benign ? benign : cancer;
    }
};

/// Benign tissue washes in slower (larger tau); cancer washes out slower
/// (larger tau_input). The three ranges are disjoint on those axes.
inline ClassProfiles default_profiles() {
    ClassProfile normal{{5, 10}, {0.5, 1.4}, {60, 120}, {160, 240}, {8, 20}, {10, 30}};
    ClassProfile benign = normal;
    benign.tau = {15, 25};
    ClassProfile cancer = normal;
    cancer.tau_input = {400, 600};
    return {normal, benign, cancer};
}

/// Benign and cancer ranges share most of their support.
inline ClassProfiles overlapping_profiles() {
    auto p = default_profiles();
    p.benign.tau = {5, 18};
    p.benign.tau_input = {160, 330};
    p.cancer.tau = {5, 14};
    p.cancer.tau_input = {200, 380};
    return p;
}

struct CohortSpec {
    int n_patients = 20;
    int rois_per_patient = 20;
    int n_cancer = 8;                   // the others are benign cases
    double suspicious_fraction = 0.5;   // share of ROIs carrying the case label
    double sample_interval_s = 0.1;
    double duration_s = 300.0;
    double gain_spread = 0.25;          // per-patient gain factor in [1-s, 1+s]
    double delay_spread = 2.0;          // per-patient delay shift in [-s, s] seconds
    std::uint64_t seed = 0;
};

struct SyntheticRoi {
    RoiSeries series;
    PerfusionParams truth;
};

struct SyntheticPatient {
    std::string patient_id;
    TissueLabel pathology = TissueLabel::benign;
    std::vector<SyntheticRoi> rois;
};

struct SyntheticCohort {
    std::vector<SyntheticPatient> patients;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::string numbered_id(char prefix, int i, int width) {
    std::string n = std::to_string(i);
    return prefix + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(n.size()))), '0') + n;
}

inline PerfusionParams sample_params(const ClassProfile& c, std::mt19937_64& rng) {
    PerfusionParams p;
    p.tau = c.tau.sample(rng);
    p.damping = c.damping.sample(rng);
    p.gain = c.gain.sample(rng);
    p.tau_input = c.tau_input.sample(rng);
    p.delay = c.delay.sample(rng);
    p.offset = c.offset.sample(rng);
    return p;
}

/// Noiseless response plus N(0, (fraction * peak)^2), clipped at zero.
inline RoiSeries simulate_series(const PerfusionParams& p, const ClassProfile& c, double dt, double duration,
                                 std::mt19937_64& rng) {
    validate(p);
    const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
    RoiSeries s;
    s.sample_interval_s = dt;
    s.intensity.resize(n);
    for (std::size_t k = 0; k < n; ++k) s.intensity[k] = response(p, static_cast<double>(k) * dt);
    const double sd = c.noise_fraction * *std::max_element(s.intensity.begin(), s.intensity.end());
    if (sd > 0.0) {
        std::normal_distribution<double> noise(0.0, sd);
        for (double& y : s.intensity) y = std::max(0.0, y + noise(rng));
    }
    s.dispersion.assign(n, c.pixel_dispersion);
    return s;
}

inline void validate(const CohortSpec& s) {
    if (s.n_patients < 1 || s.rois_per_patient < 1) throw InvalidInput("cohort needs patients and ROIs");
    if (s.n_cancer < 0 || s.n_cancer > s.n_patients) throw InvalidInput("n_cancer out of range");
    if (!(s.suspicious_fraction >= 0.0 && s.suspicious_fraction <= 1.0))
        throw InvalidInput("suspicious_fraction must lie in [0, 1]");
    if (!(s.sample_interval_s > 0.0) || !(s.duration_s > s.sample_interval_s))
        throw InvalidInput("bad sampling grid");
    if (!(s.gain_spread >= 0.0 && s.gain_spread < 1.0) || !(s.delay_spread >= 0.0))
        throw InvalidInput("bad per-patient spread");
}

/// Each patient has round(fraction * rois) suspicious ROIs labelled with the
/// case pathology; the rest are normal. Which patients are cancer cases is a
/// seeded shuffle. Every patient draws from its own splitmix-derived stream.
inline SyntheticCohort generate_cohort(const CohortSpec& spec, const ClassProfiles& profiles = default_profiles()) {
    validate(spec);
    std::vector<int> order(static_cast<std::size_t>(spec.n_patients));
    for (int i = 0; i < spec.n_patients; ++i) order[i] = i;
    std::mt19937_64 master(splitmix64(spec.seed));
    std::shuffle(order.begin(), order.end(), master);
    std::vector<bool> is_cancer(order.size(), false);
    for (int i = 0; i < spec.n_cancer; ++i) is_cancer[order[i]] = true;

    const int n_susp = static_cast<int>(std::lround(spec.suspicious_fraction * spec.rois_per_patient));
    const int pw = std::max(2, static_cast<int>(std::to_string(spec.n_patients).size()));
    const int rw = std::max(2, static_cast<int>(std::to_string(spec.rois_per_patient).size()));

    SyntheticCohort cohort;
    for (int i = 0; i < spec.n_patients; ++i) {
        std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1)));
        SyntheticPatient pat;
        pat.patient_id = numbered_id('P', i + 1, pw);
        pat.pathology = is_cancer[i] ? TissueLabel::cancer : TissueLabel::benign;
        const double gain_factor = 1.0 + spec.gain_spread * (2.0 * std::generate_canonical<double, 53>(rng) - 1.0);
        const double delay_shift = spec.delay_spread * (2.0 * std::generate_canonical<double, 53>(rng) - 1.0);
        for (int r = 0; r < spec.rois_per_patient; ++r) {
            const TissueLabel label = r < spec.rois_per_patient - n_susp ? TissueLabel::normal : pat.pathology;
            const auto& prof = profiles.of(label);
            PerfusionParams p = sample_params(prof, rng);
            p.gain *= gain_factor;
            p.delay = std::max(0.5, p.delay + delay_shift);
            SyntheticRoi roi{simulate_series(p, prof, spec.sample_interval_s, spec.duration_s, rng), p};
            roi.series.patient_id = pat.patient_id;
            roi.series.roi_id = numbered_id('R', r + 1, rw);
            roi.series.label = label;
            pat.rois.push_back(std::move(roi));
        }
        cohort.patients.push_back(std::move(pat));
    }
    return cohort;
}

/// Writes <dir>/<patient>/<roi>.csv, <dir>/manifest.jsonl and the
/// ground-truth parameters to <dir>/truth.csv.
inline CohortManifest write_cohort(const std::filesystem::path& dir, const SyntheticCohort& cohort) {
    std::filesystem::create_directories(dir);
    CohortManifest m;
    std::ofstream truth(dir / "truth.csv");
    if (!truth) throw InvalidInput("cannot write " + (dir / "truth.csv").string());
    truth << "patient_id,roi_id,label";
    for (const char* n : kParamNames) truth << ',' << n;
    truth << '\n';
    for (const auto& p : cohort.patients) {
        PatientEntry pe{p.patient_id, p.pathology, {}};
        for (const auto& r : p.rois) {
            const auto file = dir / p.patient_id / (r.series.roi_id + ".csv");
            save_series(file, r.series);
            pe.rois.push_back({r.series.roi_id, file, r.series.label.value_or(TissueLabel::normal)});
            truth << p.patient_id << ',' << r.series.roi_id << ',' << to_string(pe.rois.back().label);
            for (double v : to_array(r.truth)) truth << ',' << detail::format_double(v);
            truth << '\n';
        }
        m.patients.push_back(std::move(pe));
    }
    save_manifest(dir / "manifest.jsonl", m);
    return m;
}

}  // namespace perfusion
