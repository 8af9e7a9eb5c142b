#pragma once

// ROI time-series: pixel aggregation, dispersion flooring, CSV series files
// and the JSON-lines cohort manifest.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "perfusion/errors.hpp"

namespace perfusion {

enum class TissueLabel { normal, benign, cancer };

inline constexpr int kLabelCount = 3;

inline std::string_view to_string(TissueLabel l) {
    switch (l) {
        case TissueLabel::normal: return "normal";
        case TissueLabel::benign: return "benign";
        case TissueLabel::cancer: return "cancer";
    }
    return "?";
}

inline TissueLabel parse_label(std::string_view s) {
    if (s == "normal") return TissueLabel::normal;
    if (s == "benign") return TissueLabel::benign;
    if (s == "cancer") return TissueLabel::cancer;
    throw InvalidInput("unknown tissue label '" + std::string(s) + "'");
}

struct RoiSeries {
    std::string patient_id;
    std::string roi_id;
    double sample_interval_s = 0.0;
    std::vector<double> intensity;
    std::vector<double> dispersion;
    std::optional<TissueLabel> label;

    std::size_t size() const { return intensity.size(); }
    double time(std::size_t k) const { return static_cast<double>(k) * sample_interval_s; }
    double duration() const { return intensity.empty() ? 0.0 : time(intensity.size() - 1); }
};

inline void validate(const RoiSeries& s) {
    if (!(s.sample_interval_s > 0.0) || !std::isfinite(s.sample_interval_s))
        throw InvalidInput("sample interval must be positive");
    if (s.intensity.size() < 2) throw InvalidInput("series needs at least 2 samples");
    if (s.intensity.size() != s.dispersion.size())
        throw InvalidInput("intensity and dispersion lengths differ");
    for (double x : s.intensity)
        if (!std::isfinite(x) || x < 0.0) throw InvalidInput("intensity must be finite and >= 0");
    for (double x : s.dispersion)
        if (!std::isfinite(x) || x < 0.0) throw InvalidInput("dispersion must be finite and >= 0");
}

/// Brightness of one ROI over time; every frame is rows x cols, row-major.
struct PixelBlock {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> timestamps;
    std::vector<std::vector<double>> frames;
};

/// Per-frame mean and population standard deviation of pixel brightness.
inline RoiSeries aggregate_pixels(const PixelBlock& block) {
    const std::size_t npix = block.rows * block.cols;
    if (npix == 0) throw InvalidInput("aggregate_pixels: empty frame");
    if (block.frames.size() < 2) throw InvalidInput("aggregate_pixels: need at least 2 frames");
    if (block.timestamps.size() != block.frames.size())
        throw InvalidInput("aggregate_pixels: one timestamp per frame required");
    for (std::size_t k = 1; k < block.timestamps.size(); ++k)
        if (!(block.timestamps[k] > block.timestamps[k - 1]))
            throw InvalidInput("aggregate_pixels: timestamps must be strictly increasing");
    const double dt = (block.timestamps.back() - block.timestamps.front()) /
                      static_cast<double>(block.timestamps.size() - 1);
    for (std::size_t k = 1; k < block.timestamps.size(); ++k)
        if (std::abs(block.timestamps[k] - block.timestamps[k - 1] - dt) > 1e-6 * dt)
            throw InvalidInput("aggregate_pixels: frames must be evenly spaced");

    RoiSeries out;
    out.sample_interval_s = dt;
    out.intensity.reserve(block.frames.size());
    out.dispersion.reserve(block.frames.size());
    for (const auto& frame : block.frames) {
        if (frame.size() != npix) throw InvalidInput("aggregate_pixels: frame size mismatch");
        // Welford
        double mean = 0.0, m2 = 0.0;
        std::size_t n = 0;
        for (double px : frame) {
            if (!std::isfinite(px) || px < 0.0) throw InvalidInput("aggregate_pixels: bad pixel value");
            ++n;
            const double delta = px - mean;
            mean += delta / static_cast<double>(n);
            m2 += delta * (px - mean);
        }
        out.intensity.push_back(mean);
        out.dispersion.push_back(std::sqrt(std::max(0.0, m2 / static_cast<double>(n))));
    }
    return out;
}

inline constexpr double kDefaultDispersionFloor = 1.0;

inline RoiSeries threshold_dispersion(RoiSeries series, double floor) {
    if (!(floor > 0.0)) throw InvalidInput("dispersion floor must be > 0");
    for (double& d : series.dispersion) d = std::max(d, floor);
    return series;
}

// ---------------------------------------------------------------------------
// Series files: header "t,intensity,dispersion", one row per sample.

enum class SeriesFormat { csv };

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_double(std::string_view field, std::size_t line, const char* what) {
    field = trim(field);
    double v = 0.0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec != std::errc() || ptr != end || field.empty())
        throw ParseError(std::string("malformed ") + what + " '" + std::string(field) + "'", line);
    return v;
}

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

inline RoiSeries parse_series(std::istream& in, std::size_t first_line = 1) {
    std::string line;
    std::size_t lineno = first_line - 1;
    bool header = false;
    std::vector<double> times;
    RoiSeries out;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view row = detail::trim(line);
        if (row.empty()) continue;
        if (!header) {
            if (row != "t,intensity,dispersion") throw ParseError("expected header 't,intensity,dispersion'", lineno);
            header = true;
            continue;
        }
        std::vector<std::string_view> fields;
        std::size_t pos = 0;
        while (true) {
            const auto comma = row.find(',', pos);
            fields.push_back(row.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        if (fields.size() != 3) throw ParseError("expected 3 columns", lineno);
        const double t = detail::parse_double(fields[0], lineno, "time");
        const double i = detail::parse_double(fields[1], lineno, "intensity");
        const double d = detail::parse_double(fields[2], lineno, "dispersion");
        if (!std::isfinite(t) || !std::isfinite(i) || !std::isfinite(d)) throw ParseError("non-finite value", lineno);
        if (i < 0.0) throw ParseError("negative intensity", lineno);
        if (d < 0.0) throw ParseError("negative dispersion", lineno);
        if (times.empty()) {
            if (std::abs(t) > 1e-9) throw ParseError("time axis must start at 0", lineno);
        } else if (!(t > times.back())) {
            throw ParseError("time not strictly increasing", lineno);
        } else if (times.size() >= 2) {
            const double dt = times[1] - times[0];
            const double expect = times[0] + static_cast<double>(times.size()) * dt;
            if (std::abs(t - expect) > 1e-6 * dt + 1e-9 * std::abs(t))
                throw ParseError("time step not constant", lineno);
        }
        times.push_back(t);
        out.intensity.push_back(i);
        out.dispersion.push_back(d);
    }
    if (!header) throw ParseError("missing header", 0);
    if (times.size() < 2) throw ParseError("series needs at least 2 samples", lineno);
    out.sample_interval_s = times[1] - times[0];
    return out;
}

inline RoiSeries load_series(const std::filesystem::path& path, SeriesFormat = SeriesFormat::csv) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string(), 0);
    return parse_series(in);
}

inline void write_series(std::ostream& out, const RoiSeries& s) {
    out << "t,intensity,dispersion\n";
    for (std::size_t k = 0; k < s.size(); ++k)
        out << detail::format_double(s.time(k)) << ',' << detail::format_double(s.intensity[k]) << ','
            << detail::format_double(s.dispersion[k]) << '\n';
}

inline void save_series(const std::filesystem::path& path, const RoiSeries& s) {
    validate(s);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    write_series(out, s);
}

// ---------------------------------------------------------------------------
// Cohort manifest: JSON lines, one patient per line:
// {"patient_id": "P01", "pathology": "cancer",
//  "rois": [{"roi_id": "R01", "file": "P01/R01.csv", "label": "normal"}, ...]}
// Relative file paths resolve against the manifest's directory.

struct RoiEntry {
    std::string roi_id;
    std::filesystem::path file;
    TissueLabel label = TissueLabel::normal;
};

struct PatientEntry {
    std::string patient_id;
    TissueLabel pathology = TissueLabel::normal;
    std::vector<RoiEntry> rois;
};

struct CohortManifest {
    std::vector<PatientEntry> patients;
};

struct ManifestLoadOptions {
    bool require_files = true;
};

inline CohortManifest load_manifest(const std::filesystem::path& path, ManifestLoadOptions opt = {}) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest " + path.string(), 0);
    const auto base = path.parent_path();
    CohortManifest m;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PatientEntry p;
            p.patient_id = j.at("patient_id").get<std::string>();
            p.pathology = parse_label(j.at("pathology").get<std::string>());
            for (const auto& r : j.at("rois")) {
                RoiEntry e;
                e.roi_id = r.at("roi_id").get<std::string>();
                e.file = r.at("file").get<std::string>();
                if (e.file.is_relative()) e.file = base / e.file;
                e.label = parse_label(r.at("label").get<std::string>());
                if (opt.require_files && !std::filesystem::exists(e.file))
                    throw ParseError("missing ROI file " + e.file.string(), lineno);
                p.rois.push_back(std::move(e));
            }
            if (!seen.insert(p.patient_id).second) throw ParseError("duplicate patient_id " + p.patient_id, lineno);
            m.patients.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("manifest: ") + e.what(), lineno);
        } catch (const InvalidInput& e) {
            throw ParseError(std::string("manifest: ") + e.what(), lineno);
        }
    }
    return m;
}

/// ROI file paths are written relative to the manifest directory when possible.
inline void save_manifest(const std::filesystem::path& path, const CohortManifest& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    const auto base = path.parent_path();
    for (const auto& p : m.patients) {
        nlohmann::json j;
        j["patient_id"] = p.patient_id;
        j["pathology"] = std::string(to_string(p.pathology));
        j["rois"] = nlohmann::json::array();
        for (const auto& r : p.rois) {
            auto rel = base.empty() ? r.file : r.file.lexically_relative(base);
            if (rel.empty()) rel = r.file;
            j["rois"].push_back({{"roi_id", r.roi_id}, {"file", rel.generic_string()}, {"label", std::string(to_string(r.label))}});
        }
        out << j.dump() << '\n';
    }
}

}  // namespace perfusion
