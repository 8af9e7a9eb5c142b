#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "perfusion/ingest.hpp"

using namespace perfusion;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("perfusion_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PixelBlock block_of(std::vector<std::vector<double>> frames, std::size_t rows, std::size_t cols) {
    PixelBlock b{rows, cols, {}, std::move(frames)};
    for (std::size_t k = 0; k < b.frames.size(); ++k) b.timestamps.push_back(0.5 * static_cast<double>(k));
    return b;
}

}  // namespace

TEST(AggregatePixels, IdenticalPixels) {
    const auto s = aggregate_pixels(block_of({{7, 7, 7, 7}, {7, 7, 7, 7}}, 2, 2));
    EXPECT_EQ(s.intensity[0], 7.0);
    EXPECT_EQ(s.dispersion[0], 0.0);
    EXPECT_EQ(s.sample_interval_s, 0.5);
}

TEST(AggregatePixels, TwoPixelFrame) {
    const auto s = aggregate_pixels(block_of({{1, 3}, {2, 2}}, 1, 2));
    EXPECT_DOUBLE_EQ(s.intensity[0], 2.0);
    EXPECT_DOUBLE_EQ(s.dispersion[0], 1.0);
}

TEST(AggregatePixels, MatchesTwoPassOnLargeRandomFrame) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 4000);
    std::vector<std::vector<double>> frames(3, std::vector<double>(100 * 100));
    for (auto& f : frames)
        for (auto& px : f) px = u(rng);
    const auto s = aggregate_pixels(block_of(frames, 100, 100));
    for (std::size_t k = 0; k < frames.size(); ++k) {
        double sum = 0;
        for (double px : frames[k]) sum += px;
        const double mean = sum / frames[k].size();
        double ss = 0;
        for (double px : frames[k]) ss += (px - mean) * (px - mean);
        const double sd = std::sqrt(ss / frames[k].size());
        EXPECT_LE(std::abs(s.intensity[k] - mean), 1e-12 * mean);
        EXPECT_LE(std::abs(s.dispersion[k] - sd), 1e-12 * sd);
    }
}

TEST(AggregatePixels, MeanWithinFrameRange) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0, 10);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> frames(4, std::vector<double>(6));
        for (auto& f : frames)
            for (auto& px : f) px = u(rng);
        const auto s = aggregate_pixels(block_of(frames, 2, 3));
        for (std::size_t k = 0; k < frames.size(); ++k) {
            const auto [lo, hi] = std::minmax_element(frames[k].begin(), frames[k].end());
            EXPECT_GE(s.intensity[k], *lo);
            EXPECT_LE(s.intensity[k], *hi);
        }
    }
}

TEST(AggregatePixels, Errors) {
    EXPECT_THROW(aggregate_pixels(block_of({{}, {}}, 0, 0)), InvalidInput);
    EXPECT_THROW(aggregate_pixels(block_of({{1, 2}, {1}}, 1, 2)), InvalidInput);
    auto b = block_of({{1}, {2}, {3}}, 1, 1);
    b.timestamps = {0, 1, 1};
    EXPECT_THROW(aggregate_pixels(b), InvalidInput);
}

TEST(ThresholdDispersion, Examples) {
    RoiSeries s{"p", "r", 1.0, {1, 1, 1}, {0, 0.5, 2}, {}};
    EXPECT_EQ(threshold_dispersion(s, 1.0).dispersion, (std::vector<double>{1, 1, 2}));
    s.dispersion = {0, 0, 0};
    EXPECT_EQ(threshold_dispersion(s, 0.1).dispersion, (std::vector<double>{0.1, 0.1, 0.1}));
    s.dispersion = {3, 4, 5};
    EXPECT_EQ(threshold_dispersion(s, 1.0).dispersion, s.dispersion);
    EXPECT_THROW(threshold_dispersion(s, 0.0), InvalidInput);
}

TEST(ThresholdDispersion, Idempotent) {
    RoiSeries s{"p", "r", 1.0, {1, 1, 1, 1}, {0, 0.3, 1.2, 7}, {}};
    const auto once = threshold_dispersion(s, 1.0);
    EXPECT_EQ(threshold_dispersion(once, 1.0).dispersion, once.dispersion);
}

TEST(ParseSeries, WellFormed) {
    std::istringstream in("t,intensity,dispersion\n0,1,0.5\n0.1,2,0.5\n0.2,3,0.5\n");
    const auto s = parse_series(in);
    EXPECT_EQ(s.size(), 3u);
    EXPECT_DOUBLE_EQ(s.sample_interval_s, 0.1);
    EXPECT_EQ(s.intensity[2], 3.0);
}

TEST(ParseSeries, ErrorsCarryLineNumbers) {
    const auto line_of = [](const std::string& text) {
        std::istringstream in(text);
        try {
            parse_series(in);
        } catch (const ParseError& e) {
            return e.line();
        }
        return std::size_t(0);
    };
    EXPECT_EQ(line_of("t,intensity,dispersion\n0,1,1\n0.1,-2,1\n"), 3u);
    EXPECT_EQ(line_of("t,intensity,dispersion\n0,1,1\n0.1,2,1\n0.1,2,1\n"), 4u);
    EXPECT_EQ(line_of("t,intensity,dispersion\n0,1,1\n0.1,2,1\n0.3,2,1\n"), 4u);
    EXPECT_EQ(line_of("t,intensity,dispersion\n0,1,1\n0.1,abc,1\n"), 3u);
    EXPECT_EQ(line_of("t,intensity,dispersion\n0,1\n"), 2u);
    EXPECT_EQ(line_of("time,value\n0,1,1\n"), 1u);
    EXPECT_EQ(line_of("t,intensity,dispersion\n1,1,1\n"), 2u);
}

TEST(SeriesFiles, RoundTripIsExact) {
    const auto dir = scratch_dir("series");
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 100);
    RoiSeries s;
    s.sample_interval_s = 0.1;
    for (int k = 0; k < 500; ++k) {
        s.intensity.push_back(u(rng));
        s.dispersion.push_back(u(rng) / 7.0);
    }
    save_series(dir / "a.csv", s);
    const auto back = load_series(dir / "a.csv");
    EXPECT_EQ(back.intensity, s.intensity);
    EXPECT_EQ(back.dispersion, s.dispersion);
    EXPECT_EQ(back.sample_interval_s, s.sample_interval_s);
}

TEST(SeriesFiles, MissingFile) {
    EXPECT_THROW(load_series("/nonexistent/file.csv"), ParseError);
}

TEST(Manifest, RoundTripAndRelativePaths) {
    const auto dir = scratch_dir("manifest");
    RoiSeries s{"", "", 1.0, {1, 2, 3}, {1, 1, 1}, {}};
    save_series(dir / "P1" / "R1.csv", s);
    save_series(dir / "P1" / "R2.csv", s);
    CohortManifest m;
    m.patients.push_back({"P1", TissueLabel::cancer,
                          {{"R1", dir / "P1" / "R1.csv", TissueLabel::normal},
                           {"R2", dir / "P1" / "R2.csv", TissueLabel::cancer}}});
    save_manifest(dir / "manifest.jsonl", m);

    std::ifstream raw(dir / "manifest.jsonl");
    std::string line;
    std::getline(raw, line);
    EXPECT_NE(line.find("\"P1/R1.csv\""), std::string::npos);

    const auto back = load_manifest(dir / "manifest.jsonl");
    ASSERT_EQ(back.patients.size(), 1u);
    EXPECT_EQ(back.patients[0].pathology, TissueLabel::cancer);
    ASSERT_EQ(back.patients[0].rois.size(), 2u);
    EXPECT_EQ(back.patients[0].rois[1].label, TissueLabel::cancer);
    EXPECT_TRUE(fs::equivalent(back.patients[0].rois[0].file, dir / "P1" / "R1.csv"));
}

TEST(Manifest, RejectsDuplicatesMissingFilesAndBadLabels) {
    const auto dir = scratch_dir("manifest_bad");
    RoiSeries s{"", "", 1.0, {1, 2}, {1, 1}, {}};
    save_series(dir / "a.csv", s);
    const auto write = [&](const std::string& body) {
        std::ofstream(dir / "m.jsonl") << body;
        return dir / "m.jsonl";
    };
    const std::string ok = R"({"patient_id":"P1","pathology":"benign","rois":[{"roi_id":"R1","file":"a.csv","label":"normal"}]})";
    EXPECT_NO_THROW(load_manifest(write(ok + "\n")));
    EXPECT_THROW(load_manifest(write(ok + "\n" + ok + "\n")), ParseError);
    EXPECT_THROW(load_manifest(write(R"({"patient_id":"P1","pathology":"benign","rois":[{"roi_id":"R1","file":"b.csv","label":"normal"}]})")),
                 ParseError);
    EXPECT_THROW(load_manifest(write(R"({"patient_id":"P1","pathology":"malign","rois":[]})")), ParseError);
    EXPECT_THROW(load_manifest(write("{not json}\n")), ParseError);
}

TEST(RoiSeriesValidate, Invariants) {
    RoiSeries s{"p", "r", 0.1, {1, 2}, {0, 0}, {}};
    EXPECT_NO_THROW(validate(s));
    s.intensity = {1};
    s.dispersion = {1};
    EXPECT_THROW(validate(s), InvalidInput);
    s = {"p", "r", 0.0, {1, 2}, {0, 0}, {}};
    EXPECT_THROW(validate(s), InvalidInput);
    s = {"p", "r", 0.1, {1, -2}, {0, 0}, {}};
    EXPECT_THROW(validate(s), InvalidInput);
    s = {"p", "r", 0.1, {1, 2}, {0}, {}};
    EXPECT_THROW(validate(s), InvalidInput);
}
