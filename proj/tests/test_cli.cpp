#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "perfusion/perfusion.hpp"

namespace fs = std::filesystem;
using namespace perfusion;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(PERFUSION_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        // Per process: ctest may run the cases of this suite concurrently.
        root_ = fs::temp_directory_path() / ("perfusion_cli_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        std::ofstream(root_ / "config.json") << R"({"seed": 4, "synth": {"n_patients": 4, "rois_per_patient": 5, "n_cancer": 2}})";
        ASSERT_EQ(run("synth --config " + (root_ / "config.json").string() + " --out " + (root_ / "cohort").string()), 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }
    static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, FitWritesOneRowPerRoiAndIsReproducible) {
    const auto m = (root_ / "cohort" / "manifest.jsonl").string();
    ASSERT_EQ(run("fit --manifest " + m + " --out " + (root_ / "fit1").string()), 0);
    ASSERT_EQ(run("fit --manifest " + m + " --jobs 2 --out " + (root_ / "fit2").string()), 0);
    const auto a = slurp(root_ / "fit1" / "fits.csv");
    EXPECT_EQ(a, slurp(root_ / "fit2" / "fits.csv"));
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 4 * 5);
}

TEST_F(Cli, CorruptFileGivesPartialFailure) {
    const auto dir = root_ / "corrupt";
    fs::remove_all(dir);
    fs::copy(root_ / "cohort", dir, fs::copy_options::recursive);
    std::ofstream(dir / "P02" / "R03.csv") << "garbage\n";
    EXPECT_EQ(run("fit --manifest " + (dir / "manifest.jsonl").string() + " --out " + (dir / "out").string()), 2);
    const auto fits = read_fits(dir / "out" / "fits.csv");
    EXPECT_EQ(fits.size(), 4u * 5 - 1);
}

TEST_F(Cli, FeaturesTrainEvaluate) {
    const auto m = (root_ / "cohort" / "manifest.jsonl").string();
    const auto out = root_ / "pipe";
    ASSERT_EQ(run("fit --manifest " + m + " --out " + out.string()), 0);
    ASSERT_EQ(run("features --manifest " + m + " --fits " + (out / "fits.csv").string() + " --out " + out.string()), 0);
    const auto sigs = (out / "signatures.csv").string();
    ASSERT_EQ(run("train --signatures " + sigs + " --out " + out.string()), 0);
    EXPECT_NO_THROW(classifier_from_json(nlohmann::json::parse(slurp(out / "model.json"))));
    ASSERT_EQ(run("evaluate --signatures " + sigs + " --out " + out.string()), 0);
    const auto report = nlohmann::json::parse(slurp(out / "report.json"));
    EXPECT_TRUE(report.contains("case_accuracy"));
    EXPECT_EQ(report["confusion"]["tp"].get<int>() + report["confusion"]["fn"].get<int>(), 2);
    const auto again = summarize(read_predictions(out / "predictions.csv"));
    EXPECT_EQ(again.case_accuracy, report["case_accuracy"].get<double>());
    EXPECT_EQ(again.roi_accuracy, report["roi_accuracy"].get<double>());
    EXPECT_TRUE(fs::exists(out / "report.txt"));
}

TEST_F(Cli, InspectUnderdampedShowsOscillation) {
    const PerfusionParams p{8, 0.15, 80, 250, 10, 5};
    RoiSeries s;
    s.sample_interval_s = 0.1;
    for (int k = 0; k <= 3000; ++k) s.intensity.push_back(response(p, 0.1 * k));
    s.dispersion.assign(s.size(), 1.0);
    save_series(root_ / "under.csv", s);
    ASSERT_EQ(run("inspect --roi " + (root_ / "under.csv").string() + " --out " + (root_ / "inspect").string()), 0);
    std::ifstream in(root_ / "inspect" / "inspect.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,data,fitted,weight");
    std::vector<double> fitted;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        for (int i = 0; i < 3; ++i) std::getline(ss, cell, ',');
        fitted.push_back(std::stod(cell));
    }
    int sign_changes = 0;
    for (std::size_t k = 2; k < fitted.size(); ++k)
        sign_changes += ((fitted[k] - fitted[k - 1]) > 0) != ((fitted[k - 1] - fitted[k - 2]) > 0);
    EXPECT_GE(sign_changes, 2);
}

TEST_F(Cli, InspectRejectedAndFlat) {
    RoiSeries s;
    s.sample_interval_s = 0.1;
    s.intensity.assign(900, 20.0);  // 89.9 s: too short
    s.dispersion.assign(900, 1.0);
    save_series(root_ / "short.csv", s);
    EXPECT_EQ(run("inspect --roi " + (root_ / "short.csv").string() + " --out " + (root_ / "i2").string()), 3);
    s.intensity.assign(3001, 20.0);
    s.dispersion.assign(3001, 1.0);
    save_series(root_ / "flat.csv", s);
    const int rc = run("inspect --roi " + (root_ / "flat.csv").string() + " --out " + (root_ / "i3").string());
    EXPECT_TRUE(rc == 0 || rc == 3);
    EXPECT_TRUE(fs::exists(root_ / "i3" / "inspect.csv"));
}

TEST_F(Cli, UsageAndConfigErrors) {
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("fit"), 1);
    EXPECT_EQ(run("bogus"), 1);
    std::ofstream(root_ / "bad.json") << R"({"weights": {"w1": 0.5}})";
    EXPECT_EQ(run("synth --config " + (root_ / "bad.json").string() + " --out " + (root_ / "x").string()), 1);
    EXPECT_EQ(run("evaluate --out " + (root_ / "x").string()), 1);
    EXPECT_EQ(run("--help"), 0);
}
