#pragma once

// Gradient-boosted decision trees for multiclass classification: softmax
// loss, second-order (Newton) leaf values and exact greedy splits over
// presorted feature columns.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "perfusion/errors.hpp"

namespace perfusion::gbdt {

struct Params {
    int max_depth = 3;
    int n_trees = 200;  // boosting rounds
    double learning_rate = 0.1;
    double l2 = 1.0;
    double min_child_hessian = 1e-3;
    double subsample = 1.0;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const Params& p) {
    j = {{"max_depth", p.max_depth}, {"n_trees", p.n_trees}, {"learning_rate", p.learning_rate},
         {"l2", p.l2}, {"min_child_hessian", p.min_child_hessian}, {"subsample", p.subsample}, {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, Params& p) {
    p.max_depth = j.value("max_depth", p.max_depth);
    p.n_trees = j.value("n_trees", p.n_trees);
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.l2 = j.value("l2", p.l2);
    p.min_child_hessian = j.value("min_child_hessian", p.min_child_hessian);
    p.subsample = j.value("subsample", p.subsample);
    p.seed = j.value("seed", p.seed);
}

struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<Node> nodes;

    double predict(std::span<const double> x) const {
        int i = 0;
        while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
        return nodes[i].value;
    }
};

/// Rows are feature vectors; labels are class indices in [0, n_classes).
struct Dataset {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
};

class Model {
public:
    Model() = default;

    int n_classes() const { return static_cast<int>(base_.size()); }
    int n_features() const { return n_features_; }
    const Params& params() const { return params_; }

    std::vector<double> predict_proba(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != n_features_) throw PredictError("feature vector has wrong length");
        for (double v : x)
            if (!std::isfinite(v)) throw PredictError("feature vector has non-finite entries");
        std::vector<double> score = base_;
        for (const auto& round : trees_)
            for (int k = 0; k < n_classes(); ++k) score[k] += params_.learning_rate * round[k].predict(x);
        return softmax(score);
    }

    static std::vector<double> softmax(std::vector<double> s) {
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& v : s) z += (v = std::exp(v - m));
        for (double& v : s) v /= z;
        return s;
    }

    static Model train(const Dataset& data, int n_classes, const Params& params);

    nlohmann::json to_json() const {
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& round : trees_) {
            nlohmann::json jr = nlohmann::json::array();
            for (const auto& t : round) {
                nlohmann::json jn = nlohmann::json::array();
                for (const auto& n : t.nodes) jn.push_back({n.feature, n.threshold, n.left, n.right, n.value});
                jr.push_back(jn);
            }
            trees.push_back(jr);
        }
        return {{"params", params_}, {"n_features", n_features_}, {"base_score", base_}, {"trees", trees}};
    }

    static Model from_json(const nlohmann::json& j) {
        Model m;
        m.params_ = j.at("params").get<Params>();
        m.n_features_ = j.at("n_features").get<int>();
        m.base_ = j.at("base_score").get<std::vector<double>>();
        for (const auto& jr : j.at("trees")) {
            std::vector<Tree> round;
            for (const auto& jt : jr) {
                Tree t;
                for (const auto& jn : jt)
                    t.nodes.push_back({jn.at(0).get<int>(), jn.at(1).get<double>(), jn.at(2).get<int>(),
                                       jn.at(3).get<int>(), jn.at(4).get<double>()});
                round.push_back(std::move(t));
            }
            if (static_cast<int>(round.size()) != m.n_classes()) throw InvalidInput("model: tree round size mismatch");
            m.trees_.push_back(std::move(round));
        }
        return m;
    }

private:
    Params params_;
    int n_features_ = 0;
    std::vector<double> base_;
    std::vector<std::vector<Tree>> trees_;  // [round][class]
};

namespace detail {

struct Split {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const Dataset& data, const std::vector<std::vector<int>>& sorted, const Params& p)
        : data_(data), sorted_(sorted), p_(p), node_of_(data.rows.size(), -1) {}

    Tree build(const std::vector<double>& g, const std::vector<double>& h, const std::vector<char>& in_sample) {
        Tree tree;
        tree.nodes.push_back({});
        std::vector<int> frontier;
        std::fill(node_of_.begin(), node_of_.end(), -1);
        for (std::size_t i = 0; i < node_of_.size(); ++i)
            if (in_sample[i]) node_of_[i] = 0;
        frontier.push_back(0);

        for (int depth = 0; depth <= p_.max_depth && !frontier.empty(); ++depth) {
            // Gradient and hessian totals per frontier node.
            std::vector<double> gs(tree.nodes.size(), 0.0), hs(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < node_of_.size(); ++i)
                if (node_of_[i] >= 0) {
                    gs[node_of_[i]] += g[i];
                    hs[node_of_[i]] += h[i];
                }
            for (int id : frontier) tree.nodes[id].value = -gs[id] / (hs[id] + p_.l2);
            if (depth == p_.max_depth) break;

            std::vector<Split> best(tree.nodes.size());
            const int nf = static_cast<int>(sorted_.size());
            std::vector<double> gl(tree.nodes.size()), hl(tree.nodes.size());
            std::vector<double> last(tree.nodes.size());
            std::vector<char> seen(tree.nodes.size());
            for (int f = 0; f < nf; ++f) {
                std::fill(gl.begin(), gl.end(), 0.0);
                std::fill(hl.begin(), hl.end(), 0.0);
                std::fill(seen.begin(), seen.end(), 0);
                for (int i : sorted_[f]) {
                    const int id = node_of_[i];
                    if (id < 0) continue;
                    const double x = data_.rows[i][f];
                    if (seen[id] && x > last[id]) {
                        const double gr = gs[id] - gl[id], hr = hs[id] - hl[id];
                        if (hl[id] >= p_.min_child_hessian && hr >= p_.min_child_hessian) {
                            const double gain = gl[id] * gl[id] / (hl[id] + p_.l2) + gr * gr / (hr + p_.l2) -
                                                gs[id] * gs[id] / (hs[id] + p_.l2);
                            if (gain > best[id].gain + 1e-12) best[id] = {gain, f, 0.5 * (last[id] + x)};
                        }
                    }
                    gl[id] += g[i];
                    hl[id] += h[i];
                    last[id] = x;
                    seen[id] = 1;
                }
            }

            std::vector<int> next;
            for (int id : frontier) {
                if (best[id].feature < 0) continue;
                const int l = static_cast<int>(tree.nodes.size());
                tree.nodes.push_back({});
                tree.nodes.push_back({});
                tree.nodes[id].feature = best[id].feature;
                tree.nodes[id].threshold = best[id].threshold;
                tree.nodes[id].left = l;
                tree.nodes[id].right = l + 1;
                next.push_back(l);
                next.push_back(l + 1);
            }
            for (std::size_t i = 0; i < node_of_.size(); ++i) {
                const int id = node_of_[i];
                if (id < 0) continue;
                if (tree.nodes[id].feature < 0) {
                    node_of_[i] = -1;  // settled in a leaf
                    continue;
                }
                const Node& n = tree.nodes[id];
                node_of_[i] = data_.rows[i][n.feature] <= n.threshold ? n.left : n.right;
            }
            frontier = std::move(next);
        }
        return tree;
    }

private:
    const Dataset& data_;
    const std::vector<std::vector<int>>& sorted_;
    const Params& p_;
    std::vector<int> node_of_;
};

}  // namespace detail

/// Rows are put in a canonical order first, so the fitted model does not
/// depend on the order in which the caller lists them.
inline Model Model::train(const Dataset& input, int n_classes, const Params& params) {
    const std::size_t n = input.rows.size();
    if (n == 0) throw TrainingError("empty training set");
    if (input.labels.size() != n) throw TrainingError("label count mismatch");
    if (n_classes < 2) throw TrainingError("need at least 2 classes");
    if (params.max_depth < 1 || params.n_trees < 1 || !(params.learning_rate > 0.0) ||
        !(params.subsample > 0.0 && params.subsample <= 1.0))
        throw TrainingError("invalid boosting parameters");
    const std::size_t nf = input.rows.front().size();
    for (std::size_t i = 0; i < n; ++i) {
        if (input.rows[i].size() != nf) throw TrainingError("ragged feature rows");
        for (double v : input.rows[i])
            if (!std::isfinite(v)) throw TrainingError("non-finite feature value");
        if (input.labels[i] < 0 || input.labels[i] >= n_classes) throw TrainingError("label out of range");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (input.rows[a] != input.rows[b]) return input.rows[a] < input.rows[b];
        return input.labels[a] < input.labels[b];
    });
    Dataset data;
    for (std::size_t i : order) {
        data.rows.push_back(input.rows[i]);
        data.labels.push_back(input.labels[i]);
    }

    std::vector<double> counts(n_classes, 0.0);
    for (int y : data.labels) counts[y] += 1.0;
    int present = 0;
    for (double c : counts) present += c > 0.0;
    if (present < 2) throw TrainingError("training set contains a single class");

    Model m;
    m.params_ = params;
    m.n_features_ = static_cast<int>(nf);
    m.base_.resize(n_classes);
    for (int k = 0; k < n_classes; ++k) m.base_[k] = std::log((counts[k] + 0.5) / (static_cast<double>(n) + 0.5 * n_classes));

    std::vector<std::vector<int>> sorted(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        sorted[f].resize(n);
        std::iota(sorted[f].begin(), sorted[f].end(), 0);
        std::stable_sort(sorted[f].begin(), sorted[f].end(),
                         [&](int a, int b) { return data.rows[a][f] < data.rows[b][f]; });
    }

    std::vector<std::vector<double>> score(n, m.base_);
    std::vector<double> g(n), h(n);
    std::vector<char> in_sample(n, 1);
    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    detail::TreeBuilder builder(data, sorted, m.params_);

    for (int round = 0; round < params.n_trees; ++round) {
        if (params.subsample < 1.0)
            for (auto& s : in_sample) s = unit(rng) < params.subsample;
        std::vector<std::vector<double>> prob(n);
        for (std::size_t i = 0; i < n; ++i) prob[i] = softmax(score[i]);
        std::vector<Tree> trees;
        for (int k = 0; k < n_classes; ++k) {
            for (std::size_t i = 0; i < n; ++i) {
                const double pk = prob[i][k];
                g[i] = pk - (data.labels[i] == k ? 1.0 : 0.0);
                h[i] = std::max(pk * (1.0 - pk), 1e-16);
            }
            trees.push_back(builder.build(g, h, in_sample));
        }
        for (std::size_t i = 0; i < n; ++i)
            for (int k = 0; k < n_classes; ++k) score[i][k] += params.learning_rate * trees[k].predict(data.rows[i]);
        m.trees_.push_back(std::move(trees));
    }
    return m;
}

}  // namespace perfusion::gbdt
