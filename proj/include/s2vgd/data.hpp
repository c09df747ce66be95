#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "s2vgd/errors.hpp"
#include "s2vgd/rng.hpp"

namespace s2vgd {

// Per-feature standardization statistics, computed on the training split
// only. Identity (empty) until split_and_normalize runs.
struct Normalization {
    std::vector<double> input_mean, input_std;
    std::vector<double> target_mean, target_std;
};

struct Dataset {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> reg_targets;
    std::vector<int> cls_targets;
    bool classification = false;
    int n_classes = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names; // non-numeric labels, first-appearance order
    Normalization norm;

    std::size_t size() const { return inputs.size(); }
    int input_dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs[0].size()); }
};

struct CsvSchema {
    std::string target_column;                    // column name, or 0-based index as digits
    std::vector<std::string> categorical_columns; // one-hot encoded features
    bool header = true;
    bool classification_target = false;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

inline bool parse_double(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

} // namespace detail

// CSV loader. Numeric columns parse as reals; declared categorical columns
// one-hot encode in first-appearance order; any unparseable cell fails the
// load with the offending row number.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("load_csv: cannot open '" + path + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(detail::split_line(line));
    }
    if (rows.empty()) throw DataError("load_csv: '" + path + "' is empty");

    const std::size_t n_cols = rows[0].size();
    for (std::size_t r = 0; r < rows.size(); ++r)
        if (rows[r].size() != n_cols)
            throw DataError("load_csv: row " + std::to_string(r + 1) + " has " +
                            std::to_string(rows[r].size()) + " cells, expected " +
                            std::to_string(n_cols));

    std::vector<std::string> col_names(n_cols);
    std::size_t first_data_row = 0;
    if (schema.header) {
        col_names = rows[0];
        first_data_row = 1;
        if (rows.size() == 1) throw DataError("load_csv: no data rows after header");
    } else {
        for (std::size_t c = 0; c < n_cols; ++c) col_names[c] = "col" + std::to_string(c);
    }

    auto resolve = [&](const std::string& key) -> std::size_t {
        const auto it = std::find(col_names.begin(), col_names.end(), key);
        if (it != col_names.end()) return static_cast<std::size_t>(it - col_names.begin());
        if (!key.empty() && std::all_of(key.begin(), key.end(), [](char ch) {
                return ch >= '0' && ch <= '9';
            })) {
            const std::size_t idx = std::stoul(key);
            if (idx < n_cols) return idx;
        }
        throw DataError("load_csv: unknown column '" + key + "'");
    };

    const std::size_t target_idx = resolve(schema.target_column);
    std::vector<bool> categorical(n_cols, false);
    for (const auto& c : schema.categorical_columns) categorical[resolve(c)] = true;

    // First-appearance category order per categorical column.
    std::vector<std::vector<std::string>> categories(n_cols);
    for (std::size_t r = first_data_row; r < rows.size(); ++r)
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (c == target_idx || !categorical[c]) continue;
            auto& cats = categories[c];
            if (std::find(cats.begin(), cats.end(), rows[r][c]) == cats.end())
                cats.push_back(rows[r][c]);
        }

    Dataset ds;
    ds.classification = schema.classification_target;
    for (std::size_t c = 0; c < n_cols; ++c) {
        if (c == target_idx) continue;
        if (categorical[c])
            for (const auto& cat : categories[c]) ds.feature_names.push_back(col_names[c] + "=" + cat);
        else
            ds.feature_names.push_back(col_names[c]);
    }

    std::vector<std::string> class_labels; // first-appearance order for non-numeric labels
    int max_class = -1;
    for (std::size_t r = first_data_row; r < rows.size(); ++r) {
        std::vector<double> x;
        x.reserve(ds.feature_names.size());
        for (std::size_t c = 0; c < n_cols; ++c) {
            if (c == target_idx) continue;
            if (categorical[c]) {
                for (const auto& cat : categories[c]) x.push_back(rows[r][c] == cat ? 1.0 : 0.0);
            } else {
                double v;
                if (!detail::parse_double(rows[r][c], v))
                    throw DataError("load_csv: row " + std::to_string(r + 1) + " column '" +
                                    col_names[c] + "': cannot parse '" + rows[r][c] + "'");
                x.push_back(v);
            }
        }
        const std::string& t = rows[r][target_idx];
        if (schema.classification_target) {
            double v;
            int cls;
            if (detail::parse_double(t, v)) {
                cls = static_cast<int>(std::lround(v));
                if (cls < 0 || std::abs(v - cls) > 1e-9)
                    throw DataError("load_csv: row " + std::to_string(r + 1) +
                                    ": class label must be a nonnegative integer, got '" + t + "'");
            } else {
                auto it = std::find(class_labels.begin(), class_labels.end(), t);
                if (it == class_labels.end()) {
                    class_labels.push_back(t);
                    it = class_labels.end() - 1;
                }
                cls = static_cast<int>(it - class_labels.begin());
            }
            max_class = std::max(max_class, cls);
            ds.cls_targets.push_back(cls);
        } else {
            double v;
            if (!detail::parse_double(t, v))
                throw DataError("load_csv: row " + std::to_string(r + 1) +
                                ": cannot parse target '" + t + "'");
            ds.reg_targets.push_back({v});
        }
        ds.inputs.push_back(std::move(x));
    }
    if (ds.classification) {
        ds.n_classes = max_class + 1;
        ds.class_names = class_labels;
    }
    return ds;
}

constexpr double kSyntheticRegressionNoiseStd = 0.03; // variance 0.0009

inline double synthetic_regression_target(double x) {
    return x + std::sin(4.0 * x) + std::sin(13.0 * x);
}

// 20-point noisy two-cluster regression task: 12 inputs on U(0, 0.6), 8 on
// U(0.8, 1), y evaluated at x + noise.
inline Dataset synthetic_regression(RngStream& stream) {
    Dataset ds;
    ds.feature_names = {"x"};
    auto emit = [&](double lo, double hi, int n) {
        for (int i = 0; i < n; ++i) {
            const double x = stream.uniform(lo, hi);
            const double eps = stream.gaussian(0.0, kSyntheticRegressionNoiseStd);
            ds.inputs.push_back({x});
            ds.reg_targets.push_back({synthetic_regression_target(x + eps)});
        }
    };
    emit(0.0, 0.6, 12);
    emit(0.8, 1.0, 8);
    return ds;
}

// 10-point separable binary task: 5 points on U([-3,-1]^2) labeled 0 and 5
// on U([1,3]^2) labeled 1.
inline Dataset synthetic_classification(RngStream& stream) {
    Dataset ds;
    ds.classification = true;
    ds.n_classes = 2;
    ds.feature_names = {"x1", "x2"};
    for (int i = 0; i < 5; ++i) {
        ds.inputs.push_back({stream.uniform(-3.0, -1.0), stream.uniform(-3.0, -1.0)});
        ds.cls_targets.push_back(0);
    }
    for (int i = 0; i < 5; ++i) {
        ds.inputs.push_back({stream.uniform(1.0, 3.0), stream.uniform(1.0, 3.0)});
        ds.cls_targets.push_back(1);
    }
    return ds;
}

namespace detail {

inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.classification = ds.classification;
    out.n_classes = ds.n_classes;
    out.feature_names = ds.feature_names;
    for (std::size_t i : idx) {
        out.inputs.push_back(ds.inputs[i]);
        if (ds.classification)
            out.cls_targets.push_back(ds.cls_targets[i]);
        else
            out.reg_targets.push_back(ds.reg_targets[i]);
    }
    return out;
}

inline void compute_stats(const std::vector<std::vector<double>>& rows,
                          std::vector<double>& mean, std::vector<double>& std_out) {
    const std::size_t n = rows.size(), d = rows[0].size();
    mean.assign(d, 0.0);
    std_out.assign(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t k = 0; k < d; ++k) mean[k] += r[k];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto& r : rows)
        for (std::size_t k = 0; k < d; ++k) {
            const double c = r[k] - mean[k];
            std_out[k] += c * c;
        }
    for (auto& s : std_out) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);
}

inline void apply_normalization(std::vector<std::vector<double>>& rows,
                                const std::vector<double>& mean, const std::vector<double>& std) {
    for (auto& r : rows)
        for (std::size_t k = 0; k < r.size(); ++k) r[k] = (r[k] - mean[k]) / std[k];
}

} // namespace detail

struct SplitResult {
    Dataset train, test;
};

// Computes stats on `train` and standardizes both datasets in place.
inline void normalize_with_train_stats(Dataset& train, Dataset& test) {
    Normalization norm;
    detail::compute_stats(train.inputs, norm.input_mean, norm.input_std);
    detail::apply_normalization(train.inputs, norm.input_mean, norm.input_std);
    detail::apply_normalization(test.inputs, norm.input_mean, norm.input_std);
    if (!train.classification) {
        detail::compute_stats(train.reg_targets, norm.target_mean, norm.target_std);
        detail::apply_normalization(train.reg_targets, norm.target_mean, norm.target_std);
        detail::apply_normalization(test.reg_targets, norm.target_mean, norm.target_std);
    }
    train.norm = norm;
    test.norm = norm;
}

// Uniform random split, then inputs (and regression targets) standardized by
// train-split statistics. Both halves carry the stats for de-normalized
// reporting.
inline SplitResult split_and_normalize(const Dataset& ds, double train_fraction,
                                       RngStream& stream) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split: train_fraction must lie in (0, 1)");
    const std::size_t n = ds.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[stream.uniform_below(i)]);
    const std::size_t n_train =
        static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) throw DataError("split: dataset too small to split");

    SplitResult out;
    out.train = detail::take_rows(ds, {idx.begin(), idx.begin() + n_train});
    out.test = detail::take_rows(ds, {idx.begin() + n_train, idx.end()});
    normalize_with_train_stats(out.train, out.test);
    return out;
}

inline std::vector<double> denormalize_target(const Normalization& norm,
                                              std::vector<double> y) {
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = y[k] * norm.target_std[k] + norm.target_mean[k];
    return y;
}

inline std::vector<double> normalize_input(const Normalization& norm, std::vector<double> x) {
    if (norm.input_mean.empty()) return x;
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = (x[k] - norm.input_mean[k]) / norm.input_std[k];
    return x;
}

} // namespace s2vgd
