#pragma once

// Dataset container, CSV ingestion, deterministic split assignment and
// design-matrix construction. Columns are immutable after load/split; split
// views are materialized eagerly so evaluation downstream is pure.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/expr.hpp"
#include "igsr/rng.hpp"

namespace igsr {

enum class Split { Train, Validation, Test, ValInner, ValOuter };

inline const char* split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    case Split::ValInner: return "val_inner";
    case Split::ValOuter: return "val_outer";
    }
    return "?";
}

// Grouping column recognized by split_dataset; all rows sharing a value land
// in the same split.
inline constexpr const char* kTrajectoryColumn = "trajectory_id";

class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<std::string> feature_names,
            std::unordered_map<std::string, std::vector<double>> features,
            std::vector<std::string> target_names,
            std::unordered_map<std::string, std::vector<double>> targets)
        : feature_names_(std::move(feature_names)),
          features_(std::move(features)),
          target_names_(std::move(target_names)),
          targets_(std::move(targets)) {
        rows_ = feature_names_.empty() ? 0 : features_.at(feature_names_.front()).size();
        for (const auto& n : feature_names_)
            if (features_.at(n).size() != rows_) throw DataError("ragged feature column '" + n + "'");
        for (const auto& n : target_names_) {
            if (features_.count(n)) throw DataError("column '" + n + "' is both feature and target");
            if (targets_.at(n).size() != rows_) throw DataError("ragged target column '" + n + "'");
        }
    }

    std::size_t rows() const { return rows_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }
    const std::vector<std::string>& target_names() const { return target_names_; }
    bool has_feature(const std::string& n) const { return features_.count(n) > 0; }
    const std::vector<double>& feature(const std::string& n) const { return features_.at(n); }
    const std::vector<double>& target(const std::string& n) const { return targets_.at(n); }

    bool split_assigned() const { return !split_of_row_.empty(); }
    bool nested_validation() const { return nested_; }

    const std::vector<std::size_t>& rows_of(Split s) const {
        if (!split_assigned()) throw DataError("dataset has no split assignment");
        switch (s) {
        case Split::Train: return train_rows_;
        case Split::Validation: return val_rows_;
        case Split::Test: return test_rows_;
        case Split::ValInner:
            if (!nested_) throw DataError("nested validation is not enabled");
            return val_inner_rows_;
        case Split::ValOuter:
            if (!nested_) throw DataError("nested validation is not enabled");
            return val_outer_rows_;
        }
        throw DataError("bad split");
    }

    // Feature columns restricted to a split, keyed by name. Built once.
    const ColumnMap& frame(Split s) const { return frames_.at(static_cast<std::size_t>(s)); }

    // Targets restricted to a split, one matrix column per target, in
    // target_names() order.
    const Eigen::MatrixXd& targets_on(Split s) const {
        return target_mats_.at(static_cast<std::size_t>(s));
    }

    // Which splits carry rows; design-matrix rejection checks every one.
    std::vector<Split> active_splits() const {
        std::vector<Split> out = {Split::Train, Split::Validation, Split::Test};
        if (nested_) {
            out.push_back(Split::ValInner);
            out.push_back(Split::ValOuter);
        }
        return out;
    }

    void assign_split(std::vector<Split> split_of_row, bool nested) {
        if (split_of_row.size() != rows_) throw DataError("split assignment size mismatch");
        split_of_row_ = std::move(split_of_row);
        nested_ = nested;
        train_rows_.clear();
        val_rows_.clear();
        test_rows_.clear();
        val_inner_rows_.clear();
        val_outer_rows_.clear();
        for (std::size_t i = 0; i < rows_; ++i) {
            switch (split_of_row_[i]) {
            case Split::Train: train_rows_.push_back(i); break;
            case Split::Test: test_rows_.push_back(i); break;
            case Split::Validation: val_rows_.push_back(i); break;
            case Split::ValInner:
                val_rows_.push_back(i);
                val_inner_rows_.push_back(i);
                break;
            case Split::ValOuter:
                val_rows_.push_back(i);
                val_outer_rows_.push_back(i);
                break;
            }
        }
        if (train_rows_.empty() || val_rows_.empty() || test_rows_.empty())
            throw DataError("split assignment produced an empty split");
        if (nested_ && (val_inner_rows_.empty() || val_outer_rows_.empty()))
            throw DataError("nested validation produced an empty sub-split");
        build_views();
    }

private:
    void build_views() {
        frames_.assign(5, ColumnMap{});
        target_mats_.assign(5, Eigen::MatrixXd{});
        for (Split s : active_splits()) {
            const auto& idx = rows_of(s);
            ColumnMap cm;
            for (const auto& n : feature_names_) {
                const auto& full = features_.at(n);
                std::vector<double> v(idx.size());
                for (std::size_t i = 0; i < idx.size(); ++i) v[i] = full[idx[i]];
                cm.emplace(n, std::move(v));
            }
            frames_[static_cast<std::size_t>(s)] = std::move(cm);
            Eigen::MatrixXd y(static_cast<Eigen::Index>(idx.size()),
                              static_cast<Eigen::Index>(target_names_.size()));
            for (std::size_t j = 0; j < target_names_.size(); ++j) {
                const auto& full = targets_.at(target_names_[j]);
                for (std::size_t i = 0; i < idx.size(); ++i)
                    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = full[idx[i]];
            }
            target_mats_[static_cast<std::size_t>(s)] = std::move(y);
        }
    }

    std::vector<std::string> feature_names_;
    std::unordered_map<std::string, std::vector<double>> features_;
    std::vector<std::string> target_names_;
    std::unordered_map<std::string, std::vector<double>> targets_;
    std::size_t rows_ = 0;

    std::vector<Split> split_of_row_;
    bool nested_ = false;
    std::vector<std::size_t> train_rows_, val_rows_, test_rows_, val_inner_rows_, val_outer_rows_;
    std::vector<ColumnMap> frames_;
    std::vector<Eigen::MatrixXd> target_mats_;
};

// ---------------------------------------------------------------------------
// CSV. Comma-separated, '.' decimal point, UTF-8, LF or CRLF endings, header
// row required. Written doubles use the shortest round-trip representation,
// so a save/load cycle is bit-identical.

inline Dataset load_table(const std::string& path, const std::vector<std::string>& target_names) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw DataError("'" + path + "': empty file");
    if (!header.empty() && header.back() == '\r') header.pop_back();

    std::vector<std::string> columns;
    {
        std::stringstream ss(header);
        std::string cell;
        while (std::getline(ss, cell, ',')) columns.push_back(trim(cell));
    }
    if (columns.empty()) throw DataError("'" + path + "': no header columns");
    for (const auto& t : target_names) {
        if (std::find(columns.begin(), columns.end(), t) == columns.end())
            throw DataError("'" + path + "': missing target column '" + t + "'");
    }

    std::vector<std::vector<double>> data(columns.size());
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t col = 0, pos = 0;
        while (col < columns.size()) {
            std::size_t comma = line.find(',', pos);
            std::string cell = trim(comma == std::string::npos ? line.substr(pos)
                                                               : line.substr(pos, comma - pos));
            const char* begin = cell.data();
            const char* end = begin + cell.size();
            double v = 0.0;
            auto res = std::from_chars(begin, end, v);
            if (res.ec != std::errc{} || res.ptr != end)
                throw DataError("'" + path + "': non-numeric cell '" + cell + "' at row " +
                                std::to_string(row) + ", column '" + columns[col] + "'");
            data[col].push_back(v);
            ++col;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (col != columns.size())
            throw DataError("'" + path + "': row " + std::to_string(row) + " has " +
                            std::to_string(col) + " cells, expected " +
                            std::to_string(columns.size()));
    }

    std::vector<std::string> feature_names;
    std::unordered_map<std::string, std::vector<double>> features, targets;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (std::find(target_names.begin(), target_names.end(), columns[i]) != target_names.end())
            targets.emplace(columns[i], std::move(data[i]));
        else {
            feature_names.push_back(columns[i]);
            features.emplace(columns[i], std::move(data[i]));
        }
    }
    return Dataset(std::move(feature_names), std::move(features),
                   std::vector<std::string>(target_names), std::move(targets));
}

inline void save_table(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    std::string header;
    for (const auto& n : d.feature_names()) {
        if (!header.empty()) header += ',';
        header += n;
    }
    for (const auto& n : d.target_names()) {
        if (!header.empty()) header += ',';
        header += n;
    }
    out << header << '\n';
    for (std::size_t i = 0; i < d.rows(); ++i) {
        std::string line;
        for (const auto& n : d.feature_names()) {
            if (!line.empty()) line += ',';
            line += format_shortest(d.feature(n)[i]);
        }
        for (const auto& n : d.target_names()) {
            if (!line.empty()) line += ',';
            line += format_shortest(d.target(n)[i]);
        }
        out << line << '\n';
    }
}

// ---------------------------------------------------------------------------
// Split assignment. Deterministic per seed; when a trajectory_id column is
// present the shuffle operates on whole trajectories so no trajectory
// straddles splits. Nested mode halves the validation rows into an inner
// part (used for influence-based pruning) and an outer part (search reward).

struct SplitFractions {
    double train = 0.7;
    double validation = 0.15;
    double test = 0.15;
};

inline Dataset split_dataset(Dataset d, SplitFractions f, std::uint64_t seed,
                             bool nested_validation = false) {
    if (f.train <= 0 || f.validation <= 0 || f.test <= 0)
        throw DataError("split fractions must be positive");
    if (std::fabs(f.train + f.validation + f.test - 1.0) > 1e-9)
        throw DataError("split fractions must sum to 1");

    // Units are whole trajectories when the grouping column exists, else rows.
    std::vector<std::vector<std::size_t>> units;
    if (d.has_feature(kTrajectoryColumn)) {
        const auto& traj = d.feature(kTrajectoryColumn);
        std::unordered_map<double, std::size_t> unit_of;
        for (std::size_t i = 0; i < traj.size(); ++i) {
            auto [it, fresh] = unit_of.emplace(traj[i], units.size());
            if (fresh) units.emplace_back();
            units[it->second].push_back(i);
        }
    } else {
        units.resize(d.rows());
        for (std::size_t i = 0; i < d.rows(); ++i) units[i] = {i};
    }

    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng(derive_seed(seed, "split"));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    auto n = static_cast<double>(units.size());
    auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
    auto n_val = static_cast<std::size_t>(std::llround(f.validation * n));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= units.size())
        throw DataError("split produced an empty partition");

    std::vector<Split> assignment(d.rows(), Split::Train);
    std::size_t val_unit = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        Split s;
        if (k < n_train) s = Split::Train;
        else if (k < n_train + n_val) {
            if (nested_validation)
                s = (val_unit++ % 2 == 0) ? Split::ValInner : Split::ValOuter;
            else
                s = Split::Validation;
        } else s = Split::Test;
        for (std::size_t row : units[order[k]]) assignment[row] = s;
    }
    d.assign_split(std::move(assignment), nested_validation);
    return d;
}

// ---------------------------------------------------------------------------
// Design matrix. A term whose evaluation is non-finite on ANY active split is
// rejected from the whole cycle (recorded with a reason) rather than imputed;
// this keeps the linear algebra well-posed and surfaces bad proposals.

struct DesignMatrix {
    Eigen::MatrixXd phi;                                // n rows x p retained terms
    std::vector<Term> terms;                            // column order
    std::vector<std::pair<Term, std::string>> rejected; // term -> reason
    Split split = Split::Train;
};

struct DesignSet {
    std::vector<Term> terms;                            // retained, in given order
    std::vector<std::pair<Term, std::string>> rejected;
    std::unordered_map<std::size_t, Eigen::MatrixXd> phi_by_split;

    const Eigen::MatrixXd& phi(Split s) const { return phi_by_split.at(static_cast<std::size_t>(s)); }
};

// Evaluate every term on every active split once; reject split-inconsistent
// (non-finite) terms; return per-split matrices over the survivors.
inline DesignSet build_design_set(const std::vector<Term>& terms, const Dataset& d) {
    if (terms.empty()) throw DataError("no candidate terms to evaluate");
    const auto splits = d.active_splits();

    DesignSet out;
    std::vector<std::vector<std::vector<double>>> kept_cols(splits.size());
    for (const auto& term : terms) {
        std::vector<std::vector<double>> cols;
        cols.reserve(splits.size());
        std::string reason;
        for (std::size_t si = 0; si < splits.size(); ++si) {
            const auto rows = d.rows_of(splits[si]).size();
            std::vector<double> col;
            try {
                col = evaluate(term.ast, d.frame(splits[si]), rows);
            } catch (const Error& e) {
                reason = e.what();
                break;
            }
            if (!all_finite(col)) {
                reason = std::string("non-finite value on ") + split_name(splits[si]);
                break;
            }
            cols.push_back(std::move(col));
        }
        if (!reason.empty()) {
            out.rejected.emplace_back(term, reason);
            continue;
        }
        out.terms.push_back(term);
        for (std::size_t si = 0; si < splits.size(); ++si)
            kept_cols[si].push_back(std::move(cols[si]));
    }
    if (out.terms.empty()) throw DataError("all candidate terms were rejected");

    for (std::size_t si = 0; si < splits.size(); ++si) {
        const auto rows = d.rows_of(splits[si]).size();
        Eigen::MatrixXd phi(static_cast<Eigen::Index>(rows),
                            static_cast<Eigen::Index>(out.terms.size()));
        for (std::size_t j = 0; j < out.terms.size(); ++j)
            for (std::size_t i = 0; i < rows; ++i)
                phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    kept_cols[si][j][i];
        out.phi_by_split[static_cast<std::size_t>(splits[si])] = std::move(phi);
    }
    return out;
}

inline DesignMatrix build_design_matrix(const std::vector<Term>& terms, const Dataset& d,
                                        Split split) {
    DesignSet set = build_design_set(terms, d);
    DesignMatrix m;
    m.phi = set.phi(split);
    m.terms = std::move(set.terms);
    m.rejected = std::move(set.rejected);
    m.split = split;
    return m;
}

} // namespace igsr
