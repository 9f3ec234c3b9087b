#pragma once

// Synthetic benchmark generators: the lung-cancer PKPD simulator (three
// treatment variants), five structural-modification synthetic models, and
// the collinearity / epistasis pruning stress datasets.
//
// Tumor dynamics: dx/dt = (rho log(K/x) - beta_c C - (alpha_r d + beta_r d^2)) x,
// drug concentration dC/dt = -0.5 C + u_c, integrated with an explicit Euler
// step of one day. Treatment assignment is Bernoulli with sigmoid
// probabilities in the mean tumor diameter. Targets are the per-step Euler
// finite differences, which coincide with the analytic right-hand side up to
// one rounding except at the volume floor.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/dataset.hpp"
#include "igsr/rng.hpp"

namespace igsr {

enum class PkpdVariant { None, Chemo, ChemoRadio };

inline const char* pkpd_variant_name(PkpdVariant v) {
    switch (v) {
    case PkpdVariant::None: return "none";
    case PkpdVariant::Chemo: return "chemo";
    case PkpdVariant::ChemoRadio: return "chemo_radio";
    }
    return "?";
}

struct PkpdParams {
    double growth_rate = 7.00e-5;     // rho, 1/day
    double carrying_capacity = 30.0;  // K, cm^3
    double radio_linear = 0.0398;     // alpha_r, 1/Gy
    double radio_quadratic = 0.00398; // beta_r; alpha_r / beta_r = 10 Gy
    double chemo_kill = 0.028;        // beta_c, (mg/m^3)^-1 day^-1
    double max_diameter = 13.0;       // D_max, cm
    double gamma_chemo = 2.0;
    double gamma_radio = 2.0;
    double delta_chemo = 6.5;         // D_max / 2
    double delta_radio = 6.5;
    double chemo_bolus = 5.0;         // mg/m^3 per treatment day
    double radio_fraction = 2.0;      // Gy per treatment day
    double dt = 1.0;                  // days
    int horizon = 60;                 // days per trajectory
    double initial_volume_max = 1149.0;  // x(0) ~ U(0, this)
    double volume_floor = 1e-4;       // keeps log(K/x) finite
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Mean diameter of a sphere of volume v, clipped to the maximum diameter.
inline double diameter_from_volume(double v, const PkpdParams& p) {
    const double d = std::cbrt(6.0 * v / M_PI);
    return std::min(d, p.max_diameter);
}

// Daily treatment probabilities p = sigmoid(gamma / D_max * (diameter - delta)).
inline std::pair<double, double> policy_probs(double mean_diameter, const PkpdParams& p) {
    const double pc = sigmoid(p.gamma_chemo / p.max_diameter * (mean_diameter - p.delta_chemo));
    const double pr = sigmoid(p.gamma_radio / p.max_diameter * (mean_diameter - p.delta_radio));
    return {pc, pr};
}

// Growth bracket rho log(K/x) - beta_c C - (alpha_r d + beta_r d^2); the
// volume right-hand side is bracket * x.
inline double pkpd_growth_bracket(double x, double c, double d, const PkpdParams& p) {
    return p.growth_rate * std::log(p.carrying_capacity / x) - p.chemo_kill * c -
           (p.radio_linear * d + p.radio_quadratic * d * d);
}

inline double pkpd_growth_rhs(double x, double c, double d, const PkpdParams& p) {
    return pkpd_growth_bracket(x, c, d, p) * x;
}

inline double pkpd_concentration_rhs(double c, double u_c) { return -0.5 * c + u_c; }

struct SyntheticSpec {
    int variant = 1;       // 1..5, 0 = plain PKPD scaffold
    double gamma = 0.01;   // variant 1: + gamma sin(omega t)
    double omega = 0.5;
    double delta = 0.01;   // variant 2: - delta I(t), I(t) = |sin(0.1 t)|
    double n_max = 5.0;    // variant 3: log(K / (x + N)), N ~ U(0, n_max) per patient
    double eps = 0.01;     // variant 4: + eps cos(phi t)
    double phi = 0.5;
    double theta = 0.01;   // variant 5: - theta C d
};

namespace detail {

struct SimColumns {
    std::vector<std::string> feature_names;
    std::unordered_map<std::string, std::vector<double>> features;
    std::unordered_map<std::string, std::vector<double>> targets;

    std::vector<double>& feature(const std::string& n) { return features[n]; }
};

// Shared scaffold for PKPD and the synthetic modifications. The variant
// modification only touches the growth bracket; each random consumer has its
// own labeled stream, so enabling a modification never perturbs the base
// trajectory draws.
inline Dataset simulate_core(PkpdVariant variant, std::size_t n_patients, const PkpdParams& p,
                             std::uint64_t seed, const SyntheticSpec* syn) {
    if (n_patients < 1) throw DataError("need at least one patient");
    const bool chemo = variant != PkpdVariant::None;
    const bool radio = variant == PkpdVariant::ChemoRadio;

    SimColumns cols;
    cols.feature_names = {"cancer_volume"};
    if (chemo) {
        cols.feature_names.push_back("chemo_concentration");
        cols.feature_names.push_back("chemo_dosage");
    }
    if (radio) cols.feature_names.push_back("radiotherapy_dosage");
    if (syn) {
        cols.feature_names.push_back("t");
        if (syn->variant == 2) cols.feature_names.push_back("I");
        if (syn->variant == 3) cols.feature_names.push_back("N");
    }
    cols.feature_names.push_back(kTrajectoryColumn);
    for (const auto& n : cols.feature_names) cols.features[n] = {};
    cols.targets["dv_dt"] = {};
    if (chemo) cols.targets["dc_dt"] = {};

    for (std::size_t patient = 0; patient < n_patients; ++patient) {
        CounterRng x0_rng(derive_seed(seed, "pkpd_x0", patient));
        CounterRng policy_rng(derive_seed(seed, "pkpd_policy", patient));
        CounterRng aux_rng(derive_seed(seed, "pkpd_aux", patient));

        double x = std::max(x0_rng.uniform(0.0, p.initial_volume_max), p.volume_floor);
        double c = 0.0;
        const double n_signal = (syn && syn->variant == 3) ? aux_rng.uniform(0.0, syn->n_max) : 0.0;

        for (int t = 0; t < p.horizon; ++t) {
            const double diameter = diameter_from_volume(x, p);
            auto [pc, pr] = policy_probs(diameter, p);
            const double u_c = (chemo && policy_rng.bernoulli(pc)) ? p.chemo_bolus : 0.0;
            const double d = (radio && policy_rng.bernoulli(pr)) ? p.radio_fraction : 0.0;

            // Variant 3 shifts the volume inside the Gompertz log by N(t).
            double bracket = (syn && syn->variant == 3)
                                 ? pkpd_growth_bracket(x + n_signal, c, d, p)
                                 : pkpd_growth_bracket(x, c, d, p);
            if (syn) {
                const double td = static_cast<double>(t);
                switch (syn->variant) {
                case 1: bracket += syn->gamma * std::sin(syn->omega * td); break;
                case 2: bracket -= syn->delta * std::fabs(std::sin(0.1 * td)); break;
                case 4: bracket += syn->eps * std::cos(syn->phi * td); break;
                case 5: bracket -= syn->theta * c * d; break;
                default: break;
                }
            }

            const double x_next = std::max(x + p.dt * bracket * x, p.volume_floor);
            const double c_next = c + p.dt * pkpd_concentration_rhs(c, u_c);

            cols.feature("cancer_volume").push_back(x);
            if (chemo) {
                cols.feature("chemo_concentration").push_back(c);
                cols.feature("chemo_dosage").push_back(u_c);
            }
            if (radio) cols.feature("radiotherapy_dosage").push_back(d);
            if (syn) {
                const double td = static_cast<double>(t);
                cols.feature("t").push_back(td);
                if (syn->variant == 2) cols.feature("I").push_back(std::fabs(std::sin(0.1 * td)));
                if (syn->variant == 3) cols.feature("N").push_back(n_signal);
            }
            cols.feature(kTrajectoryColumn).push_back(static_cast<double>(patient));
            cols.targets["dv_dt"].push_back((x_next - x) / p.dt);
            if (chemo) cols.targets["dc_dt"].push_back((c_next - c) / p.dt);

            x = x_next;
            c = c_next;
        }
    }

    std::vector<std::string> target_names = {"dv_dt"};
    if (chemo) target_names.push_back("dc_dt");
    return Dataset(std::move(cols.feature_names), std::move(cols.features),
                   std::move(target_names), std::move(cols.targets));
}

} // namespace detail

inline Dataset simulate_pkpd(PkpdVariant variant, std::size_t n_patients, const PkpdParams& p,
                             std::uint64_t seed) {
    return detail::simulate_core(variant, n_patients, p, seed, nullptr);
}

inline Dataset simulate_synthetic_variant(const SyntheticSpec& spec, std::size_t n_patients,
                                          std::uint64_t seed, const PkpdParams& p = {}) {
    if (spec.variant < 0 || spec.variant > 5) throw DataError("synthetic variant must be 0..5");
    return detail::simulate_core(PkpdVariant::ChemoRadio, n_patients, p, seed, &spec);
}

// Ground-truth equations in the form the eval tooling consumes (one additive
// term per line element).
inline std::vector<std::string> pkpd_ground_truth_terms(PkpdVariant variant,
                                                        const std::string& output) {
    if (output == "dv_dt") {
        std::vector<std::string> terms = {"cancer_volume",
                                          "cancer_volume * np.log(cancer_volume)"};
        if (variant != PkpdVariant::None)
            terms.push_back("cancer_volume * chemo_concentration");
        if (variant == PkpdVariant::ChemoRadio)
            terms.push_back("cancer_volume * radiotherapy_dosage");
        return terms;
    }
    if (output == "dc_dt") return {"chemo_concentration", "chemo_dosage"};
    throw DataError("unknown output '" + output + "'");
}

// ---------------------------------------------------------------------------
// Collinearity stress data: the six ground-truth basis functions of the
// chemo+radio model, four highly correlated clones and four distractors.
// Clones are v_rho = v + sd(v) sqrt(rho^-2 - 1) eps with eps ~ N(0,1), so
// Corr(v, v_rho) ~= rho. A signal group is covered when at least one of its
// members is retained.

struct CollinearityData {
    Dataset data;
    std::vector<std::string> pool;                 // 14 candidate term sources
    std::unordered_map<std::string, int> group_of; // signal/clone term -> group 1..6
};

namespace detail {

inline double sample_sd(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

} // namespace detail

inline CollinearityData gen_collinearity(double rho, std::size_t n_patients, std::uint64_t seed,
                                         const PkpdParams& params = {}) {
    if (!(rho > 0.0) || rho > 1.0) throw DataError("clone correlation must be in (0, 1]");
    Dataset base = simulate_pkpd(PkpdVariant::ChemoRadio, n_patients, params, seed);

    const double noise_scale = std::sqrt(1.0 / (rho * rho) - 1.0);
    std::vector<std::string> feature_names = base.feature_names();
    std::unordered_map<std::string, std::vector<double>> features;
    for (const auto& n : feature_names) features[n] = base.feature(n);

    const std::vector<std::string> cloned = {"chemo_concentration", "chemo_dosage",
                                             "radiotherapy_dosage"};
    for (const auto& name : cloned) {
        const auto& v = base.feature(name);
        const double sd = detail::sample_sd(v);
        CounterRng rng(derive_seed(seed, "clone:" + name));
        std::vector<double> clone(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            clone[i] = v[i] + sd * noise_scale * rng.normal();
        const std::string clone_name = name + "_clone";
        feature_names.push_back(clone_name);
        features[clone_name] = std::move(clone);
    }

    std::unordered_map<std::string, std::vector<double>> targets;
    for (const auto& n : base.target_names()) targets[n] = base.target(n);

    CollinearityData out;
    out.data = Dataset(std::move(feature_names), std::move(features),
                       std::vector<std::string>(base.target_names()), std::move(targets));
    out.pool = {
        // signal
        "cancer_volume",
        "cancer_volume * np.log(cancer_volume)",
        "cancer_volume * chemo_concentration",
        "cancer_volume * radiotherapy_dosage",
        "chemo_concentration",
        "chemo_dosage",
        // clones
        "chemo_concentration_clone",
        "chemo_dosage_clone",
        "cancer_volume * chemo_concentration_clone",
        "cancer_volume * radiotherapy_dosage_clone",
        // distractors
        "np.sqrt(cancer_volume)",
        "np.log(cancer_volume)",
        "cancer_volume**2",
        "chemo_dosage * radiotherapy_dosage",
    };
    out.group_of = {
        {"cancer_volume", 1},
        {"cancer_volume * np.log(cancer_volume)", 2},
        {"cancer_volume * chemo_concentration", 3},
        {"cancer_volume * chemo_concentration_clone", 3},
        {"cancer_volume * radiotherapy_dosage", 4},
        {"cancer_volume * radiotherapy_dosage_clone", 4},
        {"chemo_concentration", 5},
        {"chemo_concentration_clone", 5},
        {"chemo_dosage", 6},
        {"chemo_dosage_clone", 6},
    };
    return out;
}

// ---------------------------------------------------------------------------
// Epistasis stress data: ten iid standard-normal features with a target made
// purely of interaction terms plus 0.05 N(0,1) noise, so every marginal is
// individually uninformative.

struct EpistasisData {
    Dataset data;
    std::vector<std::string> pool;
    std::vector<std::string> interactions;  // ground-truth signal terms
    std::size_t keep_n = 1;
};

inline EpistasisData gen_epistasis(int experiment, std::size_t n_rows, std::uint64_t seed,
                                   double noise_sd = 0.05) {
    if (experiment != 1 && experiment != 2) throw DataError("epistasis experiment must be 1 or 2");
    const std::size_t n_features = 10;
    std::vector<std::string> names;
    std::unordered_map<std::string, std::vector<double>> features;
    std::vector<std::vector<double>> cols(n_features);
    for (std::size_t j = 0; j < n_features; ++j) {
        CounterRng rng(derive_seed(seed, "epistasis_x", j));
        cols[j].resize(n_rows);
        for (std::size_t i = 0; i < n_rows; ++i) cols[j][i] = rng.normal();
        names.push_back("x" + std::to_string(j + 1));
        features[names.back()] = cols[j];
    }
    CounterRng noise(derive_seed(seed, "epistasis_noise"));
    std::vector<double> y(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) {
        y[i] = cols[0][i] * cols[1][i];
        if (experiment == 2) y[i] += cols[2][i] * cols[3][i];
        y[i] += noise_sd * noise.normal();
    }
    std::unordered_map<std::string, std::vector<double>> targets;
    targets["y"] = std::move(y);

    EpistasisData out;
    out.data = Dataset(std::move(names), std::move(features), {"y"}, std::move(targets));
    out.pool = {"x1", "x2", "x1 + x2", "x1 * x2", "x1 * x3", "x2 * x4", "x1**2", "x2**2", "x3",
                "x4"};
    out.interactions = {"x1 * x2"};
    if (experiment == 2) {
        out.pool.push_back("x3 * x4");
        out.interactions.push_back("x3 * x4");
        out.keep_n = 2;
    }
    return out;
}

// Appends `count` standard-normal distractor feature columns; used to stress
// robustness to irrelevant inputs.
inline Dataset add_distractor_features(const Dataset& d, std::size_t count, std::uint64_t seed) {
    std::vector<std::string> names = d.feature_names();
    std::unordered_map<std::string, std::vector<double>> features;
    for (const auto& n : names) features[n] = d.feature(n);
    for (std::size_t k = 0; k < count; ++k) {
        CounterRng rng(derive_seed(seed, "distractor", k));
        std::vector<double> col(d.rows());
        for (auto& v : col) v = rng.normal();
        std::string name = "noise_" + std::to_string(k + 1);
        names.push_back(name);
        features[name] = std::move(col);
    }
    std::unordered_map<std::string, std::vector<double>> targets;
    for (const auto& n : d.target_names()) targets[n] = d.target(n);
    return Dataset(std::move(names), std::move(features),
                   std::vector<std::string>(d.target_names()), std::move(targets));
}

} // namespace igsr
