#include "gat/moo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gat/error.hpp"

namespace gat {

void validate_weights(std::span<const double> w) {
    if (w.empty()) throw ConfigError("weight vector is empty");
    double s = 0.0;
    for (double v : w) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("weights must be finite and nonnegative");
        s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("weights sum to " + std::to_string(s) + ", not 1");
}

namespace {

void check_lengths(std::span<const std::vector<double>> grads) {
    if (grads.empty()) throw ConfigError("no gradients");
    for (const auto& g : grads)
        if (g.size() != grads[0].size()) throw ShapeError("gradients have different lengths");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

GramMatrix gram_matrix(std::span<const std::vector<double>> grads) {
    check_lengths(grads);
    const std::size_t t = grads.size();
    GramMatrix m(t, std::vector<double>(t, 0.0));
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i; j < t; ++j) m[i][j] = m[j][i] = dot(grads[i], grads[j]);
    return m;
}

std::vector<double> combine(std::span<const std::vector<double>> grads, std::span<const double> alpha) {
    check_lengths(grads);
    if (alpha.size() != grads.size()) throw ShapeError("need one weight per gradient");
    std::vector<double> d(grads[0].size(), 0.0);
    for (std::size_t t = 0; t < grads.size(); ++t)
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += alpha[t] * grads[t][i];
    return d;
}

TwoTaskSolution min_norm_two_task(std::span<const double> g1, std::span<const double> g2) {
    if (g1.size() != g2.size()) throw ShapeError("gradients have different lengths");
    double diff = 0.0, num = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        diff += (g1[i] - g2[i]) * (g1[i] - g2[i]);
        num += (g2[i] - g1[i]) * g2[i];
    }
    const double gamma = diff == 0.0 ? 0.5 : std::clamp(num / diff, 0.0, 1.0);
    TwoTaskSolution out{gamma, std::vector<double>(g1.size())};
    for (std::size_t i = 0; i < g1.size(); ++i) out.direction[i] = gamma * g1[i] + (1.0 - gamma) * g2[i];
    return out;
}

MgdaResult mgda_frank_wolfe(const GramMatrix& m, const MgdaOptions& options) {
    const std::size_t t = m.size();
    if (t == 0) throw ConfigError("empty gram matrix");
    if (options.max_iters == 0) throw ConfigError("max_iters must be >= 1");
    if (!(options.tol > 0.0)) throw ConfigError("tol must be > 0");
    double scale = 0.0;
    for (const auto& row : m) {
        if (row.size() != t) throw ShapeError("gram matrix must be square");
        for (double v : row) {
            if (!std::isfinite(v)) throw NumericError("non-finite gram entry");
            scale = std::max(scale, std::abs(v));
        }
    }
    for (std::size_t i = 0; i < t; ++i) {
        if (m[i][i] < 0.0) throw NumericError("gram matrix has a negative diagonal entry");
        for (std::size_t j = i + 1; j < t; ++j)
            if (std::abs(m[i][j] - m[j][i]) > 1e-8 * std::max(1.0, scale)) throw NumericError("gram matrix is not symmetric");
    }

    MgdaResult r;
    r.weights.assign(t, 1.0 / double(t));
    std::vector<double> ma(t);
    auto refresh = [&] {
        for (std::size_t i = 0; i < t; ++i) ma[i] = dot(m[i], r.weights);
        return std::max(0.0, dot(ma, r.weights));
    };
    // alpha' M alpha carries rounding of order t^2 * eps * max|M|; below this
    // the hull contains zero as far as the gram matrix can tell.
    const double zero = 1e-13 * scale;
    double v1 = refresh();
    r.norm_history.push_back(v1);
    while (r.iterations < options.max_iters) {
        if (v1 <= zero) {
            r.converged = true;
            break;
        }
        std::size_t fw = 0, away = t;
        for (std::size_t i = 1; i < t; ++i)
            if (ma[i] < ma[fw]) fw = i;
        for (std::size_t i = 0; i < t; ++i)
            if (r.weights[i] > 0.0 && (away == t || ma[i] > ma[away])) away = i;
        const double fw_gap = v1 - ma[fw];
        const double away_gap = ma[away] - v1;
        if (std::max(fw_gap, away_gap) <= options.tol * v1) {
            r.converged = true;
            break;
        }
        if (fw_gap >= away_gap) {
            // toward e_fw: ||(1-g) d + g g_fw||^2
            const double denom = v1 + m[fw][fw] - 2.0 * ma[fw];
            const double gamma = denom > 0.0 ? std::clamp((v1 - ma[fw]) / denom, 0.0, 1.0) : 0.0;
            for (auto& a : r.weights) a *= 1.0 - gamma;
            r.weights[fw] += gamma;
        } else {
            // away from e_away: ||(1+g) d - g g_away||^2, g <= a/(1-a) keeps weights nonnegative
            const double a = r.weights[away];
            const double gmax = a < 1.0 ? a / (1.0 - a) : 0.0;
            const double denom = v1 + m[away][away] - 2.0 * ma[away];
            const double gamma = denom > 0.0 ? std::clamp((ma[away] - v1) / denom, 0.0, gmax) : gmax;
            for (auto& w : r.weights) w *= 1.0 + gamma;
            r.weights[away] -= gamma;
            if (gamma == gmax) r.weights[away] = 0.0;
        }
        // renormalize against drift
        double s = 0.0;
        for (auto& w : r.weights) s += (w = std::max(0.0, w));
        for (auto& w : r.weights) w /= s;
        ++r.iterations;
        const double next = refresh();
        r.norm_history.push_back(next);
        v1 = next;
    }
    r.norm_sq = v1;
    return r;
}

std::vector<double> aggregate_weighted_update(std::span<const double> theta, std::span<const std::vector<double>> grads,
                                              std::span<const double> alpha, double eta) {
    validate_weights(alpha);
    if (alpha.size() != grads.size()) throw ShapeError("need one weight per gradient");
    if (!std::isfinite(eta)) throw ConfigError("learning rate must be finite");
    auto d = combine(grads, alpha);
    if (d.size() != theta.size()) throw ShapeError("gradient length does not match the parameter vector");
    std::vector<double> out(theta.begin(), theta.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= eta * d[i];
    return out;
}

}  // namespace gat
