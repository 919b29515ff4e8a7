#pragma once

#include <span>
#include <vector>

namespace gat {

// Nonnegative weights summing to one.
using WeightVector = std::vector<double>;
using GramMatrix = std::vector<std::vector<double>>;

// Throws ConfigError unless w is on the simplex (sum within 1e-9).
void validate_weights(std::span<const double> w);

GramMatrix gram_matrix(std::span<const std::vector<double>> grads);
std::vector<double> combine(std::span<const std::vector<double>> grads, std::span<const double> alpha);

struct TwoTaskSolution {
    double gamma;
    std::vector<double> direction;
};

// Closed-form minimizer of ||gamma g1 + (1 - gamma) g2||^2 over gamma in [0, 1].
TwoTaskSolution min_norm_two_task(std::span<const double> g1, std::span<const double> g2);

struct MgdaOptions {
    std::size_t max_iters = 250;
    double tol = 1e-6;
};

struct MgdaResult {
    WeightVector weights;
    double norm_sq = 0.0;  // ||sum_t alpha_t g_t||^2 = alpha' M alpha
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> norm_history;  // norm_sq before the first step and after every step
};

// Frank-Wolfe over the simplex with exact line search. Besides the toward-vertex
// step it takes away steps from the worst supported vertex, which removes the
// zig-zagging of the plain method near faces of the simplex. Stops when both
// duality gaps are within tol * ||d||^2, when ||d|| = 0, or at max_iters.
MgdaResult mgda_frank_wolfe(const GramMatrix& gram, const MgdaOptions& options = {});

// theta - eta * sum_t alpha_t g_t.
std::vector<double> aggregate_weighted_update(std::span<const double> theta, std::span<const std::vector<double>> grads,
                                              std::span<const double> alpha, double eta);

}  // namespace gat
