#pragma once

#include <span>
#include <string>
#include <vector>

#include "gat/tensor.hpp"

namespace gat {

enum class GradientTag { input, shared_parameters };

struct GradientBundle {
    std::vector<std::vector<double>> grads;  // one flat gradient per task
    GradientTag tag = GradientTag::input;
    std::string id;

    void validate() const;
};

struct CosineResult {
    double cosine;
    bool conflicting;
};

CosineResult cosine_angle(std::span<const double> a, std::span<const double> b);
double magnitude_similarity(std::span<const double> a, std::span<const double> b);
// (1 - cos^2) * ||a - b||^2 / (||a + b||^2 + 1e-12).
double curvature_measure(std::span<const double> a, std::span<const double> b);

struct PairMetrics {
    double cosine = 0.0;
    double magnitude_similarity = 0.0;
    double curvature = 0.0;
};

// Mean of the three measures over all task pairs of a bundle.
PairMetrics bundle_metrics(const GradientBundle& bundle);

struct Point2 {
    double a;
    double b;
};

struct ParetoFront2D {
    std::vector<Point2> points;  // minimization
    Point2 reference;
};

double hypervolume_2d(const ParetoFront2D& front);

struct PearsonResult {
    double r;
    double p_value;  // two-sided, Student t with n - 2 degrees of freedom
};

PearsonResult pearson_r(std::span<const double> xs, std::span<const double> ys);

double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct McNemarResult {
    double chi2;
    bool reject;  // at alpha = 0.05
};

// b: samples only the first model gets right; c: only the second.
McNemarResult mcnemar_test(std::size_t b, std::size_t c);
McNemarResult mcnemar_test(const std::vector<bool>& first_correct, const std::vector<bool>& second_correct);

// Row-wise argmax.
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

}  // namespace gat
