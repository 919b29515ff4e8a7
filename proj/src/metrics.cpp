#include "gat/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>

#include "gat/error.hpp"

namespace gat {

namespace {

void same_length(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("gradient vectors have different lengths");
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

void GradientBundle::validate() const {
    if (grads.size() < 2) throw ConfigError("a gradient bundle needs at least two tasks");
    for (const auto& g : grads)
        if (g.size() != grads[0].size()) throw ShapeError("gradient bundle vectors have different lengths");
}

CosineResult cosine_angle(std::span<const double> a, std::span<const double> b) {
    same_length(a, b);
    const double na = dot(a, a), nb = dot(b, b);
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine of a zero vector is undefined");
    const double c = std::clamp(dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
    return {c, c < 0.0};
}

double magnitude_similarity(std::span<const double> a, std::span<const double> b) {
    same_length(a, b);
    const double na = dot(a, a), nb = dot(b, b);
    if (na == 0.0 && nb == 0.0) throw NumericError("magnitude similarity of two zero vectors is undefined");
    return std::clamp(2.0 * std::sqrt(na) * std::sqrt(nb) / (na + nb), 0.0, 1.0);
}

double curvature_measure(std::span<const double> a, std::span<const double> b) {
    same_length(a, b);
    const double na = dot(a, a), nb = dot(b, b);
    if (na == 0.0 && nb == 0.0) throw NumericError("curvature measure of two zero vectors is undefined");
    const double ab = dot(a, b);
    // squared cosine without square roots, so antiparallel pairs give exactly 1
    const double cos2 = na > 0.0 && nb > 0.0 ? (ab * ab) / (na * nb) : 0.0;
    double diff = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        sum += (a[i] + b[i]) * (a[i] + b[i]);
    }
    return std::max(0.0, 1.0 - cos2) * diff / (sum + 1e-12);
}

PairMetrics bundle_metrics(const GradientBundle& bundle) {
    bundle.validate();
    PairMetrics m;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < bundle.grads.size(); ++i)
        for (std::size_t j = i + 1; j < bundle.grads.size(); ++j, ++pairs) {
            m.cosine += cosine_angle(bundle.grads[i], bundle.grads[j]).cosine;
            m.magnitude_similarity += magnitude_similarity(bundle.grads[i], bundle.grads[j]);
            m.curvature += curvature_measure(bundle.grads[i], bundle.grads[j]);
        }
    m.cosine /= double(pairs);
    m.magnitude_similarity /= double(pairs);
    m.curvature /= double(pairs);
    return m;
}

double hypervolume_2d(const ParetoFront2D& front) {
    auto pts = front.points;
    for (const auto& p : pts) {
        if (!std::isfinite(p.a) || !std::isfinite(p.b)) throw NumericError("non-finite front point");
        if (p.a > front.reference.a || p.b > front.reference.b)
            throw ConfigError("front point lies beyond the reference point");
    }
    std::sort(pts.begin(), pts.end(), [](const Point2& x, const Point2& y) { return x.a < y.a || (x.a == y.a && x.b < y.b); });
    double area = 0.0, prev_b = front.reference.b;
    for (const auto& p : pts) {
        if (p.b < prev_b) {
            area += (front.reference.a - p.a) * (prev_b - p.b);
            prev_b = p.b;
        }
    }
    return area;
}

PearsonResult pearson_r(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw ShapeError("series have different lengths");
    const std::size_t n = xs.size();
    if (n < 3) throw ConfigError("pearson correlation needs at least 3 points");
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / double(n);
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / double(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson correlation of a constant series");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    if (std::abs(r) == 1.0) return {r, 0.0};
    const double dof = double(n - 2);
    const double t = r * std::sqrt(dof / (1.0 - r * r));
    boost::math::students_t dist(dof);
    return {r, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)))};
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels have different lengths");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double pos = 0.0, neg = 0.0, rank_sum = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        std::size_t end = k;
        while (end < order.size() && scores[order[end]] == scores[order[k]]) ++end;
        const double mid_rank = 0.5 * double(k + 1 + end);  // average of ranks k+1..end
        for (std::size_t m = k; m < end; ++m) {
            const int y = labels[order[m]];
            if (y != 0 && y != 1) throw ConfigError("roc labels must be 0 or 1");
            if (y == 1) {
                pos += 1.0;
                rank_sum += mid_rank;
            } else
                neg += 1.0;
        }
        k = end;
    }
    if (pos == 0.0 || neg == 0.0) throw ConfigError("roc auc needs both classes");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

McNemarResult mcnemar_test(std::size_t b, std::size_t c) {
    if (b + c == 0) throw NumericError("mcnemar test needs at least one discordant pair");
    const double d = std::abs(double(b) - double(c)) - 1.0;
    const double chi2 = d * d / double(b + c);
    return {chi2, chi2 > 3.841};
}

McNemarResult mcnemar_test(const std::vector<bool>& first, const std::vector<bool>& second) {
    if (first.size() != second.size()) throw ShapeError("prediction vectors have different lengths");
    std::size_t b = 0, c = 0;
    for (std::size_t i = 0; i < first.size(); ++i) {
        b += first[i] && !second[i];
        c += !first[i] && second[i];
    }
    return mcnemar_test(b, c);
}

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        out[i] = int(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) throw ShapeError("predictions and labels have different lengths");
    if (labels.empty()) throw ConfigError("accuracy of an empty set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
    return double(hit) / double(labels.size());
}

}  // namespace gat
