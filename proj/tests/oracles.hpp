#pragma once

// Independent reference computations used as test oracles. Nothing here calls
// into the code path it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace fedeat::oracle {

// Relative error with a floor on the denominator so coordinates whose true
// gradient is ~0 are compared absolutely at 1e-6 scale.
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(std::vector<double>&)>& f, std::vector<double> x,
                                  std::size_t i, double h = 1e-5) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Naive triple-loop row-major matmul.
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                        std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

struct Point2 {
    double x, y;
};

inline double sum_distances(std::span<const Point2> pts, Point2 w) {
    double s = 0.0;
    for (const auto& p : pts) s += std::hypot(p.x - w.x, p.y - w.y);
    return s;
}

// Geometric median in 2D by exhaustive grid search over the bounding box
// followed by pattern-search refinement (no gradients, no Weiszfeld).
inline Point2 geometric_median_2d(std::span<const Point2> pts, int grid = 200) {
    double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
    for (const auto& p : pts) {
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    Point2 best{x0, y0};
    double best_f = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= grid; ++i)
        for (int j = 0; j <= grid; ++j) {
            Point2 w{x0 + (x1 - x0) * i / grid, y0 + (y1 - y0) * j / grid};
            const double f = sum_distances(pts, w);
            if (f < best_f) best_f = f, best = w;
        }
    double step = std::max(x1 - x0, y1 - y0) / grid;
    while (step > 1e-12) {
        bool moved = false;
        for (auto [dx, dy] : {std::pair{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0},
                              {1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}}) {
            Point2 w{best.x + dx * step, best.y + dy * step};
            const double f = sum_distances(pts, w);
            if (f < best_f) best_f = f, best = w, moved = true;
        }
        if (!moved) step *= 0.5;
    }
    return best;
}

} // namespace fedeat::oracle
