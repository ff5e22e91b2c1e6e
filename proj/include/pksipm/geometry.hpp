#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

// Boost 1.74's pchip calls isnan unqualified.
namespace boost::math::interpolators { using std::isnan; }
#include <boost/math/interpolators/pchip.hpp>

#include "error.hpp"

namespace pksipm {

// A domain {F_l(x2) < x1 < F_r(x2), 0 < x2 < h}. Charts are opaque callables.
struct DomainSpec {
    std::function<double(double)> chart_left;
    std::function<double(double)> chart_right;
    double height = 0.0;
    int cap_order_low = 2;
    double cap_coeff_low = 0.0;
    int cap_order_high = 2;
    double cap_coeff_high = 0.0;
    double eps_star = 0.0;

    std::string family;
    std::vector<double> params;

    double left(double x2) const { return chart_left(x2); }
    double right(double x2) const { return chart_right(x2); }
    double width(double x2) const { return chart_right(x2) - chart_left(x2); }
};

struct GeometricConstants {
    double K_star = 0.0;
    double R_star = 1.0;
    double M_star = 1.0;
    double area = 0.0;
};

namespace detail {

inline constexpr int kValidationSamples = 1000;

// Returns an empty string when the spec passes, otherwise the first failure.
inline std::string admissibility_failure(const DomainSpec& d) {
    const double h = d.height;
    if (!(h > 0.0) || !std::isfinite(h)) return "height must be positive";
    if (!(d.eps_star > 0.0)) return "eps_star must be positive";
    if (!(d.eps_star < h / 4.0)) return "eps_star must be below h/4";
    if (!(d.eps_star < 1.0)) return "eps_star must be below 1";
    const double close_tol = 1e-6 * std::max(1.0, h);
    if (std::abs(d.left(0.0) - d.right(0.0)) > close_tol || std::abs(d.left(h) - d.right(h)) > close_tol)
        return "charts must meet at the caps";
    const int n = kValidationSamples;
    for (int i = 0; i < n; ++i) {
        const double x2 = h * (i + 0.5) / n;
        const double w = d.width(x2);
        if (!std::isfinite(w)) return "chart evaluation failed";
        if (!(w > 0.0)) return "charts must satisfy F_l < F_r in the interior";
    }
    double prev_low = 0.0, prev_high = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = d.eps_star * (i + 1.0) / n;
        const double wl = d.width(t);
        const double wh = d.width(h - t);
        const double slack = 1e-12 * std::max(1.0, wl);
        if (wl + slack < prev_low) return "cross-section width must increase on (0, eps_star)";
        if (wh + slack < prev_high) return "cross-section width must decrease on (h - eps_star, h)";
        prev_low = wl;
        prev_high = wh;
    }
    // |I_eps*| must be the shortest cross-section on [eps*, 3h/4], and symmetrically at the top.
    const double w_low = d.width(d.eps_star), w_high = d.width(h - d.eps_star);
    for (int i = 0; i <= n; ++i) {
        const double a = d.eps_star + (0.75 * h - d.eps_star) * i / n;
        const double b = 0.25 * h + (0.75 * h - d.eps_star) * i / n;
        if (d.width(a) < w_low * (1.0 - 1e-9)) return "|I_eps*| must be the minimal width on [eps*, 3h/4]";
        if (d.width(b) < w_high * (1.0 - 1e-9)) return "|I_{h-eps*}| must be the minimal width on [h/4, h-eps*]";
    }
    return {};
}

}  // namespace detail

inline void validate_domain(const DomainSpec& d) {
    if (auto why = detail::admissibility_failure(d); !why.empty()) throw DomainError(why);
}

// Largest eps_star (on a geometric ladder) for which the cap monotonicity checks hold.
inline double auto_eps_star(DomainSpec d) {
    double e = std::min(0.9, 0.2 * d.height);
    for (int k = 0; k < 60; ++k, e *= 0.85) {
        d.eps_star = e;
        if (detail::admissibility_failure(d).empty()) return e;
    }
    throw DomainError("no admissible eps_star found");
}

inline DomainSpec make_disk(double radius, double eps_star = -1.0) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ParameterError("disk radius must be positive");
    DomainSpec d;
    d.family = "disk";
    d.params = {radius};
    d.height = 2.0 * radius;
    d.chart_right = [radius](double x2) {
        const double v = x2 * (2.0 * radius - x2);
        return v > 0.0 ? std::sqrt(v) : 0.0;
    };
    d.chart_left = [r = d.chart_right](double x2) { return -r(x2); };
    d.cap_order_low = d.cap_order_high = 2;
    d.cap_coeff_low = d.cap_coeff_high = 1.0 / (2.0 * radius);
    d.eps_star = eps_star > 0.0 ? eps_star : std::min(0.25 * radius, 0.9);
    validate_domain(d);
    return d;
}

inline DomainSpec make_ellipse(double a, double b, double eps_star = -1.0) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
        throw ParameterError("ellipse semi-axes must be positive");
    DomainSpec d;
    d.family = "ellipse";
    d.params = {a, b};
    d.height = 2.0 * b;
    d.chart_right = [a, b](double x2) {
        const double s = (x2 - b) / b;
        const double v = 1.0 - s * s;
        return v > 0.0 ? a * std::sqrt(v) : 0.0;
    };
    d.chart_left = [r = d.chart_right](double x2) { return -r(x2); };
    d.cap_order_low = d.cap_order_high = 2;
    d.cap_coeff_low = d.cap_coeff_high = b / (2.0 * a * a);
    d.eps_star = eps_star > 0.0 ? eps_star : std::min(0.25 * b, 0.9);
    validate_domain(d);
    return d;
}

// Unit-height-scale disk pinched near mid-height; the neck has width 2w.
inline DomainSpec make_bottleneck(double w, double eps_star = -1.0) {
    if (!(w > 0.0 && w < 1.0)) throw ParameterError("bottleneck neck width must lie in (0,1)");
    DomainSpec d;
    d.family = "bottleneck";
    d.params = {w};
    d.height = 2.0;
    d.chart_right = [w](double x2) {
        const double v = x2 * (2.0 - x2);
        const double z = (x2 - 1.0) / 0.25;
        return v > 0.0 ? std::sqrt(v) * (1.0 - (1.0 - w) * std::exp(-z * z)) : 0.0;
    };
    d.chart_left = [r = d.chart_right](double x2) { return -r(x2); };
    const double pinch = 1.0 - (1.0 - w) * std::exp(-16.0);
    d.cap_order_low = d.cap_order_high = 2;
    d.cap_coeff_low = d.cap_coeff_high = 0.5 / (pinch * pinch);
    d.eps_star = eps_star > 0.0 ? eps_star : auto_eps_star(d);
    validate_domain(d);
    return d;
}

inline DomainSpec builtin_domain(const std::string& name, const std::vector<double>& params, double eps_star = -1.0) {
    if (name == "disk") {
        if (params.size() != 1) throw ParameterError("disk takes one parameter (radius)");
        return make_disk(params[0], eps_star);
    }
    if (name == "ellipse") {
        if (params.size() != 2) throw ParameterError("ellipse takes two parameters (semi-axes a, b)");
        return make_ellipse(params[0], params[1], eps_star);
    }
    if (name == "bottleneck") {
        if (params.size() != 1) throw ParameterError("bottleneck takes one parameter (neck width)");
        return make_bottleneck(params[0], eps_star);
    }
    throw ParameterError("unknown domain family '" + name + "'");
}

// Tabulated charts with monotone cubic (PCHIP) interpolation. Heights are
// shifted so the lowest one is 0.
inline DomainSpec make_chart_table(std::vector<double> heights, std::vector<double> left, std::vector<double> right,
                                   double eps_star = -1.0) {
    const std::size_t n = heights.size();
    if (n < 5 || left.size() != n || right.size() != n)
        throw ParameterError("chart_table needs at least 5 heights and matching left/right tables");
    for (std::size_t i = 1; i < n; ++i)
        if (!(heights[i] > heights[i - 1])) throw ParameterError("chart_table heights must be strictly increasing");
    const double h0 = heights.front();
    for (auto& x : heights) x -= h0;
    DomainSpec d;
    d.family = "chart_table";
    d.height = heights.back();

    // Log-log fit of the half-width near each cap: half-width ~ (t/K)^(1/n).
    auto fit_cap = [&](bool low) {
        const std::size_t i1 = low ? 1 : n - 2, i2 = low ? 2 : n - 3;
        auto t_of = [&](std::size_t i) { return low ? heights[i] : d.height - heights[i]; };
        auto hw_of = [&](std::size_t i) { return 0.5 * (right[i] - left[i]); };
        const double slope = std::log(hw_of(i2) / hw_of(i1)) / std::log(t_of(i2) / t_of(i1));
        int order = 2 * std::max(1, static_cast<int>(std::lround(0.5 / slope)));
        const double K = t_of(i1) / std::pow(hw_of(i1), order);
        return std::pair<int, double>{order, K};
    };
    std::tie(d.cap_order_low, d.cap_coeff_low) = fit_cap(true);
    std::tie(d.cap_order_high, d.cap_coeff_high) = fit_cap(false);
    if (!(d.cap_coeff_low > 0.0) || !(d.cap_coeff_high > 0.0) || !std::isfinite(d.cap_coeff_low) ||
        !std::isfinite(d.cap_coeff_high))
        throw DomainError("chart_table caps do not admit a Taylor fit");

    using Pchip = boost::math::interpolators::pchip<std::vector<double>>;
    auto lp = std::make_shared<Pchip>(std::vector<double>(heights), std::move(left));
    auto rp = std::make_shared<Pchip>(std::vector<double>(heights), std::move(right));
    const double h = d.height;
    d.chart_left = [lp, h](double x2) { return (*lp)(std::clamp(x2, 0.0, h)); };
    d.chart_right = [rp, h](double x2) { return (*rp)(std::clamp(x2, 0.0, h)); };
    d.eps_star = eps_star > 0.0 ? eps_star : auto_eps_star(d);
    validate_domain(d);
    return d;
}

inline GeometricConstants geometric_constants(const DomainSpec& d, int samples = 10000) {
    if (samples < 100) throw ParameterError("geometric_constants needs at least 100 samples");
    GeometricConstants gc;
    const double h = d.height, e = d.eps_star;
    double area = 0.0;
    double kstar = std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) {
        const double x2 = h * (i + 0.5) / samples;
        const double w = d.width(x2);
        if (!std::isfinite(w)) throw DomainError("chart evaluation failed");
        area += w;
        kstar = std::min(kstar, w / std::sqrt(std::min({x2, h - x2, e})));
    }
    gc.area = area * h / samples;
    gc.K_star = kstar;

    const double lo = e / 4.0, hi = h - e / 4.0, step = 1e-6 * h;
    double wmin = std::numeric_limits<double>::infinity(), wmax = 0.0, dmax = 1.0;
    for (int i = 0; i < samples; ++i) {
        const double x2 = lo + (hi - lo) * i / (samples - 1.0);
        const double w = d.width(x2);
        wmin = std::min(wmin, w);
        wmax = std::max(wmax, w);
        const double dl = (d.left(x2 + step) - d.left(x2 - step)) / (2.0 * step);
        const double dr = (d.right(x2 + step) - d.right(x2 - step)) / (2.0 * step);
        if (!std::isfinite(dl) || !std::isfinite(dr)) throw DomainError("chart derivative is not finite");
        dmax = std::max({dmax, std::abs(dl), std::abs(dr)});
    }
    gc.R_star = std::max(1.0, wmax / wmin);
    gc.M_star = dmax;
    if (!(gc.K_star > 0.0)) throw DomainError("cross-section decay constant K* is not positive");
    return gc;
}

// One horizontal row of active cells: columns [col_start, col_start + count).
struct Row {
    double height = 0.0;       // x2 of the cell centres
    std::int64_t row_index = 0;  // j with height = (j + 1/2) * cell_size
    std::int64_t col_start = 0;  // k of the leftmost active cell; its left edge is k * cell_size
    std::int32_t count = 0;
    std::size_t offset = 0;      // flat index of the first cell
};

struct RasterReport {
    int dropped_rows = 0;
    double dropped_area = 0.0;
};

// Uniform square-cell mask. Cells are stored row by row, left to right.
class GridMask {
public:
    static constexpr std::int64_t none = -1;

    GridMask(double cell_size, std::vector<Row> rows, double domain_height = 0.0, RasterReport report = {})
        : cell_size_(cell_size), rows_(std::move(rows)), report_(report) {
        if (!(cell_size_ > 0.0)) throw ShapeError("cell size must be positive");
        if (rows_.empty()) throw ShapeError("mask has no rows");
        std::size_t off = 0;
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            auto& row = rows_[r];
            if (row.count <= 0) throw ShapeError("mask rows must be nonempty");
            if (r > 0 && row.row_index != rows_[r - 1].row_index + 1) throw ShapeError("mask rows must be consecutive");
            row.offset = off;
            off += static_cast<std::size_t>(row.count);
        }
        n_ = off;
        height_ = domain_height > 0.0 ? domain_height : (rows_.back().row_index + 1) * cell_size_;
        build_neighbours();
    }

    double cell_size() const { return cell_size_; }
    double cell_area() const { return cell_size_ * cell_size_; }
    double domain_height() const { return height_; }
    std::size_t size() const { return n_; }
    const std::vector<Row>& rows() const { return rows_; }
    const RasterReport& report() const { return report_; }
    double area() const { return static_cast<double>(n_) * cell_area(); }

    std::int64_t east(std::size_t i) const { return nb_[4 * i + 0]; }
    std::int64_t west(std::size_t i) const { return nb_[4 * i + 1]; }
    std::int64_t north(std::size_t i) const { return nb_[4 * i + 2]; }
    std::int64_t south(std::size_t i) const { return nb_[4 * i + 3]; }
    std::int64_t neighbour(std::size_t i, int dir) const { return nb_[4 * i + dir]; }

    std::size_t row_of(std::size_t i) const { return row_of_[i]; }
    std::int64_t col_of(std::size_t i) const { return rows_[row_of_[i]].col_start + static_cast<std::int64_t>(i - rows_[row_of_[i]].offset); }
    double x1(std::size_t i) const { return (static_cast<double>(col_of(i)) + 0.5) * cell_size_; }
    double x2(std::size_t i) const { return rows_[row_of_[i]].height; }

    // Flat index of cell (column k, mask row r), or none.
    std::int64_t index(std::int64_t k, std::int64_t r) const {
        if (r < 0 || r >= static_cast<std::int64_t>(rows_.size())) return none;
        const auto& row = rows_[static_cast<std::size_t>(r)];
        if (k < row.col_start || k >= row.col_start + row.count) return none;
        return static_cast<std::int64_t>(row.offset) + (k - row.col_start);
    }

    bool same_layout(const GridMask& o) const {
        if (n_ != o.n_ || rows_.size() != o.rows_.size() || cell_size_ != o.cell_size_) return false;
        for (std::size_t r = 0; r < rows_.size(); ++r)
            if (rows_[r].col_start != o.rows_[r].col_start || rows_[r].count != o.rows_[r].count ||
                rows_[r].row_index != o.rows_[r].row_index)
                return false;
        return true;
    }

private:
    void build_neighbours() {
        nb_.assign(4 * n_, none);
        row_of_.resize(n_);
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            const auto& row = rows_[r];
            for (std::int32_t c = 0; c < row.count; ++c) {
                const std::size_t i = row.offset + static_cast<std::size_t>(c);
                const std::int64_t k = row.col_start + c;
                const auto rr = static_cast<std::int64_t>(r);
                row_of_[i] = r;
                nb_[4 * i + 0] = index(k + 1, rr);
                nb_[4 * i + 1] = index(k - 1, rr);
                nb_[4 * i + 2] = index(k, rr + 1);
                nb_[4 * i + 3] = index(k, rr - 1);
            }
        }
    }

    double cell_size_;
    std::vector<Row> rows_;
    RasterReport report_;
    std::size_t n_ = 0;
    double height_ = 0.0;
    std::vector<std::int64_t> nb_;
    std::vector<std::size_t> row_of_;
};

using MaskPtr = std::shared_ptr<const GridMask>;

struct RasterOptions {
    // Refuse cell sizes that cannot resolve the caps (cell_size > eps_star/4).
    bool require_cap_resolution = true;
};

inline MaskPtr rasterize(const DomainSpec& d, double cell_size, RasterOptions opt = {}) {
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ResolutionError("cell size must be positive");
    const double h = d.height;
    const auto nrows = static_cast<std::int64_t>(std::floor(h / cell_size + 1e-9));
    if (nrows < 8) throw ResolutionError("cell size too coarse: fewer than 8 rows");
    if (opt.require_cap_resolution && cell_size > d.eps_star / 4.0 * (1.0 + 1e-12))
        throw ResolutionError("cell size must not exceed eps_star/4");

    std::vector<Row> rows;
    RasterReport rep;
    bool seen = false, gap = false;
    for (std::int64_t j = 0; j < nrows; ++j) {
        const double y = (static_cast<double>(j) + 0.5) * cell_size;
        const double fl = d.left(y), fr = d.right(y);
        if (!std::isfinite(fl) || !std::isfinite(fr)) throw DomainError("chart evaluation failed");
        const auto kmin = static_cast<std::int64_t>(std::floor(fl / cell_size - 0.5)) + 1;
        const auto kmax = static_cast<std::int64_t>(std::ceil(fr / cell_size - 0.5)) - 1;
        const std::int64_t count = kmax - kmin + 1;
        if (fr - fl < cell_size || count <= 0) {
            ++rep.dropped_rows;
            rep.dropped_area += std::max(0.0, fr - fl) * cell_size;
            if (seen) gap = true;
            continue;
        }
        if (gap) throw ResolutionError("cross-section narrower than one cell away from the caps");
        if (!rows.empty()) {
            const auto& below = rows.back();
            if (kmin >= below.col_start + below.count || kmax < below.col_start)
                throw ResolutionError("adjacent rows do not overlap; refine the grid");
        }
        seen = true;
        Row row;
        row.height = y;
        row.row_index = j;
        row.col_start = kmin;
        row.count = static_cast<std::int32_t>(count);
        rows.push_back(row);
    }
    if (rows.size() < 8) throw ResolutionError("cell size too coarse: fewer than 8 active rows");
    return std::make_shared<const GridMask>(cell_size, std::move(rows), h, rep);
}

}  // namespace pksipm
