#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"

namespace pksipm {

struct ScalarField {
    MaskPtr mask;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(MaskPtr m, double fill = 0.0) : mask(std::move(m)), values(mask->size(), fill) {}
    ScalarField(MaskPtr m, std::vector<double> v) : mask(std::move(m)), values(std::move(v)) {
        if (values.size() != mask->size()) throw ShapeError("field length does not match the mask");
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

inline void require_same_mask(const ScalarField& a, const ScalarField& b) {
    if (a.mask != b.mask && !a.mask->same_layout(*b.mask)) throw ShapeError("fields live on different masks");
    if (a.size() != b.size()) throw ShapeError("field sizes differ");
}

inline ScalarField sample(const MaskPtr& m, const std::function<double(double, double)>& f) {
    ScalarField out(m);
    for (std::size_t i = 0; i < m->size(); ++i) out[i] = f(m->x1(i), m->x2(i));
    return out;
}

inline double integral(const ScalarField& f) {
    double s = 0.0;
    for (double v : f.values) s += v;
    return s * f.mask->cell_area();
}

inline double mean(const ScalarField& f) { return integral(f) / f.mask->area(); }

inline double inner(const ScalarField& a, const ScalarField& b) {
    require_same_mask(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * a.mask->cell_area();
}

// Exact mean for constant inputs: avoids roundoff noise that would turn a
// constant into a tiny nonzero fluctuation.
inline double exact_mean(const double* v, std::size_t n) {
    if (n == 0) return 0.0;
    double lo = v[0], hi = v[0], s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
        s += v[i];
    }
    if (lo == hi) return lo;
    return std::clamp(s / static_cast<double>(n), lo, hi);
}

// Sum over interior faces of squared differences, divided by cell_size^2 and
// multiplied by cell_area: the discrete Dirichlet energy with zero boundary flux.
inline double grad_l2sq(const ScalarField& f) {
    const auto& m = *f.mask;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (auto e = m.east(i); e != GridMask::none) { const double d = f[static_cast<std::size_t>(e)] - f[i]; s += d * d; }
        if (auto n = m.north(i); n != GridMask::none) { const double d = f[static_cast<std::size_t>(n)] - f[i]; s += d * d; }
    }
    return s;  // (d/dx)^2 * dx^2 cancels
}

// Partial derivative in x1: centred inside a run, one-sided second order at run ends.
inline ScalarField d1(const ScalarField& f) {
    const auto& m = *f.mask;
    const double dx = m.cell_size();
    ScalarField out(f.mask);
    for (const auto& row : m.rows()) {
        const double* v = f.values.data() + row.offset;
        double* o = out.values.data() + row.offset;
        const std::int32_t n = row.count;
        if (n == 1) { o[0] = 0.0; continue; }
        if (n == 2) { o[0] = o[1] = (v[1] - v[0]) / dx; continue; }
        o[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
        o[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
        for (std::int32_t c = 1; c + 1 < n; ++c) o[c] = (v[c + 1] - v[c - 1]) / (2.0 * dx);
    }
    return out;
}

// Flux-form quadrature of the integral of d2 f: sum over interior north faces.
inline double integral_d2(const ScalarField& f) {
    const auto& m = *f.mask;
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (auto n = m.north(i); n != GridMask::none) s += f[static_cast<std::size_t>(n)] - f[i];
    return s * m.cell_size();
}

// ---- snapshot IO ----------------------------------------------------------

inline void write_csv(const ScalarField& f, std::ostream& os) {
    os << "x1,x2,value\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < f.size(); ++i) os << f.mask->x1(i) << ',' << f.mask->x2(i) << ',' << f[i] << '\n';
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "snapshot IO assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("truncated snapshot");
    return v;
}

}  // namespace detail

inline constexpr std::uint32_t kSnapshotVersion = 1;

// "STRF" | version u32 | rows u32 | cell_size f64 | per row: height f64,
// start_index i64, count u32, values f64 x count. Little-endian throughout.
inline void write_snapshot(const ScalarField& f, std::ostream& os) {
    const auto& m = *f.mask;
    os.write("STRF", 4);
    detail::put<std::uint32_t>(os, kSnapshotVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows().size()));
    detail::put<double>(os, m.cell_size());
    for (const auto& row : m.rows()) {
        detail::put<double>(os, row.height);
        detail::put<std::int64_t>(os, row.col_start);
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(row.count));
        os.write(reinterpret_cast<const char*>(f.values.data() + row.offset),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(row.count)));
    }
    if (!os) throw DataError("failed to write snapshot");
}

inline void write_snapshot(const ScalarField& f, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path);
    write_snapshot(f, os);
}

inline ScalarField read_snapshot(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "STRF", 4) != 0) throw DataError("not a STRF snapshot");
    const auto version = detail::get<std::uint32_t>(is);
    if (version != kSnapshotVersion) throw DataError("unsupported snapshot version " + std::to_string(version));
    const auto nrows = detail::get<std::uint32_t>(is);
    const auto dx = detail::get<double>(is);
    std::vector<Row> rows(nrows);
    std::vector<double> values;
    for (auto& row : rows) {
        row.height = detail::get<double>(is);
        row.row_index = static_cast<std::int64_t>(std::llround(row.height / dx - 0.5));
        row.col_start = detail::get<std::int64_t>(is);
        row.count = static_cast<std::int32_t>(detail::get<std::uint32_t>(is));
        const std::size_t base = values.size();
        values.resize(base + static_cast<std::size_t>(row.count));
        is.read(reinterpret_cast<char*>(values.data() + base),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(row.count)));
        if (!is) throw DataError("truncated snapshot");
    }
    auto mask = std::make_shared<const GridMask>(dx, std::move(rows));
    return ScalarField(std::move(mask), std::move(values));
}

inline ScalarField read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    return read_snapshot(is);
}

}  // namespace pksipm
