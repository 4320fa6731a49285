#pragma once

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "pagelab/core.hpp"

namespace pagelab {

/// coeff * X^{x_mask} Z^{z_mask} acting on the 2^L computational basis, with
/// bit i of a basis index holding site i and Z applied before X. The matrix
/// element is <c ^ x_mask| P |c> = coeff * (-1)^{popcount(c & z_mask)}.
struct PauliTerm {
    index_t x_mask = 0;
    index_t z_mask = 0;
    cplx coeff{0.0, 0.0};
};

struct SiteRange {
    int first = 0;
    int last = -1; // inclusive; last < first means the operator is a multiple of identity
    bool empty() const { return last < first; }
};

struct SparseEntry {
    index_t row;
    index_t col;
    cplx value;
};

/// Hermitian operator over 2^L states stored as Pauli strings grouped by their
/// flip mask. Every group is one permutation band of the matrix, so the
/// representation is compressed and applies without materialising entries.
class SparseHermitianOperator {
public:
    struct FlipGroup {
        index_t x_mask = 0;
        std::vector<std::pair<index_t, cplx>> z_terms; // (z_mask, coeff)
    };

    SparseHermitianOperator() = default;

    SparseHermitianOperator(int num_sites, std::span<const PauliTerm> terms)
        : num_sites_(num_sites)
    {
        require(num_sites >= 1 && num_sites <= 40, ErrorCode::invalid_size,
                "site count must be in [1, 40]", num_sites);
        dim_ = index_t{1} << num_sites;
        std::map<index_t, std::map<index_t, cplx>> grouped;
        for (const auto& t : terms) {
            require((t.x_mask | t.z_mask) < dim_, ErrorCode::invalid_argument,
                    "Pauli term acts outside the lattice");
            grouped[t.x_mask][t.z_mask] += t.coeff;
        }
        for (auto& [x, zs] : grouped) {
            FlipGroup grp{x, {}};
            for (auto& [z, c] : zs)
                if (c != cplx{0.0, 0.0})
                    grp.z_terms.emplace_back(z, c);
            if (!grp.z_terms.empty())
                groups_.push_back(std::move(grp));
        }
        check_hermitian();
        finalize();
    }

    int num_sites() const { return num_sites_; }
    index_t dim() const { return dim_; }
    const std::vector<FlipGroup>& groups() const { return groups_; }
    const RealVector& diagonal() const { return diagonal_; }
    SiteRange site_support() const { return support_; }

    /// True when every matrix element is real.
    bool is_real() const
    {
        for (const auto& g : groups_)
            for (const auto& [z, c] : g.z_terms)
                if (c.imag() != 0.0)
                    return false;
        return true;
    }

    std::vector<PauliTerm> terms() const
    {
        std::vector<PauliTerm> out;
        for (const auto& g : groups_)
            for (const auto& [z, c] : g.z_terms)
                out.push_back({g.x_mask, z, c});
        return out;
    }

    /// Matrix element of band `grp` in column `col`.
    static cplx band_value(const FlipGroup& grp, index_t col)
    {
        cplx v{0.0, 0.0};
        for (const auto& [z, c] : grp.z_terms)
            v += parity(col & z) ? -c : c;
        return v;
    }

    /// out = H * in for contiguous vectors of length dim().
    void apply(const cplx* in, cplx* out) const
    {
        const index_t n = dim_;
        // One pass over the output in cache-sized blocks. Every band reads a
        // contiguous partner block of `in`, so `out` is written exactly once.
        const index_t block = std::min<index_t>(n, kApplyBlock);
        for (index_t b0 = 0; b0 < n; b0 += block) {
            for (index_t i = b0; i < b0 + block; ++i)
                out[i] = diagonal_[i] * in[i];
            for (const std::size_t g : local_groups_)
                apply_group(groups_[g], in, out, b0, b0 + block);
            for (const std::size_t g : far_groups_)
                apply_group(groups_[g], in, out, b0, b0 + block);
        }
    }

    ComplexVector apply(const ComplexVector& v) const
    {
        require(static_cast<index_t>(v.size()) == dim_, ErrorCode::dimension_mismatch,
                "operator/vector dimension mismatch");
        ComplexVector out(v.size());
        apply(v.data(), out.data());
        return out;
    }

    /// H * X, column by column.
    ComplexMatrix apply_left(const ComplexMatrix& x) const
    {
        require(static_cast<index_t>(x.rows()) == dim_, ErrorCode::dimension_mismatch,
                "operator/matrix dimension mismatch");
        ComplexMatrix out(x.rows(), x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            apply(x.col(c).data(), out.col(c).data());
        return out;
    }

    /// <v|H|v>
    cplx expectation(const ComplexVector& v) const
    {
        require(static_cast<index_t>(v.size()) == dim_, ErrorCode::dimension_mismatch,
                "operator/vector dimension mismatch");
        return v.dot(apply(v));
    }

    /// Tr(rho H)
    cplx expectation(const ComplexMatrix& rho) const
    {
        require(static_cast<index_t>(rho.rows()) == dim_ && rho.rows() == rho.cols(),
                ErrorCode::dimension_mismatch, "operator/matrix dimension mismatch");
        cplx acc{0.0, 0.0};
        for (index_t c = 0; c < dim_; ++c)
            acc += diagonal_[c] * rho(c, c);
        for (const auto& g : groups_) {
            if (g.x_mask == 0)
                continue;
            for (index_t c = 0; c < dim_; ++c)
                acc += band_value(g, c) * rho(c, c ^ g.x_mask);
        }
        return acc;
    }

    /// Nonzero entries, row-major with increasing column inside a row.
    std::vector<SparseEntry> entries() const
    {
        std::vector<SparseEntry> out;
        std::vector<SparseEntry> row_buf;
        for (index_t r = 0; r < dim_; ++r) {
            row_buf.clear();
            for (const auto& g : groups_) {
                const index_t c = r ^ g.x_mask;
                const cplx v = band_value(g, c);
                if (v != cplx{0.0, 0.0})
                    row_buf.push_back({r, c, v});
            }
            std::sort(row_buf.begin(), row_buf.end(),
                      [](const SparseEntry& a, const SparseEntry& b) { return a.col < b.col; });
            out.insert(out.end(), row_buf.begin(), row_buf.end());
        }
        return out;
    }

    ComplexMatrix to_dense() const
    {
        require(dim_ <= (index_t{1} << 14), ErrorCode::invalid_size, "operator too large for dense form");
        ComplexMatrix m = ComplexMatrix::Zero(dim_, dim_);
        for (const auto& e : entries())
            m(e.row, e.col) += e.value;
        return m;
    }

    RealMatrix to_dense_real() const
    {
        require(is_real(), ErrorCode::invalid_argument, "operator has complex entries");
        return to_dense().real();
    }

    Eigen::SparseMatrix<cplx, Eigen::RowMajor> to_sparse() const
    {
        std::vector<Eigen::Triplet<cplx>> trip;
        for (const auto& e : entries())
            trip.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col), e.value);
        Eigen::SparseMatrix<cplx, Eigen::RowMajor> m(dim_, dim_);
        m.setFromTriplets(trip.begin(), trip.end());
        return m;
    }

    friend SparseHermitianOperator operator+(const SparseHermitianOperator& a,
                                             const SparseHermitianOperator& b)
    {
        require(a.num_sites_ == b.num_sites_, ErrorCode::dimension_mismatch,
                "cannot add operators on different lattices");
        auto t = a.terms();
        const auto tb = b.terms();
        t.insert(t.end(), tb.begin(), tb.end());
        return SparseHermitianOperator(a.num_sites_, t);
    }

    friend SparseHermitianOperator operator*(double s, const SparseHermitianOperator& a)
    {
        auto t = a.terms();
        for (auto& x : t)
            x.coeff *= s;
        return SparseHermitianOperator(a.num_sites_, t);
    }

    /// Rebuild from explicit entries by Walsh-Hadamard decomposition of each band.
    static SparseHermitianOperator from_entries(index_t dim, std::span<const SparseEntry> entries)
    {
        const int sites = log2_exact(dim);
        require(dim <= (index_t{1} << 24), ErrorCode::invalid_size, "operator too large to decompose");
        std::map<index_t, std::vector<cplx>> bands;
        for (const auto& e : entries) {
            require(e.row < dim && e.col < dim, ErrorCode::invalid_argument, "entry index out of range");
            auto& f = bands[e.row ^ e.col];
            if (f.empty())
                f.assign(dim, cplx{0.0, 0.0});
            f[e.col] += e.value;
        }
        std::vector<PauliTerm> terms;
        for (auto& [x, f] : bands) {
            walsh_hadamard(f);
            double scale = 0.0;
            for (const auto& v : f)
                scale = std::max(scale, std::abs(v));
            for (index_t z = 0; z < dim; ++z) {
                const cplx a = f[z] / static_cast<double>(dim);
                if (std::abs(a) > 1e-14 * scale / static_cast<double>(dim))
                    terms.push_back({x, z, a});
            }
        }
        return SparseHermitianOperator(sites, terms);
    }

private:
    static void walsh_hadamard(std::vector<cplx>& f)
    {
        const index_t n = f.size();
        for (index_t h = 1; h < n; h <<= 1)
            for (index_t i = 0; i < n; i += 2 * h)
                for (index_t j = i; j < i + h; ++j) {
                    const cplx a = f[j], b = f[j + h];
                    f[j] = a + b;
                    f[j + h] = a - b;
                }
    }

    void check_hermitian() const
    {
        // (X^x Z^z)^dagger = (-1)^{|x & z|} X^x Z^z
        for (const auto& g : groups_)
            for (const auto& [z, c] : g.z_terms) {
                const cplx expect = parity(g.x_mask & z) ? -std::conj(c) : std::conj(c);
                require(std::abs(expect - c) <= 1e-12 * std::max(1.0, std::abs(c)),
                        ErrorCode::invalid_argument, "Pauli term is not Hermitian");
            }
    }

    void finalize()
    {
        diagonal_ = RealVector::Zero(dim_);
        local_groups_.clear();
        far_groups_.clear();
        const index_t block = std::min<index_t>(dim_, kApplyBlock);
        index_t all_masks = 0;
        for (std::size_t k = 0; k < groups_.size(); ++k) {
            const auto& g = groups_[k];
            for (const auto& [z, c] : g.z_terms)
                all_masks |= g.x_mask | z;
            if (g.x_mask == 0) {
                for (index_t i = 0; i < dim_; ++i)
                    diagonal_[i] += band_value(g, i).real();
            } else if (g.x_mask < block) {
                local_groups_.push_back(k);
            } else {
                far_groups_.push_back(k);
            }
        }
        if (all_masks == 0) {
            support_ = {};
        } else {
            support_.first = std::countr_zero(all_masks);
            support_.last = 63 - std::countl_zero(all_masks);
        }
    }

    static void apply_group(const FlipGroup& g, const cplx* in, cplx* out, index_t lo, index_t hi)
    {
        const index_t x = g.x_mask;
        if (g.z_terms.size() == 1 && g.z_terms[0].first == 0) {
            const cplx c = g.z_terms[0].second;
            if (c.imag() == 0.0) {
                const double cr = c.real();
                for (index_t i = lo; i < hi; ++i)
                    out[i] += cr * in[i ^ x];
            } else {
                for (index_t i = lo; i < hi; ++i)
                    out[i] += c * in[i ^ x];
            }
            return;
        }
        // out[r] += value(col = r ^ x) * in[r ^ x]
        for (index_t r = lo; r < hi; ++r) {
            const index_t col = r ^ x;
            out[r] += band_value(g, col) * in[col];
        }
    }

    static constexpr index_t kApplyBlock = index_t{1} << 12;

    int num_sites_ = 0;
    index_t dim_ = 0;
    std::vector<FlipGroup> groups_;
    RealVector diagonal_;
    std::vector<std::size_t> local_groups_;
    std::vector<std::size_t> far_groups_;
    SiteRange support_;

};

// PGL1: "PGL1", u64 dim, u64 count, then count x (u64 row, u64 col, f64 re, f64 im).
static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_operator(std::ostream& os, const SparseHermitianOperator& op)
{
    const auto ents = op.entries();
    const std::uint64_t dim = op.dim(), count = ents.size();
    os.write("PGL1", 4);
    os.write(reinterpret_cast<const char*>(&dim), 8);
    os.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& e : ents) {
        const std::uint64_t rc[2] = {e.row, e.col};
        const double v[2] = {e.value.real(), e.value.imag()};
        os.write(reinterpret_cast<const char*>(rc), 16);
        os.write(reinterpret_cast<const char*>(v), 16);
    }
    require(static_cast<bool>(os), ErrorCode::io, "failed writing operator");
}

inline SparseHermitianOperator read_operator(std::istream& is)
{
    char magic[4];
    is.read(magic, 4);
    require(is && std::string(magic, 4) == "PGL1", ErrorCode::io, "not a PGL1 operator file");
    std::uint64_t dim = 0, count = 0;
    is.read(reinterpret_cast<char*>(&dim), 8);
    is.read(reinterpret_cast<char*>(&count), 8);
    require(static_cast<bool>(is), ErrorCode::io, "truncated PGL1 header");
    std::vector<SparseEntry> ents(count);
    for (auto& e : ents) {
        std::uint64_t rc[2];
        double v[2];
        is.read(reinterpret_cast<char*>(rc), 16);
        is.read(reinterpret_cast<char*>(v), 16);
        e = {rc[0], rc[1], {v[0], v[1]}};
    }
    require(static_cast<bool>(is), ErrorCode::io, "truncated PGL1 body");
    return SparseHermitianOperator::from_entries(dim, ents);
}

inline void save_operator(const std::string& path, const SparseHermitianOperator& op)
{
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorCode::io, "cannot open " + path);
    write_operator(os, op);
}

inline SparseHermitianOperator load_operator(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorCode::io, "cannot open " + path);
    return read_operator(is);
}

} // namespace pagelab
