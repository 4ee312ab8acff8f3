#pragma once

// Shared basics: error type, constants, index combinatorics for antisymmetric
// form components, field hashing for report digests.

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>
#include <array>
#include <algorithm>
#include <numeric>

namespace kml {

using Vec = std::vector<double>;

inline constexpr double kPi  = 3.14159265358979323846264338327950288;
inline constexpr double kTau = 2.0 * kPi;

class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw error(what);
}

// C(n,k)
inline int binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    long r = 1;
    for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
    return static_cast<int>(r);
}

// Sorted index tuples of length k out of {0..d-1}, lexicographic. These number
// the components of a degree-k form on a d-torus.
inline std::vector<std::vector<int>> index_tuples(int d, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    if (k == 0) { out.push_back({}); return out; }
    if (k > d) return out;
    while (true) {
        out.push_back(idx);
        int i = k - 1;
        while (i >= 0 && idx[i] == d - k + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
    return out;
}

// Position of a sorted tuple in the lexicographic list, or -1.
inline int tuple_rank(const std::vector<std::vector<int>>& tuples, const std::vector<int>& t) {
    for (size_t i = 0; i < tuples.size(); ++i)
        if (tuples[i] == t) return static_cast<int>(i);
    return -1;
}

// Sort indices, return permutation sign; 0 if a repeat occurs.
inline int sort_sign(std::vector<int>& idx) {
    int sign = 1;
    for (size_t i = 0; i + 1 < idx.size(); ++i)
        for (size_t j = 0; j + 1 < idx.size() - i; ++j)
            if (idx[j] > idx[j + 1]) { std::swap(idx[j], idx[j + 1]); sign = -sign; }
    for (size_t i = 0; i + 1 < idx.size(); ++i)
        if (idx[i] == idx[i + 1]) return 0;
    return sign;
}

inline double linf(const Vec& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// FNV-1a over raw doubles; used for input digests in reports.
inline std::uint64_t fnv1a(const Vec& v, std::uint64_t h = 1469598103934665603ull) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
    size_t n = v.size() * sizeof(double);
    for (size_t i = 0; i < n; ++i) { h ^= p[i]; h *= 1099511628211ull; }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) { s[i] = digits[h & 0xf]; h >>= 4; }
    return s;
}

inline bool all_finite(const Vec& v) {
    for (double x : v) if (!std::isfinite(x)) return false;
    return true;
}

} // namespace kml
