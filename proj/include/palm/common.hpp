#pragma once

// Shared basics: error types, deterministic RNG, deterministic parallel loops.

#include <Eigen/Dense>

#include <omp.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace palm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Exit-code-bearing errors. The CLI maps these to process exit codes;
// library code throws them directly.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

// splitmix64, used to derive independent stream seeds from (seed, tags).
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// mt19937_64 with explicit helpers; std distributions are avoided because
// their output is not pinned by the standard.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    int uniform_int(int n) {  // [0, n)
        return int(next_u64() % uint64_t(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }
    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        has_spare_ = false;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---- deterministic parallelism ----
//
// Work is split into fixed-size blocks independent of the thread count, and
// reductions combine per-block partials in block order. Outputs are therefore
// bit-identical no matter how many threads run.

inline int& thread_count_ref() {
    static int n = omp_get_max_threads();
    return n;
}

inline void set_thread_count(int n) {
    if (n < 1) n = 1;
    thread_count_ref() = n;
}

inline int thread_count() { return thread_count_ref(); }

template <typename F>
void parallel_blocks(int64_t n, int64_t block, F&& fn) {
    if (n <= 0) return;
    if (block < 1) block = 1;
    int64_t nblocks = (n + block - 1) / block;
    int nt = thread_count();
    if (nt <= 1 || nblocks <= 1) {
        for (int64_t b = 0; b < nblocks; ++b) fn(b * block, std::min(n, (b + 1) * block));
        return;
    }
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
    for (int64_t b = 0; b < nblocks; ++b) fn(b * block, std::min(n, (b + 1) * block));
}

template <typename F>
void parallel_for(int64_t n, F&& fn) {
    parallel_blocks(n, std::max<int64_t>(int64_t(1), n / 64), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) fn(i);
    });
}

// Block-partial sum combined serially in block order: thread-count invariant.
template <typename F>
double parallel_sum(int64_t n, F&& term) {
    const int64_t block = std::max<int64_t>(int64_t(1), n / 64);
    const int64_t nblocks = n <= 0 ? 0 : (n + block - 1) / block;
    std::vector<double> partial(size_t(nblocks), 0.0);
    parallel_blocks(n, block, [&](int64_t lo, int64_t hi) {
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += term(i);
        partial[size_t(lo / block)] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace palm
