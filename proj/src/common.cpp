#include "skelmamba/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace skelmamba {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t Rng::mix(uint64_t a, uint64_t b) {
    return splitmix64(splitmix64(a) ^ (0x2545f4914f6cdd1dull * b + 0x9e3779b97f4a7c15ull));
}

uint64_t Rng::hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

Rng Rng::keyed(uint64_t seed, std::string_view stream) {
    return Rng(mix(seed, hash_str(stream)));
}

Rng Rng::keyed(uint64_t seed, uint64_t a, uint64_t b) {
    return Rng(mix(mix(seed, a), b));
}

uint64_t Rng::next_u64() {
    return splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw DomainError("uniform_int: n must be positive");
    // modulo bias is negligible for n << 2^64
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

namespace threads {

static std::atomic<int> g_cap{0};  // 0 = uninitialized

static int env_cap() {
    const char* env = std::getenv("SKELMAMBA_THREADS");
    if (!env || !*env) return 1 << 20;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) return 1 << 20;
    return static_cast<int>(v);
}

int max_threads() {
    int cap = g_cap.load(std::memory_order_relaxed);
    if (cap == 0) {
#ifdef _OPENMP
        int hw = omp_get_max_threads();
#else
        int hw = 1;
#endif
        cap = std::min(hw, env_cap());
        if (cap < 1) cap = 1;
        g_cap.store(cap, std::memory_order_relaxed);
    }
    return cap;
}

void set_cap(int n) {
    g_cap.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

}  // namespace threads

}  // namespace skelmamba
