#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skelmamba {

// Error taxonomy. The CLI maps NumericError to exit code 2 and every other
// validation failure to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Counter-based generator (splitmix64 over a keyed counter). Streams are
// independent per key, so parallel consumers keyed by sample id or parameter
// name produce order-independent results on any platform.
class Rng {
public:
    explicit Rng(uint64_t key) : key_(key) {}

    static uint64_t mix(uint64_t a, uint64_t b);
    static uint64_t hash_str(std::string_view s);
    static Rng keyed(uint64_t seed, std::string_view stream);
    static Rng keyed(uint64_t seed, uint64_t a, uint64_t b = 0);

    uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();                        // N(0, 1), Box-Muller
    int64_t uniform_int(int64_t n);         // [0, n)

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

namespace threads {

// Worker cap: min(hardware/OpenMP limit, SKELMAMBA_THREADS). A cap of 1 runs
// every kernel on its serial path.
int max_threads();
void set_cap(int n);

}  // namespace threads

}  // namespace skelmamba
