#include "peftbench/rng.hpp"

#include <cmath>
#include <numbers>

namespace peftbench {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t RngStream::next_u64()
{
    std::uint64_t key = splitmix64(seed_ ^ splitmix64(stream_ + 0x632BE59BD9B4E019ULL));
    return splitmix64(key ^ splitmix64(counter_++));
}

double RngStream::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal()
{
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n)
{
    if (n <= 1) return 0;
    // Rejection sampling removes modulo bias.
    std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

RngStream RngStream::split(std::uint64_t child) const
{
    return RngStream(seed_, splitmix64(stream_ * 0x9E3779B97F4A7C15ULL + child + 1));
}

std::vector<double> RngStream::normals(std::size_t n, double stddev)
{
    std::vector<double> v(n);
    for (auto& x : v) x = stddev * normal();
    return v;
}

}  // namespace peftbench
