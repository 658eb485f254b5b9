#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace peftbench {

// Counter-based generator: draw k of stream (seed, stream_id) is a pure hash
// of (seed, stream_id, k), so sequences do not depend on the host or on the
// order in which independent streams are consumed.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_(stream_id) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    // Independent child stream derived from this stream's identity.
    RngStream split(std::uint64_t child) const;

    template <class T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<double> normals(std::size_t n, double stddev = 1.0);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace peftbench
