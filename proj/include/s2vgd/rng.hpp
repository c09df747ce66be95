#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace s2vgd {

namespace detail {

// splitmix64 finalizer; bijective on 64-bit words.
inline std::uint64_t hash64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

} // namespace detail

// Counter-based random stream: draw i is a pure hash of (key, i), where the
// key is derived from (master_seed, stream_id). Distinct stream_ids give
// independent sequences, so concurrent workers each own a stream and the
// global draw pattern is identical for any worker count.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : key_(detail::hash64(detail::hash64(master_seed + detail::kGolden) ^
                              detail::hash64(~stream_id))) {}

    // Child stream whose draws are independent of this stream's position.
    RngStream substream(std::uint64_t child_id) const {
        RngStream s;
        s.key_ = detail::hash64(key_ ^ detail::hash64(child_id + detail::kGolden));
        s.counter_ = 0;
        return s;
    }

    std::uint64_t next_u64() {
        counter_ += detail::kGolden;
        return detail::hash64(key_ + counter_);
    }

    // Uniform on the open interval (0, 1); never returns an exact endpoint,
    // so log() of a draw is always finite.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased enough for n far below 2^64 (fixed-point multiply method).
    std::uint64_t uniform_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller. Two uniforms per draw, no cached spare, so the mapping from
    // counter position to value is stateless.
    double gaussian() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double gaussian(double mean, double std) { return mean + std * gaussian(); }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

inline std::vector<double> gaussian_draws(RngStream& stream, std::size_t n, double mean,
                                          double std) {
    std::vector<double> out(n);
    for (auto& x : out) x = stream.gaussian(mean, std);
    return out;
}

} // namespace s2vgd
