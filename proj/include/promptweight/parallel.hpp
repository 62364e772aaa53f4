#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace promptweight {

/// Number of worker threads for per-sample loops. 1 runs inline on the
/// calling thread; 0 means "all hardware threads".
struct Parallelism {
    unsigned threads = 1;

    unsigned resolved() const {
        if (threads != 0) {
            return threads;
        }
        return std::max(1u, std::thread::hardware_concurrency());
    }
};

/// Splits [0, n) into at most `parts` contiguous ranges of near-equal size.
inline std::vector<std::pair<std::size_t, std::size_t>> split_ranges(std::size_t n, unsigned parts) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    parts = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, parts), std::max<std::size_t>(n, 1)));
    const std::size_t base = n / parts;
    const std::size_t extra = n % parts;
    std::size_t begin = 0;
    for (unsigned p = 0; p < parts; ++p) {
        const std::size_t len = base + (p < extra ? 1 : 0);
        ranges.emplace_back(begin, begin + len);
        begin += len;
    }
    return ranges;
}

/// Runs fn(part_index, begin, end) over a fixed contiguous partition of
/// [0, n). The partition depends only on (n, threads), so callers that reduce
/// per-part results in part order get deterministic output.
template <typename Fn>
void for_each_range(std::size_t n, Parallelism par, Fn&& fn) {
    const auto ranges = split_ranges(n, par.resolved());
    if (ranges.size() <= 1) {
        for (std::size_t p = 0; p < ranges.size(); ++p) {
            fn(p, ranges[p].first, ranges[p].second);
        }
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(ranges.size());
    workers.reserve(ranges.size() - 1);
    for (std::size_t p = 1; p < ranges.size(); ++p) {
        workers.emplace_back([&, p] {
            try {
                fn(p, ranges[p].first, ranges[p].second);
            } catch (...) {
                errors[p] = std::current_exception();
            }
        });
    }
    try {
        fn(std::size_t{0}, ranges[0].first, ranges[0].second);
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& w : workers) {
        w.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

inline std::size_t partition_count(std::size_t n, Parallelism par) {
    return split_ranges(n, par.resolved()).size();
}

} // namespace promptweight
