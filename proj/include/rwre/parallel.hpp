#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rwre {

// Thread count: explicit request, else RWRE_LAB_THREADS, else hardware.
inline unsigned resolve_threads(unsigned requested = 0)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("RWRE_LAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(begin, end, chunk) over fixed contiguous chunks of [0, count).
// The chunking depends only on count and chunk_size, never on the thread
// count, so per-chunk partial results combined in chunk order are
// bit-identical under any schedule.
template <typename Body>
void parallel_chunks(std::int64_t count, std::int64_t chunk_size, unsigned threads, Body&& body)
{
    if (count <= 0) return;
    chunk_size = std::max<std::int64_t>(1, chunk_size);
    const std::int64_t chunks = (count + chunk_size - 1) / chunk_size;
    threads = static_cast<unsigned>(std::min<std::int64_t>(std::max(1u, threads), chunks));

    auto run_chunk = [&](std::int64_t c) {
        const std::int64_t b = c * chunk_size;
        body(b, std::min(count, b + chunk_size), c);
    };
    if (threads == 1) {
        for (std::int64_t c = 0; c < chunks; ++c) run_chunk(c);
        return;
    }

    std::int64_t next = 0;
    std::mutex m;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            std::int64_t c;
            {
                std::lock_guard lock(m);
                if (next >= chunks || error) return;
                c = next++;
            }
            try {
                run_chunk(c);
            } catch (...) {
                std::lock_guard lock(m);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace rwre
