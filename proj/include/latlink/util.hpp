#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace latlink {

// Global worker count for internally parallel loops. Results are required to
// be bitwise identical for any value >= 1, so this only affects wall time.
void set_threads(int n);
int threads();

// Runs fn(0..n-1). Each index must write only to its own output slot.
void parallel_for(int n, const std::function<void(int)>& fn);

// FNV-1a, 64-bit. Stable across platforms; used for split assignment so that
// adding states never reshuffles existing ones.
std::uint64_t fnv1a64(std::string_view bytes);

// splitmix64 finalizer; used to derive independent seed streams from a base
// seed plus a purpose tag.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

// Decimal text with 17 significant digits (round-trips any double exactly).
std::string format_double(double v);

}  // namespace latlink
