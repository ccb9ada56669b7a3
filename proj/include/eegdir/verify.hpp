#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace eegdir {

struct VerifyResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

// Suite names accepted by run_verify:
//   gradcheck retention causality relpos snr metrics adamw
const std::vector<std::string>& verify_suite_names();

// Runs the named suites (all when `only` is empty). `on_result` fires as each
// suite finishes. Unknown names raise ConfigError before anything runs.
std::vector<VerifyResult> run_verify(std::span<const std::string> only, std::uint64_t seed,
                                     const std::function<void(const VerifyResult&)>& on_result = {});

// Individual suites, exposed for the acceptance binary.
VerifyResult verify_gradcheck(std::uint64_t seed, std::size_t seeds = 20);
VerifyResult verify_retention(std::uint64_t seed);
VerifyResult verify_causality(std::uint64_t seed);
VerifyResult verify_relpos(std::uint64_t seed);
VerifyResult verify_snr(std::uint64_t seed);
VerifyResult verify_metrics(std::uint64_t seed);
VerifyResult verify_adamw();

}  // namespace eegdir
