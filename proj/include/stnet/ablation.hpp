#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/config.hpp"
#include "stnet/gradcheck.hpp"

namespace stnet {

// stnet_vs_tsn  : StNet vs the order-blind segment-averaging baseline on the
//                 temporal-order task (trained and evaluated at t_train).
// itxn_vs_single: iTXN vs one TXN per modality and their score ensemble on
//                 the multimodal XOR task.
// t_transfer    : StNet trained at t_train, evaluated at t_train and t_eval.
const std::vector<std::string>& ablation_names();

struct AblationResult {
  nlohmann::json report;  // deterministic per (name, cfg, seed)
  std::string text;       // table rendering of report
};

// When `out` is given, each trained model's params/, curve.csv and
// eval.json are written under out/<model>/.
AblationResult run_ablation(const std::string& name, const RunConfig& cfg, std::uint64_t seed,
                            const std::filesystem::path* out = nullptr);

// f64 gradcheck of the configured model (train mode) on a small seeded
// random batch: video models get clips [2, 3, 3N, 16, 16], sequence models
// [4, d_m, T_m] with short, unequal T_m. Parameters are the seeded init plus
// Gaussian noise at half each tensor's RMS (0.05 for all-zero tensors), so
// the check runs away from the tie-laden symmetric init point.
GradcheckReport gradcheck_model(const RunConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt = {});

// "model | Prec@1 | Prec@5" table of a report's rows.
std::string report_table(const nlohmann::json& report);

}  // namespace stnet
