#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedbrb/aggregate.h"
#include "fedbrb/coverage.h"
#include "fedbrb/data.h"
#include "fedbrb/model.h"
#include "fedbrb/partition.h"

namespace fedbrb {

// Sampling weights for the size letters a..e, e.g. "a0-b1-c1-d1-e1".
struct SizeDistribution {
  std::array<unsigned, 5> weights{};

  // Letters with positive weight, largest ratio first.
  std::vector<Ratio> support() const;
  Ratio min_ratio() const;
  // No full-size clients: every sub-model is strictly smaller than the global model.
  bool small_to_large() const { return weights[0] == 0; }
  std::string to_string() const;

  bool operator==(const SizeDistribution&) const = default;
};

// Dash-separated letter+digits tokens; omitted letters weigh 0.
SizeDistribution parse_distribution(std::string_view text);

enum class SizeSetting { Dynamic, Fixed };

std::string_view setting_name(SizeSetting setting);

// Step decay: lr * factor^(round / interval). interval 0 disables decay.
struct LrSchedule {
  std::uint64_t decay_interval = 0;
  double decay_factor = 1.0;

  double lr_at(double base_lr, std::uint64_t round) const;
};

struct FederationConfig {
  std::size_t num_clients = 20;
  double selected_fraction = 0.2;
  std::uint64_t rounds = 100;
  SizeDistribution distribution = parse_distribution("a0-e1");
  SizeSetting setting = SizeSetting::Dynamic;
  Scheme scheme = Scheme::BlockRolling;
  AggregationPolicy policy;
  TrainConfig train;
  LrSchedule schedule;
  std::uint64_t seed = 0;
  // Evaluate the global model every N rounds (and always after the last).
  std::uint64_t eval_every = 1;
  std::size_t eval_batch = 256;

  void validate() const;
  // ceil(selected_fraction * num_clients)
  std::size_t selected_count() const;
};

struct ClientState {
  std::size_t id = 0;
  DatasetShard shard;
  std::optional<Ratio> fixed_ratio;  // set in the fixed setting only
};

struct RoundRecord {
  std::uint64_t round = 0;  // rounds completed; 0 is the initial state
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> test_accuracy;
  std::optional<double> test_loss;
  double untrained_primary = 1.0;
  double untrained_touched = 1.0;
  std::vector<std::size_t> clients;
  std::vector<Ratio> ratios;
  std::size_t excluded_updates = 0;
  bool empty_round = false;
};

struct RunReport {
  RoundRecord initial;
  std::vector<RoundRecord> rounds;
  std::size_t guard_checks = 0;
  std::size_t guard_violations = 0;

  const RoundRecord& last() const { return rounds.empty() ? initial : rounds.back(); }
  // Accuracy of the last evaluated record.
  std::optional<double> final_accuracy() const;
};

// The server loop: sample clients, assign sizes, slice sub-models, train
// locally, aggregate, track coverage, evaluate.
class Federation {
 public:
  // train and test must outlive the federation; test may be null.
  Federation(FederationConfig cfg, ModelArch arch, const Dataset& train,
             const PartitionPlan& plan, const Dataset* test);

  const FederationConfig& config() const { return cfg_; }
  const ModelArch& arch() const { return arch_; }
  const Params& global() const { return global_; }
  void set_global(Params params);
  const CoverageMask& coverage() const { return coverage_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  Ratio min_ratio() const { return min_ratio_; }

  // Uniform without replacement, returned in ascending id order.
  std::vector<std::size_t> sample_clients(std::uint64_t round) const;
  std::vector<Ratio> assign_sizes(const std::vector<std::size_t>& selected,
                                  std::uint64_t round) const;
  SubModelSpec client_spec(std::size_t client, Ratio ratio, std::uint64_t round) const;

  // Executes training round `round` (0-based) and returns its record.
  RoundRecord run_round(std::uint64_t round);

  // Evaluates the current global model on the test set, if there is one.
  std::optional<EvalResult> evaluate_global() const;

  std::size_t guard_checks() const { return guard_checks_; }
  std::size_t guard_violations() const { return guard_violations_; }

 private:
  const ModelArch& sub_arch(Ratio ratio);

  FederationConfig cfg_;
  ModelArch arch_;
  const Dataset* train_;
  const Dataset* test_;
  std::vector<ClientState> clients_;
  Params global_;
  CoverageMask coverage_;
  Ratio min_ratio_;
  std::map<int, ModelArch> sub_archs_;
  std::size_t guard_checks_ = 0;
  std::size_t guard_violations_ = 0;
};

// Initial evaluation plus cfg.rounds rounds.
RunReport run(const FederationConfig& cfg, const ModelArch& arch, const Dataset& train,
              const PartitionPlan& plan, const Dataset* test);

}  // namespace fedbrb
