#include "fedbrb/federation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedbrb {
namespace {

// Stream tags for make_stream, so each purpose draws independent numbers.
enum StreamTag : std::uint64_t {
  kInitStream = 1,
  kSampleStream = 2,
  kSizeStream = 3,
  kSpecStream = 4,
  kTrainStream = 5,
};

}  // namespace

std::vector<Ratio> SizeDistribution::support() const {
  std::vector<Ratio> out;
  for (int i = 0; i < 5; ++i) {
    if (weights[static_cast<std::size_t>(i)] > 0) out.push_back(Ratio::from_log2_denominator(i));
  }
  return out;
}

Ratio SizeDistribution::min_ratio() const {
  const auto s = support();
  if (s.empty()) throw std::invalid_argument("size distribution has no positive weight");
  return s.back();
}

std::string SizeDistribution::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] == 0 && i != 0) continue;
    if (!out.empty()) out += '-';
    out += static_cast<char>('a' + i);
    out += std::to_string(weights[i]);
  }
  return out;
}

SizeDistribution parse_distribution(std::string_view text) {
  SizeDistribution dist;
  std::array<bool, 5> seen{};
  if (text.empty()) throw std::invalid_argument("empty size distribution");
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t dash = text.find('-', pos);
    const std::string_view token =
        text.substr(pos, dash == std::string_view::npos ? std::string_view::npos : dash - pos);
    if (token.size() < 2) {
      throw std::invalid_argument("malformed size token '" + std::string(token) + "' in '" +
                                  std::string(text) + "'");
    }
    const char letter = token[0];
    if (letter < 'a' || letter > 'e') {
      throw std::invalid_argument("size letter must be a..e in token '" + std::string(token) + "'");
    }
    unsigned weight = 0;
    for (char c : token.substr(1)) {
      if (c < '0' || c > '9') {
        throw std::invalid_argument("malformed size weight in token '" + std::string(token) + "'");
      }
      weight = weight * 10 + static_cast<unsigned>(c - '0');
      if (weight > 1000000) throw std::invalid_argument("size weight too large");
    }
    const auto idx = static_cast<std::size_t>(letter - 'a');
    if (seen[idx]) {
      throw std::invalid_argument(std::string("size letter '") + letter + "' repeated");
    }
    seen[idx] = true;
    dist.weights[idx] = weight;
    if (dash == std::string_view::npos) break;
    pos = dash + 1;
  }
  if (dist.support().empty()) {
    throw std::invalid_argument("size distribution '" + std::string(text) + "' has all-zero weights");
  }
  return dist;
}

std::string_view setting_name(SizeSetting setting) {
  return setting == SizeSetting::Dynamic ? "dynamic" : "fixed";
}

double LrSchedule::lr_at(double base_lr, std::uint64_t round) const {
  if (decay_interval == 0) return base_lr;
  const auto steps = static_cast<double>(round / decay_interval);
  return base_lr * std::pow(decay_factor, steps);
}

void FederationConfig::validate() const {
  if (num_clients == 0) throw std::invalid_argument("num_clients must be >= 1");
  if (!(selected_fraction > 0.0 && selected_fraction <= 1.0)) {
    throw std::invalid_argument("selected_fraction must be in (0, 1]");
  }
  if (!(schedule.decay_factor > 0.0 && schedule.decay_factor <= 1.0)) {
    throw std::invalid_argument("decay_factor must be in (0, 1]");
  }
  if (eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  policy.validate();
  if (policy.broadcast_enabled && scheme != Scheme::BlockRolling) {
    throw std::invalid_argument("weighted broadcast needs the block-rolling scheme");
  }
  train.validate();
  distribution.min_ratio();
}

std::size_t FederationConfig::selected_count() const {
  const double raw = selected_fraction * static_cast<double>(num_clients);
  // Guard against 0.1 * 100 = 10.000000000000002 rounding up to 11.
  const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(n, 1, num_clients);
}

std::optional<double> RunReport::final_accuracy() const {
  for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
    if (it->test_accuracy) return it->test_accuracy;
  }
  return initial.test_accuracy;
}

Federation::Federation(FederationConfig cfg, ModelArch arch, const Dataset& train,
                       const PartitionPlan& plan, const Dataset* test)
    : cfg_(std::move(cfg)), arch_(std::move(arch)), train_(&train), test_(test) {
  cfg_.validate();
  if (plan.num_clients() != cfg_.num_clients) {
    throw std::invalid_argument("partition plan has " + std::to_string(plan.num_clients()) +
                                " clients, config asks for " + std::to_string(cfg_.num_clients));
  }
  min_ratio_ = cfg_.distribution.min_ratio();
  arch_.check_divisible(min_ratio_);
  coverage_ = CoverageMask(arch_);

  Rng init_rng = make_stream(cfg_.seed, {kInitStream});
  global_ = init_params(arch_, init_rng);

  const auto support = cfg_.distribution.support();
  std::vector<double> weights;
  for (Ratio r : support) weights.push_back(cfg_.distribution.weights[static_cast<std::size_t>(r.log2_denominator())]);
  for (std::size_t c = 0; c < cfg_.num_clients; ++c) {
    ClientState client;
    client.id = c;
    client.shard = DatasetShard{&train, plan.client_indices[c]};
    if (client.shard.empty()) {
      throw std::invalid_argument("client " + std::to_string(c) + " has no training data");
    }
    if (cfg_.setting == SizeSetting::Fixed) {
      Rng rng = make_stream(cfg_.seed, {kSizeStream, c});
      client.fixed_ratio = support[sample_weighted(weights, rng)];
    }
    clients_.push_back(std::move(client));
  }
}

void Federation::set_global(Params params) {
  check_params(arch_, params);
  global_ = std::move(params);
}

std::vector<std::size_t> Federation::sample_clients(std::uint64_t round) const {
  std::vector<std::size_t> ids(cfg_.num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = make_stream(cfg_.seed, {kSampleStream, round});
  const std::size_t k = cfg_.selected_count();
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j + static_cast<std::size_t>(uniform_below(rng, ids.size() - j));
    std::swap(ids[j], ids[pick]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Ratio> Federation::assign_sizes(const std::vector<std::size_t>& selected,
                                            std::uint64_t round) const {
  const auto support = cfg_.distribution.support();
  std::vector<double> weights;
  for (Ratio r : support) weights.push_back(cfg_.distribution.weights[static_cast<std::size_t>(r.log2_denominator())]);
  std::vector<Ratio> out;
  out.reserve(selected.size());
  for (std::size_t c : selected) {
    const ClientState& client = clients_.at(c);
    if (client.fixed_ratio) {
      out.push_back(*client.fixed_ratio);
      continue;
    }
    Rng rng = make_stream(cfg_.seed, {kSizeStream, c, round});
    out.push_back(support[sample_weighted(weights, rng)]);
  }
  return out;
}

SubModelSpec Federation::client_spec(std::size_t client, Ratio ratio, std::uint64_t round) const {
  // Random selections are redrawn every round only in the dynamic setting.
  Rng rng = cfg_.setting == SizeSetting::Dynamic
                ? make_stream(cfg_.seed, {kSpecStream, client, round})
                : make_stream(cfg_.seed, {kSpecStream, client});
  return build_submodel_spec(arch_, cfg_.scheme, ratio, min_ratio_, round, rng);
}

const ModelArch& Federation::sub_arch(Ratio ratio) {
  auto it = sub_archs_.find(ratio.log2_denominator());
  if (it == sub_archs_.end()) {
    it = sub_archs_.emplace(ratio.log2_denominator(), shrink_arch(arch_, ratio)).first;
  }
  return it->second;
}

RoundRecord Federation::run_round(std::uint64_t round) {
  RoundRecord record;
  record.round = round + 1;
  record.lr = cfg_.schedule.lr_at(cfg_.train.lr, round);
  record.clients = sample_clients(round);
  record.ratios = assign_sizes(record.clients, round);

  TrainConfig train = cfg_.train;
  train.lr = record.lr;

  std::vector<ClientUpdate> updates;
  updates.reserve(record.clients.size());
  double loss_sum = 0.0;
  for (std::size_t j = 0; j < record.clients.size(); ++j) {
    const ClientState& client = clients_[record.clients[j]];
    const Ratio ratio = record.ratios[j];
    SubModelSpec spec = client_spec(client.id, ratio, round);
    if (cfg_.distribution.small_to_large()) {
      ++guard_checks_;
      if (!is_strictly_smaller(arch_, spec)) ++guard_violations_;
    }
    const Params before = extract_submodel(global_, arch_, spec);
    Rng rng = make_stream(cfg_.seed, {kTrainStream, client.id, round});
    LocalTrainResult trained = local_train(before, sub_arch(ratio), client.shard, train, rng);
    loss_sum += trained.mean_loss;
    updates.push_back({client.id, std::move(spec), compute_delta(trained.params, before),
                       client.shard.size()});
  }
  record.train_loss = updates.empty() ? 0.0 : loss_sum / static_cast<double>(updates.size());

  AggregationResult agg = aggregate_round(global_, arch_, updates, cfg_.policy, min_ratio_);
  global_ = std::move(agg.params);
  coverage_.record(agg.coverage, round);
  record.excluded_updates = agg.coverage.excluded_updates;
  record.empty_round = agg.coverage.empty_round;
  record.untrained_primary = coverage_.untrained_fraction(CoverageKind::Primary);
  record.untrained_touched = coverage_.untrained_fraction(CoverageKind::Touched);

  if ((round + 1) % cfg_.eval_every == 0 || round + 1 == cfg_.rounds) {
    if (auto eval = evaluate_global()) {
      record.test_accuracy = eval->accuracy;
      record.test_loss = eval->loss;
    }
  }
  return record;
}

std::optional<EvalResult> Federation::evaluate_global() const {
  if (test_ == nullptr) return std::nullopt;
  return evaluate(global_, arch_, *test_, cfg_.eval_batch);
}

RunReport run(const FederationConfig& cfg, const ModelArch& arch, const Dataset& train,
              const PartitionPlan& plan, const Dataset* test) {
  Federation fed(cfg, arch, train, plan, test);
  RunReport report;
  report.initial.round = 0;
  report.initial.lr = cfg.schedule.lr_at(cfg.train.lr, 0);
  report.initial.untrained_primary = fed.coverage().untrained_fraction(CoverageKind::Primary);
  report.initial.untrained_touched = fed.coverage().untrained_fraction(CoverageKind::Touched);
  if (auto eval = fed.evaluate_global()) {
    report.initial.test_accuracy = eval->accuracy;
    report.initial.test_loss = eval->loss;
  }
  for (std::uint64_t r = 0; r < cfg.rounds; ++r) report.rounds.push_back(fed.run_round(r));
  report.guard_checks = fed.guard_checks();
  report.guard_violations = fed.guard_violations();
  return report;
}

}  // namespace fedbrb
