#include "kvret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace kvret {

bool EntityDetector::is_entity(const std::string& token, const TripleStore* store) const {
  if (vocab_) {
    if (auto id = vocab_->find(token); id && vocab_->is_canonical(*id)) return true;
  }
  if (store && store->contains(token)) return true;
  return lexicon_ && lexicon_->is_entity_token(token);
}

std::set<std::string> EntityDetector::entities(std::span<const std::string> tokens, const TripleStore* store) const {
  std::set<std::string> out;
  for (const auto& t : tokens) {
    if (is_entity(t, store)) out.insert(t);
  }
  return out;
}

EvalPair make_eval_pair(std::vector<std::string> gold, std::vector<std::string> predicted, Domain domain,
                        const EntityDetector& detector, const TripleStore* store) {
  EvalPair p;
  p.gold_entities = detector.entities(gold, store);
  p.predicted_entities = detector.entities(predicted, store);
  p.gold = std::move(gold);
  p.predicted = std::move(predicted);
  p.domain = domain;
  return p;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(std::span<const std::string> tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++out[{tokens.begin() + i, tokens.begin() + i + n}];
  return out;
}

// Clipped matches and total hypothesis n-grams of order n.
std::pair<std::size_t, std::size_t> modified_counts(std::span<const std::string> ref,
                                                    std::span<const std::string> hyp, std::size_t n) {
  const auto h = ngrams(hyp, n);
  const auto r = ngrams(ref, n);
  std::size_t matched = 0, total = 0;
  for (const auto& [gram, count] : h) {
    total += count;
    auto it = r.find(gram);
    if (it != r.end()) matched += std::min(count, it->second);
  }
  return {matched, total};
}

double brevity_penalty(double ref_len, double hyp_len) {
  if (hyp_len <= 0.0) return 0.0;
  return hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
}

double geometric_bleu(std::span<const std::size_t> matched, std::span<const std::size_t> total, double eps) {
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t i = 0; i < matched.size(); ++i) {
    if (total[i] == 0) break;
    const double p = matched[i] == 0 ? eps : static_cast<double>(matched[i]) / static_cast<double>(total[i]);
    log_sum += std::log(p);
    ++orders;
  }
  if (orders == 0 || matched[0] == 0) return 0.0;
  return std::exp(log_sum / static_cast<double>(orders));
}

}  // namespace

double sentence_bleu(std::span<const std::string> reference, std::span<const std::string> hypothesis,
                     const BleuOptions& options) {
  if (hypothesis.empty()) return 0.0;
  std::vector<std::size_t> matched, total;
  for (std::size_t n = 1; n <= options.max_order; ++n) {
    auto [m, t] = modified_counts(reference, hypothesis, n);
    matched.push_back(m);
    total.push_back(t);
  }
  return brevity_penalty(static_cast<double>(reference.size()), static_cast<double>(hypothesis.size())) *
         geometric_bleu(matched, total, options.epsilon);
}

double bleu(std::span<const EvalPair> pairs, const BleuOptions& options) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) sum += sentence_bleu(p.gold, p.predicted, options);
  return 100.0 * sum / static_cast<double>(pairs.size());
}

double corpus_bleu(std::span<const EvalPair> pairs, const BleuOptions& options) {
  std::vector<std::size_t> matched(options.max_order, 0), total(options.max_order, 0);
  double ref_len = 0.0, hyp_len = 0.0;
  for (const auto& p : pairs) {
    ref_len += static_cast<double>(p.gold.size());
    hyp_len += static_cast<double>(p.predicted.size());
    for (std::size_t n = 1; n <= options.max_order; ++n) {
      auto [m, t] = modified_counts(p.gold, p.predicted, n);
      matched[n - 1] += m;
      total[n - 1] += t;
    }
  }
  return 100.0 * brevity_penalty(ref_len, hyp_len) * geometric_bleu(matched, total, options.epsilon);
}

F1Score entity_f1(std::span<const EvalPair> pairs, std::optional<Domain> domain) {
  F1Score s;
  for (const auto& p : pairs) {
    if (domain && p.domain != *domain) continue;
    for (const auto& e : p.predicted_entities) {
      if (p.gold_entities.count(e)) {
        ++s.true_positives;
      } else {
        ++s.false_positives;
      }
    }
    for (const auto& e : p.gold_entities) {
      if (!p.predicted_entities.count(e)) ++s.false_negatives;
    }
  }
  const auto tp = static_cast<double>(s.true_positives);
  const auto predicted = tp + static_cast<double>(s.false_positives);
  const auto gold = tp + static_cast<double>(s.false_negatives);
  s.no_gold_entities = gold == 0.0;
  s.precision = predicted > 0.0 ? tp / predicted : 0.0;
  s.recall = gold > 0.0 ? tp / gold : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

nlohmann::json Scores::to_json() const {
  return {{"bleu", bleu},
          {"entity_f1", entity.f1},
          {"scheduling_f1", per_domain[0].f1},
          {"weather_f1", per_domain[1].f1},
          {"navigation_f1", per_domain[2].f1}};
}

Scores score(std::span<const EvalPair> pairs, const BleuOptions& options) {
  Scores s;
  s.bleu = bleu(pairs, options);
  s.entity = entity_f1(pairs);
  for (Domain d : kAllDomains) s.per_domain[static_cast<std::size_t>(d)] = entity_f1(pairs, d);
  return s;
}

}  // namespace kvret
