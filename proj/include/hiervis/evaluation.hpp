#pragma once

#include "hiervis/model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace hiervis {

inline constexpr long long kReferenceParameterCount = 7924488;  // 7924.488 K
inline constexpr double kReferenceFlops = 127.973e6;

// Zero-based rank of `truth` when `scores` is sorted descending with ties broken by
// ascending index.
int rank_of(std::span<const double> scores, int truth);

// Fraction of queries whose truth lands in the top k of the cosine ranking, per k.
std::map<int, double> topk_accuracy(const Mat& queries, const Mat& gallery, std::span<const int> truth,
                                    std::span<const int> ks);

// Gallery indices of the best `top_n` matches for each query.
std::vector<std::vector<int>> ranked_lists(const Mat& queries, const Mat& gallery, int top_n);

// Eval-mode features for every trial, computed in batches.
HierarchicalFeatures extract_features(const Model& model, const WindowedTrials& windows, int batch_size = 256);

struct ViewRetrieval {
  std::string view;
  std::map<int, double> topk;
  std::vector<std::vector<int>> top_lists;  // gallery indices, best first
};

// Retrieval with the selected segments only (F_b vs C_b, ...) or their concatenation.
ViewRetrieval per_view_retrieval(const HierarchicalFeatures& features, const Mat& gallery_triple,
                                 std::span<const int> truth, ViewSet views, std::span<const int> ks, int top_n = 10);

struct RSMatrix {
  Mat values;                       // [M x M], rows/cols in `order`
  std::vector<int> order;           // original row index at each position
  std::vector<std::string> labels;  // category at each position
  std::vector<std::pair<std::string, int>> blocks;  // (category, first position)
};

// Cosine similarities with rows grouped by category in the canonical order; within a
// category the original order is kept.
RSMatrix compute_rsm(const Mat& features, std::span<const std::string> labels);

struct NamedCount {
  std::string name;
  long long count = 0;
};

struct ParameterCount {
  std::vector<NamedCount> modules;
  std::vector<NamedCount> tensors;
  long long total = 0;
};

ParameterCount count_parameters(Model& model);
long long count_parameters(const ModelConfig& cfg);

// Total against the reference figure with an itemised ledger of the assumptions that
// move the count.
nlohmann::json accounting_report(const ModelConfig& cfg);

struct LayerCost {
  std::string name;
  long long macs = 0;
};

struct FlopEstimate {
  std::vector<LayerCost> layers;
  long long macs = 0;
  long long flops = 0;  // 2 * macs
};

// Analytic multiply-accumulate count for one trial. Convolutions, linear maps and the
// attention products are counted; normalisation, activations, pooling and softmax are not.
FlopEstimate estimate_flops(const ModelConfig& cfg);
nlohmann::json to_json(const FlopEstimate& f);

}  // namespace hiervis
