#pragma once

// One JSON config = one run: data, network, training, margins, kappas, bound, manifest.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "allmargin/analytic.hpp"
#include "allmargin/robust.hpp"
#include "allmargin/training.hpp"

namespace allmargin::experiment {

struct DatasetSpec {
  std::string kind = "two-gaussians";  // a synthetic kind, "idx" or "csv"
  std::size_t n = 400;
  double noise = 0.1;
  std::string images, labels;  // idx
  std::string path;            // csv
  double validation_fraction = 0.5;
  double corrupt_fraction = 0.0;  // training labels only
};

struct NetworkSpec {
  std::vector<std::size_t> widths = {2, 16, 2};
  autodiff::Activation activation = autodiff::Activation::tanh;
};

struct MarginSpec {
  std::string split = "train";
  std::size_t max_examples = 100;
  margin::MarginProblem problem;
  margin::SolverConfig solver;
};

struct BoundSpec {
  analytic::Theorem theorem = analytic::Theorem::compl_m_gen;
  int q = 2;
  double confidence = 0.05;
  std::string reference = "none";  // "none" or "init": reference matrices A = B
};

struct ExperimentConfig {
  DatasetSpec dataset;
  NetworkSpec network;
  training::Method method = training::Method::sgd;
  training::TrainConfig train;
  std::optional<AttackSpec> attack;  // evaluation attack; also dumps attacks.json
  robust::RobustConfig robust;
  MarginSpec margin;
  BoundSpec bound;
  std::string output = "out";
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

// Schema-checked parse; unknown keys, wrong types and bad values raise invalid_config.
// Seeds of the data, init, training, margin solver and attacks all derive from `seed`.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

enum Stage : unsigned {
  kTrain = 1,
  kMargins = 2,
  kKappas = 4,
  kBound = 8,
  kAttack = 16,
  kAll = 31,
};

struct RunOptions {
  unsigned stages = kAll;
  std::optional<std::filesystem::path> network;  // skip training and use this checkpoint
};

struct RunSummary {
  std::vector<std::string> artifacts;  // file names written, in order
  double final_train_error = 0.0;
  std::string bound_status;
};

// Writes the requested artifacts plus network.json and manifest.json into cfg.output.
RunSummary run(const ExperimentConfig& cfg, const RunOptions& options = {});

// Long-format (series, x, y) CSV from metric files.
// kind: margin-histogram (margins CSVs), error-curve (train-record CSVs), bound-vs-n (bound JSONs).
std::string plot_data(const std::string& kind, const std::vector<std::filesystem::path>& inputs,
                      std::size_t bins = 10);

}  // namespace allmargin::experiment
