#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "retro/dataset.hpp"
#include "retro/encoder.hpp"
#include "retro/knowledge_store.hpp"
#include "retro/memorization.hpp"
#include "retro/pipeline.hpp"
#include "retro/retro_mechanism.hpp"

namespace retro {

enum class RunMode { FewShotTrain, ZeroShot, FullySupervised };

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 8;
  std::size_t max_steps = 800;
  std::size_t eval_period = 80;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
};

struct AblationFlags {
  bool no_knn_test = false;
  bool no_knn_train = false;
  bool no_demo = false;
  bool no_refresh = false;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct MemorizeConfig {
  InfluenceConfig influence;
  ParamScope scope = ParamScope::Head;
  double fraction = 0.1;
  std::filesystem::path features_path;  // one value per dataset row
};

struct RunConfig {
  DatasetSpec dataset;  // dataset.path is the labelled pool few-shot splits come from
  std::filesystem::path test_path;
  std::filesystem::path dev_path;        // only used with shots = all
  std::filesystem::path unlabeled_path;  // zero-shot store corpus
  std::optional<std::size_t> shots = 16;
  std::vector<std::uint64_t> seeds = {13, 21, 42, 87, 100};
  RetroConfig retro;
  double zero_shot_lambda = 0.7;
  bool zero_shot_demo = false;
  OptimizerConfig optim;
  EncoderConfig model;  // vocab_size and max_len_extended are derived
  RunMode mode = RunMode::FewShotTrain;
  AblationFlags ablate;
  KeyMode key_mode = KeyMode::PromptMask;
  Acquisition acquisition = Acquisition::RepSimilar;
  bool normalize_keys = false;
  bool differentiate_factor = false;
  std::optional<std::uint32_t> negative_label;  // excluded from micro-F1 when set
  MemorizeConfig memorize;

  void validate() const;
  PipelineFlags pipeline_flags() const;
  // The configuration a zero-shot run evaluates with.
  RetroConfig zero_shot_retro() const;
  EncoderConfig encoder_config(std::size_t vocab_size) const;
};

// Flat `key = value` view; every field has exactly one key.
std::map<std::string, std::string> to_key_values(const RunConfig& config);
void apply_key_value(RunConfig& config, const std::string& key, const std::string& value);
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string format_config(const RunConfig& config);

// Comma-separated ablation names: no-knn-test, no-knn-train, no-demo, no-refresh.
AblationFlags parse_ablations(const std::string& list);
std::string format_ablations(const AblationFlags& flags);

std::string to_string(RunMode mode);
std::string to_string(KeyMode mode);
std::string to_string(Acquisition acq);

}  // namespace retro
