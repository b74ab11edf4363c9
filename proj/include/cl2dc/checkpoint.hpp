#pragma once

// Textual (JSON) checkpoints. Doubles are written in shortest round-trip
// form, so save followed by load reproduces every parameter bit for bit and
// saving the same parameters twice yields identical bytes.

#include <filesystem>
#include <string>

#include "cl2dc/consensus.hpp"
#include "cl2dc/model.hpp"

namespace cl2dc {

struct Checkpoint {
  Cl2dcParams params;
  TrainConfig config;
};

struct ClassifierCheckpoint {
  DenseNetwork network;
  ClassifierConfig config;
};

std::string network_to_string(const DenseNetwork& net);
DenseNetwork network_from_string(const std::string& text);

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string classifier_to_string(const ClassifierCheckpoint& ckpt);
ClassifierCheckpoint classifier_from_string(const std::string& text);
void save_classifier(const ClassifierCheckpoint& ckpt, const std::filesystem::path& path);
ClassifierCheckpoint load_classifier(const std::filesystem::path& path);

std::string to_string(PenaltyMode mode);
PenaltyMode penalty_mode_from_string(const std::string& text);

}  // namespace cl2dc
