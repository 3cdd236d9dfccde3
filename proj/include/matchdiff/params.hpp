#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "matchdiff/rng.hpp"
#include "matchdiff/tensor.hpp"

namespace matchdiff {

/// Named learnable tensors, iterated in name order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Matrix init);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  std::size_t size() const { return tensors_.size(); }

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  void zero_grad();
  /// Deep copy with fresh leaves and empty gradients.
  ParameterStore snapshot() const;
  /// Adds the gradients of a snapshot with the same layout.
  void accumulate_grads(const ParameterStore& other);
  void scale_grads(double s);
  /// Overwrites values of tensors with matching names; shapes must agree.
  void load_values(const ParameterStore& other);

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Glorot-uniform initialised weight.
Matrix glorot(Index fan_in, Index fan_out, Rng& rng);

// Checkpoint layout (little-endian):
//   u32 magic 'MDCK', u32 version, u32 tensor count,
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
//   f64 payload in row-major order.
inline constexpr std::uint32_t kCheckpointMagic = 0x4B43444D;  // "MDCK"
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params);
ParameterStore load_checkpoint(const std::filesystem::path& path);

struct AdamState {
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;
  long step = 0;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update from the gradients stored on the leaves.
/// Parameters whose names start with any of `frozen_prefixes` are left alone.
void adam_update(ParameterStore& params, AdamState& state, const AdamOptions& opt,
                 const std::vector<std::string>& frozen_prefixes = {});

}  // namespace matchdiff
