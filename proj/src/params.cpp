#include "matchdiff/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "matchdiff/error.hpp"

namespace matchdiff {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Tensor& ParameterStore::add(const std::string& name, Matrix init) {
  auto [it, inserted] = tensors_.insert_or_assign(name, Tensor::parameter(std::move(init)));
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

ParameterStore ParameterStore::snapshot() const {
  ParameterStore out;
  for (const auto& [name, t] : tensors_) out.add(name, t.value());
  return out;
}

void ParameterStore::accumulate_grads(const ParameterStore& other) {
  for (auto& [name, t] : tensors_) {
    const Tensor& o = other.at(name);
    if (o.node()->grad.size() == 0) continue;
    t.mutable_grad() += o.node()->grad;
  }
}

void ParameterStore::scale_grads(double s) {
  for (auto& [_, t] : tensors_)
    if (t.node()->grad.size() != 0) t.mutable_grad() *= s;
}

void ParameterStore::load_values(const ParameterStore& other) {
  for (auto& [name, t] : tensors_) {
    if (!other.contains(name)) continue;
    const Matrix& v = other.at(name).value();
    if (v.rows() != t.rows() || v.cols() != t.cols())
      throw DimensionError("parameter '" + name + "' has shape " + std::to_string(v.rows()) + "x" +
                           std::to_string(v.cols()) + ", expected " + std::to_string(t.rows()) + "x" +
                           std::to_string(t.cols()));
    t.mutable_value() = v;
  }
}

Matrix glorot(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < fan_in; ++i)
    for (Index j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-limit, limit);
  return w;
}

namespace {

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  put<std::uint32_t>(out, kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    for (Index i = 0; i < t.rows(); ++i)
      for (Index j = 0; j < t.cols(); ++j) put<double>(out, t.value()(i, j));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  if (take<std::uint32_t>(in, path) != kCheckpointMagic) throw DataError("bad checkpoint magic in " + path.string());
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = take<std::uint32_t>(in, path);
  ParameterStore params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = take<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw DataError("truncated checkpoint " + path.string());
    const auto rank = take<std::uint32_t>(in, path);
    if (rank < 1 || rank > 2) throw DataError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[rank == 1 ? 1 : r] = take<std::uint64_t>(in, path);
    Matrix m(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = take<double>(in, path);
    params.add(name, std::move(m));
  }
  return params;
}

void adam_update(ParameterStore& params, AdamState& state, const AdamOptions& opt,
                 const std::vector<std::string>& frozen_prefixes) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    bool frozen = false;
    for (const auto& prefix : frozen_prefixes)
      if (name.starts_with(prefix)) frozen = true;
    if (frozen) continue;
    const Matrix& g = t.grad();
    auto [m_it, _m] = state.first_moment.try_emplace(name, Matrix::Zero(t.rows(), t.cols()));
    auto [v_it, _v] = state.second_moment.try_emplace(name, Matrix::Zero(t.rows(), t.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    t.mutable_value().array() -=
        opt.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + opt.eps);
  }
}

}  // namespace matchdiff
