#pragma once

// Differentiable desk-scale objectives with block-restricted gradients.
//
// Every objective is the mean per-sample loss over a batch of dataset rows.
// gradBlock returns the gradient restricted to one contiguous block together
// with a multiply-add count. For the MLP, the backward pass starts at the
// output layer and stops after the deepest layer of the requested block.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lppsgd/dataset.hpp"
#include "lppsgd/errors.hpp"
#include "lppsgd/index_range.hpp"
#include "lppsgd/paramstore.hpp"
#include "lppsgd/partition.hpp"

namespace lppsgd {

enum class LossKind { quadratic, logistic_regression, mlp };

inline std::string toString(LossKind k) {
  switch (k) {
    case LossKind::quadratic: return "quadratic";
    case LossKind::logistic_regression: return "logistic_regression";
    case LossKind::mlp: return "mlp";
  }
  return "?";
}

struct GradResult {
  std::vector<double> values;  // gradient over the requested block
  std::uint64_t flops = 0;     // multiply-adds, forward + backward
  std::uint64_t backward_flops = 0;
  std::vector<std::size_t> batch_ids;
};

class Objective {
 public:
  explicit Objective(std::shared_ptr<const Dataset> data) : data_(std::move(data)) {
    if (!data_ || data_->size() == 0) throw ValidationError("objective needs a non-empty dataset");
  }
  virtual ~Objective() = default;

  virtual LossKind kind() const = 0;
  virtual std::size_t dim() const = 0;

  // Parameter intervals of the model's natural units (layers for the MLP,
  // single elements otherwise).
  virtual std::vector<IndexRange> layers() const {
    std::vector<IndexRange> out(dim());
    for (std::size_t i = 0; i < dim(); ++i) out[i] = {i, i + 1};
    return out;
  }

  // Default U-way partition: layer-aligned for the MLP, even element split otherwise.
  virtual BlockPartition defaultPartition(std::size_t U) const { return evenPartition(dim(), U); }

  const Dataset& data() const noexcept { return *data_; }
  std::shared_ptr<const Dataset> dataPtr() const noexcept { return data_; }

  double loss(std::span<const double> x, std::span<const std::size_t> batch) const {
    checkArgs(x, batch);
    return lossImpl(x, batch);
  }

  void gradBlock(std::span<const double> x, IndexRange block, std::span<const std::size_t> batch,
                 GradResult& out) const {
    checkArgs(x, batch);
    if (block.end > dim() || block.begin >= block.end) throw BoundsError("gradBlock: invalid block");
    out.values.assign(block.size(), 0.0);
    out.flops = 0;
    out.backward_flops = 0;
    out.batch_ids.assign(batch.begin(), batch.end());
    gradImpl(x, block, batch, out);
  }

  GradResult gradBlock(std::span<const double> x, IndexRange block,
                       std::span<const std::size_t> batch) const {
    GradResult out;
    gradBlock(x, block, batch, out);
    return out;
  }

  GradResult gradBlock(const Snapshot& snap, IndexRange block,
                       std::span<const std::size_t> batch) const {
    return gradBlock(std::span<const double>(snap.values), block, batch);
  }

  std::vector<std::size_t> fullBatch() const {
    std::vector<std::size_t> ids(data_->size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
  }

  double fullLoss(std::span<const double> x) const { return loss(x, fullBatch()); }

  std::vector<double> fullGradient(std::span<const double> x) const {
    return gradBlock(x, IndexRange{0, dim()}, fullBatch()).values;
  }

 protected:
  virtual double lossImpl(std::span<const double> x, std::span<const std::size_t> batch) const = 0;
  virtual void gradImpl(std::span<const double> x, IndexRange block,
                        std::span<const std::size_t> batch, GradResult& out) const = 0;

 private:
  void checkArgs(std::span<const double> x, std::span<const std::size_t> batch) const {
    if (x.size() != dim()) throw ShapeError("parameter vector has wrong length");
    if (batch.empty()) throw ValidationError("batch must be non-empty");
    for (std::size_t id : batch) {
      if (id >= data_->size()) throw BoundsError("sample index " + std::to_string(id) + " out of range");
    }
  }

  std::shared_ptr<const Dataset> data_;
};

// f(x) = mean_k 0.5 * ||x - c_k||^2 over dataset rows c_k.
class Quadratic final : public Objective {
 public:
  using Objective::Objective;

  LossKind kind() const override { return LossKind::quadratic; }
  std::size_t dim() const override { return data().features; }

  // Exact minimizer: the mean of the rows.
  std::vector<double> minimizer() const {
    std::vector<double> c(dim(), 0.0);
    for (std::size_t k = 0; k < data().size(); ++k) {
      const auto row = data().row(k);
      for (std::size_t e = 0; e < dim(); ++e) c[e] += row[e];
    }
    for (double& v : c) v /= static_cast<double>(data().size());
    return c;
  }

 protected:
  double lossImpl(std::span<const double> x, std::span<const std::size_t> batch) const override {
    double acc = 0.0;
    for (std::size_t k : batch) {
      const auto c = data().row(k);
      double sq = 0.0;
      for (std::size_t e = 0; e < x.size(); ++e) sq += (x[e] - c[e]) * (x[e] - c[e]);
      acc += 0.5 * sq;
    }
    return acc / static_cast<double>(batch.size());
  }

  void gradImpl(std::span<const double> x, IndexRange block, std::span<const std::size_t> batch,
                GradResult& out) const override {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t e = block.begin; e < block.end; ++e) {
      double acc = 0.0;
      for (std::size_t k : batch) acc += x[e] - data().row(k)[e];
      out.values[e - block.begin] = acc * inv;
    }
    out.backward_flops = batch.size() * block.size();
    out.flops = out.backward_flops;
  }
};

// Binary logistic regression, labels in {0, 1}; parameters are the feature
// weights followed by the bias.
class LogisticRegression final : public Objective {
 public:
  using Objective::Objective;

  LossKind kind() const override { return LossKind::logistic_regression; }
  std::size_t dim() const override { return data().features + 1; }

  double logit(std::span<const double> x, std::size_t k) const {
    const auto row = data().row(k);
    double z = x[data().features];
    for (std::size_t f = 0; f < data().features; ++f) z += x[f] * row[f];
    return z;
  }

  double accuracy(std::span<const double> x) const {
    std::size_t correct = 0;
    for (std::size_t k = 0; k < data().size(); ++k) {
      const int predicted = logit(x, k) > 0.0 ? 1 : 0;
      if (predicted == data().classLabel(k)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data().size());
  }

 protected:
  double lossImpl(std::span<const double> x, std::span<const std::size_t> batch) const override {
    double acc = 0.0;
    for (std::size_t k : batch) {
      const double z = logit(x, k);
      const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
      acc += softplus - data().labels[k] * z;
    }
    return acc / static_cast<double>(batch.size());
  }

  void gradImpl(std::span<const double> x, IndexRange block, std::span<const std::size_t> batch,
                GradResult& out) const override {
    const std::size_t p = data().features;
    std::vector<double> residual(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double z = logit(x, batch[b]);
      residual[b] = 1.0 / (1.0 + std::exp(-z)) - data().labels[batch[b]];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t e = block.begin; e < block.end; ++e) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        acc += residual[b] * (e == p ? 1.0 : data().row(batch[b])[e]);
      }
      out.values[e - block.begin] = acc * inv;
    }
    out.backward_flops = batch.size() * block.size();
    out.flops = batch.size() * p + out.backward_flops;
  }
};

// Fully-connected network: tanh hidden layers, softmax cross-entropy head.
// Layer l maps widths[l] -> widths[l+1]; its parameters are W (row-major,
// out x in) followed by b (out).
class Mlp final : public Objective {
 public:
  Mlp(std::shared_ptr<const Dataset> data, std::vector<std::size_t> widths)
      : Objective(std::move(data)), widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ValidationError("mlp needs at least input and output widths");
    for (std::size_t w : widths_) {
      if (w == 0) throw ValidationError("mlp widths must be positive");
    }
    if (widths_.front() != this->data().features) {
      throw ShapeError("mlp input width must equal the dataset feature count");
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const std::size_t n = widths_[l] * widths_[l + 1] + widths_[l + 1];
      layers_.push_back({off, off + n});
      off += n;
    }
    dim_ = off;
    for (std::size_t k = 0; k < this->data().size(); ++k) {
      const int c = this->data().classLabel(k);
      if (c < 0 || static_cast<std::size_t>(c) >= widths_.back()) {
        throw ValidationError("mlp label out of range of the output width");
      }
    }
  }

  LossKind kind() const override { return LossKind::mlp; }
  std::size_t dim() const override { return dim_; }
  std::vector<IndexRange> layers() const override { return layers_; }
  std::span<const std::size_t> widths() const noexcept { return widths_; }
  std::size_t layerCount() const noexcept { return layers_.size(); }

  // Multiply-adds of one layer's matrix product.
  std::uint64_t layerMacs(std::size_t l) const { return widths_[l] * widths_[l + 1]; }

  BlockPartition defaultPartition(std::size_t U) const override {
    std::vector<std::size_t> sizes;
    for (const auto& r : layers_) sizes.push_back(r.size());
    return makePartition(dim_, balancedBoundaries(sizes, U));
  }

  // First and last layer covered by `block`; throws unless block edges fall on layer edges.
  std::pair<std::size_t, std::size_t> layerSpan(IndexRange block) const {
    std::optional<std::size_t> first;
    std::optional<std::size_t> last;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].begin == block.begin) first = l;
      if (layers_[l].end == block.end) last = l;
    }
    if (!first || !last || *first > *last) {
      throw ValidationError("block is not aligned with mlp layer boundaries");
    }
    return {*first, *last};
  }

  std::vector<double> initialParams(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<double> x(dim_, 0.0);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(widths_[l])));
      const std::size_t nw = widths_[l] * widths_[l + 1];
      for (std::size_t i = 0; i < nw; ++i) x[layers_[l].begin + i] = normal(rng);
    }
    return x;
  }

  double accuracy(std::span<const double> x) const {
    Workspace ws(widths_);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < data().size(); ++k) {
      forward(x, k, ws);
      const auto& logits = ws.act.back();
      const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
      if (best == data().classLabel(k)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data().size());
  }

 protected:
  struct Workspace {
    explicit Workspace(std::span<const std::size_t> widths) {
      for (std::size_t w : widths) {
        act.emplace_back(w, 0.0);
        grad.emplace_back(w, 0.0);
      }
    }
    std::vector<std::vector<double>> act;   // act[0] input, act[L] logits
    std::vector<std::vector<double>> grad;  // d loss / d pre-activation (or input for [0])
  };

  // Returns forward multiply-adds.
  std::uint64_t forward(std::span<const double> x, std::size_t k, Workspace& ws) const {
    const auto row = data().row(k);
    std::copy(row.begin(), row.end(), ws.act[0].begin());
    std::uint64_t macs = 0;
    const std::size_t L = layers_.size();
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t in = widths_[l];
      const std::size_t out = widths_[l + 1];
      const double* W = x.data() + layers_[l].begin;
      const double* b = W + in * out;
      const auto& a = ws.act[l];
      auto& z = ws.act[l + 1];
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < in; ++i) acc += W[o * in + i] * a[i];
        z[o] = (l + 1 < L) ? std::tanh(acc) : acc;
      }
      macs += in * out;
    }
    return macs;
  }

  static double logSumExp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - m);
    return m + std::log(acc);
  }

  double lossImpl(std::span<const double> x, std::span<const std::size_t> batch) const override {
    Workspace ws(widths_);
    double acc = 0.0;
    for (std::size_t k : batch) {
      forward(x, k, ws);
      const auto& logits = ws.act.back();
      acc += logSumExp(logits) - logits[static_cast<std::size_t>(data().classLabel(k))];
    }
    return acc / static_cast<double>(batch.size());
  }

  // Each traversed layer runs the full layer backward (weight gradient and
  // input gradient); only the block's layers are accumulated into the result.
  void gradImpl(std::span<const double> x, IndexRange block, std::span<const std::size_t> batch,
                GradResult& out) const override {
    const auto [first, last] = layerSpan(block);
    const std::size_t L = layers_.size();
    Workspace ws(widths_);
    std::vector<double> scratch;
    std::uint64_t fwd = 0;
    std::uint64_t bwd = 0;
    for (std::size_t k : batch) {
      fwd += forward(x, k, ws);
      auto& top = ws.grad[L];
      const auto& logits = ws.act[L];
      const double lse = logSumExp(logits);
      for (std::size_t o = 0; o < logits.size(); ++o) top[o] = std::exp(logits[o] - lse);
      top[static_cast<std::size_t>(data().classLabel(k))] -= 1.0;

      for (std::size_t l = L; l-- > first;) {
        const std::size_t in = widths_[l];
        const std::size_t outw = widths_[l + 1];
        const double* W = x.data() + layers_[l].begin;
        const auto& dz = ws.grad[l + 1];
        const auto& a = ws.act[l];
        double* dW;
        if (l <= last) {
          dW = out.values.data() + (layers_[l].begin - block.begin);
        } else {
          scratch.assign(in * outw + outw, 0.0);
          dW = scratch.data();
        }
        double* db = dW + in * outw;
        for (std::size_t o = 0; o < outw; ++o) {
          for (std::size_t i = 0; i < in; ++i) dW[o * in + i] += dz[o] * a[i];
          db[o] += dz[o];
        }
        auto& da = ws.grad[l];
        for (std::size_t i = 0; i < in; ++i) {
          double acc = 0.0;
          for (std::size_t o = 0; o < outw; ++o) acc += W[o * in + i] * dz[o];
          // act[l] is tanh output for l >= 1; grad[0] is the raw input gradient.
          da[i] = (l > 0) ? acc * (1.0 - a[i] * a[i]) : acc;
        }
        bwd += 2 * in * outw;
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : out.values) v *= inv;
    out.backward_flops = bwd;
    out.flops = fwd + bwd;
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<IndexRange> layers_;
  std::size_t dim_ = 0;
};

// Modeled savings of partial backprop: 1 - sum_i cost(block i) / (U * cost(full)),
// where cost(block) is the backward work from the output layer down to the
// block's deepest layer (two multiply-adds per weight per traversed layer).
inline double flopsSavingsRatio(const Objective& obj, const BlockPartition& partition) {
  const auto* mlp = dynamic_cast<const Mlp*>(&obj);
  if (mlp == nullptr) throw UnsupportedError("flopsSavingsRatio requires an mlp objective");
  if (partition.dim() != mlp->dim()) throw ShapeError("partition dimension mismatch");
  const std::size_t L = mlp->layerCount();
  auto costFrom = [&](std::size_t first) {
    std::uint64_t c = 0;
    for (std::size_t l = first; l < L; ++l) c += 2 * mlp->layerMacs(l);
    return c;
  };
  const double full = static_cast<double>(costFrom(0));
  const std::size_t U = partition.partitions();
  double sum = 0.0;
  for (std::size_t i = 1; i <= U; ++i) {
    sum += static_cast<double>(costFrom(mlp->layerSpan(partition.block(i)).first));
  }
  return 1.0 - sum / (static_cast<double>(U) * full);
}

enum class SamplingMode { iid, epoch, full };

inline std::string toString(SamplingMode m) {
  switch (m) {
    case SamplingMode::iid: return "iid";
    case SamplingMode::epoch: return "epoch";
    case SamplingMode::full: return "full";
  }
  return "?";
}

// Uniform i.i.d. indices with replacement; deterministic given the generator state.
inline std::vector<std::size_t> sampleBatch(const Objective& obj, std::mt19937_64& rng,
                                            std::size_t size) {
  if (size == 0) throw ValidationError("batch size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, obj.data().size() - 1);
  std::vector<std::size_t> ids(size);
  for (auto& id : ids) id = pick(rng);
  return ids;
}

// Stateful per-stream sampler covering the three sampling modes. Epoch mode
// walks a seeded permutation that is reshuffled every pass over the data.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed, SamplingMode mode)
      : n_(n), mode_(mode), rng_(seed), pick_(0, n == 0 ? 0 : n - 1), perm_(n) {
    if (n == 0) throw ValidationError("sampler over an empty dataset");
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    if (mode_ == SamplingMode::epoch) std::shuffle(perm_.begin(), perm_.end(), rng_);
  }

  void next(std::size_t size, std::vector<std::size_t>& out) {
    if (size == 0) throw ValidationError("batch size must be >= 1");
    switch (mode_) {
      case SamplingMode::full:
        out = perm_;
        std::sort(out.begin(), out.end());
        return;
      case SamplingMode::iid:
        out.resize(size);
        for (auto& id : out) id = pick_(rng_);
        return;
      case SamplingMode::epoch:
        out.resize(size);
        for (auto& id : out) {
          if (cursor_ == n_) {
            std::shuffle(perm_.begin(), perm_.end(), rng_);
            cursor_ = 0;
          }
          id = perm_[cursor_++];
        }
        return;
    }
  }

 private:
  std::size_t n_;
  SamplingMode mode_;
  std::mt19937_64 rng_;
  std::uniform_int_distribution<std::size_t> pick_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

struct MomentBounds {
  double second_moment = 0.0;  // max over points/blocks of E||g_i||^2  (M^2)
  double variance = 0.0;       // max over points/blocks of E||g_i - grad_i f||^2  (sigma^2)
  double M() const { return std::sqrt(second_moment); }
  double sigma() const { return std::sqrt(variance); }
};

// Monte-Carlo estimate of the second-moment and variance bounds over probe
// points and blocks. `batch` of nullopt means the full dataset (no sampling noise).
inline MomentBounds estimateMomentBounds(const Objective& obj,
                                         std::span<const std::vector<double>> points,
                                         std::size_t trials, std::optional<std::size_t> batch,
                                         std::span<const IndexRange> blocks, std::uint64_t seed) {
  if (trials < 30) throw ValidationError("estimateMomentBounds needs >= 30 trials");
  std::vector<IndexRange> use(blocks.begin(), blocks.end());
  if (use.empty()) use.push_back({0, obj.dim()});
  std::mt19937_64 rng(seed);
  const auto all = obj.fullBatch();
  MomentBounds out;
  GradResult g;
  GradResult full;
  for (const auto& x : points) {
    for (const auto& block : use) {
      obj.gradBlock(x, block, all, full);
      double second = 0.0;
      double var = 0.0;
      for (std::size_t t = 0; t < trials; ++t) {
        if (batch) {
          obj.gradBlock(x, block, sampleBatch(obj, rng, *batch), g);
        } else {
          obj.gradBlock(x, block, all, g);
        }
        for (std::size_t e = 0; e < g.values.size(); ++e) {
          second += g.values[e] * g.values[e];
          const double diff = g.values[e] - full.values[e];
          var += diff * diff;
        }
      }
      out.second_moment = std::max(out.second_moment, second / static_cast<double>(trials));
      out.variance = std::max(out.variance, var / static_cast<double>(trials));
    }
  }
  return out;
}

}  // namespace lppsgd
