#include "advbench/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "advbench/errors.hpp"
#include "advbench/parallel.hpp"

namespace advbench {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using CVecMap = Eigen::Map<const Eigen::VectorXf>;

// Fixed work-splitting granularity. Chunk boundaries must not depend on the
// thread count or results would change with the machine configuration.
constexpr int64_t kImageChunk = 16;
constexpr int64_t kRowChunk = 32;

thread_local std::vector<float> tl_patch_buf;
thread_local std::vector<float> tl_grad_buf;

float* patch_buffer(size_t n) {
  if (tl_patch_buf.size() < n) tl_patch_buf.resize(n);
  return tl_patch_buf.data();
}
float* grad_buffer(size_t n) {
  if (tl_grad_buf.size() < n) tl_grad_buf.resize(n);
  return tl_grad_buf.data();
}

void check_rank(const Shape& in, size_t rank, const char* kind) {
  if (in.size() != rank) {
    throw EngineError(std::string(kind) + " expects rank-" + std::to_string(rank + 1) +
                      " input (batch included), got per-sample shape " + shape_str(in));
  }
}

// ---------------------------------------------------------------- Conv2D

class ConvLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override {
    check_rank(in, 3, "conv2d");
    const int64_t k = spec_.kernel, s = spec_.stride;
    if (in[0] < k || in[1] < k) {
      throw EngineError("conv2d kernel " + std::to_string(k) + " does not fit input " + shape_str(in));
    }
    return {(in[0] - k) / s + 1, (in[1] - k) / s + 1, spec_.channels};
  }

  void init_params(const Shape& in, bool followed_by_relu, Rng& rng) override {
    const int64_t k = spec_.kernel, cin = in[2], cout = spec_.channels;
    weights_ = Tensor({k, k, cin, cout});
    bias_ = Tensor({cout});
    const int64_t fan_in = k * k * cin, fan_out = k * k * cout;
    if (followed_by_relu) {
      const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
      for (auto& w : weights_.flat()) w = stddev * rng.normal();
    } else {
      const float limit = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
      for (auto& w : weights_.flat()) w = rng.uniform(-limit, limit);
    }
  }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t k = spec_.kernel, s = spec_.stride, cout = spec_.channels;
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    const int64_t patch = k * k * c;
    Tensor y({n, oh, ow, cout});
    CMapRM wmat(weights_.data(), patch, cout);
    CVecMap bias(bias_.data(), cout);
    parallel_chunks(n, kImageChunk, [&](int64_t, int64_t b0, int64_t b1) {
      const int64_t rows = (b1 - b0) * oh * ow;
      float* buf = patch_buffer(static_cast<size_t>(rows * patch));
      im2col(x.data(), b0, b1, h, w, c, buf);
      MapRM out(y.data() + b0 * oh * ow * cout, rows, cout);
      out.noalias() = CMapRM(buf, rows, patch) * wmat;
      out.rowwise() += bias.transpose();
    });
    if (cache) {
      cache->input = x;
      cache->in_shape = x.shape();
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads* pg) const override {
    const Tensor& x = cache.input;
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t k = spec_.kernel, s = spec_.stride, cout = spec_.channels;
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    const int64_t patch = k * k * c;
    const int64_t chunks = num_chunks(n, kImageChunk);
    CMapRM wmat(weights_.data(), patch, cout);

    Tensor grad_x({n, h, w, c});
    std::vector<Tensor> dw_part, db_part;
    if (pg) {
      dw_part.assign(static_cast<size_t>(chunks), Tensor());
      db_part.assign(static_cast<size_t>(chunks), Tensor());
    }
    parallel_chunks(n, kImageChunk, [&](int64_t ci, int64_t b0, int64_t b1) {
      const int64_t rows = (b1 - b0) * oh * ow;
      CMapRM dy(grad_out.data() + b0 * oh * ow * cout, rows, cout);
      if (pg) {
        float* buf = patch_buffer(static_cast<size_t>(rows * patch));
        im2col(x.data(), b0, b1, h, w, c, buf);
        Tensor dw({k, k, c, cout});
        MapRM(dw.data(), patch, cout).noalias() = CMapRM(buf, rows, patch).transpose() * dy;
        dw_part[static_cast<size_t>(ci)] = std::move(dw);
        Tensor db({cout});
        VecMap(db.data(), cout).noalias() = dy.colwise().sum().transpose();
        db_part[static_cast<size_t>(ci)] = std::move(db);
      }
      float* gbuf = grad_buffer(static_cast<size_t>(rows * patch));
      MapRM(gbuf, rows, patch).noalias() = dy * wmat.transpose();
      col2im(gbuf, b0, b1, h, w, c, grad_x.data());
    });
    if (pg) {
      Tensor dw({k, k, c, cout}), db({cout});
      for (int64_t ci = 0; ci < chunks; ++ci) {  // fixed order keeps the sum reproducible
        VecMap(dw.data(), dw.numel()) += CVecMap(dw_part[static_cast<size_t>(ci)].data(), dw.numel());
        VecMap(db.data(), cout) += CVecMap(db_part[static_cast<size_t>(ci)].data(), cout);
      }
      pg->push_back(std::move(dw));
      pg->push_back(std::move(db));
    }
    return grad_x;
  }

  std::vector<Tensor*> params() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvLayer>(*this); }

 private:
  // Patch rows ordered (kh, kw, cin) to match the (K, K, Cin, Cout) weight
  // layout; each (kh) step copies a contiguous K*C span of the input row.
  void im2col(const float* x, int64_t b0, int64_t b1, int64_t h, int64_t w, int64_t c, float* buf) const {
    const int64_t k = spec_.kernel, s = spec_.stride;
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    const size_t span = static_cast<size_t>(k * c);
    float* p = buf;
    for (int64_t n = b0; n < b1; ++n) {
      const float* img = x + n * h * w * c;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t kh = 0; kh < k; ++kh) {
            const float* src = img + ((i * s + kh) * w + j * s) * c;
            std::memcpy(p, src, span * sizeof(float));
            p += span;
          }
        }
      }
    }
  }

  void col2im(const float* buf, int64_t b0, int64_t b1, int64_t h, int64_t w, int64_t c, float* gx) const {
    const int64_t k = spec_.kernel, s = spec_.stride;
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    const int64_t span = k * c;
    const float* p = buf;
    for (int64_t n = b0; n < b1; ++n) {
      float* img = gx + n * h * w * c;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          for (int64_t kh = 0; kh < k; ++kh) {
            float* dst = img + ((i * s + kh) * w + j * s) * c;
            for (int64_t t = 0; t < span; ++t) dst[t] += p[t];
            p += span;
          }
        }
      }
    }
  }

  Tensor weights_;  // (K, K, Cin, Cout)
  Tensor bias_;     // (Cout)
};

// -------------------------------------------------------------- MaxPool2D

class MaxPoolLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override {
    check_rank(in, 3, "maxpool2d");
    const int64_t k = spec_.pool, s = spec_.pool_stride;
    if (in[0] < k || in[1] < k) {
      throw EngineError("maxpool2d window " + std::to_string(k) + " does not fit input " + shape_str(in));
    }
    return {(in[0] - k) / s + 1, (in[1] - k) / s + 1, in[2]};
  }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const int64_t k = spec_.pool, s = spec_.pool_stride;
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    Tensor y({n, oh, ow, c});
    std::vector<int32_t> argmax;
    int32_t* arg = nullptr;
    if (cache) {
      argmax.assign(static_cast<size_t>(y.numel()), 0);
      arg = argmax.data();
    }
    parallel_chunks(n, kImageChunk, [&](int64_t, int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b) {
        const float* img = x.data() + b * h * w * c;
        float* out = y.data() + b * oh * ow * c;
        for (int64_t i = 0; i < oh; ++i) {
          for (int64_t j = 0; j < ow; ++j) {
            for (int64_t ch = 0; ch < c; ++ch) {
              float best = img[((i * s) * w + j * s) * c + ch];
              int32_t best_off = static_cast<int32_t>(((i * s) * w + j * s) * c + ch);
              for (int64_t ph = 0; ph < k; ++ph) {
                for (int64_t pw = 0; pw < k; ++pw) {
                  const int64_t off = ((i * s + ph) * w + j * s + pw) * c + ch;
                  if (img[off] > best) {  // ties keep the first (lowest offset)
                    best = img[off];
                    best_off = static_cast<int32_t>(off);
                  }
                }
              }
              const int64_t oi = (i * ow + j) * c + ch;
              out[oi] = best;
              if (arg) arg[b * oh * ow * c + oi] = best_off;
            }
          }
        }
      }
    });
    if (cache) {
      cache->in_shape = x.shape();
      cache->argmax = std::move(argmax);
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    const Shape& in = cache.in_shape;
    const int64_t n = in[0], h = in[1], w = in[2], c = in[3];
    const int64_t per_out = grad_out.numel() / n;
    const int64_t per_in = h * w * c;
    Tensor grad_x(in);
    parallel_chunks(n, kImageChunk, [&](int64_t, int64_t b0, int64_t b1) {
      for (int64_t b = b0; b < b1; ++b) {
        const float* gy = grad_out.data() + b * per_out;
        const int32_t* arg = cache.argmax.data() + b * per_out;
        float* gx = grad_x.data() + b * per_in;
        for (int64_t i = 0; i < per_out; ++i) gx[arg[i]] += gy[i];
      }
    });
    return grad_x;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }
};

// ------------------------------------------------------------------ Dense

class DenseLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override {
    if (in.size() != 1) {
      throw EngineError("dense expects a flat feature input, got per-sample shape " + shape_str(in) +
                        " (insert a flatten layer)");
    }
    return {spec_.units};
  }

  void init_params(const Shape& in, bool followed_by_relu, Rng& rng) override {
    const int64_t f = in[0], u = spec_.units;
    weights_ = Tensor({f, u});
    bias_ = Tensor({u});
    if (followed_by_relu) {
      const float stddev = std::sqrt(2.0f / static_cast<float>(f));
      for (auto& w : weights_.flat()) w = stddev * rng.normal();
    } else {
      const float limit = std::sqrt(6.0f / static_cast<float>(f + u));
      for (auto& w : weights_.flat()) w = rng.uniform(-limit, limit);
    }
  }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    const int64_t n = x.dim(0), f = x.dim(1), u = spec_.units;
    Tensor y({n, u});
    CMapRM wmat(weights_.data(), f, u);
    CVecMap bias(bias_.data(), u);
    parallel_chunks(n, kRowChunk, [&](int64_t, int64_t b0, int64_t b1) {
      MapRM out(y.data() + b0 * u, b1 - b0, u);
      out.noalias() = CMapRM(x.data() + b0 * f, b1 - b0, f) * wmat;
      out.rowwise() += bias.transpose();
    });
    if (cache) {
      cache->input = x;
      cache->in_shape = x.shape();
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads* pg) const override {
    const Tensor& x = cache.input;
    const int64_t n = x.dim(0), f = x.dim(1), u = spec_.units;
    const int64_t chunks = num_chunks(n, kRowChunk);
    CMapRM wmat(weights_.data(), f, u);

    Tensor grad_x({n, f});
    std::vector<Tensor> dw_part;
    if (pg) dw_part.assign(static_cast<size_t>(chunks), Tensor());
    parallel_chunks(n, kRowChunk, [&](int64_t ci, int64_t b0, int64_t b1) {
      CMapRM dy(grad_out.data() + b0 * u, b1 - b0, u);
      MapRM(grad_x.data() + b0 * f, b1 - b0, f).noalias() = dy * wmat.transpose();
      if (pg) {
        Tensor dw({f, u});
        MapRM(dw.data(), f, u).noalias() = CMapRM(x.data() + b0 * f, b1 - b0, f).transpose() * dy;
        dw_part[static_cast<size_t>(ci)] = std::move(dw);
      }
    });
    if (pg) {
      Tensor dw({f, u});
      for (int64_t ci = 0; ci < chunks; ++ci) {
        VecMap(dw.data(), dw.numel()) += CVecMap(dw_part[static_cast<size_t>(ci)].data(), dw.numel());
      }
      Tensor db({u});
      for (int64_t j = 0; j < u; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += grad_out[i * u + j];
        db[j] = static_cast<float>(acc);
      }
      pg->push_back(std::move(dw));
      pg->push_back(std::move(db));
    }
    return grad_x;
  }

  std::vector<Tensor*> params() override { return {&weights_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }

 private:
  Tensor weights_;  // (F, U)
  Tensor bias_;     // (U)
};

// ------------------------------------------------------------------- ReLU

class ReluLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    Tensor y(x.shape());
    const float* in = x.data();
    float* out = y.data();
    parallel_chunks(x.numel(), 1 << 16, [&](int64_t, int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
    });
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    Tensor grad_x(cache.input.shape());
    const float* in = cache.input.data();
    const float* gy = grad_out.data();
    float* gx = grad_x.data();
    parallel_chunks(grad_x.numel(), 1 << 16, [&](int64_t, int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) gx[i] = in[i] > 0.0f ? gy[i] : 0.0f;
    });
    return grad_x;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReluLayer>(*this); }
};

// ---------------------------------------------------------------- Flatten

class FlattenLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override { return {shape_numel(in)}; }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    if (cache) cache->in_shape = x.shape();
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    return grad_out.reshaped(cache.in_shape);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<FlattenLayer>(*this); }
};

// ---------------------------------------------------------------- Dropout

class DropoutLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x, InferenceMode mode, Rng* rng, LayerCache* cache) const override {
    const bool active = (mode == InferenceMode::Train || mode == InferenceMode::StochasticDropout) &&
                        spec_.rate > 0.0f;
    if (!active) {
      if (cache) cache->mask = Tensor();
      return x;
    }
    if (!rng) throw EngineError("dropout requires a generator in train/stochastic mode");
    const float p = spec_.rate;
    const float keep_scale = 1.0f / (1.0f - p);
    Tensor mask(x.shape());
    // Mask generation is sequential so the generator stream stays
    // reproducible regardless of threading.
    for (auto& m : mask.flat()) m = rng->uniform() >= p ? keep_scale : 0.0f;
    Tensor y(x.shape());
    const float* in = x.data();
    const float* mk = mask.data();
    float* out = y.data();
    for (int64_t i = 0; i < y.numel(); ++i) out[i] = in[i] * mk[i];
    if (cache) cache->mask = std::move(mask);
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    if (cache.mask.empty()) return grad_out;
    Tensor grad_x(grad_out.shape());
    const float* gy = grad_out.data();
    const float* mk = cache.mask.data();
    float* gx = grad_x.data();
    for (int64_t i = 0; i < grad_x.numel(); ++i) gx[i] = gy[i] * mk[i];
    return grad_x;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }
};

// -------------------------------------------------------------- BatchNorm

class BatchNormLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override {
    if (in.empty()) throw EngineError("batchnorm expects a non-scalar input");
    return in;
  }

  void init_params(const Shape& in, bool, Rng&) override {
    const int64_t f = in.back();
    gamma_ = Tensor::full({f}, 1.0f);
    beta_ = Tensor({f});
    run_mean_ = Tensor({f});
    run_var_ = Tensor::full({f}, 1.0f);
  }

  Tensor forward(const Tensor& x, InferenceMode mode, Rng*, LayerCache* cache) const override {
    const int64_t f = x.shape().back();
    const int64_t rows = x.numel() / f;
    const bool use_batch = (mode == InferenceMode::Train || mode == InferenceMode::BatchStats);

    Tensor mean({f}), var({f});
    if (use_batch) {
      std::vector<double> sum(static_cast<size_t>(f), 0.0), sumsq(static_cast<size_t>(f), 0.0);
      const float* in = x.data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* row = in + r * f;
        for (int64_t j = 0; j < f; ++j) {
          sum[static_cast<size_t>(j)] += row[j];
          sumsq[static_cast<size_t>(j)] += static_cast<double>(row[j]) * row[j];
        }
      }
      for (int64_t j = 0; j < f; ++j) {
        const double m = sum[static_cast<size_t>(j)] / static_cast<double>(rows);
        const double v = sumsq[static_cast<size_t>(j)] / static_cast<double>(rows) - m * m;
        mean[j] = static_cast<float>(m);
        var[j] = static_cast<float>(v < 0.0 ? 0.0 : v);
      }
    } else {
      mean = run_mean_;
      var = run_var_;
    }

    Tensor inv_std({f});
    for (int64_t j = 0; j < f; ++j) inv_std[j] = 1.0f / std::sqrt(var[j] + spec_.bn_eps);

    Tensor x_hat(x.shape()), y(x.shape());
    const float* in = x.data();
    float* xh = x_hat.data();
    float* out = y.data();
    const float* mu = mean.data();
    const float* inv = inv_std.data();
    const float* g = gamma_.data();
    const float* b = beta_.data();
    parallel_chunks(rows, kRowChunk * 8, [&](int64_t, int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const int64_t base = r * f;
        for (int64_t j = 0; j < f; ++j) {
          const float h = (in[base + j] - mu[j]) * inv[j];
          xh[base + j] = h;
          out[base + j] = g[j] * h + b[j];
        }
      }
    });

    if (cache) {
      cache->x_hat = std::move(x_hat);
      cache->inv_std = std::move(inv_std);
      cache->batch_stats = use_batch;
      if (use_batch) {
        cache->mean = std::move(mean);
        cache->var = std::move(var);
      }
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads* pg) const override {
    const int64_t f = grad_out.shape().back();
    const int64_t rows = grad_out.numel() / f;
    const float* gy = grad_out.data();
    const float* xh = cache.x_hat.data();
    const float* inv = cache.inv_std.data();
    const float* g = gamma_.data();

    // Per-feature reductions, double accumulated.
    std::vector<double> s_dy(static_cast<size_t>(f), 0.0), s_dyxh(static_cast<size_t>(f), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * f;
      for (int64_t j = 0; j < f; ++j) {
        s_dy[static_cast<size_t>(j)] += gy[base + j];
        s_dyxh[static_cast<size_t>(j)] += static_cast<double>(gy[base + j]) * xh[base + j];
      }
    }

    Tensor grad_x(grad_out.shape());
    float* gx = grad_x.data();
    if (cache.batch_stats) {
      // Differentiate through the batch statistics.
      const double m = static_cast<double>(rows);
      parallel_chunks(rows, kRowChunk * 8, [&](int64_t, int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
          const int64_t base = r * f;
          for (int64_t j = 0; j < f; ++j) {
            const double term = m * gy[base + j] - s_dy[static_cast<size_t>(j)] -
                                static_cast<double>(xh[base + j]) * s_dyxh[static_cast<size_t>(j)];
            gx[base + j] = static_cast<float>(static_cast<double>(g[j]) * inv[j] / m * term);
          }
        }
      });
    } else {
      // Running statistics are constants.
      parallel_chunks(rows, kRowChunk * 8, [&](int64_t, int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
          const int64_t base = r * f;
          for (int64_t j = 0; j < f; ++j) gx[base + j] = gy[base + j] * g[j] * inv[j];
        }
      });
    }

    if (pg) {
      Tensor dgamma({f}), dbeta({f});
      for (int64_t j = 0; j < f; ++j) {
        dgamma[j] = static_cast<float>(s_dyxh[static_cast<size_t>(j)]);
        dbeta[j] = static_cast<float>(s_dy[static_cast<size_t>(j)]);
      }
      pg->push_back(std::move(dgamma));
      pg->push_back(std::move(dbeta));
    }
    return grad_x;
  }

  void update_running_stats(const LayerCache& cache) override {
    if (!cache.batch_stats) throw EngineError("running-statistics update requires batch statistics");
    const float mom = spec_.bn_momentum;
    for (int64_t j = 0; j < run_mean_.numel(); ++j) {
      run_mean_[j] = mom * run_mean_[j] + (1.0f - mom) * cache.mean[j];
      run_var_[j] = mom * run_var_[j] + (1.0f - mom) * cache.var[j];
    }
  }

  std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> state() override { return {&run_mean_, &run_var_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNormLayer>(*this); }

 private:
  Tensor gamma_, beta_;
  Tensor run_mean_, run_var_;
};

// ---------------------------------------------------------------- Softmax

class SoftmaxLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override {
    if (in.size() != 1) {
      throw EngineError("softmax expects a flat class input, got per-sample shape " + shape_str(in));
    }
    return in;
  }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    const int64_t n = x.dim(0), k = x.dim(1);
    Tensor y({n, k});
    const float* in = x.data();
    float* out = y.data();
    for (int64_t r = 0; r < n; ++r) {
      const float* row = in + r * k;
      float* orow = out + r * k;
      float mx = row[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      const float norm = static_cast<float>(1.0 / sum);
      for (int64_t j = 0; j < k; ++j) orow[j] *= norm;
    }
    if (cache) cache->output = y;
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    const int64_t n = grad_out.dim(0), k = grad_out.dim(1);
    Tensor grad_x({n, k});
    const float* gy = grad_out.data();
    const float* p = cache.output.data();
    float* gx = grad_x.data();
    for (int64_t r = 0; r < n; ++r) {
      const int64_t base = r * k;
      double dot = 0.0;
      for (int64_t j = 0; j < k; ++j) dot += static_cast<double>(gy[base + j]) * p[base + j];
      for (int64_t j = 0; j < k; ++j) {
        gx[base + j] = p[base + j] * (gy[base + j] - static_cast<float>(dot));
      }
    }
    return grad_x;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxLayer>(*this); }
};

// ---------------------------------------------------------------- Sigmoid

class SigmoidLayer final : public Layer {
 public:
  using Layer::Layer;

  Shape out_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x, InferenceMode, Rng*, LayerCache* cache) const override {
    Tensor y(x.shape());
    const float* in = x.data();
    float* out = y.data();
    for (int64_t i = 0; i < y.numel(); ++i) out[i] = 1.0f / (1.0f + std::exp(-in[i]));
    if (cache) cache->output = y;
    return y;
  }

  Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads*) const override {
    Tensor grad_x(grad_out.shape());
    const float* gy = grad_out.data();
    const float* s = cache.output.data();
    float* gx = grad_x.data();
    for (int64_t i = 0; i < grad_x.numel(); ++i) gx[i] = gy[i] * s[i] * (1.0f - s[i]);
    return grad_x;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<SigmoidLayer>(*this); }
};

}  // namespace

// ------------------------------------------------------------ LayerSpec

LayerSpec LayerSpec::conv2d(int64_t channels, int64_t kernel, int64_t stride) {
  LayerSpec s;
  s.kind = LayerKind::Conv2D;
  s.channels = channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}
LayerSpec LayerSpec::maxpool2d(int64_t pool, int64_t stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2D;
  s.pool = pool;
  s.pool_stride = stride;
  return s;
}
LayerSpec LayerSpec::dense(int64_t units) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.units = units;
  return s;
}
LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::ReLU;
  return s;
}
LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}
LayerSpec LayerSpec::dropout(float rate) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.rate = rate;
  return s;
}
LayerSpec LayerSpec::batchnorm(float eps, float momentum) {
  LayerSpec s;
  s.kind = LayerKind::BatchNorm;
  s.bn_eps = eps;
  s.bn_momentum = momentum;
  return s;
}
LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::Softmax;
  return s;
}
LayerSpec LayerSpec::sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::Sigmoid;
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::Conv2D:
      if (channels < 1) throw EngineError("conv2d channels must be >= 1");
      if (kernel < 1) throw EngineError("conv2d kernel must be >= 1");
      if (stride < 1) throw EngineError("conv2d stride must be >= 1");
      break;
    case LayerKind::MaxPool2D:
      if (pool < 1 || pool_stride < 1) throw EngineError("maxpool2d window/stride must be >= 1");
      break;
    case LayerKind::Dense:
      if (units < 1) throw EngineError("dense units must be >= 1");
      break;
    case LayerKind::Dropout:
      if (!(rate >= 0.0f && rate < 1.0f)) throw EngineError("dropout rate must be in [0, 1)");
      break;
    case LayerKind::BatchNorm:
      if (!(bn_eps > 0.0f)) throw EngineError("batchnorm epsilon must be > 0");
      if (!(bn_momentum >= 0.0f && bn_momentum < 1.0f)) throw EngineError("batchnorm momentum must be in [0, 1)");
      break;
    default:
      break;
  }
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Dense: return "dense";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

std::optional<LayerKind> layer_kind_from_name(std::string_view name) {
  for (LayerKind k : {LayerKind::Conv2D, LayerKind::MaxPool2D, LayerKind::Dense, LayerKind::ReLU,
                      LayerKind::Flatten, LayerKind::Dropout, LayerKind::BatchNorm, LayerKind::Softmax,
                      LayerKind::Sigmoid}) {
    if (name == layer_kind_name(k)) return k;
  }
  return std::nullopt;
}

std::vector<const Tensor*> Layer::params() const {
  auto* self = const_cast<Layer*>(this);
  std::vector<const Tensor*> out;
  for (Tensor* t : self->params()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> Layer::state() const {
  auto* self = const_cast<Layer*>(this);
  std::vector<const Tensor*> out;
  for (Tensor* t : self->state()) out.push_back(t);
  return out;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case LayerKind::Conv2D: return std::make_unique<ConvLayer>(spec);
    case LayerKind::MaxPool2D: return std::make_unique<MaxPoolLayer>(spec);
    case LayerKind::Dense: return std::make_unique<DenseLayer>(spec);
    case LayerKind::ReLU: return std::make_unique<ReluLayer>(spec);
    case LayerKind::Flatten: return std::make_unique<FlattenLayer>(spec);
    case LayerKind::Dropout: return std::make_unique<DropoutLayer>(spec);
    case LayerKind::BatchNorm: return std::make_unique<BatchNormLayer>(spec);
    case LayerKind::Softmax: return std::make_unique<SoftmaxLayer>(spec);
    case LayerKind::Sigmoid: return std::make_unique<SigmoidLayer>(spec);
  }
  throw EngineError("unknown layer kind");
}

}  // namespace advbench
