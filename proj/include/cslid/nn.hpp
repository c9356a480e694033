#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cslid/common.hpp"

namespace cslid {

/// A named rows x cols block inside a flat parameter vector.
struct Segment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

/// Allocates segments in a flat parameter vector. Modules keep their
/// Segments and read parameters out of whatever vector they are handed, so
/// the same module can run against the live parameters, a gradient buffer or
/// a perturbed copy.
class ParameterLayout {
 public:
  Segment add(std::string name, Eigen::Index rows, Eigen::Index cols);
  Eigen::Index size() const { return size_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& find(std::string_view name) const;

 private:
  std::vector<Segment> segments_;
  Eigen::Index size_ = 0;
};

inline MatrixMap view(Vector& v, const Segment& s) { return MatrixMap(v.data() + s.offset, s.rows, s.cols); }
inline ConstMatrixMap view(const Vector& v, const Segment& s) {
  return ConstMatrixMap(v.data() + s.offset, s.rows, s.cols);
}

/// Fills a segment with U(-bound, bound).
void init_uniform(Vector& params, const Segment& s, double bound, std::mt19937_64& rng);

/// Per-frame affine map y = x W^T + b.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterLayout& layout, const std::string& prefix, int in_dim, int out_dim);

  Matrix forward(const Vector& params, const Matrix& x) const;
  /// Accumulates into `grads`; returns the gradient w.r.t. x.
  Matrix backward(const Vector& params, const Matrix& x, const Matrix& grad_out, Vector& grads) const;
  void init(Vector& params, std::mt19937_64& rng) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const Segment& weight() const { return weight_; }
  const Segment& bias() const { return bias_; }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  Segment weight_;
  Segment bias_;
};

enum class EncoderKind { FeedForwardContext, BiRecurrent };
std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::BiRecurrent;
  int hidden_dim = 32;
  int depth = 1;
  int context_radius = 2;  // feedforward-context only
};

/// Bidirectional Elman layer: h_t = tanh(W x_t + U h_{t-1} + b) run in each
/// direction, outputs concatenated [forward | backward].
class BiRecurrentLayer {
 public:
  struct Cache {
    Matrix input;
    Matrix fwd;  // T x H
    Matrix bwd;  // T x H
  };

  BiRecurrentLayer(ParameterLayout& layout, const std::string& prefix, int in_dim, int hidden);
  Matrix forward(const Vector& params, const Matrix& x, Cache& cache) const;
  Matrix backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const;
  void init(Vector& params, std::mt19937_64& rng) const;
  int output_dim() const { return 2 * hidden_; }

 private:
  struct Direction {
    Segment w, u, b;
  };
  Matrix run(const Vector& params, const Direction& dir, const Matrix& x, bool reverse) const;
  void run_backward(const Vector& params, const Direction& dir, const Matrix& x, const Matrix& h,
                    const Matrix& grad_h, bool reverse, Vector& grads, Matrix& grad_x) const;

  int in_dim_;
  int hidden_;
  Direction fwd_;
  Direction bwd_;
};

/// tanh(W [x_{t-r}; ...; x_{t+r}] + b) with zero padding at the edges.
class ContextLayer {
 public:
  struct Cache {
    Matrix window;  // T x (2r+1)D
    Matrix output;
  };

  ContextLayer(ParameterLayout& layout, const std::string& prefix, int in_dim, int hidden, int radius);
  Matrix forward(const Vector& params, const Matrix& x, Cache& cache) const;
  Matrix backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const;
  void init(Vector& params, std::mt19937_64& rng) const;
  int output_dim() const { return hidden_; }

 private:
  int in_dim_;
  int hidden_;
  int radius_;
  Segment w_, b_;
};

/// A stack of `depth` identical-kind layers.
class Encoder {
 public:
  using LayerCache = std::variant<BiRecurrentLayer::Cache, ContextLayer::Cache>;
  struct Cache {
    std::vector<LayerCache> layers;
  };

  Encoder() = default;
  Encoder(ParameterLayout& layout, const std::string& prefix, int input_dim, const EncoderConfig& cfg);

  Matrix forward(const Vector& params, const Matrix& x, Cache& cache) const;
  Matrix forward(const Vector& params, const Matrix& x) const;
  /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Matrix backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const;
  void init(Vector& params, std::mt19937_64& rng) const;

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<std::variant<BiRecurrentLayer, ContextLayer>> layers_;
};

/// Optional encoder followed by a per-frame affine output layer. Without an
/// encoder this is a frame-local fully-connected head.
class EncoderHead {
 public:
  struct Cache {
    Encoder::Cache encoder;
    Matrix hidden;
  };

  EncoderHead() = default;
  EncoderHead(ParameterLayout& layout, const std::string& prefix, int input_dim,
              const std::optional<EncoderConfig>& encoder, int output_dim);

  Matrix forward(const Vector& params, const Matrix& x, Cache& cache) const;
  Matrix forward(const Vector& params, const Matrix& x) const;
  Matrix backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const;
  void init(Vector& params, std::mt19937_64& rng) const;

  bool has_encoder() const { return encoder_.has_value(); }
  const std::optional<Encoder>& encoder() const { return encoder_; }
  const Linear& output() const { return output_; }
  int input_dim() const { return input_dim_; }

 private:
  int input_dim_ = 0;
  std::optional<Encoder> encoder_;
  Linear output_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments for one contiguous parameter range.
struct OptimizerState {
  AdamConfig cfg;
  Vector m;
  Vector v;
  long step = 0;

  OptimizerState() = default;
  OptimizerState(Eigen::Index size, AdamConfig config)
      : cfg(config), m(Vector::Zero(size)), v(Vector::Zero(size)) {}
  void reset() {
    m.setZero();
    v.setZero();
    step = 0;
  }
};

/// Bias-corrected Adam update. Throws Error if any gradient is not finite;
/// parameters are left untouched in that case.
void adam_step(OptimizerState& opt, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads);

}  // namespace cslid
