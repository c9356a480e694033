#include "cslid/nn.hpp"

#include <sstream>

namespace cslid {

Segment ParameterLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  for (const auto& s : segments_) {
    if (s.name == name) throw Error("duplicate parameter segment '" + name + "'");
  }
  Segment s{std::move(name), size_, rows, cols};
  size_ += rows * cols;
  segments_.push_back(s);
  return s;
}

const Segment& ParameterLayout::find(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw Error("no parameter segment named '" + std::string(name) + "'");
}

void init_uniform(Vector& params, const Segment& s, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < s.size(); ++i) params(s.offset + i) = dist(rng);
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(ParameterLayout& layout, const std::string& prefix, int in_dim, int out_dim)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weight_(layout.add(prefix + ".weight", out_dim, in_dim)),
      bias_(layout.add(prefix + ".bias", 1, out_dim)) {}

Matrix Linear::forward(const Vector& params, const Matrix& x) const {
  CSLID_CHECK(x.cols() == in_dim_, "linear layer expects input dim " + std::to_string(in_dim_) + ", got " +
                                       std::to_string(x.cols()));
  Matrix y = x * view(params, weight_).transpose();
  y.rowwise() += view(params, bias_).row(0);
  return y;
}

Matrix Linear::backward(const Vector& params, const Matrix& x, const Matrix& grad_out, Vector& grads) const {
  view(grads, weight_).noalias() += grad_out.transpose() * x;
  view(grads, bias_).row(0) += grad_out.colwise().sum();
  return grad_out * view(params, weight_);
}

void Linear::init(Vector& params, std::mt19937_64& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim_));
  init_uniform(params, weight_, bound, rng);
  init_uniform(params, bias_, bound, rng);
}

// --- Encoders ---------------------------------------------------------------

std::string_view to_string(EncoderKind kind) {
  return kind == EncoderKind::BiRecurrent ? "bidirectional-recurrent" : "feedforward-context";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "bidirectional-recurrent" || name == "recurrent") return EncoderKind::BiRecurrent;
  if (name == "feedforward-context" || name == "feedforward") return EncoderKind::FeedForwardContext;
  throw ValidationError("unknown encoder kind '" + std::string(name) + "'");
}

BiRecurrentLayer::BiRecurrentLayer(ParameterLayout& layout, const std::string& prefix, int in_dim, int hidden)
    : in_dim_(in_dim), hidden_(hidden) {
  for (auto [dir, tag] : {std::pair{&fwd_, ".fwd"}, std::pair{&bwd_, ".bwd"}}) {
    dir->w = layout.add(prefix + tag + ".w_in", hidden, in_dim);
    dir->u = layout.add(prefix + tag + ".w_rec", hidden, hidden);
    dir->b = layout.add(prefix + tag + ".bias", 1, hidden);
  }
}

Matrix BiRecurrentLayer::run(const Vector& params, const Direction& dir, const Matrix& x, bool reverse) const {
  const Eigen::Index frames = x.rows();
  Matrix pre = x * view(params, dir.w).transpose();
  pre.rowwise() += view(params, dir.b).row(0);
  const auto u = view(params, dir.u);
  Matrix h(frames, hidden_);
  RowVector prev = RowVector::Zero(hidden_);
  for (Eigen::Index step = 0; step < frames; ++step) {
    const Eigen::Index t = reverse ? frames - 1 - step : step;
    RowVector a = pre.row(t) + prev * u.transpose();
    h.row(t) = a.array().tanh();
    prev = h.row(t);
  }
  return h;
}

Matrix BiRecurrentLayer::forward(const Vector& params, const Matrix& x, Cache& cache) const {
  CSLID_CHECK(x.cols() == in_dim_, "recurrent layer expects input dim " + std::to_string(in_dim_) + ", got " +
                                       std::to_string(x.cols()));
  cache.input = x;
  cache.fwd = run(params, fwd_, x, false);
  cache.bwd = run(params, bwd_, x, true);
  Matrix out(x.rows(), 2 * hidden_);
  out << cache.fwd, cache.bwd;
  return out;
}

void BiRecurrentLayer::run_backward(const Vector& params, const Direction& dir, const Matrix& x, const Matrix& h,
                                    const Matrix& grad_h, bool reverse, Vector& grads, Matrix& grad_x) const {
  const Eigen::Index frames = x.rows();
  const auto u = view(params, dir.u);
  auto gu = view(grads, dir.u);
  Matrix grad_pre(frames, hidden_);
  RowVector carry = RowVector::Zero(hidden_);
  // Walk the recurrence in reverse processing order.
  for (Eigen::Index step = frames - 1; step >= 0; --step) {
    const Eigen::Index t = reverse ? frames - 1 - step : step;
    RowVector dh = grad_h.row(t) + carry;
    RowVector da = dh.array() * (1.0 - h.row(t).array().square());
    grad_pre.row(t) = da;
    if (step > 0) {
      const Eigen::Index prev_t = reverse ? t + 1 : t - 1;
      gu.noalias() += da.transpose() * h.row(prev_t);
    }
    carry = da * u;
  }
  view(grads, dir.w).noalias() += grad_pre.transpose() * x;
  view(grads, dir.b).row(0) += grad_pre.colwise().sum();
  grad_x.noalias() += grad_pre * view(params, dir.w);
}

Matrix BiRecurrentLayer::backward(const Vector& params, const Cache& cache, const Matrix& grad_out,
                                  Vector& grads) const {
  Matrix grad_x = Matrix::Zero(cache.input.rows(), in_dim_);
  run_backward(params, fwd_, cache.input, cache.fwd, grad_out.leftCols(hidden_), false, grads, grad_x);
  run_backward(params, bwd_, cache.input, cache.bwd, grad_out.rightCols(hidden_), true, grads, grad_x);
  return grad_x;
}

void BiRecurrentLayer::init(Vector& params, std::mt19937_64& rng) const {
  const double bound_in = 1.0 / std::sqrt(static_cast<double>(in_dim_));
  const double bound_rec = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (const auto* dir : {&fwd_, &bwd_}) {
    init_uniform(params, dir->w, bound_in, rng);
    init_uniform(params, dir->u, bound_rec, rng);
    init_uniform(params, dir->b, bound_in, rng);
  }
}

ContextLayer::ContextLayer(ParameterLayout& layout, const std::string& prefix, int in_dim, int hidden, int radius)
    : in_dim_(in_dim),
      hidden_(hidden),
      radius_(radius),
      w_(layout.add(prefix + ".weight", hidden, (2 * radius + 1) * in_dim)),
      b_(layout.add(prefix + ".bias", 1, hidden)) {}

Matrix ContextLayer::forward(const Vector& params, const Matrix& x, Cache& cache) const {
  CSLID_CHECK(x.cols() == in_dim_, "context layer expects input dim " + std::to_string(in_dim_) + ", got " +
                                       std::to_string(x.cols()));
  const Eigen::Index frames = x.rows();
  const int width = 2 * radius_ + 1;
  cache.window = Matrix::Zero(frames, width * in_dim_);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int k = -radius_; k <= radius_; ++k) {
      const Eigen::Index src = t + k;
      if (src < 0 || src >= frames) continue;
      cache.window.block(t, (k + radius_) * in_dim_, 1, in_dim_) = x.row(src);
    }
  }
  Matrix pre = cache.window * view(params, w_).transpose();
  pre.rowwise() += view(params, b_).row(0);
  cache.output = pre.array().tanh();
  return cache.output;
}

Matrix ContextLayer::backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const {
  const Matrix grad_pre = grad_out.array() * (1.0 - cache.output.array().square());
  view(grads, w_).noalias() += grad_pre.transpose() * cache.window;
  view(grads, b_).row(0) += grad_pre.colwise().sum();
  const Matrix grad_window = grad_pre * view(params, w_);
  const Eigen::Index frames = grad_out.rows();
  Matrix grad_x = Matrix::Zero(frames, in_dim_);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (int k = -radius_; k <= radius_; ++k) {
      const Eigen::Index src = t + k;
      if (src < 0 || src >= frames) continue;
      grad_x.row(src) += grad_window.block(t, (k + radius_) * in_dim_, 1, in_dim_);
    }
  }
  return grad_x;
}

void ContextLayer::init(Vector& params, std::mt19937_64& rng) const {
  const double bound = 1.0 / std::sqrt(static_cast<double>((2 * radius_ + 1) * in_dim_));
  init_uniform(params, w_, bound, rng);
  init_uniform(params, b_, bound, rng);
}

Encoder::Encoder(ParameterLayout& layout, const std::string& prefix, int input_dim, const EncoderConfig& cfg)
    : cfg_(cfg), input_dim_(input_dim) {
  CSLID_CHECK(cfg.hidden_dim >= 1 && cfg.depth >= 1, "encoder hidden_dim and depth must be >= 1");
  CSLID_CHECK(cfg.context_radius >= 0, "context radius must be >= 0");
  int dim = input_dim;
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    if (cfg.kind == EncoderKind::BiRecurrent) {
      BiRecurrentLayer layer(layout, name, dim, cfg.hidden_dim);
      dim = layer.output_dim();
      layers_.emplace_back(std::move(layer));
    } else {
      ContextLayer layer(layout, name, dim, cfg.hidden_dim, cfg.context_radius);
      dim = layer.output_dim();
      layers_.emplace_back(std::move(layer));
    }
  }
  output_dim_ = dim;
}

Matrix Encoder::forward(const Vector& params, const Matrix& x, Cache& cache) const {
  CSLID_CHECK(x.cols() == input_dim_, "encoder expects input dim " + std::to_string(input_dim_) + ", got " +
                                          std::to_string(x.cols()));
  cache.layers.clear();
  Matrix h = x;
  for (const auto& layer : layers_) {
    std::visit(
        [&](const auto& l) {
          typename std::decay_t<decltype(l)>::Cache c;
          h = l.forward(params, h, c);
          cache.layers.emplace_back(std::move(c));
        },
        layer);
  }
  return h;
}

Matrix Encoder::forward(const Vector& params, const Matrix& x) const {
  Cache cache;
  return forward(params, x, cache);
}

Matrix Encoder::backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const {
  CSLID_CHECK(cache.layers.size() == layers_.size(), "encoder backward called without a matching forward");
  Matrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    std::visit(
        [&](const auto& l) {
          using C = typename std::decay_t<decltype(l)>::Cache;
          g = l.backward(params, std::get<C>(cache.layers[i]), g, grads);
        },
        layers_[i]);
  }
  return g;
}

void Encoder::init(Vector& params, std::mt19937_64& rng) const {
  for (const auto& layer : layers_) {
    std::visit([&](const auto& l) { l.init(params, rng); }, layer);
  }
}

// --- Adam -------------------------------------------------------------------

void adam_step(OptimizerState& opt, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads) {
  CSLID_CHECK(params.size() == grads.size() && params.size() == opt.m.size(),
              "optimizer state, parameters and gradients differ in length");
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads(i))) {
      std::ostringstream msg;
      msg << "non-finite gradient " << grads(i) << " at parameter index " << i << " (step " << opt.step + 1 << ")";
      throw Error(msg.str());
    }
  }
  const auto& c = opt.cfg;
  ++opt.step;
  opt.m = c.beta1 * opt.m + (1.0 - c.beta1) * grads;
  opt.v = c.beta2 * opt.v + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  params.array() -= c.lr * (opt.m.array() / correction1) / ((opt.v.array() / correction2).sqrt() + c.eps);
}

}  // namespace cslid

namespace cslid {

EncoderHead::EncoderHead(ParameterLayout& layout, const std::string& prefix, int input_dim,
                         const std::optional<EncoderConfig>& encoder, int output_dim)
    : input_dim_(input_dim) {
  int dim = input_dim;
  if (encoder) {
    encoder_.emplace(layout, prefix + ".encoder", input_dim, *encoder);
    dim = encoder_->output_dim();
  }
  output_ = Linear(layout, prefix + ".head", dim, output_dim);
}

Matrix EncoderHead::forward(const Vector& params, const Matrix& x, Cache& cache) const {
  cache.hidden = encoder_ ? encoder_->forward(params, x, cache.encoder) : x;
  return output_.forward(params, cache.hidden);
}

Matrix EncoderHead::forward(const Vector& params, const Matrix& x) const {
  Cache cache;
  return forward(params, x, cache);
}

Matrix EncoderHead::backward(const Vector& params, const Cache& cache, const Matrix& grad_out, Vector& grads) const {
  Matrix g = output_.backward(params, cache.hidden, grad_out, grads);
  return encoder_ ? encoder_->backward(params, cache.encoder, g, grads) : g;
}

void EncoderHead::init(Vector& params, std::mt19937_64& rng) const {
  if (encoder_) encoder_->init(params, rng);
  output_.init(params, rng);
}

}  // namespace cslid
