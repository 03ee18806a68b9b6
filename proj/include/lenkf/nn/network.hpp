#pragma once

#include "lenkf/common.hpp"
#include "lenkf/rng.hpp"

#include <cmath>
#include <vector>

namespace lenkf {

enum class Act { Identity, LeakyRelu };

inline constexpr double kLeakySlope = 0.1;

inline double act_eval(Act a, double x) {
  return a == Act::LeakyRelu && x < 0.0 ? kLeakySlope * x : x;
}

inline double act_deriv(Act a, double x) {
  return a == Act::LeakyRelu && x < 0.0 ? kLeakySlope : 1.0;
}

struct Layer {
  Mat w;  // out x in
  Vec b;  // out
  Act act = Act::Identity;
};

/// Fully connected network evaluated column-wise: inputs and outputs are
/// matrices whose columns are batch samples.
struct DenseNet {
  std::vector<Layer> layers;

  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }

  Mat forward(const Mat& x) const {
    Mat h = x;
    for (const Layer& l : layers) {
      h = (l.w * h).colwise() + l.b;
      if (l.act == Act::LeakyRelu)
        h = h.unaryExpr([](double v) { return act_eval(Act::LeakyRelu, v); });
    }
    return h;
  }

  Vec forward_vec(const Vec& x) const { return forward(Mat(x)).col(0); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

/// Pre-activation values cached during a forward pass, consumed by backward().
struct NetCache {
  Mat input;             // in x B
  std::vector<Mat> pre;  // per layer: out x B, before the activation
};

inline Mat forward_cached(const DenseNet& net, const Mat& x, NetCache& cache) {
  require(x.rows() == net.in_dim(), "forward_cached: input dimension mismatch");
  cache.input = x;
  cache.pre.resize(net.layers.size());
  Mat h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    cache.pre[i] = (l.w * h).colwise() + l.b;
    h = l.act == Act::LeakyRelu
            ? cache.pre[i].unaryExpr([](double v) { return act_eval(Act::LeakyRelu, v); })
            : cache.pre[i];
  }
  return h;
}

struct NetGrads {
  std::vector<Mat> dw;
  std::vector<Vec> db;

  void resize_like(const DenseNet& net) {
    dw.resize(net.layers.size());
    db.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      dw[i] = Mat::Zero(net.layers[i].w.rows(), net.layers[i].w.cols());
      db[i] = Vec::Zero(net.layers[i].b.size());
    }
  }
};

/// Reverse pass. `dout` is dL/d(output) with one column per batch sample;
/// gradients are accumulated into `grads` (resize_like + setZero is the
/// caller's job) and dL/d(input) is returned.
inline Mat backward(const DenseNet& net, const NetCache& cache, const Mat& dout,
                    NetGrads& grads) {
  require(grads.dw.size() == net.layers.size(), "backward: grads not sized");
  Mat delta = dout;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const Layer& l = net.layers[i];
    if (l.act == Act::LeakyRelu) {
      delta = delta.cwiseProduct(cache.pre[i].unaryExpr(
          [](double v) { return act_deriv(Act::LeakyRelu, v); }));
    }
    if (i == 0) {
      grads.dw[i].noalias() += delta * cache.input.transpose();
    } else {
      const Mat& pre_below = cache.pre[i - 1];
      const Act act_below = net.layers[i - 1].act;
      Mat h_below = act_below == Act::LeakyRelu
                        ? pre_below.unaryExpr([](double v) { return act_eval(Act::LeakyRelu, v); })
                        : pre_below;
      grads.dw[i].noalias() += delta * h_below.transpose();
    }
    grads.db[i] += delta.rowwise().sum();
    if (i > 0) delta = net.layers[i].w.transpose() * delta;
  }
  return net.layers.front().w.transpose() * delta;
}

/// He-style initialization: weights ~ N(0, 2 / fan_in), biases zero.
inline DenseNet make_mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                         RngStream& rng) {
  require(in_dim >= 1 && out_dim >= 1, "make_mlp: bad dimensions");
  DenseNet net;
  std::vector<int> dims;
  dims.push_back(in_dim);
  for (int h : hidden) {
    require(h >= 1, "make_mlp: bad hidden width");
    dims.push_back(h);
  }
  dims.push_back(out_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    const double std_dev = std::sqrt(2.0 / dims[i]);
    l.w = std_dev * rng.normal_mat(dims[i + 1], dims[i]);
    l.b = Vec::Zero(dims[i + 1]);
    l.act = i + 2 < dims.size() ? Act::LeakyRelu : Act::Identity;
    net.layers.push_back(std::move(l));
  }
  return net;
}

// ---------------------------------------------------------------------------
// Flat parameter views, used by the optimizer and the FD gradient checks.
// ---------------------------------------------------------------------------

inline void pack_net(const DenseNet& net, double* dst) {
  for (const Layer& l : net.layers) {
    std::copy(l.w.data(), l.w.data() + l.w.size(), dst);
    dst += l.w.size();
    std::copy(l.b.data(), l.b.data() + l.b.size(), dst);
    dst += l.b.size();
  }
}

inline void unpack_net(DenseNet& net, const double* src) {
  for (Layer& l : net.layers) {
    std::copy(src, src + l.w.size(), l.w.data());
    src += l.w.size();
    std::copy(src, src + l.b.size(), l.b.data());
    src += l.b.size();
  }
}

inline void pack_net_grads(const NetGrads& g, double* dst) {
  for (std::size_t i = 0; i < g.dw.size(); ++i) {
    std::copy(g.dw[i].data(), g.dw[i].data() + g.dw[i].size(), dst);
    dst += g.dw[i].size();
    std::copy(g.db[i].data(), g.db[i].data() + g.db[i].size(), dst);
    dst += g.db[i].size();
  }
}

}  // namespace lenkf
