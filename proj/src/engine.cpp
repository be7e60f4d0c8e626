#include "spm/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "spm/errors.hpp"
#include "spm/rng.hpp"

namespace spm {

namespace {

enum Kind { kConv, kBn, kRelu, kPool, kFlatten, kDense };

template <class S>
struct ParamRef {
  std::string name;
  std::vector<S>* w;
  std::vector<S>* g;
  std::vector<S>* v;
};

// Typed working copy of one layer: weights, gradients, velocity, and the
// activation buffers for the current batch.
template <class S>
struct NLayer {
  Kind kind;
  std::string id;
  // Per-sample dims. Rank-4 layers use H/W/C; dense uses in_f/out_f.
  int Hin = 0, Win = 0, Cin = 0, Hout = 0, Wout = 0, Cout = 0;
  std::int64_t in_count = 0, out_count = 0;

  // conv
  int kh = 0, kw = 0, stride = 1, pad_t = 0, pad_l = 0;
  std::vector<S> w, b, gw, gb, vw, vb;

  // batchnorm
  S eps = 0;
  S mom_stat = S(0.9);
  std::vector<S> gamma, beta, mmean, mvar;
  std::vector<S> ggamma, gbeta, vgamma, vbeta;
  std::vector<S> bmean, binvstd;  // batch stats saved for backward

  // pool
  int pool = 2, pstride = 2;
  std::vector<std::int64_t> argmax;

  // dense
  int in_f = 0, out_f = 0;

  std::vector<S> out, dout;
};

template <class S>
class Net {
 public:
  explicit Net(const ModelGraph& g) : graph_(&g) {
    validate(g);
    num_classes_ = g.num_classes;
    in_count_ = g.input_shape[0] * g.input_shape[1] * g.input_shape[2];
    auto shapes = infer_shapes(g, 1);
    std::vector<std::int64_t> prev = {1, g.input_shape[0], g.input_shape[1], g.input_shape[2]};
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      NLayer<S> l;
      l.id = layer_id(g.layers[i]);
      const auto& cur = shapes[i];
      if (prev.size() == 4) {
        l.Hin = static_cast<int>(prev[1]);
        l.Win = static_cast<int>(prev[2]);
        l.Cin = static_cast<int>(prev[3]);
      }
      if (cur.size() == 4) {
        l.Hout = static_cast<int>(cur[1]);
        l.Wout = static_cast<int>(cur[2]);
        l.Cout = static_cast<int>(cur[3]);
      }
      l.in_count = shape_product(prev) / prev[0];
      l.out_count = shape_product(cur) / cur[0];

      if (const auto* c = std::get_if<Conv2D>(&g.layers[i])) {
        l.kind = kConv;
        l.kh = c->kernel_h;
        l.kw = c->kernel_w;
        l.stride = c->stride;
        int pad_total_h = std::max((l.Hout - 1) * l.stride + l.kh - l.Hin, 0);
        int pad_total_w = std::max((l.Wout - 1) * l.stride + l.kw - l.Win, 0);
        l.pad_t = pad_total_h / 2;
        l.pad_l = pad_total_w / 2;
        widen(c->weights, l.w);
        widen(c->bias, l.b);
        l.gw.assign(l.w.size(), S(0));
        l.gb.assign(l.b.size(), S(0));
        l.vw.assign(l.w.size(), S(0));
        l.vb.assign(l.b.size(), S(0));
      } else if (const auto* bn = std::get_if<BatchNorm>(&g.layers[i])) {
        l.kind = kBn;
        l.eps = static_cast<S>(bn->eps);
        widen(bn->gamma, l.gamma);
        widen(bn->beta, l.beta);
        widen(bn->moving_mean, l.mmean);
        widen(bn->moving_var, l.mvar);
        l.ggamma.assign(l.gamma.size(), S(0));
        l.gbeta.assign(l.beta.size(), S(0));
        l.vgamma.assign(l.gamma.size(), S(0));
        l.vbeta.assign(l.beta.size(), S(0));
        l.bmean.assign(l.gamma.size(), S(0));
        l.binvstd.assign(l.gamma.size(), S(0));
      } else if (std::holds_alternative<ReLU>(g.layers[i])) {
        l.kind = kRelu;
      } else if (const auto* p = std::get_if<MaxPool>(&g.layers[i])) {
        l.kind = kPool;
        l.pool = p->pool;
        l.pstride = p->stride;
      } else if (std::holds_alternative<Flatten>(g.layers[i])) {
        l.kind = kFlatten;
      } else {
        const auto& d = std::get<Dense>(g.layers[i]);
        l.kind = kDense;
        l.in_f = d.in_features;
        l.out_f = d.out_features;
        widen(d.weights, l.w);
        widen(d.bias, l.b);
        l.gw.assign(l.w.size(), S(0));
        l.gb.assign(l.b.size(), S(0));
        l.vw.assign(l.w.size(), S(0));
        l.vb.assign(l.b.size(), S(0));
      }
      layers_.push_back(std::move(l));
      prev = cur;
    }
  }

  std::int64_t input_count() const { return in_count_; }
  int num_classes() const { return num_classes_; }

  // Returns logits [n, num_classes]. Train mode normalizes with batch
  // statistics; update_stats additionally folds them into the moving stats.
  const S* forward(const S* x, int n, RunMode mode, bool update_stats) {
    const S* cur = x;
    for (auto& l : layers_) {
      l.out.resize(static_cast<std::size_t>(n) * l.out_count);
      switch (l.kind) {
        case kConv: conv_forward(cur, n, l); break;
        case kBn: bn_forward(cur, n, l, mode, update_stats); break;
        case kRelu:
          for (std::int64_t i = 0; i < n * l.out_count; ++i)
            l.out[static_cast<std::size_t>(i)] = cur[i] > S(0) ? cur[i] : S(0);
          break;
        case kPool: pool_forward(cur, n, l); break;
        case kFlatten:
          // NHWC flatten is the identity on memory.
          std::copy(cur, cur + n * l.out_count, l.out.begin());
          break;
        case kDense: dense_forward(cur, n, l); break;
      }
      cur = l.out.data();
    }
    return cur;
  }

  // Forward + softmax cross-entropy. Fills probs_; optionally counts argmax hits.
  double loss_forward(const S* x, const int* labels, int n, RunMode mode, bool update_stats,
                      int* correct_out) {
    const S* logits = forward(x, n, mode, update_stats);
    probs_.resize(static_cast<std::size_t>(n) * num_classes_);
    double loss = 0.0;
    int correct = 0;
    for (int b = 0; b < n; ++b) {
      const S* row = logits + static_cast<std::int64_t>(b) * num_classes_;
      S* prow = probs_.data() + static_cast<std::int64_t>(b) * num_classes_;
      S mx = row[0];
      int arg = 0;
      for (int k = 1; k < num_classes_; ++k)
        if (row[k] > mx) { mx = row[k]; arg = k; }
      S denom = S(0);
      for (int k = 0; k < num_classes_; ++k) {
        prow[k] = std::exp(row[k] - mx);
        denom += prow[k];
      }
      for (int k = 0; k < num_classes_; ++k) prow[k] /= denom;
      loss -= std::log(static_cast<double>(prow[labels[b]]));
      if (arg == labels[b]) ++correct;
    }
    if (correct_out) *correct_out = correct;
    return loss / n;
  }

  void backward(const S* x, const int* labels, int n) {
    zero_grads();
    NLayer<S>& last = layers_.back();
    last.dout.assign(static_cast<std::size_t>(n) * last.out_count, S(0));
    for (int b = 0; b < n; ++b) {
      const S* prow = probs_.data() + static_cast<std::int64_t>(b) * num_classes_;
      S* drow = last.dout.data() + static_cast<std::int64_t>(b) * num_classes_;
      for (int k = 0; k < num_classes_; ++k) drow[k] = prow[k] / S(n);
      drow[labels[b]] -= S(1) / S(n);
    }
    for (std::size_t i = layers_.size(); i-- > 0;) {
      NLayer<S>& l = layers_[i];
      const S* in = i == 0 ? x : layers_[i - 1].out.data();
      S* din = nullptr;
      if (i > 0) {
        layers_[i - 1].dout.assign(static_cast<std::size_t>(n) * l.in_count, S(0));
        din = layers_[i - 1].dout.data();
      }
      const S* dy = l.dout.data();
      switch (l.kind) {
        case kConv: conv_backward(in, dy, din, n, l); break;
        case kBn: bn_backward(in, dy, din, n, l); break;
        case kRelu:
          if (din)
            for (std::int64_t k = 0; k < n * l.out_count; ++k)
              din[k] = l.out[static_cast<std::size_t>(k)] > S(0) ? dy[k] : S(0);
          break;
        case kPool:
          if (din) {
            const std::int64_t per = l.out_count;
            for (int b = 0; b < n; ++b) {
              S* dxb = din + static_cast<std::int64_t>(b) * l.in_count;
              for (std::int64_t k = 0; k < per; ++k)
                dxb[l.argmax[static_cast<std::size_t>(b * per + k)]] += dy[b * per + k];
            }
          }
          break;
        case kFlatten:
          if (din) std::copy(dy, dy + n * l.out_count, din);
          break;
        case kDense: dense_backward(in, dy, din, n, l); break;
      }
    }
  }

  void sgd_step(S lr, S momentum) {
    for (auto& p : params()) {
      for (std::size_t i = 0; i < p.w->size(); ++i) {
        (*p.v)[i] = momentum * (*p.v)[i] - lr * (*p.g)[i];
        (*p.w)[i] += (*p.v)[i];
      }
    }
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> ps;
    for (auto& l : layers_) {
      if (l.kind == kConv || l.kind == kDense) {
        ps.push_back({l.id + ".weights", &l.w, &l.gw, &l.vw});
        ps.push_back({l.id + ".bias", &l.b, &l.gb, &l.vb});
      } else if (l.kind == kBn) {
        ps.push_back({l.id + ".gamma", &l.gamma, &l.ggamma, &l.vgamma});
        ps.push_back({l.id + ".beta", &l.beta, &l.gbeta, &l.vbeta});
      }
    }
    return ps;
  }

  void write_back(ModelGraph& g) const {
    std::size_t li = 0;
    for (auto& layer : g.layers) {
      const NLayer<S>& l = layers_[li++];
      if (auto* c = std::get_if<Conv2D>(&layer)) {
        narrow(l.w, c->weights);
        narrow(l.b, c->bias);
      } else if (auto* bn = std::get_if<BatchNorm>(&layer)) {
        narrow(l.gamma, bn->gamma);
        narrow(l.beta, bn->beta);
        narrow(l.mmean, bn->moving_mean);
        narrow(l.mvar, bn->moving_var);
      } else if (auto* d = std::get_if<Dense>(&layer)) {
        narrow(l.w, d->weights);
        narrow(l.b, d->bias);
      }
    }
  }

 private:
  static void widen(const Tensor& t, std::vector<S>& dst) {
    dst.resize(t.data.size());
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(t.data[i]);
  }
  static void narrow(const std::vector<S>& src, Tensor& t) {
    for (std::size_t i = 0; i < src.size(); ++i) t.data[i] = static_cast<float>(src[i]);
  }

  void zero_grads() {
    for (auto& p : params()) std::fill(p.g->begin(), p.g->end(), S(0));
  }

  static void conv_forward(const S* x, int n, NLayer<S>& l) {
    const int Hi = l.Hin, Wi = l.Win, Ci = l.Cin, Ho = l.Hout, Wo = l.Wout, Co = l.Cout;
    for (int b = 0; b < n; ++b) {
      const S* xb = x + static_cast<std::int64_t>(b) * l.in_count;
      S* ob = l.out.data() + static_cast<std::int64_t>(b) * l.out_count;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
          S* orow = ob + (static_cast<std::int64_t>(ho) * Wo + wo) * Co;
          std::copy(l.b.begin(), l.b.end(), orow);
          for (int fh = 0; fh < l.kh; ++fh) {
            const int hi = ho * l.stride + fh - l.pad_t;
            if (hi < 0 || hi >= Hi) continue;
            for (int fw = 0; fw < l.kw; ++fw) {
              const int wi = wo * l.stride + fw - l.pad_l;
              if (wi < 0 || wi >= Wi) continue;
              const S* xrow = xb + (static_cast<std::int64_t>(hi) * Wi + wi) * Ci;
              const S* wrow = l.w.data() + static_cast<std::int64_t>(fh * l.kw + fw) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                const S xv = xrow[ci];
                const S* wr = wrow + static_cast<std::int64_t>(ci) * Co;
                for (int co = 0; co < Co; ++co) orow[co] += xv * wr[co];
              }
            }
          }
        }
      }
    }
  }

  static void conv_backward(const S* x, const S* dy, S* dx, int n, NLayer<S>& l) {
    const int Hi = l.Hin, Wi = l.Win, Ci = l.Cin, Ho = l.Hout, Wo = l.Wout, Co = l.Cout;
    for (int b = 0; b < n; ++b) {
      const S* xb = x + static_cast<std::int64_t>(b) * l.in_count;
      S* dxb = dx ? dx + static_cast<std::int64_t>(b) * l.in_count : nullptr;
      const S* gb = dy + static_cast<std::int64_t>(b) * l.out_count;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
          const S* grow = gb + (static_cast<std::int64_t>(ho) * Wo + wo) * Co;
          for (int co = 0; co < Co; ++co) l.gb[static_cast<std::size_t>(co)] += grow[co];
          for (int fh = 0; fh < l.kh; ++fh) {
            const int hi = ho * l.stride + fh - l.pad_t;
            if (hi < 0 || hi >= Hi) continue;
            for (int fw = 0; fw < l.kw; ++fw) {
              const int wi = wo * l.stride + fw - l.pad_l;
              if (wi < 0 || wi >= Wi) continue;
              const S* xrow = xb + (static_cast<std::int64_t>(hi) * Wi + wi) * Ci;
              S* dxrow = dxb ? dxb + (static_cast<std::int64_t>(hi) * Wi + wi) * Ci : nullptr;
              const std::int64_t wbase = static_cast<std::int64_t>(fh * l.kw + fw) * Ci * Co;
              for (int ci = 0; ci < Ci; ++ci) {
                const S xv = xrow[ci];
                S* gwr = l.gw.data() + wbase + static_cast<std::int64_t>(ci) * Co;
                const S* wr = l.w.data() + wbase + static_cast<std::int64_t>(ci) * Co;
                S acc = S(0);
                for (int co = 0; co < Co; ++co) {
                  gwr[co] += xv * grow[co];
                  acc += wr[co] * grow[co];
                }
                if (dxrow) dxrow[ci] += acc;
              }
            }
          }
        }
      }
    }
  }

  static void bn_forward(const S* x, int n, NLayer<S>& l, RunMode mode, bool update_stats) {
    const int C = static_cast<int>(l.gamma.size());
    const std::int64_t rows = static_cast<std::int64_t>(n) * l.out_count / C;
    if (mode == RunMode::Infer) {
      std::vector<S> scale(static_cast<std::size_t>(C)), shift(static_cast<std::size_t>(C));
      for (int c = 0; c < C; ++c) {
        scale[c] = l.gamma[c] / std::sqrt(l.mvar[c] + l.eps);
        shift[c] = l.beta[c] - scale[c] * l.mmean[c];
      }
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* xr = x + r * C;
        S* yr = l.out.data() + r * C;
        for (int c = 0; c < C; ++c) yr[c] = scale[c] * xr[c] + shift[c];
      }
      return;
    }
    std::vector<S> mean(static_cast<std::size_t>(C), S(0)), var(static_cast<std::size_t>(C), S(0));
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * C;
      for (int c = 0; c < C; ++c) mean[c] += xr[c];
    }
    for (int c = 0; c < C; ++c) mean[c] /= S(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * C;
      for (int c = 0; c < C; ++c) {
        const S d = xr[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (int c = 0; c < C; ++c) var[c] /= S(rows);  // biased
    for (int c = 0; c < C; ++c) {
      l.bmean[c] = mean[c];
      l.binvstd[c] = S(1) / std::sqrt(var[c] + l.eps);
    }
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * C;
      S* yr = l.out.data() + r * C;
      for (int c = 0; c < C; ++c)
        yr[c] = l.gamma[c] * (xr[c] - mean[c]) * l.binvstd[c] + l.beta[c];
    }
    if (update_stats) {
      for (int c = 0; c < C; ++c) {
        l.mmean[c] = l.mom_stat * l.mmean[c] + (S(1) - l.mom_stat) * mean[c];
        l.mvar[c] = l.mom_stat * l.mvar[c] + (S(1) - l.mom_stat) * var[c];
      }
    }
  }

  static void bn_backward(const S* x, const S* dy, S* dx, int n, NLayer<S>& l) {
    const int C = static_cast<int>(l.gamma.size());
    const std::int64_t rows = static_cast<std::int64_t>(n) * l.out_count / C;
    std::vector<S> sdy(static_cast<std::size_t>(C), S(0)), sdyx(static_cast<std::size_t>(C), S(0));
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * C;
      const S* gr = dy + r * C;
      for (int c = 0; c < C; ++c) {
        sdy[c] += gr[c];
        sdyx[c] += gr[c] * (xr[c] - l.bmean[c]) * l.binvstd[c];
      }
    }
    for (int c = 0; c < C; ++c) {
      l.ggamma[c] += sdyx[c];
      l.gbeta[c] += sdy[c];
    }
    if (!dx) return;
    const S inv_rows = S(1) / S(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* xr = x + r * C;
      const S* gr = dy + r * C;
      S* dxr = dx + r * C;
      for (int c = 0; c < C; ++c) {
        const S xhat = (xr[c] - l.bmean[c]) * l.binvstd[c];
        dxr[c] = l.gamma[c] * l.binvstd[c] *
                 (gr[c] - sdy[c] * inv_rows - xhat * sdyx[c] * inv_rows);
      }
    }
  }

  static void pool_forward(const S* x, int n, NLayer<S>& l) {
    const int Wi = l.Win, C = l.Cin, Ho = l.Hout, Wo = l.Wout;
    l.argmax.resize(static_cast<std::size_t>(n) * l.out_count);
    for (int b = 0; b < n; ++b) {
      const S* xb = x + static_cast<std::int64_t>(b) * l.in_count;
      S* ob = l.out.data() + static_cast<std::int64_t>(b) * l.out_count;
      std::int64_t* ab = l.argmax.data() + static_cast<std::int64_t>(b) * l.out_count;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
          for (int c = 0; c < C; ++c) {
            S best = -std::numeric_limits<S>::infinity();
            std::int64_t best_idx = 0;
            for (int ph = 0; ph < l.pool; ++ph) {
              const int hi = ho * l.pstride + ph;
              for (int pw = 0; pw < l.pool; ++pw) {
                const int wi = wo * l.pstride + pw;
                const std::int64_t idx = (static_cast<std::int64_t>(hi) * Wi + wi) * C + c;
                if (xb[idx] > best) {  // strict: first maximum wins
                  best = xb[idx];
                  best_idx = idx;
                }
              }
            }
            const std::int64_t oidx = (static_cast<std::int64_t>(ho) * Wo + wo) * C + c;
            ob[oidx] = best;
            ab[oidx] = best_idx;
          }
        }
      }
    }
  }

  static void dense_forward(const S* x, int n, NLayer<S>& l) {
    for (int b = 0; b < n; ++b) {
      const S* xr = x + static_cast<std::int64_t>(b) * l.in_f;
      S* yr = l.out.data() + static_cast<std::int64_t>(b) * l.out_f;
      std::copy(l.b.begin(), l.b.end(), yr);
      for (int i = 0; i < l.in_f; ++i) {
        const S xv = xr[i];
        const S* wr = l.w.data() + static_cast<std::int64_t>(i) * l.out_f;
        for (int o = 0; o < l.out_f; ++o) yr[o] += xv * wr[o];
      }
    }
  }

  static void dense_backward(const S* x, const S* dy, S* dx, int n, NLayer<S>& l) {
    for (int b = 0; b < n; ++b) {
      const S* xr = x + static_cast<std::int64_t>(b) * l.in_f;
      const S* gr = dy + static_cast<std::int64_t>(b) * l.out_f;
      S* dxr = dx ? dx + static_cast<std::int64_t>(b) * l.in_f : nullptr;
      for (int o = 0; o < l.out_f; ++o) l.gb[static_cast<std::size_t>(o)] += gr[o];
      for (int i = 0; i < l.in_f; ++i) {
        const S xv = xr[i];
        S* gwr = l.gw.data() + static_cast<std::int64_t>(i) * l.out_f;
        const S* wr = l.w.data() + static_cast<std::int64_t>(i) * l.out_f;
        S acc = S(0);
        for (int o = 0; o < l.out_f; ++o) {
          gwr[o] += xv * gr[o];
          acc += wr[o] * gr[o];
        }
        if (dxr) dxr[i] += acc;
      }
    }
  }

 public:
  S mom_stat_default() const { return S(0.9); }
  void set_bn_stat_momentum(S m) {
    for (auto& l : layers_) l.mom_stat = m;
  }

 private:
  const ModelGraph* graph_;
  std::vector<NLayer<S>> layers_;
  std::vector<S> probs_;
  std::int64_t in_count_ = 0;
  int num_classes_ = 0;
};

template <class S>
std::vector<S> widen_inputs(const Tensor& t) {
  std::vector<S> v(t.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(t.data[i]);
  return v;
}

void check_input_shape(const ModelGraph& g, const Tensor& inputs) {
  if (inputs.shape.size() != 4 || inputs.shape[1] != g.input_shape[0] ||
      inputs.shape[2] != g.input_shape[1] || inputs.shape[3] != g.input_shape[2] ||
      inputs.shape[0] < 1)
    throw ShapeError("input shape " + inputs.shape_str() + " does not match model input [N," +
                     std::to_string(g.input_shape[0]) + "," + std::to_string(g.input_shape[1]) +
                     "," + std::to_string(g.input_shape[2]) + "]");
}

void check_labels(const std::vector<int>& labels, int num_classes, std::size_t n) {
  if (labels.size() != n) throw std::invalid_argument("label count does not match batch size");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
}

void check_dataset(const Dataset& d, const ModelGraph& g, const char* what) {
  if (d.size() == 0) throw std::invalid_argument(std::string(what) + " dataset is empty");
  check_input_shape(g, d.images);
  check_labels(d.labels, g.num_classes, static_cast<std::size_t>(d.size()));
}

}  // namespace

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw std::invalid_argument("unknown precision: " + s);
}

const char* precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

void validate_hyperparams(const Hyperparams& hp) {
  if (hp.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (hp.max_epochs < 0) throw std::invalid_argument("max_epochs must be non-negative");
  if (!(hp.learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(hp.momentum >= 0 && hp.momentum < 1))
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(hp.bn_stat_momentum >= 0 && hp.bn_stat_momentum < 1))
    throw std::invalid_argument("bn_stat_momentum must be in [0, 1)");
}

Tensor forward(const ModelGraph& graph, const Tensor& inputs, RunMode mode) {
  check_input_shape(graph, inputs);
  const int n = static_cast<int>(inputs.shape[0]);
  Net<float> net(graph);
  const float* logits = net.forward(inputs.data.data(), n, mode, false);
  Tensor out;
  out.shape = {n, graph.num_classes};
  out.data.assign(logits, logits + static_cast<std::int64_t>(n) * graph.num_classes);
  return out;
}

Tensor forward(ModelGraph& graph, const Tensor& inputs, RunMode mode) {
  check_input_shape(graph, inputs);
  const int n = static_cast<int>(inputs.shape[0]);
  Net<float> net(graph);
  const float* logits = net.forward(inputs.data.data(), n, mode, mode == RunMode::Train);
  if (mode == RunMode::Train) net.write_back(graph);
  Tensor out;
  out.shape = {n, graph.num_classes};
  out.data.assign(logits, logits + static_cast<std::int64_t>(n) * graph.num_classes);
  return out;
}

GradResult loss_and_grads(const ModelGraph& graph, const Tensor& inputs,
                          const std::vector<int>& labels) {
  check_input_shape(graph, inputs);
  const int n = static_cast<int>(inputs.shape[0]);
  check_labels(labels, graph.num_classes, static_cast<std::size_t>(n));
  Net<float> net(graph);
  GradResult res;
  res.loss = net.loss_forward(inputs.data.data(), labels.data(), n, RunMode::Train, false, nullptr);
  net.backward(inputs.data.data(), labels.data(), n);
  for (auto& p : net.params()) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(p.g->size())};
    t.data.assign(p.g->begin(), p.g->end());
    res.grads.emplace_back(p.name, std::move(t));
  }
  return res;
}

void sgd_momentum_step(Tensor& weights, const Tensor& grads, Tensor& velocity, float lr,
                       float momentum) {
  if (!weights.same_shape(grads) || !weights.same_shape(velocity))
    throw std::invalid_argument("weights, grads, and velocity shapes must agree");
  for (std::size_t i = 0; i < weights.data.size(); ++i) {
    velocity.data[i] = momentum * velocity.data[i] - lr * grads.data[i];
    weights.data[i] += velocity.data[i];
  }
}

namespace {

template <class S>
double evaluate_with_net(Net<S>& net, const std::vector<S>& images, const std::vector<int>& labels,
                         std::int64_t n, std::int64_t per_sample, int num_classes) {
  const int chunk = 128;
  std::int64_t correct = 0;
  for (std::int64_t at = 0; at < n; at += chunk) {
    const int m = static_cast<int>(std::min<std::int64_t>(chunk, n - at));
    const S* logits = net.forward(images.data() + at * per_sample, m, RunMode::Infer, false);
    for (int b = 0; b < m; ++b) {
      const S* row = logits + static_cast<std::int64_t>(b) * num_classes;
      int arg = 0;
      for (int k = 1; k < num_classes; ++k)
        if (row[k] > row[arg]) arg = k;
      if (arg == labels[static_cast<std::size_t>(at + b)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <class S>
TrainResult train_impl(const ModelGraph& graph, const Dataset& train_set, const Dataset& val_set,
                       const Hyperparams& hp) {
  TrainResult result;
  result.model = graph;
  if (hp.max_epochs == 0) return result;

  Net<S> net(result.model);
  net.set_bn_stat_momentum(static_cast<S>(hp.bn_stat_momentum));
  const std::int64_t n = train_set.size();
  const std::int64_t per_sample = net.input_count();
  auto images = widen_inputs<S>(train_set.images);
  auto val_images = widen_inputs<S>(val_set.images);

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(hp.seed);

  std::vector<S> batch(static_cast<std::size_t>(hp.batch_size) * per_sample);
  std::vector<int> blabels(static_cast<std::size_t>(hp.batch_size));

  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    rng.shuffle(perm);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::int64_t correct_sum = 0;
    for (std::int64_t at = 0; at < n; at += hp.batch_size) {
      const int m = static_cast<int>(std::min<std::int64_t>(hp.batch_size, n - at));
      for (int b = 0; b < m; ++b) {
        const std::int64_t src = perm[static_cast<std::size_t>(at + b)];
        std::copy(images.begin() + src * per_sample, images.begin() + (src + 1) * per_sample,
                  batch.begin() + static_cast<std::int64_t>(b) * per_sample);
        blabels[static_cast<std::size_t>(b)] = train_set.labels[static_cast<std::size_t>(src)];
      }
      const auto t0 = std::chrono::steady_clock::now();
      int correct = 0;
      double loss = net.loss_forward(batch.data(), blabels.data(), m, RunMode::Train, true, &correct);
      net.backward(batch.data(), blabels.data(), m);
      net.sgd_step(static_cast<S>(hp.learning_rate), static_cast<S>(hp.momentum));
      const auto t1 = std::chrono::steady_clock::now();
      rec.per_step_wall_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
      loss_sum += loss * m;
      correct_sum += correct;
    }
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(correct_sum) / static_cast<double>(n);
    rec.val_accuracy = evaluate_with_net(net, val_images, val_set.labels, val_set.size(),
                                         per_sample, graph.num_classes);
    rec.epoch_wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.log.push_back(std::move(rec));
  }
  net.write_back(result.model);
  return result;
}

}  // namespace

TrainResult train(const ModelGraph& graph, const Dataset& train_set, const Dataset& val_set,
                  const Hyperparams& hp) {
  validate_hyperparams(hp);
  check_dataset(train_set, graph, "train");
  check_dataset(val_set, graph, "validation");
  if (hp.precision == Precision::F64) return train_impl<double>(graph, train_set, val_set, hp);
  return train_impl<float>(graph, train_set, val_set, hp);
}

double evaluate(const ModelGraph& graph, const Dataset& dataset) {
  check_dataset(dataset, graph, "evaluation");
  Net<float> net(graph);
  auto images = widen_inputs<float>(dataset.images);
  return evaluate_with_net(net, images, dataset.labels, dataset.size(), net.input_count(),
                           graph.num_classes);
}

double grad_check(const ModelGraph& graph, const Dataset& batch, double step, Precision precision) {
  if (precision != Precision::F64)
    throw std::invalid_argument("grad_check requires f64 (finite differences are too noisy in f32)");
  check_dataset(batch, graph, "grad_check");
  const int n = static_cast<int>(batch.size());

  Net<double> net(graph);
  auto x = widen_inputs<double>(batch.images);
  net.loss_forward(x.data(), batch.labels.data(), n, RunMode::Train, false, nullptr);
  net.backward(x.data(), batch.labels.data(), n);

  std::vector<std::vector<double>> analytic;
  for (auto& p : net.params()) analytic.push_back(*p.g);

  double worst = 0.0;
  auto params = net.params();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = *params[pi].w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + step;
      const double lp = net.loss_forward(x.data(), batch.labels.data(), n, RunMode::Train, false, nullptr);
      w[i] = orig - step;
      const double lm = net.loss_forward(x.data(), batch.labels.data(), n, RunMode::Train, false, nullptr);
      w[i] = orig;
      const double fd = (lp - lm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

struct TrainStepper::Impl {
  ModelGraph model;
  Net<float> net;
  std::vector<float> x;
  std::vector<int> labels;
  int n;
  float lr, momentum;

  Impl(const ModelGraph& g, const Tensor& inputs, const std::vector<int>& lab,
       const Hyperparams& hp)
      : model(g),
        net(model),
        x(widen_inputs<float>(inputs)),
        labels(lab),
        n(static_cast<int>(inputs.shape[0])),
        lr(hp.learning_rate),
        momentum(hp.momentum) {
    net.set_bn_stat_momentum(hp.bn_stat_momentum);
  }
};

TrainStepper::TrainStepper(const ModelGraph& graph, const Tensor& inputs,
                           const std::vector<int>& labels, const Hyperparams& hp) {
  check_input_shape(graph, inputs);
  check_labels(labels, graph.num_classes, static_cast<std::size_t>(inputs.shape[0]));
  impl_ = std::make_unique<Impl>(graph, inputs, labels, hp);
}

TrainStepper::~TrainStepper() = default;
TrainStepper::TrainStepper(TrainStepper&&) noexcept = default;

void TrainStepper::step() {
  impl_->net.loss_forward(impl_->x.data(), impl_->labels.data(), impl_->n, RunMode::Train, true,
                          nullptr);
  impl_->net.backward(impl_->x.data(), impl_->labels.data(), impl_->n);
  impl_->net.sgd_step(impl_->lr, impl_->momentum);
}

}  // namespace spm
