#pragma once

// Naive direct-loop reference implementations. They share nothing with the
// library kernels beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "stnet/tensor.hpp"

namespace oracle {

using stnet::Shape;
using stnet::Tensor;

// x [B, C_in, *S], w [C_out, C_in/G, *K], spatial rank 1..3.
inline Tensor<double> conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int groups,
                           const std::vector<int>& pad, const std::vector<int>& stride) {
  const int r = x.rank() - 2;
  std::int64_t S[3] = {1, 1, 1}, K[3] = {1, 1, 1}, P[3] = {0, 0, 0}, St[3] = {1, 1, 1}, O[3] = {1, 1, 1};
  for (int d = 0; d < r; ++d) {
    S[3 - r + d] = x.dim(2 + d);
    K[3 - r + d] = w.dim(2 + d);
    P[3 - r + d] = pad[static_cast<std::size_t>(d)];
    St[3 - r + d] = stride[static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < 3; ++d) O[d] = (S[d] + 2 * P[d] - K[d]) / St[d] + 1;
  const std::int64_t B = x.dim(0), Ci = x.dim(1), Co = w.dim(0), cig = Ci / groups, cog = Co / groups;
  Shape out{B, Co};
  for (int d = 3 - r; d < 3; ++d) out.push_back(O[d]);
  Tensor<double> y(out);
  auto xat = [&](std::int64_t n, std::int64_t c, std::int64_t i0, std::int64_t i1, std::int64_t i2) {
    if (i0 < 0 || i0 >= S[0] || i1 < 0 || i1 >= S[1] || i2 < 0 || i2 >= S[2]) return 0.0;
    return x[(((n * Ci + c) * S[0] + i0) * S[1] + i1) * S[2] + i2];
  };
  std::int64_t q = 0;
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t oc = 0; oc < Co; ++oc) {
      const std::int64_t g = oc / cog;
      for (std::int64_t o0 = 0; o0 < O[0]; ++o0)
        for (std::int64_t o1 = 0; o1 < O[1]; ++o1)
          for (std::int64_t o2 = 0; o2 < O[2]; ++o2) {
            double acc = b ? (*b)[oc] : 0.0;
            for (std::int64_t c = 0; c < cig; ++c)
              for (std::int64_t k0 = 0; k0 < K[0]; ++k0)
                for (std::int64_t k1 = 0; k1 < K[1]; ++k1)
                  for (std::int64_t k2 = 0; k2 < K[2]; ++k2) {
                    const double wv = w[(((oc * cig + c) * K[0] + k0) * K[1] + k1) * K[2] + k2];
                    acc += wv * xat(n, g * cig + c, o0 * St[0] - P[0] + k0, o1 * St[1] - P[1] + k1,
                                    o2 * St[2] - P[2] + k2);
                  }
            y[q++] = acc;
          }
    }
  return y;
}

struct BnState {
  std::vector<double> run_mean, run_var;
};

// Train mode: biased batch variance; running variance tracks var + eps.
// Eval mode: (x - run_mean) / sqrt(run_var).
inline Tensor<double> batchnorm(const Tensor<double>& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, BnState& st, bool train, double eps,
                                double momentum) {
  const std::int64_t B = x.dim(0), C = x.dim(1), P = x.numel() / (B * C);
  Tensor<double> y(x.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    double mean = 0.0, denom = 0.0;
    if (train) {
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t p = 0; p < P; ++p) mean += x[(n * C + c) * P + p];
      mean /= static_cast<double>(B * P);
      double var = 0.0;
      for (std::int64_t n = 0; n < B; ++n)
        for (std::int64_t p = 0; p < P; ++p) var += std::pow(x[(n * C + c) * P + p] - mean, 2);
      var /= static_cast<double>(B * P);
      denom = std::sqrt(var + eps);
      st.run_mean[cs] = momentum * st.run_mean[cs] + (1 - momentum) * mean;
      st.run_var[cs] = momentum * st.run_var[cs] + (1 - momentum) * (var + eps);
    } else {
      mean = st.run_mean[cs];
      denom = std::sqrt(st.run_var[cs]);
    }
    for (std::int64_t n = 0; n < B; ++n)
      for (std::int64_t p = 0; p < P; ++p) {
        const std::int64_t i = (n * C + c) * P + p;
        y[i] = gamma[cs] * (x[i] - mean) / denom + beta[cs];
      }
  }
  return y;
}

// Windowed pooling without padding on x [B, C, *S].
inline Tensor<double> pool(const Tensor<double>& x, bool max, const std::vector<int>& window,
                           const std::vector<int>& stride) {
  const int r = x.rank() - 2;
  std::int64_t S[3] = {1, 1, 1}, Wn[3] = {1, 1, 1}, St[3] = {1, 1, 1}, O[3] = {1, 1, 1};
  for (int d = 0; d < r; ++d) {
    S[3 - r + d] = x.dim(2 + d);
    Wn[3 - r + d] = window[static_cast<std::size_t>(d)];
    St[3 - r + d] = stride[static_cast<std::size_t>(d)];
  }
  for (int d = 0; d < 3; ++d) O[d] = (S[d] - Wn[d]) / St[d] + 1;
  const std::int64_t BC = x.dim(0) * x.dim(1);
  Shape out{x.dim(0), x.dim(1)};
  for (int d = 3 - r; d < 3; ++d) out.push_back(O[d]);
  Tensor<double> y(out);
  std::int64_t q = 0;
  for (std::int64_t bc = 0; bc < BC; ++bc)
    for (std::int64_t o0 = 0; o0 < O[0]; ++o0)
      for (std::int64_t o1 = 0; o1 < O[1]; ++o1)
        for (std::int64_t o2 = 0; o2 < O[2]; ++o2) {
          double acc = max ? -std::numeric_limits<double>::infinity() : 0.0;
          for (std::int64_t k0 = 0; k0 < Wn[0]; ++k0)
            for (std::int64_t k1 = 0; k1 < Wn[1]; ++k1)
              for (std::int64_t k2 = 0; k2 < Wn[2]; ++k2) {
                const double v =
                    x[((bc * S[0] + o0 * St[0] + k0) * S[1] + o1 * St[1] + k1) * S[2] + o2 * St[2] + k2];
                acc = max ? std::max(acc, v) : acc + v;
              }
          y[q++] = max ? acc : acc / static_cast<double>(Wn[0] * Wn[1] * Wn[2]);
        }
  return y;
}

inline Tensor<double> global_pool(const Tensor<double>& x, bool max) {
  const std::int64_t B = x.dim(0), C = x.dim(1), P = x.numel() / (B * C);
  Tensor<double> y({B, C});
  for (std::int64_t i = 0; i < B * C; ++i) {
    double acc = max ? -std::numeric_limits<double>::infinity() : 0.0;
    for (std::int64_t p = 0; p < P; ++p) acc = max ? std::max(acc, x[i * P + p]) : acc + x[i * P + p];
    y[i] = max ? acc : acc / static_cast<double>(P);
  }
  return y;
}

inline Tensor<double> linear(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b) {
  const std::int64_t B = x.dim(0), D = x.dim(1), O = w.dim(1);
  Tensor<double> y({B, O});
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::int64_t d = 0; d < D; ++d) acc += x[n * D + d] * w[d * O + o];
      y[n * O + o] = acc;
    }
  return y;
}

inline double softmax_xent(const Tensor<double>& logits, const std::vector<int>& labels) {
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  double total = 0.0;
  for (std::int64_t n = 0; n < B; ++n) {
    double z = 0.0;
    for (std::int64_t k = 0; k < K; ++k) z += std::exp(logits[n * K + k]);
    total += std::log(z) - logits[n * K + labels[static_cast<std::size_t>(n)]];
  }
  return total / static_cast<double>(B);
}

inline double max_rel(const Tensor<double>& a, const Tensor<double>& b) {
  double scale = 0.0, diff = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace oracle
