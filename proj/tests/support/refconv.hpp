#pragma once

// Direct nested-loop convolution (cross-correlation), used only as an oracle
// for the im2col+matmul kernel. Deliberately simple and slow.

#include <cstddef>
#include <vector>

namespace refconv {

template <class S>
std::vector<S> forward(const std::vector<S>& x, const std::vector<S>& w, const std::vector<S>& b,
                       int N, int Cin, int H, int W, int Cout, int k, int stride, int pad,
                       int outH, int outW) {
  std::vector<S> out(static_cast<std::size_t>(N) * Cout * outH * outW, S(0));
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co)
      for (int oh = 0; oh < outH; ++oh)
        for (int ow = 0; ow < outW; ++ow) {
          S acc = b[co];
          for (int ci = 0; ci < Cin; ++ci)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int ih = oh * stride - pad + ki;
                const int iw = ow * stride - pad + kj;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[((static_cast<std::size_t>(n) * Cin + ci) * H + ih) * W + iw] *
                       w[(static_cast<std::size_t>(co) * Cin + ci) * k * k + ki * k + kj];
              }
          out[((static_cast<std::size_t>(n) * Cout + co) * outH + oh) * outW + ow] = acc;
        }
  return out;
}

}  // namespace refconv
