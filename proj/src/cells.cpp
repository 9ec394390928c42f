#include "uap/cells.hpp"

#include <cmath>
#include <string>

#include "uap/error.hpp"

namespace uap::cells {

using nd::Array;
using nd::Tape;
using nd::Tensor;
namespace blas = nd::blas;

namespace {

void expect_shape(const Tensor& t, const nd::Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw DimensionError(std::string(what) + " has shape " + nd::to_string(t.shape()) +
                         ", expected " + nd::to_string(shape));
  }
}

void add_col_sums(std::size_t rows, std::size_t cols, const double* src, std::span<double> dst) {
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[b * cols + j];
  }
}

}  // namespace

Tensor lstm_step(Tape& tape, Tensor state, Tensor x, Tensor w_ih, Tensor w_hh, Tensor bias) {
  if (x.shape().size() != 2 || w_hh.shape().size() != 2) {
    throw DimensionError("lstm_step: x and w_hh must be 2-D");
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const std::size_t h = w_hh.shape()[0];
  const std::size_t g4 = 4 * h;
  expect_shape(state, {batch, 2 * h}, "lstm_step: state");
  expect_shape(w_ih, {n, g4}, "lstm_step: w_ih");
  expect_shape(w_hh, {h, g4}, "lstm_step: w_hh");
  expect_shape(bias, {g4}, "lstm_step: bias");

  const double* s = state.data().data();
  std::vector<double> h_prev(batch * h);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(s + b * 2 * h, h, h_prev.begin() + static_cast<std::ptrdiff_t>(b * h));
  }

  // Pre-activations; input and recurrent products are summed separately.
  std::vector<double> act(batch * g4, 0.0);
  std::vector<double> rec(batch * g4, 0.0);
  blas::gemm(batch, n, g4, x.data().data(), w_ih.data().data(), act.data());
  blas::gemm(batch, h, g4, h_prev.data(), w_hh.data().data(), rec.data());
  const double* bv = bias.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* a = act.data() + b * g4;
    const double* rc = rec.data() + b * g4;
    for (std::size_t j = 0; j < g4; ++j) a[j] = (a[j] + rc[j]) + bv[j];
    blas::vsigmoid(a, 2 * h);
    blas::vtanh(a + 2 * h, h);
    blas::vsigmoid(a + 3 * h, h);
  }

  Array out = Array::zeros({batch, 2 * h});
  std::vector<double> tanh_c(batch * h);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* a = act.data() + b * g4;
    double* tc = tanh_c.data() + b * h;
    double* orow = out.data.data() + b * 2 * h;
    const double* c_prev = s + b * 2 * h + h;
    for (std::size_t j = 0; j < h; ++j) {
      const double c = a[h + j] * c_prev[j] + a[j] * a[2 * h + j];
      orow[h + j] = c;
      tc[j] = c;
    }
    blas::vtanh(tc, h);
    for (std::size_t j = 0; j < h; ++j) orow[j] = a[3 * h + j] * tc[j];
  }

  const Tensor in[] = {state, x, w_ih, w_hh, bias};
  return tape.record(
      std::move(out), in,
      [=, act = std::move(act), tanh_c = std::move(tanh_c), h_prev = std::move(h_prev)](
          Tape& t, std::span<const double> g) {
        const auto sv = state.data();
        std::vector<double> dz(batch * g4);
        std::vector<double> dc_prev(batch * h);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* a = act.data() + b * g4;
          double* d = dz.data() + b * g4;
          for (std::size_t j = 0; j < h; ++j) {
            const double i = a[j], f = a[h + j], gg = a[2 * h + j], o = a[3 * h + j];
            const double tc = tanh_c[b * h + j];
            const double dh = g[b * 2 * h + j];
            const double dc = g[b * 2 * h + h + j] + dh * o * (1.0 - tc * tc);
            d[j] = dc * gg * i * (1.0 - i);
            d[h + j] = dc * sv[b * 2 * h + h + j] * f * (1.0 - f);
            d[2 * h + j] = dc * i * (1.0 - gg * gg);
            d[3 * h + j] = dh * tc * o * (1.0 - o);
            dc_prev[b * h + j] = dc * f;
          }
        }
        if (auto ds = t.grad_buffer(state); !ds.empty()) {
          std::vector<double> dh_prev(batch * h, 0.0);
          blas::gemm_bt(batch, h, g4, dz.data(), w_hh.data().data(), dh_prev.data());
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < h; ++j) {
              ds[b * 2 * h + j] += dh_prev[b * h + j];
              ds[b * 2 * h + h + j] += dc_prev[b * h + j];
            }
          }
        }
        if (auto dx = t.grad_buffer(x); !dx.empty()) {
          blas::gemm_bt(batch, n, g4, dz.data(), w_ih.data().data(), dx.data());
        }
        if (auto dw = t.grad_buffer(w_ih); !dw.empty()) {
          blas::gemm_at(batch, n, g4, x.data().data(), dz.data(), dw.data());
        }
        if (auto dw = t.grad_buffer(w_hh); !dw.empty()) {
          blas::gemm_at(batch, h, g4, h_prev.data(), dz.data(), dw.data());
        }
        if (auto db = t.grad_buffer(bias); !db.empty()) add_col_sums(batch, g4, dz.data(), db);
      });
}

Tensor gru_step(Tape& tape, Tensor hid, Tensor x, Tensor w_ih, Tensor w_hh, Tensor b_ih,
                Tensor b_hh) {
  if (x.shape().size() != 2 || w_hh.shape().size() != 2) {
    throw DimensionError("gru_step: x and w_hh must be 2-D");
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const std::size_t h = w_hh.shape()[0];
  const std::size_t g3 = 3 * h;
  expect_shape(hid, {batch, h}, "gru_step: h");
  expect_shape(w_ih, {n, g3}, "gru_step: w_ih");
  expect_shape(w_hh, {h, g3}, "gru_step: w_hh");
  expect_shape(b_ih, {g3}, "gru_step: b_ih");
  expect_shape(b_hh, {g3}, "gru_step: b_hh");

  std::vector<double> gi(batch * g3, 0.0);
  std::vector<double> gh(batch * g3, 0.0);
  blas::gemm(batch, n, g3, x.data().data(), w_ih.data().data(), gi.data());
  blas::gemm(batch, h, g3, hid.data().data(), w_hh.data().data(), gh.data());
  const double* bi = b_ih.data().data();
  const double* bh = b_hh.data().data();
  const double* hv = hid.data().data();

  // saved = [r | z | n | gh_n] per row
  std::vector<double> saved(batch * 4 * h);
  Array out = Array::zeros({batch, h});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* gir = gi.data() + b * g3;
    const double* ghr = gh.data() + b * g3;
    double* sv = saved.data() + b * 4 * h;
    for (std::size_t j = 0; j < 2 * h; ++j) sv[j] = (gir[j] + bi[j]) + (ghr[j] + bh[j]);
    blas::vsigmoid(sv, 2 * h);
    for (std::size_t j = 0; j < h; ++j) {
      const double ghn = ghr[2 * h + j] + bh[2 * h + j];
      sv[3 * h + j] = ghn;
      sv[2 * h + j] = (gir[2 * h + j] + bi[2 * h + j]) + sv[j] * ghn;
    }
    blas::vtanh(sv + 2 * h, h);
    const double* z = sv + h;
    const double* nn = sv + 2 * h;
    for (std::size_t j = 0; j < h; ++j) {
      out.data[b * h + j] = nn[j] + z[j] * (hv[b * h + j] - nn[j]);
    }
  }

  const Tensor in[] = {hid, x, w_ih, w_hh, b_ih, b_hh};
  return tape.record(
      std::move(out), in, [=, saved = std::move(saved)](Tape& t, std::span<const double> g) {
        const auto hvv = hid.data();
        std::vector<double> dgi(batch * g3);
        std::vector<double> dgh(batch * g3);
        std::vector<double> dh_direct(batch * h);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* sv = saved.data() + b * 4 * h;
          double* di = dgi.data() + b * g3;
          double* dr = dgh.data() + b * g3;
          for (std::size_t j = 0; j < h; ++j) {
            const double r = sv[j], z = sv[h + j], nn = sv[2 * h + j], ghn = sv[3 * h + j];
            const double go = g[b * h + j];
            const double dn = go * (1.0 - z);
            const double dzv = go * (hvv[b * h + j] - nn);
            dh_direct[b * h + j] = go * z;
            const double dan = dn * (1.0 - nn * nn);
            const double dar = dan * ghn * r * (1.0 - r);
            const double daz = dzv * z * (1.0 - z);
            di[j] = dar;
            di[h + j] = daz;
            di[2 * h + j] = dan;
            dr[j] = dar;
            dr[h + j] = daz;
            dr[2 * h + j] = dan * r;
          }
        }
        if (auto dh = t.grad_buffer(hid); !dh.empty()) {
          for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_direct[i];
          blas::gemm_bt(batch, h, g3, dgh.data(), w_hh.data().data(), dh.data());
        }
        if (auto dx = t.grad_buffer(x); !dx.empty()) {
          blas::gemm_bt(batch, n, g3, dgi.data(), w_ih.data().data(), dx.data());
        }
        if (auto dw = t.grad_buffer(w_ih); !dw.empty()) {
          blas::gemm_at(batch, n, g3, x.data().data(), dgi.data(), dw.data());
        }
        if (auto dw = t.grad_buffer(w_hh); !dw.empty()) {
          blas::gemm_at(batch, h, g3, hvv.data(), dgh.data(), dw.data());
        }
        if (auto db = t.grad_buffer(b_ih); !db.empty()) add_col_sums(batch, g3, dgi.data(), db);
        if (auto db = t.grad_buffer(b_hh); !db.empty()) add_col_sums(batch, g3, dgh.data(), db);
      });
}

}  // namespace uap::cells
