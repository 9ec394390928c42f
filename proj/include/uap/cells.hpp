#pragma once

// Fused recurrent steps: one tape node per time step, with the gate
// activations kept for the backward rule. models::forward uses these;
// forward_composed builds the same cells from primitive ops and serves as
// the reference route in tests.

#include "uap/ndgrad.hpp"

namespace uap::cells {

// state = [h | c] as [batch, 2H]; x [batch, N]; w_ih [N, 4H]; w_hh [H, 4H];
// bias [4H] (b_ih + b_hh). Gate order i|f|g|o. Returns the next state.
nd::Tensor lstm_step(nd::Tape& tape, nd::Tensor state, nd::Tensor x, nd::Tensor w_ih,
                     nd::Tensor w_hh, nd::Tensor bias);

// h [batch, H]; x [batch, N]; w_ih [N, 3H]; w_hh [H, 3H]; biases [3H].
// Gate order r|z|n; n = tanh(x W_in + b_in + r * (h W_hn + b_hn)).
nd::Tensor gru_step(nd::Tape& tape, nd::Tensor h, nd::Tensor x, nd::Tensor w_ih,
                    nd::Tensor w_hh, nd::Tensor b_ih, nd::Tensor b_hh);

}  // namespace uap::cells
