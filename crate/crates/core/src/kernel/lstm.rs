use crate::error::{Error, Result};
use crate::kernel::layers::sigmoid;
use crate::kernel::rng::Rng;
use crate::kernel::tensor::ParamSlot;

/// Single-layer LSTM cell. Gate rows are stacked `[input, forget, candidate, output]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    /// `[4H, I]`
    pub w_input: ParamSlot,
    /// `[4H, H]`
    pub w_hidden: ParamSlot,
    /// `[4H]`
    pub bias: ParamSlot,
}

/// Activations kept from one forward step for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients flowing out of one backward step.
#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

impl LstmCell {
    /// Glorot weights, zero biases except the forget gate at +1.
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut bias = ParamSlot::zeros(format!("{name}.bias"), &[4 * hidden]);
        bias.value.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_input: ParamSlot::glorot(
                format!("{name}.w_input"),
                &[4 * hidden, input],
                input,
                4 * hidden,
                rng,
            ),
            w_hidden: ParamSlot::glorot(
                format!("{name}.w_hidden"),
                &[4 * hidden, hidden],
                hidden,
                4 * hidden,
                rng,
            ),
            bias,
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_input.value.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.value.shape()[1]
    }

    pub fn forward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
        let (n_in, n_h) = (self.input_size(), self.hidden_size());
        if x.len() != n_in || h_prev.len() != n_h || c_prev.len() != n_h {
            return Err(Error::Dimension(format!(
                "{}: got x {}, h {}, c {}; cell is {n_in}->{n_h}",
                self.w_input.name,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let wx = self.w_input.value.data();
        let wh = self.w_hidden.value.data();
        let b = self.bias.value.data();
        let mut pre = b.to_vec();
        for (r, p) in pre.iter_mut().enumerate() {
            let rx = &wx[r * n_in..(r + 1) * n_in];
            let rh = &wh[r * n_h..(r + 1) * n_h];
            *p += rx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                + rh.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        }
        let i: Vec<f64> = pre[..n_h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[n_h..2 * n_h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * n_h..3 * n_h].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * n_h..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..n_h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n_h).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// One step of backpropagation through time. `dh`/`dc` are the total
    /// upstream gradients w.r.t. this step's outputs.
    pub fn backward(&mut self, cache: &LstmCache, dh: &[f64], dc: &[f64]) -> Result<LstmGrads> {
        let (n_in, n_h) = (self.input_size(), self.hidden_size());
        if dh.len() != n_h || dc.len() != n_h || cache.x.len() != n_in {
            return Err(Error::Dimension(format!(
                "{}: backward got dh {}, dc {}",
                self.w_input.name,
                dh.len(),
                dc.len()
            )));
        }
        let mut d_pre = vec![0.0; 4 * n_h];
        let mut c_prev = vec![0.0; n_h];
        for k in 0..n_h {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
            c_prev[k] = d_c * f;
            d_pre[k] = d_c * g * i * (1.0 - i);
            d_pre[n_h + k] = d_c * cache.c_prev[k] * f * (1.0 - f);
            d_pre[2 * n_h + k] = d_c * i * (1.0 - g * g);
            d_pre[3 * n_h + k] = d_o * o * (1.0 - o);
        }
        let mut x = vec![0.0; n_in];
        let mut h_prev = vec![0.0; n_h];
        {
            let wx = self.w_input.value.data();
            let gwx = self.w_input.grad.data_mut();
            for (r, &d) in d_pre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = r * n_in;
                for j in 0..n_in {
                    gwx[row + j] += d * cache.x[j];
                    x[j] += wx[row + j] * d;
                }
            }
        }
        {
            let wh = self.w_hidden.value.data();
            let gwh = self.w_hidden.grad.data_mut();
            for (r, &d) in d_pre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = r * n_h;
                for j in 0..n_h {
                    gwh[row + j] += d * cache.h_prev[j];
                    h_prev[j] += wh[row + j] * d;
                }
            }
        }
        for (gb, d) in self.bias.grad.data_mut().iter_mut().zip(&d_pre) {
            *gb += d;
        }
        Ok(LstmGrads { x, h_prev, c_prev })
    }

    pub fn params(&self) -> [&ParamSlot; 3] {
        [&self.w_input, &self.w_hidden, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut ParamSlot; 3] {
        [&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// Forward/backward entry points mirroring the other kernels.
pub fn lstm_cell_fwd(
    cell: &LstmCell,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, LstmCache)> {
    cell.forward(x, h_prev, c_prev)
}

pub fn lstm_cell_bwd(
    cell: &mut LstmCell,
    cache: &LstmCache,
    dh: &[f64],
    dc: &[f64],
) -> Result<LstmGrads> {
    cell.backward(cache, dh, dc)
}
