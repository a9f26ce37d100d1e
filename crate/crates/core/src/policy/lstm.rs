//! Single-layer LSTM over confidence vectors with a two-logit head.
//!
//! Gate rows are stacked `[input, forget, candidate, output]`, each block
//! `hidden` rows tall. All matrices are row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Parameter blocks in checkpoint order.
pub const BLOCK_NAMES: [&str; 5] = ["w_ih", "w_hh", "b", "w_out", "b_out"];

const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    k: usize,
    hidden: usize,
    /// `4H x k`
    pub w_ih: Vec<f64>,
    /// `4H x H`
    pub w_hh: Vec<f64>,
    /// `4H`
    pub b: Vec<f64>,
    /// `2 x H`, row 0 scores stop, row 1 continue.
    pub w_out: Vec<f64>,
    /// `2`
    pub b_out: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(k: usize, hidden: usize) -> Self {
        Self {
            k,
            hidden,
            w_ih: vec![0.0; 4 * hidden * k],
            w_hh: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            w_out: vec![0.0; 2 * hidden],
            b_out: vec![0.0; 2],
        }
    }

    /// Uniform in `[-0.08, 0.08]` drawn block by block from `seed`, with the
    /// forget-gate bias set to 1.
    pub fn init(k: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(k, hidden);
        let mut rng = seeded(seed);
        for block in p.blocks_mut() {
            block.iter_mut().for_each(|x| *x = rng.gen_range(-INIT_SCALE..=INIT_SCALE));
        }
        p.b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn blocks(&self) -> [&[f64]; 5] {
        [&self.w_ih, &self.w_hh, &self.b, &self.w_out, &self.b_out]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 5] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.b, &mut self.w_out, &mut self.b_out]
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.k, self.hidden)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn from_flat(k: usize, hidden: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(k, hidden);
        if flat.len() != p.num_params() {
            return Err(Error::input(format!(
                "expected {} parameters for k={k}, hidden={hidden}, got {}",
                p.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for block in p.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl PolicyState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Activations of one forward step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM step followed by the logit head.
pub fn forward(params: &PolicyParams, state: &PolicyState, input: &[f64]) -> Result<([f64; 2], PolicyState)> {
    let (logits, cache) = forward_cached(params, state, input)?;
    let next = PolicyState { h: cache.h.clone(), c: cache.c() };
    Ok((logits, next))
}

impl StepCache {
    fn c(&self) -> Vec<f64> {
        // c = f * c_prev + i * g, recomputed to avoid storing it twice.
        (0..self.h.len()).map(|j| self.f[j] * self.c_prev[j] + self.i[j] * self.g[j]).collect()
    }
}

pub fn forward_cached(params: &PolicyParams, state: &PolicyState, input: &[f64]) -> Result<([f64; 2], StepCache)> {
    let (k, hd) = (params.k, params.hidden);
    if input.len() != k {
        return Err(Error::input(format!("policy input has length {}, expected {k}", input.len())));
    }
    if state.h.len() != hd || state.c.len() != hd {
        return Err(Error::input(format!("policy state width differs from hidden size {hd}")));
    }
    let mut pre = params.b.clone();
    for (r, z) in pre.iter_mut().enumerate() {
        let wi = &params.w_ih[r * k..(r + 1) * k];
        let wh = &params.w_hh[r * hd..(r + 1) * hd];
        *z += wi.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        *z += wh.iter().zip(&state.h).map(|(w, h)| w * h).sum::<f64>();
    }
    let i: Vec<f64> = pre[..hd].iter().map(|&z| sigmoid(z)).collect();
    let f: Vec<f64> = pre[hd..2 * hd].iter().map(|&z| sigmoid(z)).collect();
    let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|&z| z.tanh()).collect();
    let o: Vec<f64> = pre[3 * hd..].iter().map(|&z| sigmoid(z)).collect();
    let c: Vec<f64> = (0..hd).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|x| x.tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|j| o[j] * tanh_c[j]).collect();
    let mut logits = [params.b_out[0], params.b_out[1]];
    for (a, logit) in logits.iter_mut().enumerate() {
        *logit += params.w_out[a * hd..(a + 1) * hd].iter().zip(&h).map(|(w, h)| w * h).sum::<f64>();
    }
    let cache = StepCache { x: input.to_vec(), h_prev: state.h.clone(), c_prev: state.c.clone(), i, f, g, o, tanh_c, h };
    Ok((logits, cache))
}

/// Runs a whole sequence from a zero state, keeping every step's cache.
pub fn unroll(params: &PolicyParams, inputs: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, Vec<StepCache>)> {
    let mut state = PolicyState::zeros(params.hidden);
    let mut logits = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (l, cache) = forward_cached(params, &state, x)?;
        state = PolicyState { h: cache.h.clone(), c: cache.c() };
        logits.push(l);
        caches.push(cache);
    }
    Ok((logits, caches))
}

/// Backpropagation through time. `dlogits[t]` is the loss gradient with
/// respect to step `t`'s logits; gradients are accumulated into `grads`.
pub fn backward(params: &PolicyParams, caches: &[StepCache], dlogits: &[[f64; 2]], grads: &mut PolicyParams) {
    let (k, hd) = (params.k, params.hidden);
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for (cache, dl) in caches.iter().zip(dlogits).rev() {
        let mut dh = dh_next.clone();
        for (a, &d) in dl.iter().enumerate() {
            grads.b_out[a] += d;
            let row = &params.w_out[a * hd..(a + 1) * hd];
            let grow = &mut grads.w_out[a * hd..(a + 1) * hd];
            for j in 0..hd {
                grow[j] += d * cache.h[j];
                dh[j] += d * row[j];
            }
        }
        for j in 0..hd {
            let (i, f, g, o, tc) = (cache.i[j], cache.f[j], cache.g[j], cache.o[j], cache.tanh_c[j]);
            let d_o = dh[j] * tc;
            let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * g * i * (1.0 - i);
            da[hd + j] = dc * cache.c_prev[j] * f * (1.0 - f);
            da[2 * hd + j] = dc * i * (1.0 - g * g);
            da[3 * hd + j] = d_o * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        for (r, &d) in da.iter().enumerate() {
            grads.b[r] += d;
            let gi = &mut grads.w_ih[r * k..(r + 1) * k];
            gi.iter_mut().zip(&cache.x).for_each(|(g, x)| *g += d * x);
            let gh = &mut grads.w_hh[r * hd..(r + 1) * hd];
            gh.iter_mut().zip(&cache.h_prev).for_each(|(g, h)| *g += d * h);
            let wh = &params.w_hh[r * hd..(r + 1) * hd];
            dh_next.iter_mut().zip(wh).for_each(|(dh, w)| *dh += d * w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_is_indifferent() {
        let p = PolicyParams::zeros(10, 8);
        let (logits, _) = forward(&p, &PolicyState::zeros(8), &[0.3; 10]).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
    }

    #[test]
    fn zero_input_path_depends_on_biases_only() {
        let mut p = PolicyParams::init(4, 3, 1);
        p.w_ih.iter_mut().for_each(|w| *w = 0.0);
        let (a, _) = forward(&p, &PolicyState::zeros(3), &[0.0; 4]).unwrap();
        p.w_hh.iter_mut().for_each(|w| *w = 7.0);
        let (b, _) = forward(&p, &PolicyState::zeros(3), &[0.9; 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = PolicyParams::zeros(10, 8);
        assert!(forward(&p, &PolicyState::zeros(8), &[0.0; 9]).is_err());
        assert!(forward(&p, &PolicyState::zeros(7), &[0.0; 10]).is_err());
    }

    #[test]
    fn init_is_bounded_with_forget_bias() {
        let p = PolicyParams::init(10, 64, 42);
        assert!(p.w_ih.iter().chain(&p.w_hh).all(|w| w.abs() <= INIT_SCALE));
        assert!(p.b[64..128].iter().all(|&b| b == 1.0));
        assert_eq!(p, PolicyParams::init(10, 64, 42));
        assert_eq!(p.num_params(), 4 * 64 * (10 + 64 + 1) + 2 * 64 + 2);
    }

    #[test]
    fn flat_round_trip() {
        let p = PolicyParams::init(3, 5, 9);
        assert_eq!(PolicyParams::from_flat(3, 5, &p.flatten()).unwrap(), p);
        assert!(PolicyParams::from_flat(3, 5, &[0.0; 4]).is_err());
    }

    #[test]
    fn golden_logits() {
        // Recorded once from this implementation, then frozen.
        let p = PolicyParams::init(10, 64, 2024);
        let input = [0.9, 0.5, 0.25, 0.125, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0];
        let (l1, s1) = forward(&p, &PolicyState::zeros(64), &input).unwrap();
        let (l2, _) = forward(&p, &s1, &input).unwrap();
        assert_eq!(l1.map(f64::to_bits), GOLDEN[0]);
        assert_eq!(l2.map(f64::to_bits), GOLDEN[1]);
    }

    const GOLDEN: [[u64; 2]; 2] = [
        [13810212705866796025, 4581686802802120836],
        [13810722085431341006, 4581897219338115291],
    ];
}
