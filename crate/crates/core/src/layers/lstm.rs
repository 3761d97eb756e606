//! LSTM cell: forward step, cached trace, and hand-derived backward step.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::activations::sigmoid;
use crate::rng::Rng;
use crate::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};

/// How the hidden output is read from the cell state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellVariant {
    /// `h = c ⊙ tanh(o)`.
    #[default]
    PaperLiteral,
    /// `h = o ⊙ tanh(c)`.
    Standard,
}

impl CellVariant {
    pub const ALL: [CellVariant; 2] = [CellVariant::PaperLiteral, CellVariant::Standard];

    pub fn as_str(self) -> &'static str {
        match self {
            CellVariant::PaperLiteral => "paper-literal",
            CellVariant::Standard => "standard",
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" | "paper" | "literal" => Ok(CellVariant::PaperLiteral),
            "standard" => Ok(CellVariant::Standard),
            other => Err(Error::Config(format!("unknown cell variant {other:?}"))),
        }
    }
}

/// Gate weights `W` (hidden×input), recurrent weights `U` (hidden×hidden) and
/// biases for the input (i), forget (f), candidate (z) and output (o) gates.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_z: Tensor,
    pub w_o: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_z: Tensor,
    pub u_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_z: Tensor,
    pub b_o: Tensor,
}

pub const LSTM_PARAM_NAMES: [&str; 12] = [
    "W_i", "W_f", "W_z", "W_o", "U_i", "U_f", "U_z", "U_o", "b_i", "b_f", "b_z", "b_o",
];

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(&[hidden, input]);
        let u = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        LstmParams {
            w_i: w(),
            w_f: w(),
            w_z: w(),
            w_o: w(),
            u_i: u(),
            u_f: u(),
            u_z: u(),
            u_o: u(),
            b_i: b(),
            b_f: b(),
            b_z: b(),
            b_o: b(),
        }
    }

    /// Weights uniform in ±1/√fan_in (fan_in = input for `W`, hidden for `U`); biases zero.
    pub fn init_uniform(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        let (sw, su) = (1.0 / (input as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        for t in [&mut p.w_i, &mut p.w_f, &mut p.w_z, &mut p.w_o] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-sw, sw));
        }
        for t in [&mut p.u_i, &mut p.u_f, &mut p.u_z, &mut p.u_o] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-su, su));
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_i.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_i, &self.w_f, &self.w_z, &self.w_o, &self.u_i, &self.u_f, &self.u_z,
            &self.u_o, &self.b_i, &self.b_f, &self.b_z, &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_i, &mut self.w_f, &mut self.w_z, &mut self.w_o, &mut self.u_i,
            &mut self.u_f, &mut self.u_z, &mut self.u_o, &mut self.b_i, &mut self.b_f,
            &mut self.b_z, &mut self.b_o,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        for (name, t) in LSTM_PARAM_NAMES.iter().zip(self.tensors()) {
            let want: &[usize] = match name.as_bytes()[0] {
                b'W' => &[h, d],
                b'U' => &[h, h],
                _ => &[h],
            };
            if t.shape() != want {
                return Err(Error::dim("lstm params", want, t.shape()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// Everything the backward step needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStepTrace {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub i: Tensor,
    pub f: Tensor,
    pub z: Tensor,
    pub o: Tensor,
    pub c: Tensor,
    pub h: Tensor,
    pub variant: CellVariant,
}

fn gate(w: &Tensor, u: &Tensor, b: &Tensor, x: &[f64], h: &[f64], act: fn(f64) -> f64) -> Tensor {
    let mut pre = b.data().to_vec();
    gemv_acc(w, x, &mut pre);
    gemv_acc(u, h, &mut pre);
    pre.iter_mut().for_each(|v| *v = act(*v));
    Tensor::vector(pre)
}

pub fn lstm_step(
    x: &Tensor,
    prev: &LstmState,
    p: &LstmParams,
    variant: CellVariant,
) -> Result<(LstmState, LstmStepTrace)> {
    let (hid, inp) = (p.hidden_dim(), p.input_dim());
    if x.len() != inp {
        return Err(Error::dim("lstm_step input", &[inp], x.shape()));
    }
    if prev.h.len() != hid || prev.c.len() != hid {
        return Err(Error::dim("lstm_step state", &[hid], prev.h.shape()));
    }
    x.ensure_finite("lstm_step input")?;

    let (xd, hd) = (x.data(), prev.h.data());
    let i = gate(&p.w_i, &p.u_i, &p.b_i, xd, hd, sigmoid);
    let f = gate(&p.w_f, &p.u_f, &p.b_f, xd, hd, sigmoid);
    let z = gate(&p.w_z, &p.u_z, &p.b_z, xd, hd, f64::tanh);
    let o = gate(&p.w_o, &p.u_o, &p.b_o, xd, hd, sigmoid);

    let mut c = vec![0.0; hid];
    let mut h = vec![0.0; hid];
    for k in 0..hid {
        c[k] = z.data()[k] * i.data()[k] + prev.c.data()[k] * f.data()[k];
        h[k] = match variant {
            CellVariant::PaperLiteral => c[k] * o.data()[k].tanh(),
            CellVariant::Standard => o.data()[k] * c[k].tanh(),
        };
    }
    let (c, h) = (Tensor::vector(c), Tensor::vector(h));
    let trace = LstmStepTrace {
        x: x.clone(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        z,
        o,
        c: c.clone(),
        h: h.clone(),
        variant,
    };
    Ok((LstmState { h, c }, trace))
}

/// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) through
/// one step. Parameter gradients are added into `grads`; returns `dx` and the
/// gradients w.r.t. the previous state.
pub fn lstm_step_backward(
    trace: &LstmStepTrace,
    p: &LstmParams,
    variant: CellVariant,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmParams,
) -> Result<(Tensor, LstmState)> {
    if trace.variant != variant {
        return Err(Error::Config(format!(
            "trace recorded with {} but backward asked for {}",
            trace.variant, variant
        )));
    }
    let hid = p.hidden_dim();
    if dh.len() != hid || dc.len() != hid || trace.h.len() != hid {
        return Err(Error::dim("lstm_step_backward", &[hid], &[dh.len(), dc.len()]));
    }
    let (i, f, z, o, c) = (
        trace.i.data(),
        trace.f.data(),
        trace.z.data(),
        trace.o.data(),
        trace.c.data(),
    );
    let c_prev = trace.c_prev.data();

    let mut d_i = vec![0.0; hid];
    let mut d_f = vec![0.0; hid];
    let mut d_z = vec![0.0; hid];
    let mut d_o = vec![0.0; hid];
    let mut dc_prev = vec![0.0; hid];
    for k in 0..hid {
        let (dck, dok) = match variant {
            CellVariant::PaperLiteral => {
                let t = o[k].tanh();
                (dc[k] + dh[k] * t, dh[k] * c[k] * (1.0 - t * t))
            }
            CellVariant::Standard => {
                let t = c[k].tanh();
                (dc[k] + dh[k] * o[k] * (1.0 - t * t), dh[k] * t)
            }
        };
        d_o[k] = dok * o[k] * (1.0 - o[k]);
        d_i[k] = dck * z[k] * i[k] * (1.0 - i[k]);
        d_f[k] = dck * c_prev[k] * f[k] * (1.0 - f[k]);
        d_z[k] = dck * i[k] * (1.0 - z[k] * z[k]);
        dc_prev[k] = dck * f[k];
    }

    let x = trace.x.data();
    let h_prev = trace.h_prev.data();
    let mut dx = vec![0.0; p.input_dim()];
    let mut dh_prev = vec![0.0; hid];
    let blocks = [
        (&d_i, &p.w_i, &p.u_i),
        (&d_f, &p.w_f, &p.u_f),
        (&d_z, &p.w_z, &p.u_z),
        (&d_o, &p.w_o, &p.u_o),
    ];
    for (d, w, u) in blocks {
        gemv_t_acc(w, d, &mut dx);
        gemv_t_acc(u, d, &mut dh_prev);
    }
    let gw = [&mut grads.w_i, &mut grads.w_f, &mut grads.w_z, &mut grads.w_o];
    for (g, d) in gw.into_iter().zip([&d_i, &d_f, &d_z, &d_o]) {
        outer_acc(g, d, x);
    }
    let gu = [&mut grads.u_i, &mut grads.u_f, &mut grads.u_z, &mut grads.u_o];
    for (g, d) in gu.into_iter().zip([&d_i, &d_f, &d_z, &d_o]) {
        outer_acc(g, d, h_prev);
    }
    let gb = [&mut grads.b_i, &mut grads.b_f, &mut grads.b_z, &mut grads.b_o];
    for (g, d) in gb.into_iter().zip([&d_i, &d_f, &d_z, &d_o]) {
        g.data_mut().iter_mut().zip(d).for_each(|(a, b)| *a += b);
    }

    Ok((
        Tensor::vector(dx),
        LstmState {
            h: Tensor::vector(dh_prev),
            c: Tensor::vector(dc_prev),
        },
    ))
}

/// Runs the cell over the rows of `xs` (T×input) from a zero state.
pub fn lstm_forward_sequence(xs: &Tensor, p: &LstmParams, variant: CellVariant) -> Result<Vec<LstmStepTrace>> {
    if xs.shape().len() != 2 || xs.cols() != p.input_dim() {
        return Err(Error::dim("lstm sequence", &[0, p.input_dim()], xs.shape()));
    }
    let mut state = LstmState::zeros(p.hidden_dim());
    let mut traces = Vec::with_capacity(xs.rows());
    for t in 0..xs.rows() {
        let x = Tensor::vector(xs.row(t).to_vec());
        let (next, trace) = lstm_step(&x, &state, p, variant)?;
        state = next;
        traces.push(trace);
    }
    Ok(traces)
}

/// BPTT over a sequence given the external gradient on each step's `h`
/// (`dh_ext`: T×hidden). Returns `dx` for every step (T×input).
pub fn lstm_backward_sequence(
    traces: &[LstmStepTrace],
    p: &LstmParams,
    variant: CellVariant,
    dh_ext: &Tensor,
    grads: &mut LstmParams,
) -> Result<Tensor> {
    let hid = p.hidden_dim();
    if dh_ext.rows() != traces.len() || dh_ext.cols() != hid {
        return Err(Error::dim("lstm sequence backward", &[traces.len(), hid], dh_ext.shape()));
    }
    let mut dx = Tensor::zeros(&[traces.len(), p.input_dim()]);
    let mut carry = LstmState::zeros(hid);
    for (t, trace) in traces.iter().enumerate().rev() {
        let dh: Vec<f64> = dh_ext
            .row(t)
            .iter()
            .zip(carry.h.data())
            .map(|(a, b)| a + b)
            .collect();
        let (dxt, prev) = lstm_step_backward(trace, p, variant, &dh, carry.c.data(), grads)?;
        dx.row_mut(t).copy_from_slice(dxt.data());
        carry = prev;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::params::ParamStore;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, 2);
        let (s, tr) = lstm_step(&Tensor::vector(vec![1.0, -2.0, 0.5]), &LstmState::zeros(2), &p, CellVariant::PaperLiteral).unwrap();
        for g in [&tr.i, &tr.f, &tr.o] {
            assert!(g.data().iter().all(|&v| v == 0.5));
        }
        assert!(tr.z.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().chain(s.h.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::zeros(1, 1);
        let prev = LstmState { h: scalar(0.0), c: scalar(1.0) };
        let (s, _) = lstm_step(&scalar(0.3), &prev, &p, CellVariant::PaperLiteral).unwrap();
        assert_eq!(s.c.data()[0], 0.5);
        assert!((s.h.data()[0] - 0.231_058_578_630_004_87).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_hand_oracle() {
        let mut p = LstmParams::zeros(1, 1);
        for t in p.tensors_mut().into_iter().take(8) {
            t.fill(1.0);
        }
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        let c = 1.0f64.tanh() * s1;
        let (lit, _) = lstm_step(&scalar(1.0), &LstmState::zeros(1), &p, CellVariant::PaperLiteral).unwrap();
        let (std, _) = lstm_step(&scalar(1.0), &LstmState::zeros(1), &p, CellVariant::Standard).unwrap();
        assert!((lit.c.data()[0] - c).abs() < 1e-15);
        assert!((lit.h.data()[0] - c * s1.tanh()).abs() < 1e-15);
        assert!((std.h.data()[0] - s1 * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn saturated_gates_hold_cell() {
        let mut p = LstmParams::init_uniform(2, 3, &mut Rng::new(1));
        p.b_f.fill(40.0);
        p.b_i.fill(-40.0);
        let prev = LstmState {
            h: Tensor::vector(vec![0.1, -0.2, 0.3]),
            c: Tensor::vector(vec![1.5, -0.7, 0.2]),
        };
        let (s, _) = lstm_step(&Tensor::vector(vec![0.4, 0.9]), &prev, &p, CellVariant::Standard).unwrap();
        for (a, b) in s.c.data().iter().zip(prev.c.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn dimension_and_variant_errors() {
        let p = LstmParams::zeros(2, 2);
        assert!(lstm_step(&scalar(1.0), &LstmState::zeros(2), &p, CellVariant::Standard).is_err());
        let (_, tr) = lstm_step(&Tensor::vector(vec![1.0, 1.0]), &LstmState::zeros(2), &p, CellVariant::Standard).unwrap();
        let mut g = LstmParams::zeros(2, 2);
        assert!(lstm_step_backward(&tr, &p, CellVariant::PaperLiteral, &[0.0; 2], &[0.0; 2], &mut g).is_err());
        let nan = Tensor::vector(vec![f64::NAN, 0.0]);
        assert!(lstm_step(&nan, &LstmState::zeros(2), &p, CellVariant::Standard).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = LstmParams::init_uniform(2, 3, &mut Rng::new(4));
        let prev = LstmState { h: Tensor::vector(vec![0.2, 0.1, -0.4]), c: Tensor::vector(vec![0.3, 0.0, 1.0]) };
        let (_, tr) = lstm_step(&Tensor::vector(vec![0.5, -1.0]), &prev, &p, CellVariant::PaperLiteral).unwrap();
        let mut g = LstmParams::zeros(2, 3);
        let (dx, dp) = lstm_step_backward(&tr, &p, CellVariant::PaperLiteral, &[0.0; 3], &[0.0; 3], &mut g).unwrap();
        assert!(dx.data().iter().chain(dp.h.data()).chain(dp.c.data()).all(|&v| v == 0.0));
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    fn to_store(p: &LstmParams) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in LSTM_PARAM_NAMES.iter().zip(p.tensors()) {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    fn from_store(s: &ParamStore, input: usize, hidden: usize) -> LstmParams {
        let mut p = LstmParams::zeros(input, hidden);
        for (n, t) in LSTM_PARAM_NAMES.iter().zip(p.tensors_mut()) {
            *t = s.value(n).unwrap().clone();
        }
        p
    }

    /// Loss = Σ_t w_t · h_t with fixed random weights; exercises BPTT end to end.
    pub(crate) fn sequence_grad_error(seed: u64, input: usize, hidden: usize, steps: usize, variant: CellVariant) -> f64 {
        let mut rng = Rng::new(seed);
        let mut p = LstmParams::init_uniform(input, hidden, &mut rng);
        for b in [&mut p.b_i, &mut p.b_f, &mut p.b_z, &mut p.b_o] {
            b.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
        }
        let xs = Tensor::matrix(steps, input, (0..steps * input).map(|_| rng.normal()).collect()).unwrap();
        let w = Tensor::matrix(steps, hidden, (0..steps * hidden).map(|_| rng.normal()).collect()).unwrap();
        let objective = |p: &LstmParams| -> Result<f64> {
            let tr = lstm_forward_sequence(&xs, p, variant)?;
            Ok(tr.iter().enumerate().map(|(t, s)| s.h.data().iter().zip(w.row(t)).map(|(a, b)| a * b).sum::<f64>()).sum())
        };
        let traces = lstm_forward_sequence(&xs, &p, variant).unwrap();
        let mut g = LstmParams::zeros(input, hidden);
        lstm_backward_sequence(&traces, &p, variant, &w, &mut g).unwrap();
        let mut store = to_store(&p);
        for (n, t) in LSTM_PARAM_NAMES.iter().zip(g.tensors()) {
            store.get_mut(n).unwrap().grad = t.clone();
        }
        check_gradients(|s| objective(&from_store(s, input, hidden)), &store, 1e-5).unwrap()
    }

    #[test]
    fn single_step_gradients() {
        for v in CellVariant::ALL {
            let err = sequence_grad_error(11, 3, 2, 1, v);
            assert!(err < 1e-6, "{v}: {err}");
        }
    }

    #[test]
    fn five_step_gradients() {
        for v in CellVariant::ALL {
            let err = sequence_grad_error(12, 2, 3, 5, v);
            assert!(err < 1e-5, "{v}: {err}");
        }
    }

    mod props {
        use super::*;
        use crate::rng::Rng;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn small_configs_pass_gradcheck(seed in 0u64..1000, input in 1usize..4, hidden in 1usize..4, steps in 1usize..6, std in any::<bool>()) {
                let v = if std { CellVariant::Standard } else { CellVariant::PaperLiteral };
                let err = sequence_grad_error(seed, input, hidden, steps, v);
                prop_assert!(err < 1e-4, "{}", err);
            }

            #[test]
            fn gate_ranges(seed in 0u64..1000, scale in 0.1f64..20.0) {
                let mut rng = Rng::new(seed);
                let p = LstmParams::init_uniform(3, 4, &mut rng);
                let x = Tensor::vector((0..3).map(|_| scale * rng.normal()).collect());
                let prev = LstmState { h: Tensor::vector((0..4).map(|_| rng.normal()).collect()), c: Tensor::vector((0..4).map(|_| rng.normal()).collect()) };
                let (_, tr) = lstm_step(&x, &prev, &p, CellVariant::PaperLiteral).unwrap();
                for g in [&tr.i, &tr.f, &tr.o] {
                    prop_assert!(g.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
                prop_assert!(tr.z.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
            }
        }
    }
}
