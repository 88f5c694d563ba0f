//! Recurrent cells shared by the encoders and the pre-training decoder.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoders::Architecture;
use crate::error::{Error, Result};

/// Weights are drawn from U(-INIT_RANGE, INIT_RANGE); biases start at zero.
pub const INIT_RANGE: f64 = 0.05;

fn weight(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
    store.add(name, Tensor::uniform(&[rows, cols], INIT_RANGE, rng))
}

fn bias(store: &mut ParamStore, name: String, len: usize) -> ParamId {
    store.add(name, Tensor::zeros(&[len]))
}

/// State carried between steps: the visible state plus any memory
/// (RCNN accumulators c^(1..n), LSTM cell).
#[derive(Clone, Debug)]
pub struct CellState {
    pub h: Var,
    pub mem: Vec<Var>,
}

/// Gated non-consecutive convolution with adaptive decay.
///
/// ```text
/// lambda_t = sigmoid(W_g x_t + U_g h_{t-1} + b_g)
/// c1_t     = lambda_t * c1_{t-1} + (1 - lambda_t) * (W_1 x_t)
/// ck_t     = lambda_t * ck_{t-1} + (1 - lambda_t) * (c(k-1)_{t-1} + W_k x_t)
/// h_t      = tanh(cn_t + b)
/// ```
#[derive(Clone, Debug)]
pub struct RcnnCell {
    pub hidden: usize,
    pub scalar_decay: bool,
    filters: Vec<ParamId>,
    w_gate: ParamId,
    u_gate: ParamId,
    b_gate: ParamId,
    bias: ParamId,
}

impl RcnnCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        width: usize,
        scalar_decay: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let filters = (1..=width)
            .map(|k| weight(store, format!("{prefix}.w{k}"), hidden, input, rng))
            .collect();
        let gate_rows = if scalar_decay { 1 } else { hidden };
        RcnnCell {
            hidden,
            scalar_decay,
            filters,
            w_gate: weight(store, format!("{prefix}.w_gate"), gate_rows, input, rng),
            u_gate: weight(store, format!("{prefix}.u_gate"), gate_rows, hidden, rng),
            b_gate: bias(store, format!("{prefix}.b_gate"), gate_rows),
            bias: bias(store, format!("{prefix}.b"), hidden),
        }
    }

    pub fn width(&self) -> usize {
        self.filters.len()
    }

    /// The decay gate lambda_t, expanded to `hidden` components.
    fn gate(&self, tape: &mut Tape, p: &[Var], x: Var, h_prev: Var) -> Result<Var> {
        let wx = tape.matvec(p[self.w_gate.0], x)?;
        let uh = tape.matvec(p[self.u_gate.0], h_prev)?;
        let pre = tape.add_n(&[wx, uh, p[self.b_gate.0]])?;
        let lam = tape.sigmoid(pre)?;
        if self.scalar_decay {
            tape.broadcast(lam, self.hidden)
        } else {
            Ok(lam)
        }
    }

    /// One recurrence step; returns the new state and lambda_t.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &[Var],
        x: Var,
        state: &CellState,
        gate_override: Option<f64>,
    ) -> Result<(CellState, Var)> {
        let lam = match gate_override {
            Some(g) => tape.constant(Tensor::vector(vec![g; self.hidden]))?,
            None => self.gate(tape, p, x, state.h)?,
        };
        let keep = tape.one_minus(lam)?;
        let mut mem = Vec::with_capacity(self.filters.len());
        for (k, w) in self.filters.iter().enumerate() {
            let wx = tape.matvec(p[w.0], x)?;
            let injected = if k == 0 { wx } else { tape.add(state.mem[k - 1], wx)? };
            let decayed = tape.mul(lam, state.mem[k])?;
            let fresh = tape.mul(keep, injected)?;
            mem.push(tape.add(decayed, fresh)?);
        }
        let last = *mem.last().expect("width >= 1");
        let pre = tape.add(last, p[self.bias.0])?;
        let h = tape.tanh(pre)?;
        Ok((CellState { h, mem }, lam))
    }
}

#[derive(Clone, Debug)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl Gate {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        tag: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Gate {
            w: weight(store, format!("{prefix}.w_{tag}"), hidden, input, rng),
            u: weight(store, format!("{prefix}.u_{tag}"), hidden, hidden, rng),
            b: bias(store, format!("{prefix}.b_{tag}"), hidden),
        }
    }

    fn pre(&self, tape: &mut Tape, p: &[Var], x: Var, h: Var) -> Result<Var> {
        let wx = tape.matvec(p[self.w.0], x)?;
        let uh = tape.matvec(p[self.u.0], h)?;
        tape.add_n(&[wx, uh, p[self.b.0]])
    }
}

/// Standard LSTM with input, forget and output gates.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub hidden: usize,
    input_gate: Gate,
    forget_gate: Gate,
    output_gate: Gate,
    candidate: Gate,
}

impl LstmCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmCell {
            hidden,
            input_gate: Gate::register(store, prefix, "i", input, hidden, rng),
            forget_gate: Gate::register(store, prefix, "f", input, hidden, rng),
            output_gate: Gate::register(store, prefix, "o", input, hidden, rng),
            candidate: Gate::register(store, prefix, "z", input, hidden, rng),
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &[Var], x: Var, state: &CellState) -> Result<CellState> {
        let h_prev = state.h;
        let i_pre = self.input_gate.pre(tape, p, x, h_prev)?;
        let i = tape.sigmoid(i_pre)?;
        let f_pre = self.forget_gate.pre(tape, p, x, h_prev)?;
        let f = tape.sigmoid(f_pre)?;
        let o_pre = self.output_gate.pre(tape, p, x, h_prev)?;
        let o = tape.sigmoid(o_pre)?;
        let z_pre = self.candidate.pre(tape, p, x, h_prev)?;
        let z = tape.tanh(z_pre)?;
        let iz = tape.mul(i, z)?;
        let fc = tape.mul(f, state.mem[0])?;
        let c = tape.add(iz, fc)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(CellState { h, mem: vec![c] })
    }
}

/// GRU with input gate i and reset gate r.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub hidden: usize,
    input_gate: Gate,
    reset_gate: Gate,
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl GruCell {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruCell {
            hidden,
            input_gate: Gate::register(store, prefix, "i", input, hidden, rng),
            reset_gate: Gate::register(store, prefix, "r", input, hidden, rng),
            w: weight(store, format!("{prefix}.w_c"), hidden, input, rng),
            u: weight(store, format!("{prefix}.u_c"), hidden, hidden, rng),
            b: bias(store, format!("{prefix}.b_c"), hidden),
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &[Var], x: Var, state: &CellState) -> Result<CellState> {
        let h_prev = state.h;
        let i_pre = self.input_gate.pre(tape, p, x, h_prev)?;
        let i = tape.sigmoid(i_pre)?;
        let r_pre = self.reset_gate.pre(tape, p, x, h_prev)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h_prev)?;
        let wx = tape.matvec(p[self.w.0], x)?;
        let urh = tape.matvec(p[self.u.0], rh)?;
        let c_pre = tape.add_n(&[wx, urh, p[self.b.0]])?;
        let c = tape.tanh(c_pre)?;
        let ic = tape.mul(i, c)?;
        let keep = tape.one_minus(i)?;
        let kh = tape.mul(keep, h_prev)?;
        let h = tape.add(ic, kh)?;
        Ok(CellState { h, mem: Vec::new() })
    }
}

/// Any recurrent cell.
#[derive(Clone, Debug)]
pub enum Cell {
    Rcnn(RcnnCell),
    Lstm(LstmCell),
    Gru(GruCell),
}

impl Cell {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        arch: Architecture,
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        width: usize,
        scalar_decay: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match arch {
            Architecture::Rcnn => Cell::Rcnn(RcnnCell::register(
                store,
                prefix,
                input,
                hidden,
                width,
                scalar_decay,
                rng,
            )),
            Architecture::Lstm => Cell::Lstm(LstmCell::register(store, prefix, input, hidden, rng)),
            Architecture::Gru => Cell::Gru(GruCell::register(store, prefix, input, hidden, rng)),
            Architecture::Cnn => {
                return Err(Error::InvalidArgument("a CNN has no recurrent cell".into()));
            }
        })
    }

    pub fn hidden(&self) -> usize {
        match self {
            Cell::Rcnn(c) => c.hidden,
            Cell::Lstm(c) => c.hidden,
            Cell::Gru(c) => c.hidden,
        }
    }

    /// Zero memory with visible state `h0` (zeros when absent).
    pub fn initial_state(&self, tape: &mut Tape, h0: Option<Var>) -> CellState {
        let d = self.hidden();
        let h = h0.unwrap_or_else(|| tape.zeros(d));
        let mem = match self {
            Cell::Rcnn(c) => (0..c.width()).map(|_| tape.zeros(d)).collect(),
            Cell::Lstm(_) => vec![tape.zeros(d)],
            Cell::Gru(_) => Vec::new(),
        };
        CellState { h, mem }
    }

    /// Advances one token. The second value is lambda_t for RCNN cells.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &[Var],
        x: Var,
        state: &CellState,
        gate_override: Option<f64>,
    ) -> Result<(CellState, Option<Var>)> {
        match self {
            Cell::Rcnn(c) => c.step(tape, p, x, state, gate_override).map(|(s, l)| (s, Some(l))),
            Cell::Lstm(c) => c.step(tape, p, x, state).map(|s| (s, None)),
            Cell::Gru(c) => c.step(tape, p, x, state).map(|s| (s, None)),
        }
    }
}

/// Temporal convolution over windows of `width` consecutive tokens.
///
/// Positions before the first full window use the available tokens only:
/// `c_t = sum_k W_k x_{t-n+k}` over the k with `t-n+k >= 1`.
#[derive(Clone, Debug)]
pub struct CnnLayer {
    filters: Vec<ParamId>,
    bias: ParamId,
}

impl CnnLayer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        CnnLayer {
            filters: (1..=width)
                .map(|k| weight(store, format!("{prefix}.w{k}"), hidden, input, rng))
                .collect(),
            bias: bias(store, format!("{prefix}.b"), hidden),
        }
    }

    pub fn width(&self) -> usize {
        self.filters.len()
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], xs: &[Var]) -> Result<Vec<Var>> {
        let n = self.filters.len();
        let mut out = Vec::with_capacity(xs.len());
        for t in 0..xs.len() {
            let mut terms = Vec::with_capacity(n);
            for (k, w) in self.filters.iter().enumerate() {
                // filter k (0-based) sees token t - (n - 1) + k
                let pos = t as isize - (n as isize - 1) + k as isize;
                if pos >= 0 {
                    terms.push(tape.matvec(p[w.0], xs[pos as usize])?);
                }
            }
            terms.push(p[self.bias.0]);
            let pre = tape.add_n(&terms)?;
            out.push(tape.tanh(pre)?);
        }
        Ok(out)
    }
}
