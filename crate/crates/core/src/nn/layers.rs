use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor2, Var};
use crate::error::{Error, Result};

/// Affine map `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.add_xavier(format!("{name}.w"), in_dim, out_dim, rng)?;
        let bias = store.add_zeros(format!("{name}.b"), 1, out_dim)?;
        Ok(Self { name: name.to_string(), weight, bias, in_dim, out_dim })
    }

    /// Looks up an existing layer by name.
    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let lookup = |suffix: &str| {
            store
                .id(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Input(format!("missing parameter {name}.{suffix}")))
        };
        let weight = lookup("w")?;
        let bias = lookup("b")?;
        let (in_dim, out_dim) = store.value(weight).shape();
        Ok(Self { name: name.to_string(), weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (_, cols) = tape.shape(x);
        if cols != self.in_dim {
            return Err(Error::shape(
                &self.name,
                format!("input has {cols} columns, layer expects {}", self.in_dim),
            ));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        Ok(tape.add_bias(xw, b))
    }
}

/// Stack of affine layers with `tanh` between them and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub name: String,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`; layers are named `{prefix}.l{k}`.
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::shape(prefix, "an MLP needs at least input and output sizes"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, rng, &format!("{prefix}.l{k}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { name: prefix.to_string(), layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if k + 1 < self.layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Sets the final layer to zero so the MLP outputs exactly 0.
    pub fn zero_output(&self, store: &mut ParamStore) {
        let last = self.layers.last().unwrap();
        store.value_mut(last.weight).fill(0.0);
        store.value_mut(last.bias).fill(0.0);
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// n  = tanh(x·Wn + (r⊙h)·Un + bn)
/// h' = (1 − z)⊙n + z⊙h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub name: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let mut w = |g: &str| store.add_xavier(format!("{prefix}.w{g}"), input_dim, hidden_dim, rng);
        let (wz, wr, wn) = (w("z")?, w("r")?, w("n")?);
        let mut u = |g: &str| store.add_xavier(format!("{prefix}.u{g}"), hidden_dim, hidden_dim, rng);
        let (uz, ur, un) = (u("z")?, u("r")?, u("n")?);
        let mut b = |g: &str| store.add_zeros(format!("{prefix}.b{g}"), 1, hidden_dim);
        let (bz, br, bn) = (b("z")?, b("r")?, b("n")?);
        Ok(Self {
            name: prefix.to_string(),
            input_dim,
            hidden_dim,
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
        })
    }

    /// Update-gate bias, exposed for tests that saturate the gate.
    pub fn update_bias(&self) -> ParamId {
        self.bz
    }

    pub fn biases(&self) -> [ParamId; 3] {
        [self.bz, self.br, self.bn]
    }

    fn gate(&self, tape: &mut Tape, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Var {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        tape.add_bias(s, b)
    }

    pub fn step(&self, tape: &mut Tape, h: Var, x: Var) -> Result<Var> {
        let (hr, hc) = tape.shape(h);
        let (xr, xc) = tape.shape(x);
        if hc != self.hidden_dim || xc != self.input_dim || hr != xr {
            return Err(Error::shape(
                &self.name,
                format!(
                    "hidden {hr}×{hc} and input {xr}×{xc}, cell expects N×{} and N×{}",
                    self.hidden_dim, self.input_dim
                ),
            ));
        }
        let z_pre = self.gate(tape, x, h, self.wz, self.uz, self.bz);
        let z = tape.sigmoid(z_pre);
        let r_pre = self.gate(tape, x, h, self.wr, self.ur, self.br);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let n_pre = self.gate(tape, x, rh, self.wn, self.un, self.bn);
        let n = tape.tanh(n_pre);
        let keep = tape.mul(z, h);
        let one_minus_z = tape.one_minus(z);
        let fresh = tape.mul(one_minus_z, n);
        Ok(tape.add(fresh, keep))
    }
}

/// Mean squared error against a constant target.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Tensor2) -> Var {
    let count = target.len().max(1) as f64;
    let se = tape.squared_error(pred, target);
    tape.scale(se, 1.0 / count)
}
