//! Flat parameter vectors, a dense layer, a two-layer tanh perceptron with an
//! analytic backward pass, and an Adam optimizer.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::textio;

/// A named `rows x cols` block inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in used for initialization scale.
    pub fan_in: usize,
}

impl Shape {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, fan_in: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            fan_in,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub shapes: Vec<Shape>,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl ParamSet {
    /// Uniform in `[-s, s]`, `s = 1/sqrt(fan_in)`, per block.
    pub fn init(shapes: Vec<Shape>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(shapes.iter().map(Shape::len).sum());
        for s in &shapes {
            let scale = 1.0 / (s.fan_in.max(1) as f64).sqrt();
            values.extend((0..s.len()).map(|_| rng.random_range(-scale..=scale)));
        }
        Self {
            shapes,
            values,
            seed,
        }
    }

    pub fn zeros(shapes: Vec<Shape>) -> Self {
        let n = shapes.iter().map(Shape::len).sum();
        Self {
            shapes,
            values: vec![0.0; n],
            seed: 0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shapes: self.shapes.clone(),
            values: vec![0.0; self.values.len()],
            seed: self.seed,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Offset range of the named block.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for s in &self.shapes {
            if s.name == name {
                return Some(offset..offset + s.len());
            }
            offset += s.len();
        }
        None
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.block_range(name).map(|r| &self.values[r])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.block_range(name).map(move |r| &mut self.values[r])
    }

    pub fn check(&self) -> Result<()> {
        let declared: usize = self.shapes.iter().map(Shape::len).sum();
        if declared != self.values.len() {
            return Err(Error::Invariant(format!(
                "parameter vector has {} values, shapes declare {declared}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Order-sensitive FNV-1a over the raw bits; equal iff bit-identical
    /// (up to hash collisions).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }
}

/// Dense layer `y = W x + b`, `W` stored row-major `out x in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn param_len(&self) -> usize {
        self.output * self.input + self.output
    }

    pub fn shapes(&self, prefix: &str) -> Vec<Shape> {
        vec![
            Shape::new(
                format!("{prefix}.weight"),
                self.output,
                self.input,
                self.input,
            ),
            Shape::new(format!("{prefix}.bias"), self.output, 1, self.input),
        ]
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.output * self.input);
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients of `grad_out · y` into `grad_params`
    /// and returns the gradient with respect to `x`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Vec<f64> {
        let split = self.output * self.input;
        let w = &params[..split];
        let (gw, gb) = grad_params.split_at_mut(split);
        let mut gx = vec![0.0; self.input];
        for o in 0..self.output {
            let g = grad_out[o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = &w[o * self.input..(o + 1) * self.input];
            let grow = &mut gw[o * self.input..(o + 1) * self.input];
            for i in 0..self.input {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
        }
        gx
    }
}

/// Two-layer perceptron `W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Intermediates kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
        }
    }

    fn first(&self) -> Linear {
        Linear {
            input: self.input,
            output: self.hidden,
        }
    }

    fn second(&self) -> Linear {
        Linear {
            input: self.hidden,
            output: self.output,
        }
    }

    pub fn param_len(&self) -> usize {
        self.first().param_len() + self.second().param_len()
    }

    pub fn shapes(&self, prefix: &str) -> Vec<Shape> {
        let mut s = self.first().shapes(&format!("{prefix}.l1"));
        s.extend(self.second().shapes(&format!("{prefix}.l2")));
        s
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if params.len() != self.param_len() {
            return Err(Error::Invariant(format!(
                "mlp expects {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        if x.len() != self.input {
            return Err(Error::Invariant(format!(
                "mlp expects input of length {}, got {}",
                self.input,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let (p1, p2) = params.split_at(self.first().param_len());
        let hidden: Vec<f64> = self
            .first()
            .forward(p1, x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out = self.second().forward(p2, &hidden);
        Ok((
            out,
            MlpCache {
                input: x.to_vec(),
                hidden,
            },
        ))
    }

    /// Gradient of `grad_out · output`: parameter part accumulated into
    /// `grad_params`, input part returned.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
    ) -> Result<Vec<f64>> {
        if params.len() != self.param_len()
            || grad_params.len() != self.param_len()
            || grad_out.len() != self.output
            || cache.input.len() != self.input
            || cache.hidden.len() != self.hidden
        {
            return Err(Error::Invariant("mlp backward shape mismatch".into()));
        }
        let split = self.first().param_len();
        let (p1, p2) = params.split_at(split);
        let (g1, g2) = grad_params.split_at_mut(split);
        let gh = self.second().backward(p2, &cache.hidden, grad_out, g2);
        let gpre: Vec<f64> = gh
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        Ok(self.first().backward(p1, &cache.input, &gpre, g1))
    }
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Non-finite gradients leave everything
/// untouched.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimizerState,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Invariant(format!(
            "optimizer shapes differ: params {n}, grads {}, moments {}",
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.values.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient {i} is not finite")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..n {
        let g = grads.values[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.values[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Checkpoint text: a header line, one line per shape, then one value per
/// line.
///
/// ```text
/// scout-params <n_shapes> <seed> <step>
/// shape <name> <rows> <cols> <fan_in>
/// <value>
/// ```
pub fn checkpoint_to_text(params: &ParamSet, step: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scout-params {} {} {}",
        params.shapes.len(),
        params.seed,
        step
    );
    for s in &params.shapes {
        let _ = writeln!(out, "shape {} {} {} {}", s.name, s.rows, s.cols, s.fan_in);
    }
    for v in &params.values {
        out.push_str(&textio::format_float(*v));
        out.push('\n');
    }
    out
}

pub fn checkpoint_from_text(text: &str) -> Result<(ParamSet, u64)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line: usize, reason: &str| Error::Parse {
        line,
        reason: reason.to_string(),
    };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 || h[0] != "scout-params" {
        return Err(bad(1, "expected `scout-params <n_shapes> <seed> <step>`"));
    }
    let n_shapes: usize = textio::parse_field(h[1], 1)?;
    let seed: u64 = textio::parse_field(h[2], 1)?;
    let step: u64 = textio::parse_field(h[3], 1)?;
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let (no, line) = lines.next().ok_or_else(|| bad(1, "truncated shape list"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 || f[0] != "shape" {
            return Err(bad(no, "expected `shape <name> <rows> <cols> <fan_in>`"));
        }
        shapes.push(Shape::new(
            f[1],
            textio::parse_field(f[2], no)?,
            textio::parse_field(f[3], no)?,
            textio::parse_field(f[4], no)?,
        ));
    }
    let values = lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| textio::parse_field::<f64>(l.trim(), no))
        .collect::<Result<Vec<_>>>()?;
    let params = ParamSet {
        shapes,
        values,
        seed,
    };
    params.check()?;
    Ok((params, step))
}

pub fn write_checkpoint(path: &Path, params: &ParamSet, step: u64) -> Result<()> {
    std::fs::write(path, checkpoint_to_text(params, step)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(ParamSet, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_params(mlp: &Mlp, seed: u64) -> ParamSet {
        ParamSet::init(mlp.shapes("net"), seed)
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mlp = Mlp::new(4, 5, 3);
        let p = ParamSet::zeros(mlp.shapes("net"));
        let (y, _) = mlp.forward(&p.values, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn identity_linear_layer() {
        let lin = Linear {
            input: 3,
            output: 3,
        };
        let mut p = vec![0.0; lin.param_len()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = [0.25, -1.5, 4.0];
        assert_eq!(lin.forward(&p, &x), x.to_vec());
    }

    #[test]
    fn linear_scalar_gradient_is_input() {
        let lin = Linear {
            input: 3,
            output: 1,
        };
        let p = vec![0.7, -0.2, 0.1, 0.0];
        let x = [2.0, 3.0, -1.0];
        let mut g = vec![0.0; lin.param_len()];
        let gx = lin.backward(&p, &x, &[1.0], &mut g);
        assert_eq!(&g[..3], &x);
        assert_eq!(g[3], 1.0);
        assert_eq!(gx, vec![0.7, -0.2, 0.1]);
    }

    #[test]
    fn forward_is_repeatable_and_validates() {
        let mlp = Mlp::new(4, 6, 2);
        let p = mlp_params(&mlp, 3);
        let x = random_vec(4, 4);
        assert_eq!(
            mlp.forward(&p.values, &x).unwrap(),
            mlp.forward(&p.values, &x).unwrap()
        );
        assert_eq!(mlp_params(&mlp, 3), p);
        assert!(matches!(
            mlp.forward(&p.values, &[f64::NAN, 0.0, 0.0, 0.0]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            mlp.forward(&p.values, &[0.0; 3]),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn init_respects_fan_in_scale() {
        let mlp = Mlp::new(16, 4, 2);
        let p = mlp_params(&mlp, 9);
        let w1 = p.block("net.l1.weight").unwrap();
        assert!(w1.iter().all(|v| v.abs() <= 0.25));
        let w2 = p.block("net.l2.weight").unwrap();
        assert!(w2.iter().all(|v| v.abs() <= 0.5));
        p.check().unwrap();
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mlp = Mlp::new(3, 4, 2);
        let p = mlp_params(&mlp, 1);
        let (_, cache) = mlp.forward(&p.values, &[0.1, 0.2, 0.3]).unwrap();
        let mut g = vec![0.0; mlp.param_len()];
        let gx = mlp
            .backward(&p.values, &cache, &[0.0, 0.0], &mut g)
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(gx.iter().all(|v| *v == 0.0));
        let mut short = vec![0.0; 2];
        assert!(mlp
            .backward(&p.values, &cache, &[0.0, 0.0], &mut short)
            .is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        for seed in 0..5 {
            let mlp = Mlp::new(5, 7, 3);
            let p = mlp_params(&mlp, seed);
            let x = random_vec(100 + seed, 5);
            let u = random_vec(200 + seed, 3);
            let f = |params: &[f64], x: &[f64]| -> f64 {
                let (y, _) = mlp.forward(params, x).unwrap();
                y.iter().zip(&u).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = mlp.forward(&p.values, &x).unwrap();
            let mut g = vec![0.0; mlp.param_len()];
            let gx = mlp.backward(&p.values, &cache, &u, &mut g).unwrap();
            let h = 1e-5;
            for i in 0..p.len() {
                let mut plus = p.values.clone();
                let mut minus = p.values.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (f(&plus, &x) - f(&minus, &x)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(
                    rel <= 1e-4 || (fd - g[i]).abs() < 1e-9,
                    "param {i}: fd {fd} vs {}",
                    g[i]
                );
            }
            for i in 0..x.len() {
                let mut plus = x.clone();
                let mut minus = x.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (f(&p.values, &plus) - f(&p.values, &minus)) / (2.0 * h);
                assert!((fd - gx[i]).abs() < 1e-8, "input {i}: fd {fd} vs {}", gx[i]);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mlp = Mlp::new(2, 3, 1);
        let mut p = mlp_params(&mlp, 2);
        let before = p.clone();
        let mut st = OptimizerState::new(p.len(), 1e-3);
        let zero = p.zeros_like();
        optimizer_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        // Step 1: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
        let shapes = vec![Shape::new("w", 3, 1, 1)];
        let mut p = ParamSet::zeros(shapes.clone());
        let g = ParamSet {
            shapes,
            values: vec![0.5, -2.0, 1e-3],
            seed: 0,
        };
        let mut st = OptimizerState::new(3, 0.01);
        optimizer_step(&mut p, &g, &mut st).unwrap();
        for (v, gi) in p.values.iter().zip(&g.values) {
            let expected = -0.01 * gi / (gi.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        }
    }

    #[test]
    fn adam_is_deterministic_and_rejects_non_finite() {
        let mlp = Mlp::new(2, 3, 1);
        let p0 = mlp_params(&mlp, 5);
        let mut g = mlp_params(&mlp, 6);
        let run = || {
            let mut p = p0.clone();
            let mut st = OptimizerState::new(p.len(), 1e-3);
            optimizer_step(&mut p, &g, &mut st).unwrap();
            (p, st)
        };
        assert_eq!(run(), run());

        g.values[0] = f64::INFINITY;
        let mut p = p0.clone();
        let mut st = OptimizerState::new(p.len(), 1e-3);
        assert!(matches!(
            optimizer_step(&mut p, &g, &mut st),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p, p0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mlp = Mlp::new(3, 4, 2);
        let p = mlp_params(&mlp, 17);
        let (back, step) = checkpoint_from_text(&checkpoint_to_text(&p, 42)).unwrap();
        assert_eq!(back, p);
        assert_eq!(step, 42);
        assert!(checkpoint_from_text("scout-params 1 0 0\n").is_err());
    }
}
