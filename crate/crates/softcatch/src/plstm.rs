//! Learned cushioning sequences.
//!
//! A single LSTM cell with a linear head maps the catch state (ball position
//! and velocity) to a 16-step sequence of container twists. The rollout is
//! autoregressive: each predicted twist, shifted by a sinusoidal positional
//! code, becomes the next input token. Training is plain backpropagation
//! through the unrolled recurrence with adaptive per-parameter steps.
//!
//! Demonstrations are synthetic: an exponential cushioning decay of the
//! catch velocity with seeded lateral drift stands in for recorded human
//! hand motions.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Twist rows produced per rollout.
pub const SEQ_LEN: usize = 16;
/// Token and output width: linear + angular velocity.
pub const TWIST_DIM: usize = 6;

const MAGIC: &[u8; 6] = b"PLSTM1";

/// Interleaved sinusoidal code for sequence position `l`.
///
/// Even entries are `sin(l / 10000^(2i/k))`, odd entries the matching
/// cosine. `k` must be even.
pub fn positional_encoding(l: usize, k: usize) -> Result<DVector<f64>> {
    if k == 0 || k % 2 != 0 {
        return Err(Error::InvalidDim(format!(
            "positional encoding width must be even, got {k}"
        )));
    }
    let mut pe = DVector::zeros(k);
    for i in 0..k / 2 {
        let denom = 10000f64.powf(2.0 * i as f64 / k as f64);
        let arg = l as f64 / denom;
        pe[2 * i] = arg.sin();
        pe[2 * i + 1] = arg.cos();
    }
    Ok(pe)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM cell and head weights.
///
/// Gate order inside the stacked matrices is input, forget, candidate,
/// output. All tensors are initialized from one seeded uniform(-k, k)
/// stream with k = 1/sqrt(hidden), drawn in declaration order (w row-major,
/// then u, b, head_w, head_b), which pins bit-reproducibility to the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PlstmParams {
    pub hidden: usize,
    /// Whether rollout tokens carry the positional code.
    pub use_pe: bool,
    /// Stacked gate input weights, (4*hidden) x 6.
    pub w: DMatrix<f64>,
    /// Stacked gate recurrent weights, (4*hidden) x hidden.
    pub u: DMatrix<f64>,
    /// Stacked gate biases, 4*hidden.
    pub b: DVector<f64>,
    /// Head weights, 6 x hidden.
    pub head_w: DMatrix<f64>,
    /// Head bias, 6.
    pub head_b: DVector<f64>,
}

struct StepCache {
    x: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    gi: DVector<f64>,
    gf: DVector<f64>,
    gg: DVector<f64>,
    go: DVector<f64>,
    c: DVector<f64>,
    h: DVector<f64>,
    out: DVector<f64>,
}

/// Parameter-shaped accumulator used for gradients and optimizer moments.
#[derive(Clone)]
struct Tensors {
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    b: DVector<f64>,
    head_w: DMatrix<f64>,
    head_b: DVector<f64>,
}

impl Tensors {
    fn zeros_like(p: &PlstmParams) -> Self {
        Self {
            w: DMatrix::zeros(p.w.nrows(), p.w.ncols()),
            u: DMatrix::zeros(p.u.nrows(), p.u.ncols()),
            b: DVector::zeros(p.b.len()),
            head_w: DMatrix::zeros(p.head_w.nrows(), p.head_w.ncols()),
            head_b: DVector::zeros(p.head_b.len()),
        }
    }

    fn scale(&mut self, s: f64) {
        self.w *= s;
        self.u *= s;
        self.b *= s;
        self.head_w *= s;
        self.head_b *= s;
    }

}

impl PlstmParams {
    /// Seeded uniform initialization.
    pub fn init(hidden: usize, use_pe: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-k..k))
        };
        let w = draw(4 * hidden, TWIST_DIM);
        let u = draw(4 * hidden, hidden);
        let b = DVector::from_fn(4 * hidden, |_, _| rng.random_range(-k..k));
        let head_w = DMatrix::from_fn(TWIST_DIM, hidden, |_, _| rng.random_range(-k..k));
        let head_b = DVector::from_fn(TWIST_DIM, |_, _| rng.random_range(-k..k));
        Self {
            hidden,
            use_pe,
            w,
            u,
            b,
            head_w,
            head_b,
        }
    }

    fn cell(
        &self,
        x: &DVector<f64>,
        h_prev: &DVector<f64>,
        c_prev: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let hid = self.hidden;
        let z = &self.w * x + &self.u * h_prev + &self.b;
        let gi = DVector::from_fn(hid, |i, _| sigmoid(z[i]));
        let gf = DVector::from_fn(hid, |i, _| sigmoid(z[hid + i]));
        let gg = DVector::from_fn(hid, |i, _| z[2 * hid + i].tanh());
        let go = DVector::from_fn(hid, |i, _| sigmoid(z[3 * hid + i]));
        let c = gf.component_mul(c_prev) + gi.component_mul(&gg);
        let h = go.component_mul(&DVector::from_fn(hid, |i, _| c[i].tanh()));
        (gi, gf, gg, go, c, h)
    }

    fn token(&self, base: &DVector<f64>, l: usize) -> DVector<f64> {
        if self.use_pe {
            base + positional_encoding(l, TWIST_DIM).expect("even width")
        } else {
            base.clone()
        }
    }

    fn rollout(&self, input: &Vector6<f64>, cache: bool) -> (DMatrix<f64>, Vec<StepCache>) {
        let hid = self.hidden;
        let mut h = DVector::zeros(hid);
        let mut c = DVector::zeros(hid);
        let mut out = DMatrix::zeros(SEQ_LEN, TWIST_DIM);
        let mut caches = Vec::with_capacity(if cache { SEQ_LEN } else { 0 });
        let mut base = DVector::from_iterator(TWIST_DIM, input.iter().copied());
        for step in 0..SEQ_LEN {
            let x = self.token(&base, step);
            let (gi, gf, gg, go, c_new, h_new) = self.cell(&x, &h, &c);
            let o = &self.head_w * &h_new + &self.head_b;
            for d in 0..TWIST_DIM {
                out[(step, d)] = o[d];
            }
            if cache {
                caches.push(StepCache {
                    x,
                    h_prev: h.clone(),
                    c_prev: c.clone(),
                    gi,
                    gf,
                    gg,
                    go,
                    c: c_new.clone(),
                    h: h_new.clone(),
                    out: o.clone(),
                });
            }
            base = o;
            h = h_new;
            c = c_new;
        }
        (out, caches)
    }

    /// Autoregressive rollout: 16 twist rows for one catch state.
    pub fn forward(&self, input: &Vector6<f64>) -> DMatrix<f64> {
        self.rollout(input, false).0
    }

    /// Loss and parameter gradients for one demonstration,
    /// backpropagating through the token feedback.
    fn demo_grads(&self, demo: &Demonstration, grads: &mut Tensors) -> f64 {
        let hid = self.hidden;
        let (out, caches) = self.rollout(&demo.input(), true);
        let scale = 1.0 / (SEQ_LEN * TWIST_DIM) as f64;
        let mut loss = 0.0;
        for t in 0..SEQ_LEN {
            for d in 0..TWIST_DIM {
                let e = out[(t, d)] - demo.label[(t, d)];
                loss += e * e;
            }
        }
        loss *= scale;

        let mut dh_carry = DVector::zeros(hid);
        let mut dc_carry = DVector::zeros(hid);
        let mut dx_carry = DVector::zeros(TWIST_DIM);
        for t in (0..SEQ_LEN).rev() {
            let cc = &caches[t];
            // Output gradient: the loss row plus the next step's token path.
            let mut dout = DVector::from_fn(TWIST_DIM, |d, _| {
                2.0 * scale * (cc.out[d] - demo.label[(t, d)])
            });
            dout += &dx_carry;

            grads.head_b += &dout;
            grads.head_w += &dout * cc.h.transpose();
            let dh = &dh_carry + self.head_w.transpose() * &dout;

            let tanh_c = DVector::from_fn(hid, |i, _| cc.c[i].tanh());
            let do_ = dh.component_mul(&tanh_c);
            let dct = &dc_carry
                + dh
                    .component_mul(&cc.go)
                    .component_mul(&DVector::from_fn(hid, |i, _| 1.0 - tanh_c[i] * tanh_c[i]));
            let di = dct.component_mul(&cc.gg);
            let df = dct.component_mul(&cc.c_prev);
            let dg = dct.component_mul(&cc.gi);

            let mut dz = DVector::zeros(4 * hid);
            for i in 0..hid {
                dz[i] = di[i] * cc.gi[i] * (1.0 - cc.gi[i]);
                dz[hid + i] = df[i] * cc.gf[i] * (1.0 - cc.gf[i]);
                dz[2 * hid + i] = dg[i] * (1.0 - cc.gg[i] * cc.gg[i]);
                dz[3 * hid + i] = do_[i] * cc.go[i] * (1.0 - cc.go[i]);
            }

            grads.b += &dz;
            grads.w += &dz * cc.x.transpose();
            grads.u += &dz * cc.h_prev.transpose();
            dx_carry = self.w.transpose() * &dz;
            dh_carry = self.u.transpose() * &dz;
            dc_carry = dct.component_mul(&cc.gf);
        }
        loss
    }

    /// Write the parameters as a flat binary blob.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        for dim in [
            TWIST_DIM as u32,
            self.hidden as u32,
            TWIST_DIM as u32,
            u32::from(self.use_pe),
        ] {
            out.write_all(&dim.to_le_bytes())?;
        }
        let mut write_slice = |vals: &[f64]| -> Result<()> {
            for v in vals {
                out.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        // Row-major tensors in declaration order.
        write_slice(&matrix_rows(&self.w))?;
        write_slice(&matrix_rows(&self.u))?;
        write_slice(self.b.as_slice())?;
        write_slice(&matrix_rows(&self.head_w))?;
        write_slice(self.head_b.as_slice())?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        input.read_exact(&mut magic).map_err(|_| Error::ParseError {
            line: 0,
            msg: "parameter file too short for header".into(),
        })?;
        if &magic != MAGIC {
            return Err(Error::ParseError {
                line: 0,
                msg: "bad parameter file magic".into(),
            });
        }
        let read_u32 = |input: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(|_| Error::ParseError {
                line: 0,
                msg: "truncated header".into(),
            })?;
            Ok(u32::from_le_bytes(b))
        };
        let in_dim = read_u32(&mut input)? as usize;
        let hidden = read_u32(&mut input)? as usize;
        let out_dim = read_u32(&mut input)? as usize;
        let use_pe = read_u32(&mut input)? != 0;
        if in_dim != TWIST_DIM || out_dim != TWIST_DIM || hidden == 0 || hidden > 4096 {
            return Err(Error::ParseError {
                line: 0,
                msg: format!("unsupported dimensions {in_dim}/{hidden}/{out_dim}"),
            });
        }
        let read_vals = |input: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                input.read_exact(&mut b).map_err(|_| Error::ParseError {
                    line: 0,
                    msg: "truncated parameter body".into(),
                })?;
                vals.push(f64::from_le_bytes(b));
            }
            Ok(vals)
        };
        let w = DMatrix::from_row_slice(
            4 * hidden,
            TWIST_DIM,
            &read_vals(&mut input, 4 * hidden * TWIST_DIM)?,
        );
        let u = DMatrix::from_row_slice(4 * hidden, hidden, &read_vals(&mut input, 4 * hidden * hidden)?);
        let b = DVector::from_vec(read_vals(&mut input, 4 * hidden)?);
        let head_w =
            DMatrix::from_row_slice(TWIST_DIM, hidden, &read_vals(&mut input, TWIST_DIM * hidden)?);
        let head_b = DVector::from_vec(read_vals(&mut input, TWIST_DIM)?);
        let params = Self {
            hidden,
            use_pe,
            w,
            u,
            b,
            head_w,
            head_b,
        };
        if !params.is_finite() {
            return Err(Error::ParseError {
                line: 0,
                msg: "non-finite parameter values".into(),
            });
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
            && self.u.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.head_w.iter().all(|v| v.is_finite())
            && self.head_b.iter().all(|v| v.is_finite())
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// One cushioning example: catch state and the 16x6 twist sequence that
/// followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// 16 rows of (v_x, v_y, v_z, w_x, w_y, w_z) at 50 Hz.
    pub label: DMatrix<f64>,
}

impl Demonstration {
    /// Build from any number of label rows; rows are truncated or
    /// zero-padded to the fixed rollout length.
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, rows: &[Vector6<f64>]) -> Result<Self> {
        let mut label = DMatrix::zeros(SEQ_LEN, TWIST_DIM);
        for (r, row) in rows.iter().take(SEQ_LEN).enumerate() {
            for d in 0..TWIST_DIM {
                label[(r, d)] = row[d];
            }
        }
        let demo = Self { p, v, label };
        demo.validate()?;
        Ok(demo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.nrows() != SEQ_LEN || self.label.ncols() != TWIST_DIM {
            return Err(Error::InvalidDim(format!(
                "label must be {SEQ_LEN}x{TWIST_DIM}, got {}x{}",
                self.label.nrows(),
                self.label.ncols()
            )));
        }
        if !(self.p.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
            && self.label.iter().all(|v| v.is_finite()))
        {
            return Err(Error::InvalidConfiguration(
                "demonstration contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Network input: catch position stacked on catch velocity.
    pub fn input(&self) -> Vector6<f64> {
        Vector6::new(
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z,
        )
    }

    /// Speed of the last label row; near-zero for fully settled demos.
    pub fn terminal_speed(&self) -> f64 {
        let r = SEQ_LEN - 1;
        (0..TWIST_DIM)
            .map(|d| self.label[(r, d)] * self.label[(r, d)])
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Serialize, Deserialize)]
struct DemoJson {
    p: [f64; 3],
    v: [f64; 3],
    label: Vec<[f64; 6]>,
}

/// Write demonstrations as JSON Lines, one per line.
pub fn write_demos_jsonl<W: Write>(demos: &[Demonstration], mut out: W) -> Result<()> {
    for d in demos {
        let row = DemoJson {
            p: [d.p.x, d.p.y, d.p.z],
            v: [d.v.x, d.v.y, d.v.z],
            label: (0..SEQ_LEN)
                .map(|r| std::array::from_fn(|c| d.label[(r, c)]))
                .collect(),
        };
        let line = serde_json::to_string(&row).map_err(|e| Error::ParseError {
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_demos_jsonl<R: Read>(input: R) -> Result<Vec<Demonstration>> {
    let mut demos = Vec::new();
    let reader = std::io::BufReader::new(input);
    for (idx, line) in std::io::BufRead::lines(reader).enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DemoJson = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let rows: Vec<Vector6<f64>> = row
            .label
            .iter()
            .map(|r| Vector6::from_row_slice(r))
            .collect();
        let demo = Demonstration::new(
            Vector3::new(row.p[0], row.p[1], row.p[2]),
            Vector3::new(row.v[0], row.v[1], row.v[2]),
            &rows,
        )
        .map_err(|e| Error::ParseError {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        demos.push(demo);
    }
    Ok(demos)
}

/// Synthetic demonstration sampler parameters.
#[derive(Debug, Clone)]
pub struct DemoGenConfig {
    /// Catch position cylinder around the robot, meters.
    pub r_min: f64,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Catch speed range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Downward component of the unit approach direction.
    pub down_min: f64,
    pub down_max: f64,
    /// Cushioning decay constant range, seconds.
    pub tau_min: f64,
    pub tau_max: f64,
    /// Lateral (x, y) drift noise on label rows, m/s.
    pub drift_sigma: f64,
    /// Label row spacing, seconds.
    pub dt: f64,
}

impl Default for DemoGenConfig {
    fn default() -> Self {
        Self {
            r_min: 0.2,
            r_max: 0.8,
            z_min: 0.55,
            z_max: 1.25,
            speed_min: 2.0,
            speed_max: 6.0,
            down_min: 0.2,
            down_max: 0.95,
            tau_min: 0.1,
            tau_max: 0.3,
            drift_sigma: 0.02,
            dt: 0.02,
        }
    }
}

/// Sample exponential-decay cushioning demonstrations.
///
/// Row `j` (1-based) carries the catch velocity scaled by
/// `exp(-j * dt / tau)` plus lateral drift noise; angular rows stay zero.
pub fn generate_demos(count: usize, seed: u64, cfg: &DemoGenConfig) -> Result<Vec<Demonstration>> {
    if count == 0 {
        return Err(Error::InvalidConfiguration(
            "demo count must be positive".into(),
        ));
    }
    if !(cfg.tau_min > 0.0 && cfg.tau_max >= cfg.tau_min && cfg.dt > 0.0) {
        return Err(Error::InvalidConfiguration(
            "demo generator needs positive decay and step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift = Normal::new(0.0, cfg.drift_sigma.max(0.0)).map_err(|e| {
        Error::InvalidConfiguration(format!("bad drift sigma: {e}"))
    })?;
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(cfg.r_min..=cfg.r_max);
        let z = rng.random_range(cfg.z_min..=cfg.z_max);
        let p = Vector3::new(radius * angle.cos(), radius * angle.sin(), z);

        let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
        let down = rng.random_range(cfg.down_min..=cfg.down_max);
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let horiz = (1.0 - down * down).sqrt();
        let v = Vector3::new(horiz * az.cos(), horiz * az.sin(), -down) * speed;

        let tau = rng.random_range(cfg.tau_min..=cfg.tau_max);
        let mut rows = Vec::with_capacity(SEQ_LEN);
        for j in 1..=SEQ_LEN {
            let decay = (-(j as f64) * cfg.dt / tau).exp();
            let mut row = Vector6::zeros();
            row[0] = v.x * decay + drift.sample(&mut rng);
            row[1] = v.y * decay + drift.sample(&mut rng);
            row[2] = v.z * decay;
            rows.push(row);
        }
        demos.push(Demonstration::new(p, v, &rows)?);
    }
    Ok(demos)
}

/// Catch-moment segmentation: the sample with the highest mean absolute
/// velocity change across axes. Ties break to the earliest index.
pub fn detect_catch_index(track: &[(f64, Vector3<f64>, Vector3<f64>)]) -> Result<usize> {
    if track.len() < 3 {
        return Err(Error::InvalidTrack(format!(
            "need at least 3 samples, got {}",
            track.len()
        )));
    }
    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..track.len() - 1 {
        let dv = track[k + 1].2 - track[k].2;
        let val = (dv.x.abs() + dv.y.abs() + dv.z.abs()) / 3.0;
        if val > best_val {
            best_val = val;
            best_idx = k;
        }
    }
    Ok(best_idx)
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub use_pe: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            seed: 7,
            batch_size: 32,
            lr: 1e-3,
            hidden: 64,
            use_pe: true,
        }
    }
}

struct Adam {
    m: Tensors,
    v: Tensors,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
}

impl Adam {
    fn new(p: &PlstmParams, lr: f64) -> Self {
        Self {
            m: Tensors::zeros_like(p),
            v: Tensors::zeros_like(p),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    fn update_slice(
        m: &mut [f64],
        v: &mut [f64],
        theta: &mut [f64],
        g: &[f64],
        b1: f64,
        b2: f64,
        bc1: f64,
        bc2: f64,
        lr: f64,
        eps: f64,
    ) {
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }

    fn step(&mut self, params: &mut PlstmParams, grads: &Tensors) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let pairs: [(&mut [f64], &mut [f64], &mut [f64], &[f64]); 5] = [
            (
                self.m.w.as_mut_slice(),
                self.v.w.as_mut_slice(),
                params.w.as_mut_slice(),
                grads.w.as_slice(),
            ),
            (
                self.m.u.as_mut_slice(),
                self.v.u.as_mut_slice(),
                params.u.as_mut_slice(),
                grads.u.as_slice(),
            ),
            (
                self.m.b.as_mut_slice(),
                self.v.b.as_mut_slice(),
                params.b.as_mut_slice(),
                grads.b.as_slice(),
            ),
            (
                self.m.head_w.as_mut_slice(),
                self.v.head_w.as_mut_slice(),
                params.head_w.as_mut_slice(),
                grads.head_w.as_slice(),
            ),
            (
                self.m.head_b.as_mut_slice(),
                self.v.head_b.as_mut_slice(),
                params.head_b.as_mut_slice(),
                grads.head_b.as_slice(),
            ),
        ];
        for (m, v, theta, g) in pairs {
            Self::update_slice(
                m, v, theta, g, self.beta1, self.beta2, bc1, bc2, self.lr, self.eps,
            );
        }
    }
}

/// Mean rollout MSE of `params` over a demo set.
pub fn evaluate_mse(params: &PlstmParams, demos: &[Demonstration]) -> f64 {
    let mut total = 0.0;
    for d in demos {
        let out = params.forward(&d.input());
        let mut loss = 0.0;
        for t in 0..SEQ_LEN {
            for c in 0..TWIST_DIM {
                let e = out[(t, c)] - d.label[(t, c)];
                loss += e * e;
            }
        }
        total += loss / (SEQ_LEN * TWIST_DIM) as f64;
    }
    total / demos.len() as f64
}

/// Train a fresh network on the demo set; returns the parameters and the
/// per-epoch mean loss curve.
pub fn train(demos: &[Demonstration], cfg: &TrainConfig) -> Result<(PlstmParams, Vec<f64>)> {
    if demos.is_empty() {
        return Err(Error::InvalidConfiguration(
            "training needs at least one demonstration".into(),
        ));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfiguration(
            "bad training hyperparameters".into(),
        ));
    }
    for d in demos {
        d.validate()?;
    }

    let mut params = PlstmParams::init(cfg.hidden, cfg.use_pe, cfg.seed);
    let mut adam = Adam::new(&params, cfg.lr);
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = Tensors::zeros_like(&params);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                batch_loss += params.demo_grads(&demos[idx], &mut grads);
            }
            batch_loss /= chunk.len() as f64;
            grads.scale(1.0 / chunk.len() as f64);
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut params, &grads);
            epoch_loss += batch_loss;
            batches += 1;
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok((params, curve))
}
