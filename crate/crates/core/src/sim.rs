//! Trajectory generation for linear and quadratic models under white or
//! colored noise, with an optional reflecting wall.
//!
//! White noise is integrated by Euler-Maruyama. For colored noise the state
//! is advanced by classical RK4 with the forcing `sqrt(2Q) eta` frozen over
//! the step, and `eta` itself by Euler-Maruyama:
//! `eta' = eta - (dt/gamma) eta + (sqrt(dt)/gamma) xi`.
//!
//! Randomness comes from a ChaCha stream selected by `(seed, stream)`, so a
//! simulation is bit-reproducible no matter which thread runs it.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt, SpdMatrix};
use crate::model::{NoiseSpec, QuadModel};

/// Default steepness of the wall potential.
pub const DEFAULT_WALL_STEEPNESS: f64 = 20.0;
/// Default radius multiplier used by [`default_wall`].
pub const DEFAULT_WALL_MULTIPLIER: f64 = 5.0;

/// Deterministic RNG for a `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Smooth dissipative wall `-w(|x - x0| - r) (x - x0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub steepness: f64,
    pub enabled: bool,
}

impl WallSpec {
    pub fn new(center: Vec<f64>, radius: f64, steepness: f64) -> Result<Self> {
        if !(radius > 0.0) || !(steepness >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "wall needs radius > 0 and steepness >= 1 (got r = {radius}, m = {steepness})"
            )));
        }
        Ok(Self {
            center,
            radius,
            steepness,
            enabled: true,
        })
    }

    pub fn disabled(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            radius: 1.0,
            steepness: DEFAULT_WALL_STEEPNESS,
            enabled: false,
        }
    }

    /// Wall weight at the current state.
    pub fn weight(&self, x: &[f64]) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let dist = x
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        wall_weight(dist - self.radius, self.steepness)
    }

    fn add_force(&self, x: &[f64], out: &mut [f64]) -> bool {
        let w = self.weight(x);
        if w > 0.0 {
            for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
                *o -= w * (xi - ci);
            }
            true
        } else {
            false
        }
    }
}

/// `w(z) = 0` for `z <= 0`, `exp(m z) exp(-1/z)` otherwise.
pub fn wall_weight(z: f64, steepness: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        (steepness * z - 1.0 / z).exp()
    }
}

pub fn wall_force(x: &[f64], wall: &WallSpec) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    wall.add_force(x, &mut out);
    out
}

/// Uniformly sampled multivariate series, stored row-major (`len x n`).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub dt: f64,
    pub t0: f64,
    pub values: Vec<f64>,
    pub noise: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(n: usize, dt: f64, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() % n != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of width {n}",
                values.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("sampling interval must be positive, got {dt}")));
        }
        Ok(Self {
            n,
            dt,
            t0: 0.0,
            values,
            noise: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn noise_row(&self, t: usize) -> Option<&[f64]> {
        self.noise.as_ref().map(|v| &v[t * self.n..(t + 1) * self.n])
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.values[t * self.n + i]).collect()
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.len().saturating_sub(1)) as f64
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.n);
        for t in 0..self.len() {
            for (i, v) in self.row(t).iter().enumerate() {
                m[i] += v;
            }
        }
        m / self.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "time", rename_all = "lowercase")]
pub enum BurnIn {
    /// `5 / |Re lambda_max(A)|`, or 10% of the duration when `A` is not stable.
    Auto,
    None,
    Time(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub dt: f64,
    pub t_final: f64,
    pub subsample: usize,
    pub seed: u64,
    pub stream: u64,
    pub initial_state: Vec<f64>,
    pub record_noise: bool,
    pub burn_in: BurnIn,
}

impl SimPlan {
    pub fn new(n: usize, dt: f64, t_final: f64, subsample: usize, seed: u64) -> Self {
        Self {
            dt,
            t_final,
            subsample,
            seed,
            stream: 0,
            initial_state: vec![0.0; n],
            record_noise: false,
            burn_in: BurnIn::Auto,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Self {
        self.initial_state = x0;
        self
    }

    pub fn with_noise_recording(mut self, record: bool) -> Self {
        self.record_noise = record;
        self
    }

    pub fn with_burn_in(mut self, burn_in: BurnIn) -> Self {
        self.burn_in = burn_in;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= self.dt) || self.subsample == 0 {
            return Err(Error::InvalidParameter(format!(
                "simulation plan needs dt > 0, t_final >= dt, subsample >= 1 (dt = {}, t_final = {}, subsample = {})",
                self.dt, self.t_final, self.subsample
            )));
        }
        if self.initial_state.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} entries, model has n = {n}",
                self.initial_state.len()
            )));
        }
        Ok(())
    }

    /// Integration steps that are recorded (excluding burn-in).
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub trajectory: Trajectory,
    /// Share of recorded integration steps on which the wall was active.
    pub wall_activity: f64,
}

/// Burn-in duration for a model under the `Auto` policy.
pub fn auto_burn_in(model: &QuadModel, t_final: f64) -> f64 {
    let eig = model.a.clone().complex_eigenvalues();
    let max_re = eig.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re < 0.0 && max_re.is_finite() {
        5.0 / max_re.abs()
    } else {
        0.1 * t_final
    }
}

/// Drift coefficients laid out for the inner loop, with fixed-size kernels
/// for the common small dimensions.
enum Drift {
    N1(FixedDrift<1, 1>),
    N2(FixedDrift<2, 3>),
    N3(FixedDrift<3, 6>),
    Dyn(DynDrift),
}

struct FixedDrift<const N: usize, const P: usize> {
    a: [[f64; N]; N],
    b: [[f64; P]; N],
    c: [f64; N],
    pairs: [(usize, usize); P],
}

impl<const N: usize, const P: usize> FixedDrift<N, P> {
    fn new(model: &QuadModel) -> Self {
        let bm = model.b.as_matrix();
        let mut pairs = [(0, 0); P];
        for (slot, pair) in pairs.iter_mut().zip(crate::tensor::pairs(N)) {
            *slot = pair;
        }
        Self {
            a: std::array::from_fn(|i| std::array::from_fn(|j| model.a[(i, j)])),
            b: std::array::from_fn(|i| std::array::from_fn(|p| bm[(i, p)])),
            c: std::array::from_fn(|i| model.c[i]),
            pairs,
        }
    }

    #[inline(always)]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let x: &[f64; N] = x[..N].try_into().unwrap();
        let feats: [f64; P] = std::array::from_fn(|p| x[self.pairs[p].0] * x[self.pairs[p].1]);
        for i in 0..N {
            let mut acc = self.c[i];
            for j in 0..N {
                acc += self.a[i][j] * x[j];
            }
            for p in 0..P {
                acc += self.b[i][p] * feats[p];
            }
            out[i] = acc;
        }
    }
}

struct DynDrift {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    feats: Vec<f64>,
}

impl DynDrift {
    fn new(model: &QuadModel) -> Self {
        let n = model.n();
        let bm = model.b.as_matrix();
        let p = bm.ncols();
        Self {
            n,
            a: (0..n * n).map(|k| model.a[(k / n, k % n)]).collect(),
            b: (0..n * p).map(|k| bm[(k / p, k % p)]).collect(),
            c: model.c.iter().copied().collect(),
            pairs: crate::tensor::pairs(n).collect(),
            feats: vec![0.0; p],
        }
    }

    fn eval(&mut self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (f, &(j, k)) in self.feats.iter_mut().zip(&self.pairs) {
            *f = x[j] * x[k];
        }
        let p = self.feats.len();
        for i in 0..n {
            let lin: f64 = self.a[i * n..(i + 1) * n].iter().zip(x).map(|(a, x)| a * x).sum();
            let quad: f64 = self.b[i * p..(i + 1) * p].iter().zip(&self.feats).map(|(b, f)| b * f).sum();
            out[i] = self.c[i] + lin + quad;
        }
    }
}

impl Drift {
    fn new(model: &QuadModel) -> Self {
        match model.n() {
            1 => Drift::N1(FixedDrift::new(model)),
            2 => Drift::N2(FixedDrift::new(model)),
            3 => Drift::N3(FixedDrift::new(model)),
            _ => Drift::Dyn(DynDrift::new(model)),
        }
    }

    #[inline]
    fn eval(&mut self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::N1(d) => d.eval(x, out),
            Drift::N2(d) => d.eval(x, out),
            Drift::N3(d) => d.eval(x, out),
            Drift::Dyn(d) => d.eval(x, out),
        }
    }
}

struct Stepper<'a> {
    drift: Drift,
    wall: &'a WallSpec,
    sqrt2q: Vec<f64>,
    n: usize,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    forcing: Vec<f64>,
    xi: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a QuadModel, wall: &'a WallSpec) -> Result<Self> {
        let n = model.n();
        let two_q = SpdMatrix::new(model.q.matrix() * 2.0)?;
        let root = spd_sqrt(&two_q);
        Ok(Self {
            drift: Drift::new(model),
            wall,
            sqrt2q: (0..n * n).map(|k| root[(k / n, k % n)]).collect(),
            n,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            forcing: vec![0.0; n],
            xi: vec![0.0; n],
        })
    }

    fn fill_normals(&mut self, rng: &mut ChaCha8Rng) {
        for v in self.xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
    }

    /// Drift plus wall plus frozen forcing; returns whether the wall fired.
    fn rhs(&mut self, x: &[f64], out: &mut [f64]) -> bool {
        self.drift.eval(x, out);
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
        self.wall.add_force(x, out)
    }

    fn white_step(&mut self, x: &mut [f64], dt: f64, rng: &mut ChaCha8Rng) -> bool {
        self.forcing.iter_mut().for_each(|v| *v = 0.0);
        let mut k1 = std::mem::take(&mut self.k1);
        let hit = self.rhs(x, &mut k1);
        self.fill_normals(rng);
        let sdt = dt.sqrt();
        for i in 0..self.n {
            let mut noise = 0.0;
            for j in 0..self.n {
                noise += self.sqrt2q[i * self.n + j] * self.xi[j];
            }
            x[i] += k1[i] * dt + noise * sdt;
        }
        self.k1 = k1;
        hit
    }

    fn colored_step(
        &mut self,
        x: &mut [f64],
        eta: &mut [f64],
        gamma: f64,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        for i in 0..self.n {
            let mut f = 0.0;
            for j in 0..self.n {
                f += self.sqrt2q[i * self.n + j] * eta[j];
            }
            self.forcing[i] = f;
        }
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            std::mem::take(&mut self.k1),
            std::mem::take(&mut self.k2),
            std::mem::take(&mut self.k3),
            std::mem::take(&mut self.k4),
            std::mem::take(&mut self.tmp),
        );
        let hit = self.rhs(x, &mut k1);
        for i in 0..self.n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        self.rhs(&tmp, &mut k2);
        for i in 0..self.n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        self.rhs(&tmp, &mut k3);
        for i in 0..self.n {
            tmp[i] = x[i] + dt * k3[i];
        }
        self.rhs(&tmp, &mut k4);
        for i in 0..self.n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.k4 = k4;
        self.tmp = tmp;

        self.fill_normals(rng);
        let sdt = dt.sqrt();
        for (e, xi) in eta.iter_mut().zip(&self.xi) {
            *e += -dt / gamma * *e + sdt / gamma * xi;
        }
        hit
    }
}

/// Integrate `model` according to `plan`.
pub fn simulate(model: &QuadModel, wall: &WallSpec, plan: &SimPlan) -> Result<SimOutput> {
    let n = model.n();
    plan.validate(n)?;
    if wall.enabled && wall.center.len() != n {
        return Err(Error::DimensionMismatch("wall center dimension".into()));
    }
    let mut rng = stream_rng(plan.seed, plan.stream);
    let mut stepper = Stepper::new(model, wall)?;
    let dt = plan.dt;
    let mut x = plan.initial_state.clone();

    let gamma = model.noise.gamma();
    let mut eta = vec![0.0; n];
    if let Some(g) = gamma {
        let sd = (1.0 / (2.0 * g)).sqrt();
        for e in eta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = sd * z;
        }
    }

    let burn = match plan.burn_in {
        BurnIn::Auto => auto_burn_in(model, plan.t_final),
        BurnIn::None => 0.0,
        BurnIn::Time(t) => t.max(0.0),
    };
    let burn_steps = (burn / dt).ceil() as usize;
    let steps = plan.steps();
    let out_len = steps / plan.subsample + 1;
    let mut values = Vec::with_capacity(out_len * n);
    let mut noise = plan.record_noise.then(|| Vec::with_capacity(out_len * n));
    let mut wall_hits = 0usize;

    let total = burn_steps + steps;
    for step in 0..=total {
        if step >= burn_steps {
            let k = step - burn_steps;
            if k % plan.subsample == 0 {
                values.extend_from_slice(&x);
                if let Some(buf) = noise.as_mut() {
                    if gamma.is_some() {
                        buf.extend_from_slice(&eta);
                    }
                }
            }
        }
        if step == total {
            break;
        }
        let hit = match gamma {
            None => stepper.white_step(&mut x, dt, &mut rng),
            Some(g) => stepper.colored_step(&mut x, &mut eta, g, dt, &mut rng),
        };
        if hit && step >= burn_steps {
            wall_hits += 1;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step });
        }
    }

    let noise = match (noise, model.noise) {
        (Some(buf), NoiseSpec::Colored { .. }) => Some(buf),
        _ => None,
    };
    let trajectory = Trajectory {
        n,
        dt: dt * plan.subsample as f64,
        t0: 0.0,
        values,
        noise,
    };
    Ok(SimOutput {
        trajectory,
        wall_activity: wall_hits as f64 / steps.max(1) as f64,
    })
}

/// Wall centred on the sample mean with radius `multiplier` times the
/// largest excursion (floored at one state unit) and steepness 20.
pub fn default_wall(data: &Trajectory, multiplier: f64) -> Result<WallSpec> {
    if data.is_empty() {
        return Err(Error::TooShort("cannot build a wall from empty data".into()));
    }
    let center: Vec<f64> = data.mean().iter().copied().collect();
    let mut max_dist: f64 = 0.0;
    for t in 0..data.len() {
        let d = data
            .row(t)
            .iter()
            .zip(&center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        max_dist = max_dist.max(d);
    }
    let mut radius = multiplier * max_dist;
    if !(radius > 0.0) {
        radius = 1.0;
    }
    WallSpec::new(center, radius, DEFAULT_WALL_STEEPNESS)
}
