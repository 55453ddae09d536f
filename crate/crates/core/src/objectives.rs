//! Black-box objectives, query accounting and noise injection.
//!
//! [`Objective`] is the pure function; [`ObjectiveHandle`] is what the
//! optimizer sees: it counts every query and optionally adds bounded-variance
//! noise. Diagnostics that must not cost queries call the [`Objective`]
//! directly.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::block::{BlockLayout, BlockVector};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveMetadata {
    pub lipschitz_l0: Option<f64>,
    pub smooth_l1: Option<f64>,
    pub lower_bound_fstar: Option<f64>,
    /// Set when L0/L1 came from sampling rather than a closed form.
    pub constants_estimated: bool,
}

impl ObjectiveMetadata {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L0", self.lipschitz_l0), ("L1", self.smooth_l1)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

pub trait Objective: Send + Sync {
    fn layout(&self) -> &BlockLayout;

    /// Noiseless value at the dense point `x` (length `layout().total_dim()`).
    fn value(&self, x: &[f64]) -> f64;

    /// Exact gradient, when the objective has one in closed form.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn metadata(&self) -> ObjectiveMetadata {
        ObjectiveMetadata::default()
    }

    /// Closed-form value of the block-`agent` Gaussian smoothing, if known.
    fn smoothed_value_exact(&self, _x: &[f64], _agent: usize, _mu: f64) -> Option<f64> {
        None
    }

    /// Closed-form block gradient of the block-`agent` smoothing, if known.
    fn smoothed_gradient_exact(&self, _x: &[f64], _agent: usize, _mu: f64) -> Option<Vec<f64>> {
        None
    }

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    AdditiveUniform,
    /// Gaussian clamped at ±6σ.
    AdditiveGaussianTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub variance_bound: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, variance_bound: f64) -> Result<Self> {
        if !(variance_bound.is_finite() && variance_bound >= 0.0) {
            return Err(Error::Config(format!("noise variance bound must be >= 0, got {variance_bound}")));
        }
        Ok(Self { kind, variance_bound })
    }

    /// Zero-mean draw with variance at most `variance_bound`.
    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        if self.variance_bound == 0.0 {
            return 0.0;
        }
        let sigma = self.variance_bound.sqrt();
        match self.kind {
            // Var(U[-a, a]) = a²/3
            NoiseKind::AdditiveUniform => (3.0f64).sqrt() * sigma * (2.0 * rng.uniform() - 1.0),
            NoiseKind::AdditiveGaussianTruncated => {
                (sigma * rng.standard_normal()).clamp(-6.0 * sigma, 6.0 * sigma)
            }
        }
    }
}

/// Query-counting view of an objective used by the optimizer.
#[derive(Clone)]
pub struct ObjectiveHandle {
    objective: Arc<dyn Objective>,
    noise: Option<(NoiseSpec, RngStream)>,
    query_count: u64,
}

impl std::fmt::Debug for ObjectiveHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveHandle")
            .field("objective", &self.objective.name())
            .field("noise", &self.noise.as_ref().map(|n| n.0))
            .field("query_count", &self.query_count)
            .finish()
    }
}

impl ObjectiveHandle {
    pub fn new(objective: Arc<dyn Objective>) -> Self {
        Self { objective, noise: None, query_count: 0 }
    }

    pub fn with_noise(mut self, spec: NoiseSpec, rng: RngStream) -> Self {
        self.noise = Some((spec, rng));
        self
    }

    pub fn objective(&self) -> &Arc<dyn Objective> {
        &self.objective
    }

    pub fn layout(&self) -> &BlockLayout {
        self.objective.layout()
    }

    pub fn metadata(&self) -> ObjectiveMetadata {
        self.objective.metadata()
    }

    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// One oracle call: counts the query and adds noise if configured.
    pub fn evaluate(&mut self, x: &BlockVector) -> Result<f64> {
        self.layout().check_same(x.layout())?;
        self.query_count += 1;
        let mut value = self.objective.value(x.values());
        if let Some((spec, rng)) = self.noise.as_mut() {
            value += spec.draw(rng);
        }
        if !value.is_finite() {
            return Err(Error::Evaluation { value, x: x.values().to_vec() });
        }
        Ok(value)
    }

    /// Noiseless value that does not count as a query.
    pub fn peek(&self, x: &BlockVector) -> f64 {
        self.objective.value(x.values())
    }
}

/// Exact gradient as a [`BlockVector`], for objectives that have one.
pub fn analytic_gradient(objective: &dyn Objective, x: &BlockVector) -> Result<BlockVector> {
    objective.layout().check_same(x.layout())?;
    if !x.is_finite() {
        return Err(Error::Domain("gradient requested at non-finite point".into()));
    }
    let g = objective
        .gradient(x.values())
        .ok_or_else(|| Error::Domain(format!("{} has no analytic gradient", objective.name())))?;
    BlockVector::from_values(x.layout(), g)
}

/// `f(x) = ½ xᵀA x + bᵀx + c` with symmetric `A`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    layout: BlockLayout,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    metadata: ObjectiveMetadata,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl QuadraticObjective {
    pub fn new(layout: BlockLayout, a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let n = layout.total_dim();
        if a.nrows() != n || a.ncols() != n || b.len() != n {
            return Err(Error::Layout(format!(
                "quadratic of dimension {n} got A {}x{} and b of length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if (&a - a.transpose()).amax() > SYMMETRY_TOL {
            return Err(Error::Config("quadratic matrix A is not symmetric".into()));
        }
        let l1 = spectral_norm(&a);
        let metadata = ObjectiveMetadata {
            lipschitz_l0: None,
            smooth_l1: (l1 > 0.0).then_some(l1),
            lower_bound_fstar: None,
            constants_estimated: false,
        };
        let mut q = Self { layout, a, b, c, metadata };
        q.metadata.lower_bound_fstar = q.minimum_value();
        Ok(q)
    }

    /// `A` given as `n·n` row-major values.
    pub fn from_row_major(layout: BlockLayout, a: &[f64], b: &[f64], c: f64) -> Result<Self> {
        let n = layout.total_dim();
        if a.len() != n * n {
            return Err(Error::Layout(format!("quadratic of dimension {n} needs {} entries of A, got {}", n * n, a.len())));
        }
        Self::new(layout, DMatrix::from_row_slice(n, n, a), DVector::from_column_slice(b), c)
    }

    /// Random well-conditioned instance: `A = Q diag(λ) Qᵀ` with `λ ∈ [1, 2]`
    /// and `b ~ N(0, I)`.
    ///
    /// `L0` is recorded as the gradient-norm bound over the ball of radius
    /// `‖x*‖ + 2√n` about the origin, which contains standard-normal starts
    /// with high probability. Quadratics are not globally Lipschitz.
    pub fn random(layout: BlockLayout, rng: &mut RngStream) -> Result<Self> {
        let n = layout.total_dim();
        let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let q = g.qr().q();
        let eig = DVector::from_fn(n, |_, _| 1.0 + rng.uniform());
        let a = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.standard_normal());
        let mut quad = Self::new(layout, a, b, 0.0)?;
        let xstar = quad.minimizer().expect("positive definite by construction");
        let radius = xstar.norm() + 2.0 * (n as f64).sqrt();
        quad.metadata.lipschitz_l0 = Some(quad.metadata.smooth_l1.unwrap() * 2.0 * radius);
        Ok(quad)
    }

    pub fn with_metadata(mut self, metadata: ObjectiveMetadata) -> Result<Self> {
        metadata.validate()?;
        self.metadata = metadata;
        Ok(self)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `−A⁻¹b` when `A` is invertible.
    pub fn minimizer(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&(-&self.b))
    }

    fn minimum_value(&self) -> Option<f64> {
        let eig = SymmetricEigen::new(self.a.clone()).eigenvalues;
        if eig.iter().all(|&e| e > 0.0) {
            let x = self.minimizer()?;
            Some(self.value(x.as_slice()))
        } else {
            None
        }
    }

    /// Trace of the diagonal block of `A` belonging to `agent`.
    pub fn block_trace(&self, agent: usize) -> f64 {
        self.layout.range(agent).map(|k| self.a[(k, k)]).sum()
    }

    /// Loads `block_dims`, `a`, `b`, `c` from a TOML file.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        #[derive(serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        struct QuadFile {
            block_dims: Vec<usize>,
            a: Vec<Vec<f64>>,
            b: Vec<f64>,
            #[serde(default)]
            c: f64,
            l0: Option<f64>,
        }
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("quadratic file {}: {e}", path.display())))?;
        let q: QuadFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("quadratic file {}: {e}", path.display())))?;
        let layout = BlockLayout::new(q.block_dims)?;
        let n = layout.total_dim();
        if q.a.len() != n || q.a.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("quadratic file: `a` must be {n}x{n}")));
        }
        let a = DMatrix::from_fn(n, n, |i, j| q.a[i][j]);
        let quad = Self::new(layout, a, DVector::from_vec(q.b), q.c)?;
        let mut meta = quad.metadata;
        meta.lipschitz_l0 = q.l0;
        quad.with_metadata(meta)
    }
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
}

impl Objective for QuadraticObjective {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.a * &x)) + self.b.dot(&x) + self.c
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let x = DVector::from_column_slice(x);
        Some((&self.a * x + &self.b).as_slice().to_vec())
    }

    fn metadata(&self) -> ObjectiveMetadata {
        self.metadata
    }

    // E[½(x+μu)ᵀA(x+μu)] over u on one block adds (μ²/2)·tr(A_ii)
    fn smoothed_value_exact(&self, x: &[f64], agent: usize, mu: f64) -> Option<f64> {
        Some(self.value(x) + 0.5 * mu * mu * self.block_trace(agent))
    }

    fn smoothed_gradient_exact(&self, x: &[f64], agent: usize, _mu: f64) -> Option<Vec<f64>> {
        let g = self.gradient(x)?;
        Some(g[self.layout.range(agent)].to_vec())
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Distributed feature-learning loss.
///
/// Agent `i` maps its raw input `D_ij ∈ ℝ^input_dim` to the scalar biomarker
/// `d_ij = σ(x_iᵀ D_ij)`. A fixed logistic classifier `W ∈ ℝᴺ` scores the
/// concatenated biomarkers and the loss is the mean negative log-likelihood
/// `(1/J) Σ_j log(1 + exp(−y_j Wᵀd_j))`.
#[derive(Debug, Clone)]
pub struct FeatureLearningObjective {
    layout: BlockLayout,
    num_agents: usize,
    num_samples: usize,
    input_dim: usize,
    /// Indexed `[(agent * num_samples + sample) * input_dim + k]`.
    inputs: Vec<f64>,
    labels: Vec<f64>,
    classifier: Vec<f64>,
    metadata: ObjectiveMetadata,
}

impl FeatureLearningObjective {
    pub fn new(
        num_agents: usize,
        num_samples: usize,
        input_dim: usize,
        inputs: Vec<f64>,
        labels: Vec<f64>,
        classifier: Vec<f64>,
    ) -> Result<Self> {
        if num_agents == 0 || num_samples == 0 || input_dim == 0 {
            return Err(Error::Config("benchmark needs N, J, input_dim >= 1".into()));
        }
        if inputs.len() != num_agents * num_samples * input_dim {
            return Err(Error::Layout(format!(
                "expected {} raw inputs, got {}",
                num_agents * num_samples * input_dim,
                inputs.len()
            )));
        }
        if labels.len() != num_samples || labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Config("labels must be J values in {-1, +1}".into()));
        }
        if classifier.len() != num_agents {
            return Err(Error::Layout(format!(
                "classifier must have {num_agents} weights, got {}",
                classifier.len()
            )));
        }
        Ok(Self {
            layout: BlockLayout::uniform(num_agents, input_dim)?,
            num_agents,
            num_samples,
            input_dim,
            inputs,
            labels,
            classifier,
            metadata: ObjectiveMetadata { lower_bound_fstar: Some(0.0), ..Default::default() },
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn classifier(&self) -> &[f64] {
        &self.classifier
    }

    pub fn raw_input(&self, agent: usize, sample: usize) -> &[f64] {
        let start = (agent * self.num_samples + sample) * self.input_dim;
        &self.inputs[start..start + self.input_dim]
    }

    pub fn with_metadata(mut self, metadata: ObjectiveMetadata) -> Result<Self> {
        metadata.validate()?;
        self.metadata = metadata;
        Ok(self)
    }

    fn activation(&self, x: &[f64], agent: usize, sample: usize) -> f64 {
        let w = &x[self.layout.range(agent)];
        w.iter().zip(self.raw_input(agent, sample)).map(|(a, b)| a * b).sum()
    }

    fn score(&self, x: &[f64], sample: usize) -> f64 {
        (0..self.num_agents)
            .map(|i| self.classifier[i] * sigmoid(self.activation(x, i, sample)))
            .sum()
    }

    /// Writes `inputs`, `labels` and `classifier` CSV files into `dir` with the given prefix.
    ///
    /// Inputs have one row per `(agent, sample)`: `agent,sample,d0,…`.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_inputs.csv")))?;
        let mut header = vec!["agent".to_string(), "sample".to_string()];
        header.extend((0..self.input_dim).map(|k| format!("d{k}")));
        w.write_record(&header)?;
        for i in 0..self.num_agents {
            for j in 0..self.num_samples {
                let mut row = vec![i.to_string(), j.to_string()];
                row.extend(self.raw_input(i, j).iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_labels.csv")))?;
        w.write_record(["sample", "label"])?;
        for (j, y) in self.labels.iter().enumerate() {
            w.write_record([j.to_string(), y.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("{prefix}_classifier.csv")))?;
        w.write_record(["agent", "weight"])?;
        for (i, v) in self.classifier.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(dir: &Path, prefix: &str) -> Result<Self> {
        fn rows(path: &Path) -> Result<Vec<Vec<f64>>> {
            let mut r = csv::Reader::from_path(path)?;
            r.records()
                .map(|rec| {
                    let rec = rec?;
                    rec.iter()
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
                        })
                        .collect()
                })
                .collect()
        }
        let inputs = rows(&dir.join(format!("{prefix}_inputs.csv")))?;
        let labels = rows(&dir.join(format!("{prefix}_labels.csv")))?;
        let classifier = rows(&dir.join(format!("{prefix}_classifier.csv")))?;
        let num_agents = classifier.len();
        let num_samples = labels.len();
        let input_dim = inputs.first().map_or(0, |r| r.len().saturating_sub(2));
        let mut flat = vec![0.0; num_agents * num_samples * input_dim];
        for row in &inputs {
            let (i, j) = (row[0] as usize, row[1] as usize);
            if i >= num_agents || j >= num_samples || row.len() != input_dim + 2 {
                return Err(Error::Io("malformed inputs row".into()));
            }
            let start = (i * num_samples + j) * input_dim;
            flat[start..start + input_dim].copy_from_slice(&row[2..]);
        }
        Self::new(
            num_agents,
            num_samples,
            input_dim,
            flat,
            labels.iter().map(|r| r[1]).collect(),
            classifier.iter().map(|r| r[1]).collect(),
        )
    }
}

impl Objective for FeatureLearningObjective {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn value(&self, x: &[f64]) -> f64 {
        let total: f64 = (0..self.num_samples)
            .map(|j| softplus(-self.labels[j] * self.score(x, j)))
            .sum();
        total / self.num_samples as f64
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.layout.total_dim()];
        let inv_j = 1.0 / self.num_samples as f64;
        for j in 0..self.num_samples {
            let y = self.labels[j];
            // d/dz log(1 + e^{-yz}) = -y σ(-yz)
            let dz = -y * sigmoid(-y * self.score(x, j)) * inv_j;
            for i in 0..self.num_agents {
                let s = sigmoid(self.activation(x, i, j));
                let coef = dz * self.classifier[i] * s * (1.0 - s);
                for (gk, dk) in g[self.layout.range(i)].iter_mut().zip(self.raw_input(i, j)) {
                    *gk += coef * dk;
                }
            }
        }
        Some(g)
    }

    fn metadata(&self) -> ObjectiveMetadata {
        self.metadata
    }

    fn name(&self) -> &str {
        "feature-learning"
    }
}

/// Builds the feature-learning benchmark.
///
/// Raw inputs and the classifier are standard normal; labels are balanced
/// (`⌈J/2⌉` positives) and shuffled. Initial weights are drawn by the run,
/// not here.
pub fn make_benchmark(
    num_agents: usize,
    num_samples: usize,
    input_dim: usize,
    rng: &mut RngStream,
) -> Result<FeatureLearningObjective> {
    if num_agents == 0 || num_samples == 0 || input_dim == 0 {
        return Err(Error::Config("benchmark needs N, J, input_dim >= 1".into()));
    }
    let mut inputs = vec![0.0; num_agents * num_samples * input_dim];
    rng.fill_standard_normal(&mut inputs);
    let positives = num_samples.div_ceil(2);
    let mut labels: Vec<f64> =
        (0..num_samples).map(|j| if j < positives { 1.0 } else { -1.0 }).collect();
    // Fisher-Yates
    for j in (1..num_samples).rev() {
        let k = rng.below(j + 1);
        labels.swap(j, k);
    }
    let mut classifier = vec![0.0; num_agents];
    rng.fill_standard_normal(&mut classifier);
    FeatureLearningObjective::new(num_agents, num_samples, input_dim, inputs, labels, classifier)
}

/// Sampled Lipschitz and smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalConstants {
    pub l0: f64,
    pub l1: f64,
}

/// Estimates `L0` as the largest gradient norm and `L1` as the largest
/// gradient-difference quotient over `points` standard-normal points
/// (scaled by `spread`), probing `directions` random directions at each.
pub fn estimate_constants(
    objective: &dyn Objective,
    points: usize,
    directions: usize,
    spread: f64,
    rng: &mut RngStream,
) -> Result<EmpiricalConstants> {
    let n = objective.layout().total_dim();
    let mut l0 = 0.0f64;
    let mut l1 = 0.0f64;
    let h = 1e-4;
    let mut x = vec![0.0; n];
    let mut d = vec![0.0; n];
    for _ in 0..points {
        rng.fill_standard_normal(&mut x);
        x.iter_mut().for_each(|v| *v *= spread);
        let gx = objective
            .gradient(&x)
            .ok_or_else(|| Error::Domain("constant estimation needs a gradient".into()))?;
        l0 = l0.max(gx.iter().map(|v| v * v).sum::<f64>().sqrt());
        for _ in 0..directions {
            rng.fill_standard_normal(&mut d);
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b / norm).collect();
            let gy = objective.gradient(&y).unwrap();
            let diff = gx.iter().zip(&gy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            l1 = l1.max(diff / h);
        }
    }
    Ok(EmpiricalConstants { l0, l1 })
}
