//! Synthetic multi-task families with a tunable transfer regime.
//!
//! The target (task 0) is a Gaussian-mixture classification problem whose
//! class centres sit on a circle in the first two input coordinates; the
//! remaining coordinates carry pure noise. Auxiliary task `k` moves every
//! class centre along a fixed displacement (a rotation plus a translation of
//! the circle) scaled by `1 - r_k`, and relabels each of its examples with a
//! fixed cyclic label shift with probability `(1 - r_k) / 2`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::numeric::{purpose, RngStream};
use crate::optim::TaskWeighting;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TaskId(pub u32);

impl TaskId {
    pub const TARGET: TaskId = TaskId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels {
        labels: Vec<usize>,
        n_classes: usize,
    },
    /// Row-major `rows x dim` regression targets.
    Values {
        values: Vec<f64>,
        dim: usize,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels { labels, .. } => labels.len(),
            Targets::Values { values, dim } => values.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rows of one task: a row-major input matrix and matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    task_id: TaskId,
    input_dim: usize,
    inputs: Vec<f64>,
    targets: Targets,
}

impl DataSplit {
    pub fn new(task_id: TaskId, input_dim: usize, inputs: Vec<f64>, targets: Targets) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("split", "input_dim must be positive"));
        }
        if !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::invalid("split", "input length is not a multiple of input_dim"));
        }
        let rows = inputs.len() / input_dim;
        match &targets {
            Targets::Labels { labels, n_classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *n_classes) {
                    return Err(Error::invalid(
                        "split",
                        alloc::format!("label {bad} out of range for {n_classes} classes"),
                    ));
                }
            }
            Targets::Values { values, dim } => {
                if *dim == 0 || values.len() % dim != 0 {
                    return Err(Error::invalid("split", "regression targets do not match dim"));
                }
                crate::numeric::check_finite(values)?;
            }
        }
        if targets.len() != rows {
            return Err(Error::invalid(
                "split",
                alloc::format!("{rows} input rows but {} targets", targets.len()),
            ));
        }
        crate::numeric::check_finite(&inputs)?;
        Ok(DataSplit {
            task_id,
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Values { .. } => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { n_classes, .. } => Some(*n_classes),
            Targets::Values { .. } => None,
        }
    }

    /// Builds a new split from the given rows (repeats allowed).
    pub fn gather(&self, rows: &[usize]) -> DataSplit {
        let mut inputs = Vec::with_capacity(rows.len() * self.input_dim);
        for &r in rows {
            inputs.extend_from_slice(self.row(r));
        }
        let targets = match &self.targets {
            Targets::Labels { labels, n_classes } => Targets::Labels {
                labels: rows.iter().map(|&r| labels[r]).collect(),
                n_classes: *n_classes,
            },
            Targets::Values { values, dim } => {
                let mut out = Vec::with_capacity(rows.len() * dim);
                for &r in rows {
                    out.extend_from_slice(&values[r * dim..(r + 1) * dim]);
                }
                Targets::Values { values: out, dim: *dim }
            }
        };
        DataSplit {
            task_id: self.task_id,
            input_dim: self.input_dim,
            inputs,
            targets,
        }
    }

    /// Same rows, relabelled as belonging to `task_id`.
    pub fn with_task_id(mut self, task_id: TaskId) -> DataSplit {
        self.task_id = task_id;
        self
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut RngStream) -> DataSplit {
        let rows: Vec<usize> = (0..n).map(|_| rng.below(self.len())).collect();
        self.gather(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: DataSplit,
    pub val: DataSplit,
    pub test: DataSplit,
}

impl TaskSplits {
    pub fn get(&self, kind: SplitKind) -> &DataSplit {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// A target task (id 0) plus `K` auxiliary tasks sharing input and label spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    tasks: Vec<TaskSplits>,
}

impl TaskFamily {
    pub fn new(tasks: Vec<TaskSplits>) -> Result<Self> {
        let Some(first) = tasks.first() else {
            return Err(Error::Empty("task family"));
        };
        let dim = first.train.input_dim();
        let classes = first.train.n_classes();
        for (k, t) in tasks.iter().enumerate() {
            for kind in SplitKind::ALL {
                let s = t.get(kind);
                if s.input_dim() != dim || s.n_classes() != classes {
                    return Err(Error::invalid(
                        "task family",
                        alloc::format!("task {k} {} split has mismatched dims", kind.name()),
                    ));
                }
                if s.task_id() != TaskId(k as u32) {
                    return Err(Error::invalid(
                        "task family",
                        alloc::format!("task {k} {} split carries id {}", kind.name(), s.task_id()),
                    ));
                }
            }
            if t.val.is_empty() || t.test.is_empty() || t.train.is_empty() {
                return Err(Error::invalid(
                    "task family",
                    alloc::format!("task {k} has an empty split"),
                ));
            }
        }
        Ok(TaskFamily { tasks })
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn n_aux(&self) -> usize {
        self.tasks.len() - 1
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> {
        (0..self.tasks.len() as u32).map(TaskId)
    }

    pub fn input_dim(&self) -> usize {
        self.tasks[0].train.input_dim()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.tasks[0].train.n_classes()
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskSplits> {
        self.tasks.get(id.index()).ok_or(Error::UnknownTask(id))
    }

    pub fn target(&self) -> &TaskSplits {
        &self.tasks[0]
    }

    pub fn tasks(&self) -> &[TaskSplits] {
        &self.tasks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamilyConfig {
    /// `K + 1`; task 0 is the target.
    pub n_tasks: usize,
    pub input_dim: usize,
    pub n_classes: usize,
    pub train_samples: usize,
    /// Train rows per auxiliary task; `None` uses `train_samples`.
    pub aux_train_samples: Option<usize>,
    pub val_samples: usize,
    pub test_samples: usize,
    /// One `r_k` in `[0, 1]` per auxiliary task; 1 reproduces the target generator.
    pub relatedness: Vec<f64>,
    pub noise_std: f64,
    /// Radius of the circle carrying the class centres.
    pub center_radius: f64,
    /// Rotation of the centre circle at `r = 0`, in radians.
    pub max_rotation: f64,
    /// Translation of the centre circle at `r = 0`, in input units.
    pub max_shift: f64,
    pub seed: u64,
}

impl Default for TaskFamilyConfig {
    fn default() -> Self {
        TaskFamilyConfig {
            n_tasks: 2,
            input_dim: 2,
            n_classes: 4,
            train_samples: 2000,
            aux_train_samples: None,
            val_samples: 500,
            test_samples: 2000,
            relatedness: alloc::vec![0.0],
            noise_std: 1.0,
            center_radius: 2.0,
            max_rotation: core::f64::consts::PI / 4.0,
            max_shift: 1.0,
            seed: 0,
        }
    }
}

impl TaskFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("task family config", reason));
        if self.n_tasks == 0 {
            return bad("n_tasks must be at least 1");
        }
        if self.input_dim < 2 {
            return bad("input_dim must be at least 2");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return bad("every split needs at least one sample");
        }
        if self.aux_train_samples == Some(0) {
            return bad("aux_train_samples must be positive");
        }
        if self.relatedness.len() != self.n_tasks - 1 {
            return bad("relatedness needs one entry per auxiliary task");
        }
        if self.relatedness.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("relatedness entries must lie in [0, 1]");
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.noise_std)
            || !finite_nonneg(self.center_radius)
            || !self.max_rotation.is_finite()
            || !finite_nonneg(self.max_shift)
        {
            return bad("geometry parameters must be finite and nonnegative");
        }
        Ok(())
    }

    fn train_rows(&self, task: usize) -> usize {
        if task == 0 {
            self.train_samples
        } else {
            self.aux_train_samples.unwrap_or(self.train_samples)
        }
    }
}

/// Generator parameters of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGenerator {
    /// Class centres in the first two input coordinates.
    pub centers: Vec<[f64; 2]>,
    pub label_flip_prob: f64,
    /// Flipped labels become `(y + label_shift) % n_classes`.
    pub label_shift: usize,
}

impl TaskGenerator {
    /// Mean distance between this task's class centres and `other`'s.
    pub fn mean_center_displacement(&self, other: &TaskGenerator) -> f64 {
        let total: f64 = self
            .centers
            .iter()
            .zip(&other.centers)
            .map(|(a, b)| libm::hypot(a[0] - b[0], a[1] - b[1]))
            .sum();
        total / self.centers.len() as f64
    }
}

/// Generator parameters for every task of `cfg`, target first.
///
/// Randomness here depends only on the seed and task index, never on `r_k`,
/// so the centre displacement is `(1 - r_k)` times a fixed vector per class.
pub fn task_generators(cfg: &TaskFamilyConfig) -> Result<Vec<TaskGenerator>> {
    cfg.validate()?;
    let c = cfg.n_classes;
    let mut geo = RngStream::keyed(cfg.seed, &[purpose::DATA_GEN, u64::MAX]);
    let phase = geo.uniform_in(0.0, core::f64::consts::TAU);
    let target_centers: Vec<[f64; 2]> = (0..c)
        .map(|i| {
            let a = phase + core::f64::consts::TAU * i as f64 / c as f64;
            [cfg.center_radius * libm::cos(a), cfg.center_radius * libm::sin(a)]
        })
        .collect();

    let mut gens = alloc::vec![TaskGenerator {
        centers: target_centers.clone(),
        label_flip_prob: 0.0,
        label_shift: 0,
    }];
    for (k, &r) in cfg.relatedness.iter().enumerate() {
        let mut rng = RngStream::keyed(cfg.seed, &[purpose::DATA_GEN, u64::MAX - 1, k as u64 + 1]);
        let dir = rng.uniform_in(0.0, core::f64::consts::TAU);
        let shift = [cfg.max_shift * libm::cos(dir), cfg.max_shift * libm::sin(dir)];
        let label_shift = 1 + rng.below(c - 1);
        let (s, co) = libm::sincos(cfg.max_rotation);
        let amount = 1.0 - r;
        let centers = target_centers
            .iter()
            .map(|p| {
                let full = [co * p[0] - s * p[1] + shift[0], s * p[0] + co * p[1] + shift[1]];
                [p[0] + amount * (full[0] - p[0]), p[1] + amount * (full[1] - p[1])]
            })
            .collect();
        gens.push(TaskGenerator {
            centers,
            label_flip_prob: amount / 2.0,
            label_shift,
        });
    }
    Ok(gens)
}

fn draw_split(
    cfg: &TaskFamilyConfig,
    gen: &TaskGenerator,
    task: usize,
    kind: SplitKind,
    rows: usize,
) -> Result<DataSplit> {
    let split_key = match kind {
        SplitKind::Train => 0,
        SplitKind::Val => 1,
        SplitKind::Test => 2,
    };
    let mut rng = RngStream::keyed(cfg.seed, &[purpose::DATA_GEN, task as u64, split_key]);
    let d = cfg.input_dim;
    let c = cfg.n_classes;
    let mut inputs = Vec::with_capacity(rows * d);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let class = i % c;
        let center = gen.centers[class];
        for j in 0..d {
            let mean = center.get(j).copied().unwrap_or(0.0);
            inputs.push(mean + cfg.noise_std * rng.normal());
        }
        let flip = rng.bernoulli(gen.label_flip_prob);
        labels.push(if flip { (class + gen.label_shift) % c } else { class });
    }
    DataSplit::new(TaskId(task as u32), d, inputs, Targets::Labels { labels, n_classes: c })
}

/// Draws a complete family. Deterministic in `cfg.seed`.
pub fn generate_family(cfg: &TaskFamilyConfig) -> Result<TaskFamily> {
    let gens = task_generators(cfg)?;
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    for (k, gen) in gens.iter().enumerate() {
        tasks.push(TaskSplits {
            train: draw_split(cfg, gen, k, SplitKind::Train, cfg.train_rows(k))?,
            val: draw_split(cfg, gen, k, SplitKind::Val, cfg.val_samples)?,
            test: draw_split(cfg, gen, k, SplitKind::Test, cfg.test_samples)?,
        });
    }
    TaskFamily::new(tasks)
}

/// Draws `n` rows from `(1 - Z) tgt + Z aux` with `Z ~ Bernoulli(λ / (1 + λ))`,
/// each with replacement. The result carries the target's task id.
pub fn sample_interpolated(
    tgt: &DataSplit,
    aux: &DataSplit,
    lambda: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<DataSplit> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be finite and nonnegative"));
    }
    if tgt.input_dim() != aux.input_dim() || tgt.n_classes() != aux.n_classes() {
        return Err(Error::invalid(
            "interpolation",
            "target and auxiliary splits are incompatible",
        ));
    }
    if tgt.is_empty() || aux.is_empty() {
        return Err(Error::Empty("interpolation source split"));
    }
    let p_aux = lambda / (1.0 + lambda);
    let mut inputs = Vec::with_capacity(n * tgt.input_dim());
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::new();
    for _ in 0..n {
        let src = if rng.bernoulli(p_aux) { aux } else { tgt };
        let r = rng.below(src.len());
        inputs.extend_from_slice(src.row(r));
        match src.targets() {
            Targets::Labels { labels: l, .. } => labels.push(l[r]),
            Targets::Values { values: v, dim } => values.extend_from_slice(&v[r * dim..(r + 1) * dim]),
        }
    }
    let targets = match tgt.targets() {
        Targets::Labels { n_classes, .. } => Targets::Labels {
            labels,
            n_classes: *n_classes,
        },
        Targets::Values { dim, .. } => Targets::Values { values, dim: *dim },
    };
    DataSplit::new(tgt.task_id(), tgt.input_dim(), inputs, targets)
}

/// Train splits of every task with a strictly positive weight.
pub fn branch_data_view<'a>(family: &'a TaskFamily, w: &TaskWeighting) -> Result<BTreeMap<TaskId, &'a DataSplit>> {
    let mut out = BTreeMap::new();
    for (id, weight) in w.iter() {
        if weight > 0.0 {
            out.insert(id, &family.task(id)?.train);
        }
    }
    Ok(out)
}
