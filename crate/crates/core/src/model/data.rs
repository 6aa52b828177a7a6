use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::metrics::{BinaryMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskId {
    /// Pretraining proxy: large bright blobs.
    A,
    /// Shifted fine-tuning target: smaller, dimmer, off-centre blobs.
    B,
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(TaskId::A),
            "b" => Ok(TaskId::B),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected A or B"))),
        }
    }
}

/// Generator settings for ellipsoidal blobs on Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub id: TaskId,
    pub side: usize,
    /// Inclusive range of blobs per volume.
    pub blobs: (usize, usize),
    /// Range of each semi-axis in voxels.
    pub radius: (f64, f64),
    /// Range of blob centre coordinates along every axis.
    pub centre: (f64, f64),
    pub intensity: f64,
    pub background: f64,
    pub noise: f64,
    /// Accepted foreground voxel counts; draws outside are resampled.
    pub foreground: (usize, usize),
    pub seed: u64,
}

impl SynthTask {
    pub fn a(seed: u64) -> Self {
        Self {
            id: TaskId::A,
            side: 16,
            blobs: (1, 2),
            radius: (3.0, 5.0),
            centre: (4.0, 11.0),
            intensity: 1.0,
            background: 0.0,
            noise: 0.3,
            foreground: (60, 1800),
            seed,
        }
    }

    pub fn b(seed: u64) -> Self {
        Self {
            id: TaskId::B,
            side: 16,
            blobs: (1, 2),
            radius: (2.0, 3.5),
            centre: (2.5, 12.5),
            intensity: 0.55,
            background: 0.1,
            noise: 0.3,
            foreground: (15, 700),
            seed,
        }
    }

    pub fn new(id: TaskId, seed: u64) -> Self {
        match id {
            TaskId::A => Self::a(seed),
            TaskId::B => Self::b(seed),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Expected foreground voxels per volume ignoring overlap and
    /// resampling: mean blob count times the ellipsoid volume at the mean
    /// of independent uniform semi-axes.
    pub fn nominal_foreground(&self) -> f64 {
        let mean_r = (self.radius.0 + self.radius.1) / 2.0;
        let mean_k = (self.blobs.0 + self.blobs.1) as f64 / 2.0;
        mean_k * 4.0 / 3.0 * std::f64::consts::PI * mean_r.powi(3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Volume,
    pub label: BinaryMask,
}

struct Blob {
    centre: [f64; 3],
    radii: [f64; 3],
}

impl Blob {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.centre[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }
}

fn draw_label(task: &SynthTask, rng: &mut Rng) -> BinaryMask {
    let s = task.side;
    let dims = [s; 3];
    let k = task.blobs.0 + rng.below(task.blobs.1 - task.blobs.0 + 1);
    let blobs: Vec<Blob> = (0..k)
        .map(|_| Blob {
            centre: [0; 3].map(|_| rng.uniform_in(task.centre.0, task.centre.1)),
            radii: [0; 3].map(|_| rng.uniform_in(task.radius.0, task.radius.1)),
        })
        .collect();
    let mut label = BinaryMask::empty(dims, [1.0; 3]);
    for z in 0..s {
        for y in 0..s {
            for x in 0..s {
                let p = [x as f64, y as f64, z as f64];
                if blobs.iter().any(|b| b.contains(p)) {
                    label.set(x, y, z, true);
                }
            }
        }
    }
    label
}

/// `n` image/label pairs. Sample `i` depends only on the task seed and `i`.
pub fn generate_dataset(task: &SynthTask, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if task.side == 0 || task.blobs.0 == 0 || task.blobs.0 > task.blobs.1 || task.foreground.0 > task.foreground.1 {
        return Err(Error::Config(format!("ill-formed task {task:?}")));
    }
    let mut root = Rng::new(task.seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rng = root.fork();
        let label = loop {
            let l = draw_label(task, &mut rng);
            let c = l.count();
            if (task.foreground.0..=task.foreground.1).contains(&c) {
                break l;
            }
        };
        let mut image = Volume::zeros(label.dims(), [1.0; 3]);
        for (v, &fg) in image.data_mut().iter_mut().zip(label.voxels()) {
            let base = if fg { task.intensity } else { task.background };
            *v = base + task.noise * rng.normal();
        }
        out.push(Sample { image, label });
    }
    Ok(out)
}
