//! Outcome sources for the simulator: a synthetic noisy-channel cascade
//! with an exactly enumerable pmf, and replay of recorded trace files.
//!
//! Both sources expose the same two views: an exact joint distribution for
//! diagnostics (closed-form for the generator, empirical for traces) and a
//! seeded outcome stream for simulation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UssError};
use crate::model::{JointDistribution, Outcome, MAX_SENSORS};

/// Synthetic cascade over a binary symmetric channel.
///
/// A label is drawn with bias `label_bias`, then a single uniform `U` drives
/// all sensors: sensor `j` errs iff `U < gamma_targets[j-1]`. Because the
/// targets are nonincreasing, the error events are nested sample-wise, so
/// the raw construction satisfies strong dominance with marginal error
/// rates exactly equal to the targets.
///
/// When `perturb_prob > 0` and sensor 1 is correct (which forces all deeper
/// sensors correct in the raw draw), each of sensors `2..=K` is flipped
/// independently with that probability. This breaks sample-wise nesting
/// while shifting the deeper marginals by exactly
/// `perturb_prob * (1 - gamma_targets[0])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BscConfig {
    pub label_bias: f64,
    pub gamma_targets: Vec<f64>,
    #[serde(default)]
    pub perturb_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BscConfig {
    pub fn k(&self) -> usize {
        self.gamma_targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.label_bias > 0.0 && self.label_bias < 1.0) {
            return Err(UssError::Config(format!(
                "label_bias must lie in (0, 1), got {}",
                self.label_bias
            )));
        }
        let k = self.k();
        if k == 0 || k > MAX_SENSORS {
            return Err(UssError::Config(format!(
                "need between 1 and {MAX_SENSORS} gamma targets, got {k}"
            )));
        }
        for &g in &self.gamma_targets {
            if !(g >= 0.0 && g < 1.0) {
                return Err(UssError::Config(format!(
                    "gamma targets must lie in [0, 1), got {g}"
                )));
            }
        }
        if self.gamma_targets.windows(2).any(|w| w[1] > w[0]) {
            return Err(UssError::Config(
                "gamma targets must be nonincreasing along the cascade".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.perturb_prob) {
            return Err(UssError::Config(format!(
                "perturb_prob must lie in [0, 1], got {}",
                self.perturb_prob
            )));
        }
        Ok(())
    }
}

/// Closed-form pmf of the generator. The single uniform partitions `[0, 1)`
/// into bands: in band `m` exactly sensors `1..=m` err. The perturbation
/// only acts in the all-correct band (`m = 0`), where it fans out over the
/// `2^(K-1)` flip patterns of sensors `2..=K`.
pub fn bsc_enumerate(cfg: &BscConfig) -> Result<JointDistribution> {
    cfg.validate()?;
    let k = cfg.k();
    let g = &cfg.gamma_targets;
    let q = cfg.perturb_prob;
    let mut entries: Vec<(Outcome, f64)> = Vec::new();

    for (y, p_y) in [(true, cfg.label_bias), (false, 1.0 - cfg.label_bias)] {
        for m in 0..=k {
            let upper = if m == 0 { 1.0 } else { g[m - 1] };
            let lower = if m < k { g[m] } else { 0.0 };
            let width = upper - lower;
            if width <= 0.0 {
                continue;
            }
            let mass = p_y * width;
            let base: Vec<bool> = (1..=k).map(|j| if j <= m { !y } else { y }).collect();
            if m == 0 && q > 0.0 && k > 1 {
                let patterns = 1u32 << (k - 1);
                for flips in 0..patterns {
                    let ones = flips.count_ones();
                    let p_flip =
                        q.powi(ones as i32) * (1.0 - q).powi((k as u32 - 1 - ones) as i32);
                    if p_flip == 0.0 {
                        continue;
                    }
                    let mut sensors = base.clone();
                    for (bit, s) in sensors.iter_mut().enumerate().skip(1) {
                        if (flips >> (bit - 1)) & 1 == 1 {
                            *s = !*s;
                        }
                    }
                    entries.push((Outcome::pack(y, &sensors), mass * p_flip));
                }
            } else {
                entries.push((Outcome::pack(y, &base), mass));
            }
        }
    }
    JointDistribution::from_pmf(k, entries)
}

fn sample_bsc(cfg: &BscConfig, rng: &mut ChaCha12Rng) -> Outcome {
    let y = rng.gen::<f64>() < cfg.label_bias;
    let u: f64 = rng.gen();
    let k = cfg.k();
    let mut sensors: Vec<bool> = (0..k)
        .map(|j| if u < cfg.gamma_targets[j] { !y } else { y })
        .collect();
    if cfg.perturb_prob > 0.0 && sensors[0] == y {
        for s in sensors.iter_mut().skip(1) {
            if rng.gen::<f64>() < cfg.perturb_prob {
                *s = !*s;
            }
        }
    }
    Outcome::pack(y, &sensors)
}

/// Recorded outcomes replayed by uniform resampling. The canonical file
/// format is CSV with header `y,y1,...,yK` and 0/1 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    name: String,
    k: usize,
    rows: Vec<Outcome>,
}

impl TraceDataset {
    pub fn new(name: impl Into<String>, k: usize, rows: Vec<Outcome>) -> Result<Self> {
        if k == 0 || k > MAX_SENSORS {
            return Err(UssError::Config(format!(
                "trace needs between 1 and {MAX_SENSORS} sensors, got {k}"
            )));
        }
        if rows.is_empty() {
            return Err(UssError::Config("trace has no rows".into()));
        }
        let limit = 1u32 << (k + 1);
        if rows.iter().any(|o| o.bits() >= limit) {
            return Err(UssError::Config("trace row out of range for K".into()));
        }
        Ok(TraceDataset {
            name: name.into(),
            k,
            rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Outcome] {
        &self.rows
    }

    pub fn read_from(name: impl Into<String>, reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| UssError::Parse("empty trace file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 2 || cols[0] != "y" {
            return Err(UssError::Parse(format!(
                "trace header must be y,y1,...,yK, got {header:?}"
            )));
        }
        let k = cols.len() - 1;
        for (idx, col) in cols.iter().enumerate().skip(1) {
            if *col != format!("y{idx}") {
                return Err(UssError::Parse(format!(
                    "trace header column {idx} must be y{idx}, got {col:?}"
                )));
            }
        }
        let mut rows = Vec::new();
        for (line_no, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != k + 1 {
                return Err(UssError::Parse(format!(
                    "trace row {} has {} fields, expected {}",
                    line_no + 2,
                    fields.len(),
                    k + 1
                )));
            }
            let mut bits = Vec::with_capacity(k + 1);
            for f in &fields {
                match f.trim() {
                    "0" => bits.push(false),
                    "1" => bits.push(true),
                    other => {
                        return Err(UssError::Parse(format!(
                            "trace row {} has non-binary value {other:?}",
                            line_no + 2
                        )))
                    }
                }
            }
            rows.push(Outcome::pack(bits[0], &bits[1..]));
        }
        TraceDataset::new(name, k, rows)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        let file = File::open(path)?;
        Self::read_from(name, BufReader::new(file))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = std::iter::once("y".to_string())
            .chain((1..=self.k).map(|j| format!("y{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut fields = Vec::with_capacity(self.k + 1);
            fields.push((row.label() as u8).to_string());
            for j in 1..=self.k {
                fields.push((row.sensor(j) as u8).to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Empirical joint pmf: relative frequency of each distinct row.
    pub fn empirical_pmf(&self) -> Result<JointDistribution> {
        let n = self.rows.len() as f64;
        let mut counts = std::collections::BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.bits()).or_insert(0u64) += 1;
        }
        JointDistribution::from_pmf(
            self.k,
            counts
                .into_iter()
                .map(|(bits, c)| (Outcome::from_bits(bits), c as f64 / n)),
        )
    }
}

/// An outcome source: either the synthetic generator or trace replay.
#[derive(Debug, Clone)]
pub enum Environment {
    Bsc(BscConfig),
    Trace(TraceDataset),
}

impl Environment {
    pub fn k(&self) -> usize {
        match self {
            Environment::Bsc(cfg) => cfg.k(),
            Environment::Trace(t) => t.k(),
        }
    }

    /// Exact distribution used for diagnostics: the closed-form pmf for the
    /// generator, the empirical pmf for traces.
    pub fn exact_distribution(&self) -> Result<JointDistribution> {
        match self {
            Environment::Bsc(cfg) => bsc_enumerate(cfg),
            Environment::Trace(t) => t.empirical_pmf(),
        }
    }

    /// Seeded outcome stream for one repetition. The stream depends only on
    /// `(base_seed, repetition)`, never on the policy, so runs with paired
    /// seeds see identical outcome sequences.
    pub fn stream(&self, base_seed: u64, repetition: u64) -> OutcomeStream<'_> {
        OutcomeStream {
            env: self,
            rng: ChaCha12Rng::from_seed(derive_rep_seed(base_seed, repetition)),
        }
    }
}

/// Expands `(base_seed, repetition)` into an independent 256-bit stream
/// seed with a splitmix64 chain, so repetitions are decorrelated without
/// any cross-repetition state.
pub fn derive_rep_seed(base_seed: u64, repetition: u64) -> [u8; 32] {
    fn splitmix64(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut state = base_seed ^ splitmix64(&mut { repetition.wrapping_add(0x1234_5678_9ABC_DEF0) });
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// Stateful per-repetition sampler.
pub struct OutcomeStream<'a> {
    env: &'a Environment,
    rng: ChaCha12Rng,
}

impl OutcomeStream<'_> {
    pub fn next_outcome(&mut self) -> Outcome {
        match self.env {
            Environment::Bsc(cfg) => sample_bsc(cfg, &mut self.rng),
            Environment::Trace(t) => t.rows()[self.rng.gen_range(0..t.len())],
        }
    }
}
