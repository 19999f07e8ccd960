//! Synthetic three-class benchmark: samples are adaptive Hermite expansions
//! whose first three coefficients lie on one of three separable spherical
//! shells, with Gaussian nuisance coefficients and per-sample jitter of the
//! translation/dilation parameters.

use crate::error::{Error, Result};
use crate::hermite::{adaptive_hermite, feasible_region_check, SampleGrid, VpParams};
use crate::io::LabeledDataset;
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Generator settings. The defaults produce the benchmark used throughout:
/// three classes of 5000 signals of length 100, shells of radius 1, 2, 3 with
/// thickness 0.2, two nuisance coefficients of standard deviation 0.3, and
/// mild translation/dilation jitter around the center of the feasible region.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples_per_class: usize,
    /// Signal length; the sampling grid is `0, 1, …, m−1`.
    pub m: usize,
    /// Number of generator coefficients (first three carry the class shells,
    /// the rest are nuisance). Must be at least 3.
    pub n_gen: usize,
    pub shell_radii: [f64; 3],
    pub shell_thickness: f64,
    pub nuisance_std: f64,
    pub tau_mean: f64,
    pub tau_std: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
    pub seed: u64,
    /// When set, every signal is rescaled to unit energy and the removed
    /// scale is stored in the metadata. This hides the shell radius from the
    /// raw signal amplitude, making the classes much harder to separate;
    /// it is off by default.
    pub unit_energy: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_signal_length(100)
    }
}

impl SynthConfig {
    /// Defaults scaled to a signal length: translation centered at `m/2`
    /// with jitter `m/50`, dilation `12/m` with 5% relative jitter.
    pub fn for_signal_length(m: usize) -> SynthConfig {
        let mf = m as f64;
        SynthConfig {
            samples_per_class: 5000,
            m,
            n_gen: 5,
            shell_radii: [1.0, 2.0, 3.0],
            shell_thickness: 0.2,
            nuisance_std: 0.3,
            tau_mean: mf / 2.0,
            tau_std: mf / 50.0,
            lambda_mean: 12.0 / mf,
            lambda_std: 12.0 / mf / 20.0,
            seed: 0,
            unit_energy: false,
        }
    }

    pub fn class_count(&self) -> usize {
        self.shell_radii.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "samples_per_class must be positive".into(),
            ));
        }
        if self.m < 2 {
            return Err(Error::InvalidArgument(
                "signal length must be at least 2".into(),
            ));
        }
        if self.n_gen < 3 {
            return Err(Error::InvalidArgument(
                "generator needs at least the three shell coefficients".into(),
            ));
        }
        if !(self.shell_thickness.is_finite() && self.shell_thickness >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shell thickness must be nonnegative, got {}",
                self.shell_thickness
            )));
        }
        for (i, &r) in self.shell_radii.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "shell radius {i} must be positive, got {r}"
                )));
            }
        }
        if self.shell_radii[0] <= self.shell_thickness {
            return Err(Error::InvalidArgument(format!(
                "innermost radius {} must exceed the thickness {}",
                self.shell_radii[0], self.shell_thickness
            )));
        }
        for pair in self.shell_radii.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidArgument(format!(
                    "shell radii must increase, got {} after {}",
                    pair[1], pair[0]
                )));
            }
            if pair[1] - pair[0] <= 2.0 * self.shell_thickness {
                return Err(Error::InvalidArgument(format!(
                    "shells {} and {} overlap for thickness {}",
                    pair[0], pair[1], self.shell_thickness
                )));
            }
        }
        for (name, v) in [
            ("nuisance_std", self.nuisance_std),
            ("tau_std", self.tau_std),
            ("lambda_std", self.lambda_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        let mean_params = VpParams::new(self.tau_mean, self.lambda_mean)?;
        let interval = (0.0, (self.m - 1) as f64);
        if !feasible_region_check(&mean_params, interval)? {
            return Err(Error::InvalidArgument(format!(
                "mean parameters (τ={}, λ={}) fall outside the feasible region of [0, {}]",
                self.tau_mean,
                self.lambda_mean,
                self.m - 1
            )));
        }
        Ok(())
    }
}

/// Draws a point uniformly distributed on a spherical shell: direction from
/// a normalized Gaussian, radius uniform in `[radius−thickness,
/// radius+thickness]`.
pub fn shell_point<R: Rng + ?Sized>(
    radius: f64,
    thickness: f64,
    rng: &mut R,
) -> Result<[f64; 3]> {
    if !(radius.is_finite() && thickness.is_finite()) {
        return Err(Error::NonFinite(format!(
            "shell radius {radius} / thickness {thickness}"
        )));
    }
    if thickness < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "shell thickness must be nonnegative, got {thickness}"
        )));
    }
    if radius <= thickness {
        return Err(Error::InvalidArgument(format!(
            "shell radius {radius} must exceed its thickness {thickness}"
        )));
    }
    let mut direction = [0.0f64; 3];
    loop {
        for d in &mut direction {
            *d = rng.sample(StandardNormal);
        }
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for d in &mut direction {
                *d /= norm;
            }
            break;
        }
    }
    let r = if thickness == 0.0 {
        radius
    } else {
        rng.random_range(radius - thickness..=radius + thickness)
    };
    Ok([direction[0] * r, direction[1] * r, direction[2] * r])
}

/// Upper bound on rejection-sampling attempts for one jitter draw.
const MAX_JITTER_TRIES: usize = 1000;

/// Draws `(τ, λ)` from independent normals truncated to the feasible region.
fn draw_feasible_params<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    interval: (f64, f64),
    rng: &mut R,
) -> Result<VpParams> {
    let tau_dist = Normal::new(cfg.tau_mean, cfg.tau_std)
        .map_err(|e| Error::InvalidArgument(format!("translation jitter: {e}")))?;
    let lambda_dist = Normal::new(cfg.lambda_mean, cfg.lambda_std)
        .map_err(|e| Error::InvalidArgument(format!("dilation jitter: {e}")))?;
    for _ in 0..MAX_JITTER_TRIES {
        let tau = tau_dist.sample(rng);
        let lambda = lambda_dist.sample(rng);
        let Ok(params) = VpParams::new(tau, lambda) else {
            continue;
        };
        if feasible_region_check(&params, interval)? {
            return Ok(params);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no feasible (τ, λ) draw in {MAX_JITTER_TRIES} attempts; \
         the jitter distribution is incompatible with the interval"
    )))
}

fn stream_seed(base: u64, split: u64, class: u64) -> u64 {
    base ^ (split + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (class + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn generate_split(cfg: &SynthConfig, split: u64) -> Result<LabeledDataset> {
    let grid = SampleGrid::unit(cfg.m)?;
    let interval = grid.interval();
    let nuisance = Normal::new(0.0, cfg.nuisance_std)
        .map_err(|e| Error::InvalidArgument(format!("nuisance distribution: {e}")))?;
    let mut signals = Vec::with_capacity(cfg.class_count() * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(signals.capacity());
    let mut metadata = Vec::with_capacity(signals.capacity());
    for class in 0..cfg.class_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, split, class as u64));
        for _ in 0..cfg.samples_per_class {
            let shell = shell_point(cfg.shell_radii[class], cfg.shell_thickness, &mut rng)?;
            let mut c = DVector::zeros(cfg.n_gen);
            c[0] = shell[0];
            c[1] = shell[1];
            c[2] = shell[2];
            for j in 3..cfg.n_gen {
                c[j] = nuisance.sample(&mut rng);
            }
            let params = draw_feasible_params(cfg, interval, &mut rng)?;
            let basis = adaptive_hermite(&grid, cfg.n_gen, &params)?;
            let mut x = &basis.phi * &c;
            let scale = if cfg.unit_energy {
                let norm = x.norm();
                if norm == 0.0 {
                    return Err(Error::Contract(
                        "generated signal has zero energy; cannot normalize".into(),
                    ));
                }
                x /= norm;
                norm
            } else {
                1.0
            };
            signals.push(x);
            labels.push(class);
            metadata.push(vec![
                ("class".to_string(), class.to_string()),
                ("tau".to_string(), format_value(params.tau)),
                ("lambda".to_string(), format_value(params.lambda)),
                ("scale".to_string(), format_value(scale)),
            ]);
        }
    }
    LabeledDataset::new(signals, labels, cfg.class_count())?.with_metadata(metadata)
}

/// Generates the train and test splits from independent derived seeds.
pub fn generate(cfg: &SynthConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    cfg.validate()?;
    Ok((generate_split(cfg, 0)?, generate_split(cfg, 1)?))
}

/// Writes the per-sample generator parameters of both splits as
/// `split,index,class,tau,lambda,scale`.
pub fn save_metadata(
    train: &LabeledDataset,
    test: &LabeledDataset,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "split,index,class,tau,lambda,scale").map_err(|e| Error::io(path, e))?;
    for (name, set) in [("train", train), ("test", test)] {
        let meta = set.metadata().ok_or_else(|| {
            Error::Contract(format!("{name} split carries no generator metadata"))
        })?;
        for (i, row) in meta.iter().enumerate() {
            let get = |key: &str| -> Result<&str> {
                row.iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .ok_or_else(|| {
                        Error::Contract(format!("metadata row {i} of {name} lacks '{key}'"))
                    })
            };
            writeln!(
                w,
                "{name},{i},{},{},{},{}",
                get("class")?,
                get("tau")?,
                get("lambda")?,
                get("scale")?
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
