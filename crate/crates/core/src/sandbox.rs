//! Non-IID semi-supervised experiment cells.
//!
//! A cell fixes the in-distribution source, the kind and source of the OOD
//! contamination, the contamination percentage of the unlabelled pool, the
//! labelled budget and a seed. [`build_run`] turns a cell plus a run index
//! into disjoint labelled / unlabelled / test partitions, standardized with
//! statistics of the partition itself.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{sample_indices, FeatureMatrix, LabeledFeatureSet, Standardization};
use crate::rng::{self, derive_seed, shuffle, SeededRng};

const SPLIT_STREAM: u64 = 0x53_504c_4954;
const RUN_STREAM: u64 = 0x52_554e;

/// Kind of OOD contamination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OodType {
    /// The other half of the IOD dataset's classes.
    OH,
    /// A semantically similar dataset.
    Sim,
    /// A semantically different dataset.
    Dif,
}

impl fmt::Display for OodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OodType::OH => "OH",
            OodType::Sim => "Sim",
            OodType::Dif => "Dif",
        })
    }
}

impl FromStr for OodType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oh" | "other-half" => Ok(OodType::OH),
            "sim" | "similar" => Ok(OodType::Sim),
            "dif" | "diff" | "different" => Ok(OodType::Dif),
            other => Err(Error::Config(format!("unknown OOD type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub s_iod: String,
    pub t_ood: OodType,
    pub s_uood: String,
    /// Percentage of the unlabelled pool drawn from the OOD source.
    pub pct_uood: u32,
    pub n_l: usize,
    pub n_u: usize,
    pub n_test: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub runs: usize,
}

impl SandboxConfig {
    pub const PCT_LEVELS: [u32; 3] = [0, 50, 100];
    pub const STANDARD_N_L: [usize; 3] = [60, 100, 150];
    pub const DEFAULT_N_U: usize = 3000;
    pub const DEFAULT_N_TEST: usize = 1000;
    pub const DEFAULT_RUNS: usize = 10;

    pub fn validate(&self) -> Result<()> {
        if !Self::PCT_LEVELS.contains(&self.pct_uood) {
            return Err(Error::Config(format!(
                "pct_uood must be one of 0, 50, 100; got {}",
                self.pct_uood
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.n_l == 0 || self.n_u == 0 || self.n_test == 0 || self.runs == 0 {
            return Err(Error::Config("n_l, n_u, n_test and runs must be positive".into()));
        }
        Ok(())
    }

    /// Stricter check for the standard grid: five classes and
    /// `n_l ∈ {60, 100, 150}`.
    pub fn validate_standard_grid(&self) -> Result<()> {
        self.validate()?;
        if self.num_classes != 5 {
            return Err(Error::Config("the standard grid uses 5 classes".into()));
        }
        if !Self::STANDARD_N_L.contains(&self.n_l) {
            return Err(Error::Config(format!("the standard grid n_l must be 60, 100 or 150; got {}", self.n_l)));
        }
        Ok(())
    }

    /// Number of OOD rows in the unlabelled pool (half rounds up).
    pub fn ood_count(&self) -> usize {
        (self.n_u * self.pct_uood as usize + 50) / 100
    }
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            s_iod: "blobs".into(),
            t_ood: OodType::Dif,
            s_uood: "blobs@3".into(),
            pct_uood: 0,
            n_l: 60,
            n_u: Self::DEFAULT_N_U,
            n_test: Self::DEFAULT_N_TEST,
            num_classes: 5,
            seed: 0,
            runs: Self::DEFAULT_RUNS,
        }
    }
}

/// Seeded random halving of a class list into (IOD, OOD) classes.
pub fn split_other_half(classes: &[u32], seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    if classes.len() < 2 || classes.len() % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "other-half split needs an even number of classes (≥ 2), got {}",
            classes.len()
        )));
    }
    let mut shuffled = classes.to_vec();
    shuffle(&mut shuffled, &mut rng::rng_from_seed(seed));
    let (a, b) = shuffled.split_at(classes.len() / 2);
    let (mut iod, mut ood) = (a.to_vec(), b.to_vec());
    iod.sort_unstable();
    ood.sort_unstable();
    Ok((iod, ood))
}

/// Source data for a cell. For `OH` cells `ood` is unused.
#[derive(Debug, Clone)]
pub struct Sources {
    pub iod: LabeledFeatureSet,
    pub ood: Option<FeatureMatrix>,
}

/// Source-row indices behind a run's partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub iod_classes: Vec<u32>,
    /// Rows of the IOD source.
    pub labelled: Vec<usize>,
    /// Rows of the IOD source.
    pub unlabelled_iod: Vec<usize>,
    /// Rows of the OOD source (the IOD source itself for `OH`).
    pub unlabelled_ood: Vec<usize>,
    /// Rows of the IOD source.
    pub test: Vec<usize>,
    /// Per unlabelled row, whether it came from the OOD source.
    pub unlabelled_is_ood: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct RunData {
    /// Standardized with `stats_l`; labels remapped to `0..num_classes`.
    pub labelled: LabeledFeatureSet,
    /// Standardized with `stats_u`.
    pub unlabelled: FeatureMatrix,
    /// Standardized with `stats_l`.
    pub test: LabeledFeatureSet,
    pub raw_labelled: FeatureMatrix,
    pub raw_unlabelled: FeatureMatrix,
    pub stats_l: Standardization,
    pub stats_u: Standardization,
    pub provenance: RunProvenance,
}

fn distinct_classes(labels: &[u32]) -> Vec<u32> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

fn take(pool: &mut Vec<usize>, count: usize, what: &str) -> Result<Vec<usize>> {
    if pool.len() < count {
        return Err(Error::InsufficientRows(format!(
            "{what} needs {count} rows, only {} left (short by {})",
            pool.len(),
            count - pool.len()
        )));
    }
    Ok(pool.drain(..count).collect())
}

fn class_balanced_counts(total: usize, classes: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut counts = vec![total / classes; classes];
    let mut order: Vec<usize> = (0..classes).collect();
    shuffle(&mut order, rng);
    for &c in order.iter().take(total % classes) {
        counts[c] += 1;
    }
    counts
}

/// Builds run `run_index` of a cell. Everything random derives from
/// `(config.seed, run_index)`, except the class split which is shared by all
/// runs of the cell.
pub fn build_run(config: &SandboxConfig, sources: &Sources, run_index: usize) -> Result<RunData> {
    config.validate()?;
    let k = config.num_classes;
    let classes = distinct_classes(&sources.iod.labels);
    let (iod_classes, ood_classes) = if classes.len() == 2 * k {
        split_other_half(&classes, derive_seed(config.seed, SPLIT_STREAM))?
    } else if classes.len() == k && config.t_ood != OodType::OH {
        (classes, Vec::new())
    } else {
        return Err(Error::Config(format!(
            "IOD source {} has {} classes; need {} ({} for other-half contamination)",
            config.s_iod,
            classes.len(),
            if config.t_ood == OodType::OH { 2 * k } else { k },
            2 * k
        )));
    };

    let mut rng = rng::stream(derive_seed(config.seed, RUN_STREAM), run_index as u64);

    // per-class shuffled pools of IOD rows
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (row, label) in sources.iod.labels.iter().enumerate() {
        if let Ok(c) = iod_classes.binary_search(label) {
            per_class[c].push(row);
        }
    }
    for pool in &mut per_class {
        shuffle(pool, &mut rng);
    }

    let counts = class_balanced_counts(config.n_l, k, &mut rng);
    let mut labelled = Vec::with_capacity(config.n_l);
    for (c, (&count, pool)) in counts.iter().zip(per_class.iter_mut()).enumerate() {
        labelled.extend(take(pool, count, &format!("labelled class {}", iod_classes[c]))?);
    }
    shuffle(&mut labelled, &mut rng);

    let mut remaining: Vec<usize> = per_class.into_iter().flatten().collect();
    remaining.sort_unstable();
    shuffle(&mut remaining, &mut rng);

    let n_ood = config.ood_count();
    let n_iod_u = config.n_u - n_ood;
    let unlabelled_iod = take(&mut remaining, n_iod_u, "unlabelled IOD portion")?;
    let test = take(&mut remaining, config.n_test, "test split")?;

    let (ood_matrix, ood_rows): (&FeatureMatrix, Vec<usize>) = match config.t_ood {
        OodType::OH => {
            let mut rows: Vec<usize> = sources
                .iod
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| ood_classes.binary_search(l).is_ok())
                .map(|(i, _)| i)
                .collect();
            shuffle(&mut rows, &mut rng);
            let picked = take(&mut rows, n_ood, "OOD portion")?;
            (&sources.iod.features, picked)
        }
        OodType::Sim | OodType::Dif => match &sources.ood {
            Some(ood) => {
                if ood.d() != sources.iod.features.d() {
                    return Err(Error::DimensionMismatch {
                        left: sources.iod.features.d(),
                        right: ood.d(),
                    });
                }
                let picked = sample_indices(ood.n(), n_ood, &mut rng).map_err(|_| {
                    Error::InsufficientRows(format!(
                        "OOD portion needs {n_ood} rows, source {} has {} (short by {})",
                        config.s_uood,
                        ood.n(),
                        n_ood - ood.n()
                    ))
                })?;
                (ood, picked)
            }
            None if n_ood == 0 => (&sources.iod.features, Vec::new()),
            None => {
                return Err(Error::Config(format!(
                    "cell needs OOD rows but source {} is not loaded",
                    config.s_uood
                )))
            }
        },
    };

    // unlabelled pool: IOD rows then OOD rows, shuffled together
    let mut order: Vec<(bool, usize)> = unlabelled_iod
        .iter()
        .map(|&i| (false, i))
        .chain(ood_rows.iter().map(|&i| (true, i)))
        .collect();
    shuffle(&mut order, &mut rng);
    let d = sources.iod.features.d();
    let mut raw_u = Vec::with_capacity(order.len() * d);
    for &(is_ood, i) in &order {
        let src = if is_ood { ood_matrix } else { &sources.iod.features };
        raw_u.extend_from_slice(src.row(i));
    }
    let raw_unlabelled = FeatureMatrix::new(format!("{}+{}", config.s_iod, config.s_uood), order.len(), d, raw_u)?;

    let relabel = |rows: &[usize]| -> Result<LabeledFeatureSet> {
        let features = sources.iod.features.select_rows(rows)?;
        let labels = rows
            .iter()
            .map(|&i| iod_classes.binary_search(&sources.iod.labels[i]).unwrap() as u32)
            .collect();
        LabeledFeatureSet::new(features, labels, k)
    };
    let raw_l = relabel(&labelled)?;
    let raw_test = relabel(&test)?;

    let stats_l = Standardization::fit(&raw_l.features);
    let stats_u = Standardization::fit(&raw_unlabelled);

    Ok(RunData {
        labelled: LabeledFeatureSet::new(stats_l.apply(&raw_l.features)?, raw_l.labels.clone(), k)?,
        unlabelled: stats_u.apply(&raw_unlabelled)?,
        test: LabeledFeatureSet::new(stats_l.apply(&raw_test.features)?, raw_test.labels, k)?,
        raw_labelled: raw_l.features,
        raw_unlabelled,
        stats_l,
        stats_u,
        provenance: RunProvenance {
            iod_classes,
            labelled,
            unlabelled_iod,
            unlabelled_ood: ood_rows,
            test,
            unlabelled_is_ood: order.iter().map(|(o, _)| *o).collect(),
        },
    })
}

/// Image tensor shape, height × width × channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// `n` images of 8-bit pixels, image-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseImages {
    pub shape: ImageShape,
    pub n: usize,
    pub pixels: Vec<u8>,
}

impl NoiseImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.shape.pixels();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// One row per image, pixel values as features.
    pub fn to_features(&self, name: &str) -> Result<FeatureMatrix> {
        FeatureMatrix::new(
            name,
            self.n,
            self.shape.pixels(),
            self.pixels.iter().map(|&p| p as f64).collect(),
        )
    }
}

pub const GAUSSIAN_NOISE_VARIANCE: f64 = 10.0;
/// Mid-gray offset added before clipping to `[0, 255]`.
pub const GAUSSIAN_NOISE_OFFSET: f64 = 128.0;

/// Zero-mean, variance-10 draws that [`gen_gaussian_noise`] turns into pixels.
pub fn gaussian_noise_draws(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::rng_from_seed(seed);
    let sd = GAUSSIAN_NOISE_VARIANCE.sqrt();
    (0..count)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
        .collect()
}

pub fn gen_gaussian_noise(n: usize, shape: ImageShape, seed: u64) -> Result<NoiseImages> {
    if n == 0 || shape.pixels() == 0 {
        return Err(Error::InvalidParameter("noise dataset needs at least one pixel".into()));
    }
    let pixels = gaussian_noise_draws(n * shape.pixels(), seed)
        .into_iter()
        .map(|v| (v + GAUSSIAN_NOISE_OFFSET).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(NoiseImages { shape, n, pixels })
}

/// Every pixel independently 0 or 255 with probability ½.
pub fn gen_salt_pepper(n: usize, shape: ImageShape, seed: u64) -> Result<NoiseImages> {
    if n == 0 || shape.pixels() == 0 {
        return Err(Error::InvalidParameter("noise dataset needs at least one pixel".into()));
    }
    let mut rng = rng::rng_from_seed(seed);
    let mut pixels = Vec::with_capacity(n * shape.pixels());
    // one 64-bit draw feeds 64 pixels
    while pixels.len() < n * shape.pixels() {
        let bits = rand::RngCore::next_u64(&mut rng);
        for b in 0..64 {
            if pixels.len() == n * shape.pixels() {
                break;
            }
            pixels.push(if (bits >> b) & 1 == 1 { 255 } else { 0 });
        }
    }
    Ok(NoiseImages { shape, n, pixels })
}

/// Class centers plus one fixed unit displacement direction per center.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub centers: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
}

impl ClusterLayout {
    /// Centers are standard normal in every coordinate.
    pub fn new(num_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 || dim == 0 {
            return Err(Error::InvalidParameter("clusters need ≥ 2 classes and dim ≥ 1".into()));
        }
        let mut rng = rng::stream(seed, 0);
        let mut normal = || <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let centers: Vec<Vec<f64>> = (0..num_classes).map(|_| (0..dim).map(|_| normal()).collect()).collect();
        let directions = (0..num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Ok(Self { centers, directions })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Center of class `c` after moving `shift` along its direction.
    pub fn shifted_center(&self, c: usize, shift: f64) -> Vec<f64> {
        self.centers[c]
            .iter()
            .zip(&self.directions[c])
            .map(|(x, u)| x + shift * u)
            .collect()
    }

    /// `per_class` isotropic Gaussian points (sd `spread`) around every
    /// shifted center, classes interleaved row by row.
    pub fn sample(&self, per_class: usize, spread: f64, shift: f64, seed: u64, name: &str) -> Result<LabeledFeatureSet> {
        if per_class == 0 {
            return Err(Error::InvalidParameter("per_class must be positive".into()));
        }
        let k = self.num_classes();
        let centers: Vec<Vec<f64>> = (0..k).map(|c| self.shifted_center(c, shift)).collect();
        let mut rng = rng::stream(seed, 1);
        let mut data = Vec::with_capacity(per_class * k * self.dim());
        let mut labels = Vec::with_capacity(per_class * k);
        for _ in 0..per_class {
            for (c, center) in centers.iter().enumerate() {
                for &x in center {
                    data.push(x + spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng));
                }
                labels.push(c as u32);
            }
        }
        let features = FeatureMatrix::new(name, per_class * k, self.dim(), data)?;
        LabeledFeatureSet::new(features, labels, k)
    }
}

/// Gaussian blobs around centers seeded by `seed`; `shift` moves every center
/// by that distance along its own random direction. Each shift level draws
/// its own noise.
pub fn gen_synthetic_clusters(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    shift: f64,
    seed: u64,
) -> Result<LabeledFeatureSet> {
    ClusterLayout::new(num_classes, dim, seed)?.sample(per_class, spread, shift, derive_seed(seed, shift.to_bits()), "blobs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dedims::{density_dissimilarity, DensityKind};
    use crate::feature_store::SubsampleSpec;

    fn blob_sources(classes: usize, per_class: usize, ood_shift: Option<f64>) -> Sources {
        let layout = ClusterLayout::new(classes, 4, 42).unwrap();
        Sources {
            iod: layout.sample(per_class, 1.0, 0.0, 1, "iod").unwrap(),
            ood: ood_shift.map(|s| layout.sample(per_class, 1.0, s, 2, "ood").unwrap().features),
        }
    }

    fn config(pct: u32, n_u: usize) -> SandboxConfig {
        SandboxConfig {
            pct_uood: pct,
            n_l: 60,
            n_u,
            n_test: 200,
            seed: 3,
            runs: 2,
            ..SandboxConfig::default()
        }
    }

    #[test]
    fn other_half_split() {
        let classes: Vec<u32> = (0..10).collect();
        let (a, b) = split_other_half(&classes, 1).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<u32> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, classes);
        assert_eq!(split_other_half(&classes, 1).unwrap(), (a, b));
        let (x, y) = split_other_half(&[4, 9], 0).unwrap();
        assert_eq!((x.len(), y.len()), (1, 1));
        assert!(split_other_half(&[1, 2, 3], 0).is_err());
        assert!(split_other_half(&[], 0).is_err());
    }

    #[test]
    fn zero_contamination_is_all_iod() {
        let run = build_run(&config(0, 500), &blob_sources(5, 400, Some(3.0)), 0).unwrap();
        assert!(run.provenance.unlabelled_is_ood.iter().all(|o| !o));
        assert_eq!(run.unlabelled.n(), 500);
    }

    #[test]
    fn full_contamination_is_all_ood() {
        let run = build_run(&config(100, 1000), &blob_sources(5, 400, Some(3.0)), 0).unwrap();
        assert_eq!(run.provenance.unlabelled_ood.len(), 1000);
        assert!(run.provenance.unlabelled_iod.is_empty());
    }

    #[test]
    fn half_contamination_rounds_within_one() {
        let run = build_run(&config(50, 1001), &blob_sources(5, 400, Some(3.0)), 0).unwrap();
        let ood = run.provenance.unlabelled_ood.len();
        let iod = run.provenance.unlabelled_iod.len();
        assert_eq!(iod + ood, 1001);
        assert!((ood, iod) == (500, 501) || (ood, iod) == (501, 500));
    }

    #[test]
    fn other_half_contamination_uses_remaining_classes() {
        let mut cfg = config(100, 300);
        cfg.t_ood = OodType::OH;
        let sources = blob_sources(10, 200, None);
        let run = build_run(&cfg, &sources, 1).unwrap();
        let iod: BTreeSet<u32> = run.provenance.iod_classes.iter().copied().collect();
        for &row in &run.provenance.unlabelled_ood {
            assert!(!iod.contains(&sources.iod.labels[row]));
        }
        for &row in &run.provenance.labelled {
            assert!(iod.contains(&sources.iod.labels[row]));
        }
    }

    #[test]
    fn shortfall_is_reported() {
        let err = build_run(&config(0, 5000), &blob_sources(5, 400, None), 0).unwrap_err();
        assert!(err.to_string().contains("short by"), "{err}");
        let err = build_run(&config(100, 300), &blob_sources(5, 400, None), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn standardization_uses_partition_statistics() {
        let run = build_run(&config(50, 400), &blob_sources(5, 400, Some(2.0)), 0).unwrap();
        assert_eq!(run.stats_l, Standardization::fit(&run.raw_labelled));
        assert_eq!(run.stats_u, Standardization::fit(&run.raw_unlabelled));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SandboxConfig::default();
        assert!(cfg.validate_standard_grid().is_ok());
        cfg.pct_uood = 30;
        assert!(cfg.validate().is_err());
        cfg.pct_uood = 50;
        cfg.n_l = 70;
        assert!(cfg.validate().is_ok());
        assert!(cfg.validate_standard_grid().is_err());
    }

    #[test]
    fn gaussian_noise_moments() {
        let draws = gaussian_noise_draws(1_000_000, 17);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // CLT: sd of the mean is sqrt(10 / 10^6) ≈ 0.0032
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 10.0).abs() < 0.1, "{var}");

        let shape = ImageShape { height: 8, width: 8, channels: 3 };
        let a = gen_gaussian_noise(5, shape, 3).unwrap();
        assert_eq!(a, gen_gaussian_noise(5, shape, 3).unwrap());
        assert_eq!(a.pixels.len(), 5 * 192);
        let avg = a.pixels.iter().map(|&p| p as f64).sum::<f64>() / a.pixels.len() as f64;
        assert!((avg - 128.0).abs() < 1.0);
    }

    #[test]
    fn salt_pepper_is_balanced_binary() {
        let shape = ImageShape { height: 100, width: 100, channels: 1 };
        let imgs = gen_salt_pepper(100, shape, 5).unwrap();
        assert!(imgs.pixels.iter().all(|&p| p == 0 || p == 255));
        let frac = imgs.pixels.iter().filter(|&&p| p == 255).count() as f64 / 1e6;
        // binomial sd is 0.0005
        assert!((frac - 0.5).abs() < 0.002, "{frac}");
        assert_eq!(imgs, gen_salt_pepper(100, shape, 5).unwrap());
        assert_ne!(imgs, gen_salt_pepper(100, shape, 6).unwrap());
    }

    #[test]
    fn synthetic_clusters_shape_and_determinism() {
        let a = gen_synthetic_clusters(5, 10, 3, 1.0, 0.0, 9).unwrap();
        assert_eq!(a.n(), 50);
        assert_eq!(a, gen_synthetic_clusters(5, 10, 3, 1.0, 0.0, 9).unwrap());
        assert!(gen_synthetic_clusters(1, 10, 3, 1.0, 0.0, 9).is_err());
    }

    #[test]
    fn shifted_clusters_are_farther_by_cosine_measure() {
        let layout = ClusterLayout::new(5, 6, 21).unwrap();
        let base = layout.sample(200, 1.0, 0.0, 1, "s0").unwrap().features;
        let twin = layout.sample(200, 1.0, 0.0, 2, "s0'").unwrap().features;
        let far = layout.sample(200, 1.0, 5.0, 3, "s5").unwrap().features;
        let spec = SubsampleSpec::new(100, 10, 4).unwrap();
        let near = density_dissimilarity(&base, &twin, &spec, DensityKind::Cos, 30).unwrap();
        let shifted = density_dissimilarity(&base, &far, &spec, DensityKind::Cos, 30).unwrap();
        assert!(shifted.mean > near.mean, "{} vs {}", shifted.mean, near.mean);
    }
}
