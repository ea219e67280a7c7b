//! Synthetic source/target shift benchmark.
//!
//! Each latent class is a Gaussian. The source domain samples the classes
//! with `Dir(1)` proportions; the target domain moves every mean by a fixed
//! length in a random direction, scales and rotates the covariances and
//! draws long-tailed `Dir(α_test)` proportions. Class `c` means the same
//! latent class on both sides.
//!
//! Random streams per seed: 0 source, 1 target, 2 supports, 3 regression.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::RegressionSet;
use crate::numkit::{norm, random_orthogonal, random_rotation, sq_dist, GaussianParams, Matrix, SeededRng};
use crate::priors::SupportSet;
use crate::{Error, Result};

const STREAM_SOURCE: u64 = 0;
const STREAM_TARGET: u64 = 1;
const STREAM_SUPPORTS: u64 = 2;
const STREAM_REGRESSION: u64 = 3;
const MAX_REDRAWS: usize = 10_000;

/// Target-domain perturbation.
///
/// `μ'_c = μ_c + λ_mean · m · u_c` with `u_c` uniform on the sphere and
/// `Σ'_c = R (max(λ_cov, 1) Σ_c) Rᵀ`: `λ_cov` is the disturbance knob, and
/// values at or below 1 leave the scale unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub lambda_mean: f64,
    pub lambda_cov: f64,
    pub rotation_deg: f64,
    pub mean_shift_magnitude: f64,
    pub dirichlet_source: f64,
    pub dirichlet_target: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            lambda_mean: 1.0,
            lambda_cov: 1.0,
            rotation_deg: 15.0,
            mean_shift_magnitude: 0.6,
            dirichlet_source: 1.0,
            dirichlet_target: 0.15,
        }
    }
}

impl ShiftSpec {
    /// No mean shift, rotation or scaling; proportions still follow the
    /// Dirichlet draws.
    pub fn identity() -> Self {
        ShiftSpec {
            lambda_mean: 0.0,
            lambda_cov: 0.0,
            rotation_deg: 0.0,
            ..ShiftSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_mean,
            self.lambda_cov,
            self.rotation_deg,
            self.mean_shift_magnitude,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("shift parameters must be finite".into()));
        }
        if self.lambda_cov < 0.0 {
            return Err(Error::Config(format!("lambda_cov must be nonnegative, got {}", self.lambda_cov)));
        }
        if !(self.dirichlet_source > 0.0 && self.dirichlet_target > 0.0) {
            return Err(Error::Config("dirichlet concentrations must be positive".into()));
        }
        Ok(())
    }

    pub fn covariance_scale(&self) -> f64 {
        self.lambda_cov.max(1.0)
    }
}

/// Supports per target class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shots {
    Fixed(usize),
    /// Uniform on `lo..=hi`, drawn per class.
    Range(usize, usize),
}

impl Default for Shots {
    fn default() -> Self {
        Shots::Range(3, 8)
    }
}

/// Source geometry and sample sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Class means are drawn from `N(0, s² I)`.
    pub mean_scale: f64,
    /// Pairwise distance floor between class means.
    pub min_separation: f64,
    /// Covariance eigenvalues are uniform on `[cov_min, cov_max]`.
    pub cov_min: f64,
    pub cov_max: f64,
    pub shots: Shots,
    pub shift: ShiftSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_classes: 8,
            dim: 10,
            n_train: 6000,
            n_test: 3000,
            mean_scale: 0.5,
            min_separation: 2.0,
            cov_min: 0.0125,
            cov_max: 0.05,
            shots: Shots::default(),
            shift: ShiftSpec::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes and 2 dimensions, got {} and {}",
                self.num_classes, self.dim
            )));
        }
        if self.n_train < 2 * self.num_classes || self.n_test == 0 {
            return Err(Error::Config("n_train must allow 2 samples per class and n_test must be positive".into()));
        }
        if !(self.mean_scale > 0.0 && self.min_separation >= 0.0) {
            return Err(Error::Config("mean_scale must be positive and min_separation nonnegative".into()));
        }
        if !(self.cov_min > 0.0 && self.cov_max >= self.cov_min && self.cov_max.is_finite()) {
            return Err(Error::Config("need 0 < cov_min <= cov_max".into()));
        }
        match self.shots {
            Shots::Fixed(0) => return Err(Error::Config("shots must be at least 1".into())),
            Shots::Range(lo, hi) if lo == 0 || hi < lo => {
                return Err(Error::Config(format!("invalid shot range {lo}..={hi}")))
            }
            _ => {}
        }
        self.shift.validate()
    }
}

/// One generated benchmark instance.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: SupportSet,
    pub target_train_supports: SupportSet,
    pub target_test: SupportSet,
    pub source_params: Vec<GaussianParams>,
    pub target_params: Vec<GaussianParams>,
    pub class_props_source: Vec<f64>,
    pub class_props_target: Vec<f64>,
}

/// Responses `z = βᵀx + e` for every split of a [`DomainPair`].
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTask {
    pub beta: Vec<f64>,
    pub noise_sigma: f64,
    pub source: RegressionSet,
    pub supports: RegressionSet,
    pub test: RegressionSet,
}

fn random_covariance(d: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Result<Matrix> {
    let q = random_orthogonal(d, rng);
    let eig: Vec<f64> = (0..d).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    let scaled = Matrix::from_fn(d, d, |i, j| q[(i, j)] * eig[j]);
    let mut cov = scaled.matmul(&q.transpose())?;
    symmetrize(&mut cov);
    Ok(cov)
}

fn symmetrize(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Class-wise Gaussian draws with the given counts, rows shuffled.
fn sample_classes(params: &[GaussianParams], counts: &[usize], rng: &mut SeededRng) -> Result<SupportSet> {
    let d = params[0].dim();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut blocks = Vec::with_capacity(params.len());
    for (c, (p, &n)) in params.iter().zip(counts).enumerate() {
        if n > 0 {
            blocks.push(p.sample(n, rng)?);
            order.extend((0..n).map(|k| (c, k)));
        } else {
            blocks.push(Matrix::zeros(0, d));
        }
    }
    rng.shuffle(&mut order);
    let mut x = Matrix::zeros(order.len(), d);
    let mut labels = Vec::with_capacity(order.len());
    for (r, &(c, k)) in order.iter().enumerate() {
        x.row_mut(r).copy_from_slice(blocks[c].row(k));
        labels.push(c);
    }
    SupportSet::new(x, labels, params.len())
}

/// Source classes, a labeled source sample of size `cfg.n_train`, and the
/// source proportions. Proportions are redrawn until every class has at
/// least two samples.
pub fn make_source(cfg: &GeneratorConfig, rng: &mut SeededRng) -> Result<(Vec<GaussianParams>, SupportSet, Vec<f64>)> {
    cfg.validate()?;
    let (k, d) = (cfg.num_classes, cfg.dim);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut tries = 0;
    while means.len() < k {
        let m: Vec<f64> = (0..d).map(|_| cfg.mean_scale * rng.standard_normal()).collect();
        let floor2 = cfg.min_separation * cfg.min_separation;
        if means.iter().all(|o| sq_dist(o, &m) >= floor2) {
            means.push(m);
        }
        tries += 1;
        if tries > MAX_REDRAWS {
            return Err(Error::Config(format!(
                "could not place {k} means {} apart at scale {}",
                cfg.min_separation, cfg.mean_scale
            )));
        }
    }
    let params = means
        .into_iter()
        .map(|m| GaussianParams::new(m, random_covariance(d, cfg.cov_min, cfg.cov_max, rng)?))
        .collect::<Result<Vec<_>>>()?;
    let mut tries = 0;
    let (props, counts) = loop {
        let p = rng.dirichlet(k, cfg.shift.dirichlet_source)?;
        let n = rng.multinomial(cfg.n_train, &p);
        if n.iter().all(|&v| v >= 2) {
            break (p, n);
        }
        tries += 1;
        if tries > MAX_REDRAWS {
            return Err(Error::Config("source proportions keep leaving a class with fewer than 2 samples".into()));
        }
    };
    let data = sample_classes(&params, &counts, rng)?;
    Ok((params, data, props))
}

/// Perturbed target classes and their long-tailed proportions.
pub fn shift_params(source: &[GaussianParams], spec: &ShiftSpec, rng: &mut SeededRng) -> Result<(Vec<GaussianParams>, Vec<f64>)> {
    spec.validate()?;
    let d = source[0].dim();
    let r = random_rotation(d, spec.rotation_deg, rng)?;
    let rt = r.transpose();
    let scale = spec.covariance_scale();
    let params = source
        .iter()
        .map(|p| {
            let u = loop {
                let v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
                }
            };
            let step = spec.lambda_mean * spec.mean_shift_magnitude;
            let mean: Vec<f64> = p.mean.iter().zip(&u).map(|(m, e)| m + step * e).collect();
            let mut cov = r.matmul(&p.covariance.scale(scale))?.matmul(&rt)?;
            symmetrize(&mut cov);
            GaussianParams::new(mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    let props = rng.dirichlet(source.len(), spec.dirichlet_target)?;
    Ok((params, props))
}

/// Target parameters, proportions and a test sample of size `n_test`.
pub fn make_target(
    source: &[GaussianParams],
    spec: &ShiftSpec,
    n_test: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<GaussianParams>, Vec<f64>, SupportSet)> {
    let (params, props) = shift_params(source, spec, rng)?;
    let counts = rng.multinomial(n_test, &props);
    let test = sample_classes(&params, &counts, rng)?;
    Ok((params, props, test))
}

/// Labeled supports drawn i.i.d. from each target class. Counts do not depend
/// on the class proportions.
pub fn sample_supports(params: &[GaussianParams], shots: Shots, rng: &mut SeededRng) -> Result<SupportSet> {
    let counts: Vec<usize> = match shots {
        Shots::Fixed(k) if k > 0 => vec![k; params.len()],
        Shots::Range(lo, hi) if lo > 0 && hi >= lo => (0..params.len()).map(|_| lo + rng.below(hi - lo + 1)).collect(),
        _ => return Err(Error::invalid(format!("invalid shots {shots:?}"))),
    };
    sample_classes(params, &counts, rng)
}

/// Builds the full benchmark instance for `seed`.
pub fn generate_pair(cfg: &GeneratorConfig, seed: u64) -> Result<DomainPair> {
    let (source_params, source, class_props_source) = make_source(cfg, &mut SeededRng::new(seed, STREAM_SOURCE))?;
    let (target_params, class_props_target, target_test) =
        make_target(&source_params, &cfg.shift, cfg.n_test, &mut SeededRng::new(seed, STREAM_TARGET))?;
    let target_train_supports = sample_supports(&target_params, cfg.shots, &mut SeededRng::new(seed, STREAM_SUPPORTS))?;
    Ok(DomainPair {
        source,
        target_train_supports,
        target_test,
        source_params,
        target_params,
        class_props_source,
        class_props_target,
    })
}

/// Draws `β ∼ N(0, I)` once and responses with `N(0, σ²)` noise for every
/// split, using stream 3 of `seed`.
pub fn make_regression(domain: &DomainPair, sigma: f64, seed: u64) -> Result<RegressionTask> {
    make_regression_with(domain, sigma, &mut SeededRng::new(seed, STREAM_REGRESSION))
}

pub fn make_regression_with(domain: &DomainPair, sigma: f64, rng: &mut SeededRng) -> Result<RegressionTask> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be nonnegative, got {sigma}")));
    }
    let d = domain.source.dim();
    let beta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mut respond = |s: &SupportSet| {
        let z = s
            .features
            .row_iter()
            .map(|x| crate::numkit::dot(&beta, x) + sigma * rng.standard_normal())
            .collect();
        RegressionSet::new(s.features.clone(), z, s.labels.clone())
    };
    let source = respond(&domain.source)?;
    let supports = respond(&domain.target_train_supports)?;
    let test = respond(&domain.target_test)?;
    Ok(RegressionTask {
        beta,
        noise_sigma: sigma,
        source,
        supports,
        test,
    })
}

/// Writes the rows of one split, `[config_hash,]split,label[,response],x0..`,
/// with 17 significant digits.
pub fn write_split(
    w: &mut impl Write,
    config_hash: Option<&str>,
    split: &str,
    set: &SupportSet,
    responses: Option<&[f64]>,
) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..set.len() {
        let mut rec: Vec<String> = config_hash.map(str::to_string).into_iter().collect();
        rec.extend([split.to_string(), set.labels[i].to_string()]);
        if let Some(z) = responses {
            rec.push(format!("{:.16e}", z[i]));
        }
        rec.extend(set.features.row(i).iter().map(|v| format!("{v:.16e}")));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Writes source, support and test splits (and responses, if given) to one
/// file: a `# d=…,C=…` line, a header, then the rows of every split. With
/// `config_hash`, every row starts with it.
pub fn save_dataset(
    path: &Path,
    pair: &DomainPair,
    regression: Option<&RegressionTask>,
    config_hash: Option<&str>,
) -> Result<()> {
    let d = pair.source.dim();
    let mut buf: Vec<u8> = Vec::new();
    writeln!(buf, "# d={},C={}", d, pair.source.num_classes).map_err(|e| Error::io(path, e))?;
    let mut header: Vec<String> = config_hash.map(|_| "config_hash".to_string()).into_iter().collect();
    header.extend(["split".to_string(), "label".to_string()]);
    if regression.is_some() {
        header.push("response".into());
    }
    header.extend((0..d).map(|j| format!("x{j}")));
    writeln!(buf, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    let splits = [
        ("source", &pair.source, regression.map(|r| r.source.responses.as_slice())),
        ("support", &pair.target_train_supports, regression.map(|r| r.supports.responses.as_slice())),
        ("test", &pair.target_test, regression.map(|r| r.test.responses.as_slice())),
    ];
    for (name, set, z) in splits {
        write_split(&mut buf, config_hash, name, set, z)?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// A dataset file read back: one [`SupportSet`] per split name, plus
/// responses when present.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSplit {
    pub name: String,
    pub set: SupportSet,
    pub responses: Option<Vec<f64>>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<LoadedSplit>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Config(format!("{}: missing `# d=…,C=…` line", path.display())))?;
    let mut d = None;
    let mut k = None;
    for kv in meta.split(',') {
        match kv.split_once('=') {
            Some(("d", v)) => d = v.parse::<usize>().ok(),
            Some(("C", v)) => k = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (Some(d), Some(k)) = (d, k) else {
        return Err(Error::Config(format!("{}: malformed metadata `{meta}`", path.display())));
    };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let has_response = headers.iter().any(|h| h == "response");
    let first = usize::from(headers.get(0) == Some("config_hash"));
    let offset = first + if has_response { 3 } else { 2 };
    let mut splits: Vec<(String, Vec<Vec<f64>>, Vec<usize>, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != offset + d {
            return Err(Error::Config(format!("{}: row with {} fields, expected {}", path.display(), rec.len(), offset + d)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: bad number `{s}`", path.display())))
        };
        let name = &rec[first];
        let label: usize = rec[first + 1]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad label `{}`", path.display(), &rec[first + 1])))?;
        let row = (offset..offset + d).map(|j| parse(&rec[j])).collect::<Result<Vec<f64>>>()?;
        let z = if has_response { parse(&rec[first + 2])? } else { 0.0 };
        if splits.last().is_none_or(|s| s.0 != name) {
            splits.push((name.to_string(), Vec::new(), Vec::new(), Vec::new()));
        }
        let s = splits.last_mut().expect("pushed above");
        s.1.push(row);
        s.2.push(label);
        s.3.push(z);
    }
    splits
        .into_iter()
        .map(|(name, rows, labels, z)| {
            Ok(LoadedSplit {
                name,
                set: SupportSet::new(Matrix::from_rows(&rows)?, labels, k)?,
                responses: has_response.then_some(z),
            })
        })
        .collect()
}
