use serde::{Deserialize, Serialize};

use crate::dro::{decide, robust_logits, DroConfig};
use crate::numkit::{sq_dist, Matrix, SeededRng};
use crate::priors::{MixturePrior, SupportSet};
use crate::sinkhorn::{solve_entropic_ot, OtProblem, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::{par, Error, Result};

use super::objective::{RobustCe, RobustHuber, Supervised, Target};
use super::{fit, LinearHead, TrainConfig, Trained};

const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Inputs with real responses and the latent class of each row.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSet {
    pub features: Matrix,
    pub responses: Vec<f64>,
    pub classes: Vec<usize>,
}

impl RegressionSet {
    pub fn new(features: Matrix, responses: Vec<f64>, classes: Vec<usize>) -> Result<Self> {
        if features.rows() != responses.len() || responses.len() != classes.len() {
            return Err(Error::dim(format!(
                "{} rows, {} responses, {} classes",
                features.rows(),
                responses.len(),
                classes.len()
            )));
        }
        Ok(RegressionSet {
            features,
            responses,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> RegressionSet {
        RegressionSet {
            features: self.features.select_rows(idx),
            responses: idx.iter().map(|&i| self.responses[i]).collect(),
            classes: idx.iter().map(|&i| self.classes[i]).collect(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &RegressionSet) -> Result<RegressionSet> {
        RegressionSet::new(
            Matrix::vstack(&[&self.features, &other.features])?,
            self.responses.iter().chain(&other.responses).copied().collect(),
            self.classes.iter().chain(&other.classes).copied().collect(),
        )
    }
}

fn huber_target<'a>(set: &'a RegressionSet, cfg: &TrainConfig) -> Target<'a> {
    Target::Values {
        z: &set.responses,
        huber_beta: cfg.huber_beta,
    }
}

/// Cross-entropy on labeled source samples only.
pub fn train_erm(source: &SupportSet, cfg: &TrainConfig) -> Result<Trained> {
    let obj = Supervised::new(&source.features, Target::Classes(&source.labels))?;
    fit(&obj, LinearHead::zeros(source.num_classes, source.dim()), cfg)
}

/// Huber regression on source samples only.
pub fn train_erm_regression(source: &RegressionSet, cfg: &TrainConfig) -> Result<Trained> {
    let obj = Supervised::new(&source.features, huber_target(source, cfg))?;
    fit(&obj, LinearHead::zeros(1, source.features.cols()), cfg)
}

/// Cross-entropy on the target supports only.
pub fn train_fewshot(supports: &SupportSet, cfg: &TrainConfig) -> Result<Trained> {
    train_erm(supports, cfg)
}

pub fn train_fewshot_regression(supports: &RegressionSet, cfg: &TrainConfig) -> Result<Trained> {
    train_erm_regression(supports, cfg)
}

/// Entropic OT used for the per-class transport map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtAdaptConfig {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OtAdaptConfig {
    fn default() -> Self {
        OtAdaptConfig {
            epsilon: 0.2,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Maps every row of `source` to the coupling-weighted mean of `target` under
/// uniform-marginal entropic OT with squared Euclidean cost. Also returns the
/// row-normalized coupling.
pub fn barycentric_transport(source: &Matrix, target: &Matrix, cfg: &OtAdaptConfig) -> Result<(Matrix, Matrix)> {
    if source.cols() != target.cols() {
        return Err(Error::dim(format!("source dimension {} vs target {}", source.cols(), target.cols())));
    }
    let cost = Matrix::from_fn(source.rows(), target.rows(), |i, j| sq_dist(source.row(i), target.row(j)));
    let plan = solve_entropic_ot(&OtProblem::uniform(cost, cfg.epsilon)?, cfg.tol, cfg.max_iters)?.plan;
    let mut weights = plan;
    for i in 0..weights.rows() {
        let r = weights.row_mut(i);
        let s: f64 = r.iter().sum();
        if !(s > 0.0) {
            return Err(Error::NonFinite(format!("transport row {i} has no mass")));
        }
        r.iter_mut().for_each(|v| *v /= s);
    }
    Ok((weights.matmul(target)?, weights))
}

/// Source features transported class by class; rows keep their order.
fn transport_by_class(
    source: &Matrix,
    source_classes: &[usize],
    target: &Matrix,
    target_classes: &[usize],
    num_classes: usize,
    cfg: &OtAdaptConfig,
) -> Result<Vec<(Vec<usize>, Vec<usize>, Matrix)>> {
    let group = |labels: &[usize]| {
        let mut g = vec![Vec::new(); num_classes];
        for (i, &c) in labels.iter().enumerate() {
            g[c].push(i);
        }
        g
    };
    let (gs, gt) = (group(source_classes), group(target_classes));
    par::try_map(num_classes, |c| {
        if gt[c].is_empty() {
            return Err(Error::invalid("class has no target supports").in_class(c));
        }
        if gs[c].is_empty() {
            return Ok((Vec::new(), gt[c].clone(), Matrix::zeros(0, target.rows())));
        }
        let (_, w) = barycentric_transport(&source.select_rows(&gs[c]), &target.select_rows(&gt[c]), cfg)
            .map_err(|e| e.in_class(c))?;
        Ok((gs[c].clone(), gt[c].clone(), w))
    })
}

/// Cross-entropy on source samples moved by the per-class barycentric map.
pub fn train_ot_adapt(
    source: &SupportSet,
    supports: &SupportSet,
    ot: &OtAdaptConfig,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if source.num_classes != supports.num_classes {
        return Err(Error::dim("source and supports disagree on the number of classes"));
    }
    let parts = transport_by_class(
        &source.features,
        &source.labels,
        &supports.features,
        &supports.labels,
        supports.num_classes,
        ot,
    )?;
    let mut moved = Matrix::zeros(source.len(), source.dim());
    for (src, tgt, w) in &parts {
        let mapped = w.matmul(&supports.features.select_rows(tgt))?;
        for (k, &i) in src.iter().enumerate() {
            moved.row_mut(i).copy_from_slice(mapped.row(k));
        }
    }
    let obj = Supervised::new(&moved, Target::Classes(&source.labels))?;
    fit(&obj, LinearHead::zeros(source.num_classes, source.dim()), cfg)
}

/// Huber regression on transported source features paired with the
/// equally transported support responses.
pub fn train_ot_adapt_regression(
    source: &RegressionSet,
    supports: &RegressionSet,
    num_classes: usize,
    ot: &OtAdaptConfig,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let parts = transport_by_class(
        &source.features,
        &source.classes,
        &supports.features,
        &supports.classes,
        num_classes,
        ot,
    )?;
    let mut moved = Matrix::zeros(source.len(), source.features.cols());
    let mut z = vec![0.0; source.len()];
    for (src, tgt, w) in &parts {
        let mapped = w.matmul(&supports.features.select_rows(tgt))?;
        let tz: Vec<f64> = tgt.iter().map(|&j| supports.responses[j]).collect();
        let mz = w.matvec(&tz)?;
        for (k, &i) in src.iter().enumerate() {
            moved.row_mut(i).copy_from_slice(mapped.row(k));
            z[i] = mz[k];
        }
    }
    let obj = Supervised::new(
        &moved,
        Target::Values {
            z: &z,
            huber_beta: cfg.huber_beta,
        },
    )?;
    fit(&obj, LinearHead::zeros(1, source.features.cols()), cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "laplace" => Ok(NoiseFamily::Laplace),
            _ => Err(Error::Config(format!("unknown noise family `{s}`"))),
        }
    }
}

/// Perturbation law for SAA: i.i.d. per coordinate with the given scale
/// (standard deviation for Gaussian, `b` for Laplace), `draws` per support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
    pub draws: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            family: NoiseFamily::Gaussian,
            scale: 0.1,
            draws: 16,
        }
    }
}

impl NoiseSpec {
    /// `draws` matrices of shape `n × d`, from a stream keyed by `seed`.
    pub fn sample(&self, n: usize, d: usize, seed: u64) -> Result<Vec<Matrix>> {
        if self.draws == 0 {
            return Err(Error::Config("SAA needs at least one draw".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("noise scale must be nonnegative, got {}", self.scale)));
        }
        let mut rng = SeededRng::new(seed, NOISE_STREAM);
        let mut draw = || match self.family {
            NoiseFamily::Gaussian => self.scale * rng.standard_normal(),
            NoiseFamily::Laplace => {
                let u = rng.uniform() - 0.5;
                -self.scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        };
        Ok((0..self.draws).map(|_| Matrix::from_fn(n, d, |_, _| draw())).collect())
    }
}

/// Cross-entropy averaged over noisy copies of each support.
pub fn train_saa(supports: &SupportSet, noise: &NoiseSpec, cfg: &TrainConfig) -> Result<Trained> {
    let draws = noise.sample(supports.len(), supports.dim(), cfg.seed)?;
    let obj = Supervised::with_noise(&supports.features, Target::Classes(&supports.labels), &draws)?;
    fit(&obj, LinearHead::zeros(supports.num_classes, supports.dim()), cfg)
}

pub fn train_saa_regression(supports: &RegressionSet, noise: &NoiseSpec, cfg: &TrainConfig) -> Result<Trained> {
    let d = supports.features.cols();
    let draws = noise.sample(supports.len(), d, cfg.seed)?;
    let obj = Supervised::with_noise(&supports.features, huber_target(supports, cfg), &draws)?;
    fit(&obj, LinearHead::zeros(1, d), cfg)
}

/// Cross-entropy over robust logits under the given per-class priors,
/// starting from `init` (zeros when `None`).
pub fn train_robust_classifier(
    x: &Matrix,
    labels: &[usize],
    priors: &[MixturePrior],
    init: Option<&LinearHead>,
    cfg: &TrainConfig,
    dro: &DroConfig,
) -> Result<Trained> {
    let head = match init {
        Some(h) if h.outputs() != priors.len() || h.dim() != x.cols() => {
            return Err(Error::dim(format!(
                "initial head {}x{} for {} priors in dimension {}",
                h.outputs(),
                h.dim(),
                priors.len(),
                x.cols()
            )))
        }
        Some(h) => h.clone(),
        None => LinearHead::zeros(priors.len(), x.cols()),
    };
    let obj = RobustCe::new(x, labels, priors, dro)?;
    fit(&obj, head, cfg)
}

/// The robust classifier trained on the supports with their class-adaptive
/// priors.
pub fn train_pgdro_classifier(
    supports: &SupportSet,
    priors: &[MixturePrior],
    init: Option<&LinearHead>,
    cfg: &TrainConfig,
    dro: &DroConfig,
) -> Result<Trained> {
    if priors.len() != supports.num_classes {
        return Err(Error::dim(format!("{} priors for {} classes", priors.len(), supports.num_classes)));
    }
    train_robust_classifier(&supports.features, &supports.labels, priors, init, cfg, dro)
}

/// One shared reference for every class: uniform atoms on all supports.
pub fn wdro_priors(supports: &SupportSet) -> Result<Vec<MixturePrior>> {
    (0..supports.num_classes)
        .map(|c| MixturePrior::empirical(c, supports.features.clone()))
        .collect()
}

/// The robust classifier with [`wdro_priors`] in place of adaptive priors.
pub fn train_wdro(
    supports: &SupportSet,
    init: Option<&LinearHead>,
    cfg: &TrainConfig,
    dro: &DroConfig,
) -> Result<Trained> {
    let priors = wdro_priors(supports)?;
    train_pgdro_classifier(supports, &priors, init, cfg, dro)
}

/// Huber regression plus the prior penalty, starting from `init` (zeros when
/// `None`); the tilt uses `dro.epsilon`.
pub fn train_pgdro_regressor(
    train: &RegressionSet,
    priors: &[MixturePrior],
    init: Option<&LinearHead>,
    cfg: &TrainConfig,
    dro: &DroConfig,
) -> Result<Trained> {
    cfg.validate()?;
    let obj = RobustHuber::new(
        &train.features,
        &train.responses,
        &train.classes,
        priors,
        dro.epsilon,
        cfg.huber_beta,
        cfg.penalty_weight,
        cfg.penalty_temperature,
    )?;
    let d = train.features.cols();
    let head = match init {
        Some(h) if h.outputs() != 1 || h.dim() != d => {
            return Err(Error::dim(format!("initial head {}x{} for a regressor in dimension {d}", h.outputs(), h.dim())))
        }
        Some(h) => h.clone(),
        None => LinearHead::zeros(1, d),
    };
    fit(&obj, head, cfg)
}

/// A trained model as used at test time.
#[derive(Clone, Debug)]
pub enum Predictor {
    Linear(LinearHead),
    /// Decides by the argmax of robust logits.
    Robust {
        head: LinearHead,
        priors: Vec<MixturePrior>,
        dro: DroConfig,
    },
}

impl Predictor {
    pub fn head(&self) -> &LinearHead {
        match self {
            Predictor::Linear(h) | Predictor::Robust { head: h, .. } => h,
        }
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        match self {
            Predictor::Linear(h) => Ok(h.predict_class(x)),
            Predictor::Robust { head, priors, dro } => Ok(decide(&robust_logits(priors, x, head, dro)?.0)),
        }
    }

    /// Plain head output; the prior penalty is a training regularizer only.
    pub fn predict_value(&self, x: &[f64]) -> f64 {
        self.head().predict_value(x)
    }

    pub fn predict_classes(&self, x: &Matrix) -> Result<Vec<usize>> {
        par::try_map(x.rows(), |i| self.predict_class(x.row(i)))
    }
}

/// Mean robust margin `V_{c*} − max_{c≠c*} V_c` over labeled points.
pub fn robust_margin(
    head: &LinearHead,
    priors: &[MixturePrior],
    dro: &DroConfig,
    x: &Matrix,
    labels: &[usize],
) -> Result<f64> {
    if x.rows() != labels.len() || x.rows() == 0 {
        return Err(Error::dim("robust margin needs matching, nonempty inputs and labels"));
    }
    let margins = par::try_map(x.rows(), |i| {
        let (v, _) = robust_logits(priors, x.row(i), head, dro)?;
        let c = labels[i];
        let other = v
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != c)
            .map(|(_, s)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(v[c] - other)
    })?;
    Ok(margins.iter().sum::<f64>() / margins.len() as f64)
}
