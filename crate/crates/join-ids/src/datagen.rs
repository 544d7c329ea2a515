//! Synthetic data generation and masking.
//!
//! Datasets come from three families (uniform, correlated around the
//! diagonal, anti-correlated across it). A block of seed rows is drawn from
//! the family and the remaining rows are derived by perturbing a random
//! seed inside half of each rule's determinant tolerance. Attributes that a
//! rule depends on are then overwritten with a Lipschitz blend of the row's
//! own determinant values plus bounded jitter, so any two rows close on a
//! rule's determinants are close on its dependent; with a single rule per
//! dependent the constraint holds for every pair by construction. Masking
//! splits a dataset into two streams and a repository, blanks dependent
//! attributes in the streams, and keeps the pre-mask rows as groundtruth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as RandDistribution, Normal};

use crate::dd::DDRule;
use crate::error::{Error, Result};
use crate::model::{IncompleteObject, StreamId};
use crate::prune::euclidean;

/// Variance of the correlated / anti-correlated families around their
/// diagonal plane.
const FAMILY_VARIANCE: f64 = 0.05;

/// Half-width used when deriving attributes no rule constrains.
const FREE_ATTR_HALF_WIDTH: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataDistribution {
    Uniform,
    Correlated,
    AntiCorrelated,
}

impl std::str::FromStr for DataDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(DataDistribution::Uniform),
            "correlated" => Ok(DataDistribution::Correlated),
            "anti-correlated" | "anticorrelated" => Ok(DataDistribution::AntiCorrelated),
            other => Err(Error::Parse(format!(
                "unknown distribution `{other}` (expected uniform, correlated, anti-correlated)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerateParams {
    pub distribution: DataDistribution,
    pub dim: usize,
    pub count: usize,
    pub seed_count: usize,
    pub rng_seed: u64,
}

/// Generate a complete dataset: `seed_count` family seeds followed by
/// rule-consistent derived rows. Byte-identical for equal parameters.
pub fn generate(params: &GenerateParams, rules: &[DDRule]) -> Result<Vec<Vec<f64>>> {
    if params.dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    if params.seed_count == 0 || params.seed_count > params.count {
        return Err(Error::Config(format!(
            "seed count {} must lie in [1, count = {}]",
            params.seed_count, params.count
        )));
    }
    for rule in rules {
        if rule.dependent() >= params.dim
            || rule.determinants().iter().any(|&a| a >= params.dim)
        {
            return Err(Error::Schema("rule references an attribute beyond the dimension".into()));
        }
    }

    let profiles = dependent_profiles(params.dim, rules);
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut rows = Vec::with_capacity(params.count);
    for _ in 0..params.seed_count {
        let mut seed = draw_seed(&mut rng, params.distribution, params.dim);
        apply_dependents(&mut seed, &profiles, &mut rng);
        rows.push(seed);
    }

    // Determinant half-widths: half the tightest epsilon of any determinant
    // role the attribute plays, so two derivations of one seed stay within
    // every rule's determinant constraint.
    let half_widths: Vec<f64> = (0..params.dim)
        .map(|attr| {
            let mut h = f64::INFINITY;
            for rule in rules {
                if let Some(eps) = rule.eps_for(attr) {
                    h = h.min(eps / 2.0);
                }
            }
            if h.is_finite() {
                h
            } else {
                FREE_ATTR_HALF_WIDTH
            }
        })
        .collect();

    for _ in params.seed_count..params.count {
        let seed = rows[rng.gen_range(0..params.seed_count)].clone();
        let mut row: Vec<f64> = seed
            .iter()
            .zip(&half_widths)
            .map(|(&v, &h)| {
                let delta = if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };
                (v + delta).clamp(0.0, 1.0)
            })
            .collect();
        apply_dependents(&mut row, &profiles, &mut rng);
        rows.push(row);
    }
    Ok(rows)
}

/// How a rule-governed attribute is computed from the rest of the row: an
/// equal-weight blend of per-rule determinant means plus bounded jitter.
struct DependentProfile {
    attr: usize,
    /// Determinant sets of the governing rules.
    rule_determinants: Vec<Vec<usize>>,
    /// Jitter half-width: the tightest rule's slack after the blend's
    /// Lipschitz budget is spent.
    jitter: f64,
}

fn dependent_profiles(dim: usize, rules: &[DDRule]) -> Vec<DependentProfile> {
    let mut profiles: Vec<DependentProfile> = Vec::new();
    for attr in 0..dim {
        let governing: Vec<&DDRule> = rules.iter().filter(|r| r.dependent() == attr).collect();
        if governing.is_empty() {
            continue;
        }
        let jitter = governing
            .iter()
            .map(|rule| {
                let det_budget: f64 = rule.determinant_eps().iter().sum::<f64>()
                    / rule.determinants().len() as f64;
                ((rule.dependent_eps() - det_budget) / 2.0).max(0.0)
            })
            .fold(f64::INFINITY, f64::min);
        profiles.push(DependentProfile {
            attr,
            rule_determinants: governing.iter().map(|r| r.determinants().to_vec()).collect(),
            jitter,
        });
    }
    profiles
}

fn apply_dependents(row: &mut [f64], profiles: &[DependentProfile], rng: &mut ChaCha8Rng) {
    for profile in profiles {
        let blend: f64 = profile
            .rule_determinants
            .iter()
            .map(|dets| dets.iter().map(|&a| row[a]).sum::<f64>() / dets.len() as f64)
            .sum::<f64>()
            / profile.rule_determinants.len() as f64;
        let jitter = if profile.jitter > 0.0 {
            rng.gen_range(-profile.jitter..=profile.jitter)
        } else {
            0.0
        };
        row[profile.attr] = (blend + jitter).clamp(0.0, 1.0);
    }
}

fn draw_seed(rng: &mut ChaCha8Rng, distribution: DataDistribution, dim: usize) -> Vec<f64> {
    match distribution {
        DataDistribution::Uniform => (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect(),
        DataDistribution::Correlated => {
            let noise = Normal::new(0.0, FAMILY_VARIANCE.sqrt()).expect("valid spread");
            let base: f64 = rng.gen_range(0.0..1.0);
            (0..dim).map(|_| reflect_into_domain(base + noise.sample(rng))).collect()
        }
        DataDistribution::AntiCorrelated => {
            let noise = Normal::new(0.0, FAMILY_VARIANCE.sqrt()).expect("valid spread");
            let target: f64 = 0.5 + noise.sample(rng);
            let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / dim as f64;
            raw.into_iter().map(|v| reflect_into_domain(v - mean + target)).collect()
        }
    }
}

/// Fold a value back into [0, 1] by mirroring at the boundaries, keeping the
/// marginals continuous instead of piling mass onto the walls.
fn reflect_into_domain(v: f64) -> f64 {
    let folded = v.rem_euclid(2.0);
    if folded > 1.0 {
        2.0 - folded
    } else {
        folded
    }
}

#[derive(Debug, Clone)]
pub struct MaskParams {
    /// Missing attributes per stream row.
    pub missing_per_row: usize,
    /// Attributes eligible for masking (the rule dependents).
    pub dependents: Vec<usize>,
    /// Rows per stream; the remainder of the dataset becomes the repository.
    pub stream_len: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct MaskedData {
    pub left: Vec<IncompleteObject>,
    pub right: Vec<IncompleteObject>,
    pub repository: Vec<Vec<f64>>,
    /// Pre-mask stream rows, index i belonging to timestamp i + 1.
    pub groundtruth_left: Vec<Vec<f64>>,
    pub groundtruth_right: Vec<Vec<f64>>,
}

/// Split a complete dataset into two masked streams and a repository.
pub fn mask(dataset: &[Vec<f64>], params: &MaskParams) -> Result<MaskedData> {
    if params.missing_per_row > params.dependents.len() {
        return Err(Error::Config(format!(
            "cannot mask {} attributes, only {} dependents exist",
            params.missing_per_row,
            params.dependents.len()
        )));
    }
    if 2 * params.stream_len >= dataset.len() {
        return Err(Error::Config(format!(
            "dataset of {} rows cannot supply two streams of {} plus a repository",
            dataset.len(),
            params.stream_len
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);

    let takes = |ids: &[usize]| -> Vec<Vec<f64>> {
        ids.iter().map(|&i| dataset[i].clone()).collect()
    };
    let groundtruth_left = takes(&order[..params.stream_len]);
    let groundtruth_right = takes(&order[params.stream_len..2 * params.stream_len]);
    let repository = takes(&order[2 * params.stream_len..]);

    let mut mask_stream = |rows: &[Vec<f64>], stream: StreamId| -> Result<Vec<IncompleteObject>> {
        rows.iter()
            .enumerate()
            .map(|(i, row)| {
                let mut masked: Vec<Option<f64>> = row.iter().map(|&v| Some(v)).collect();
                let mut eligible = params.dependents.clone();
                for _ in 0..params.missing_per_row {
                    let pick = rng.gen_range(0..eligible.len());
                    masked[eligible.swap_remove(pick)] = None;
                }
                IncompleteObject::new(stream, i as i64 + 1, masked)
            })
            .collect()
    };
    let left = mask_stream(&groundtruth_left, StreamId::Left)?;
    let right = mask_stream(&groundtruth_right, StreamId::Right)?;

    Ok(MaskedData { left, right, repository, groundtruth_left, groundtruth_right })
}

/// Deterministic join over unmasked stream rows: pairs within epsilon whose
/// timestamps ever share a window of the given size.
pub fn groundtruth_pairs(
    left: &[Vec<f64>],
    right: &[Vec<f64>],
    epsilon: f64,
    window: usize,
) -> Vec<(i64, i64)> {
    let w = window as i64;
    let mut pairs = Vec::new();
    for (i, lrow) in left.iter().enumerate() {
        let lt = i as i64 + 1;
        let j_lo = (lt - w + 1).max(1);
        let j_hi = (lt + w - 1).min(right.len() as i64);
        for rt in j_lo..=j_hi {
            let rrow = &right[(rt - 1) as usize];
            if euclidean(lrow, rrow) <= epsilon {
                pairs.push((lt, rt));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone)]
pub struct RuleValidation {
    /// Row pairs found satisfying the determinant constraints.
    pub checked: usize,
    /// Among those, pairs violating the dependent constraint.
    pub violations: usize,
    pub violation_fraction: f64,
    pub passed: bool,
}

/// Sample row pairs satisfying a rule's determinant constraints and report
/// the fraction violating its dependent constraint.
pub fn validate_rule(
    rule: &DDRule,
    rows: &[Vec<f64>],
    violation_tolerance: f64,
    sample_target: usize,
    rng_seed: u64,
) -> Result<RuleValidation> {
    if rows.len() < 2 {
        return Err(Error::Config("need at least two rows to validate a rule".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut checked = 0;
    let mut violations = 0;
    let attempts = sample_target.saturating_mul(200);
    for _ in 0..attempts {
        if checked >= sample_target {
            break;
        }
        let a = rng.gen_range(0..rows.len());
        let b = rng.gen_range(0..rows.len());
        if a == b {
            continue;
        }
        let (ra, rb) = (&rows[a], &rows[b]);
        let determinants_close = rule
            .determinants()
            .iter()
            .zip(rule.determinant_eps())
            .all(|(&attr, &eps)| (ra[attr] - rb[attr]).abs() <= eps);
        if !determinants_close {
            continue;
        }
        checked += 1;
        if (ra[rule.dependent()] - rb[rule.dependent()]).abs() > rule.dependent_eps() {
            violations += 1;
        }
    }
    let violation_fraction = if checked == 0 { 0.0 } else { violations as f64 / checked as f64 };
    Ok(RuleValidation {
        checked,
        violations,
        violation_fraction,
        passed: violation_fraction <= violation_tolerance,
    })
}
