//! Counter-based complexity profiling: doubling sweeps over one
//! hyperparameter, per-stage multiply-accumulate counts, and log-log slopes
//! compared against the exponents implied by the operation shapes.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TokenPair;
use crate::model::{forward_tokens, stage, HyperParams, Mhssmamba, ModelError};
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepParam {
    /// Token sequence length.
    L,
    StateDim,
    EmbedDim,
    Heads,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [
        SweepParam::L,
        SweepParam::StateDim,
        SweepParam::EmbedDim,
        SweepParam::Heads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::L => "L",
            SweepParam::StateDim => "state_dim",
            SweepParam::EmbedDim => "embed_dim",
            SweepParam::Heads => "heads",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown sweep parameter {s:?}; expected one of L, state_dim, embed_dim, heads"))
    }
}

/// Fixed settings around the swept value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileBase {
    pub batch: usize,
    pub tokens: usize,
    pub bands: usize,
    pub hp: HyperParams,
    /// Number of sweep points; each doubles the previous value.
    pub points: usize,
    pub seed: u64,
}

impl Default for ProfileBase {
    fn default() -> Self {
        Self {
            batch: 2,
            tokens: 8,
            bands: 8,
            hp: HyperParams {
                embed_dim: 16,
                num_heads: 4,
                state_dim: 16,
                num_layers: 1,
                num_classes: 3,
            },
            points: 5,
            seed: 0,
        }
    }
}

/// Exponent of the swept parameter in each stage's MAC count, read off the
/// operation shapes (`B` batch, `L` tokens, `C` bands, `E` embed, `h`
/// heads, `d = E / h`, `S` state, `K` classes):
///
/// | stage                | MACs per branch           |
/// |----------------------|---------------------------|
/// | token_projection     | `B L C E`                 |
/// | enhancement          | `B C E`                   |
/// | attention_projection | `3 h B L E d + B L E^2`   |
/// | attention_score      | `h B L^2 d`               |
/// | attention_value      | `h B L^2 d`               |
/// | feature_gate         | `B L E^2`                 |
/// | ssm_update           | `B L E S`                 |
/// | ssm_transition       | `L B S^2`                 |
/// | classifier           | `B 2S K`                  |
///
/// With `h d = E`, the head count cancels everywhere.
pub fn predicted_exponent(param: SweepParam, stage_name: &str) -> Option<u32> {
    use SweepParam::*;
    let (l, s, e) = match stage_name {
        stage::TOKEN_PROJECTION => (1, 0, 1),
        stage::ENHANCEMENT => (0, 0, 1),
        stage::ATTENTION_PROJECTION => (1, 0, 2),
        stage::ATTENTION_SCORE | stage::ATTENTION_VALUE => (2, 0, 1),
        stage::FEATURE_GATE => (1, 0, 2),
        stage::SSM_UPDATE => (1, 1, 1),
        stage::SSM_TRANSITION => (1, 2, 0),
        stage::CLASSIFIER => (0, 1, 0),
        _ => return None,
    };
    Some(match param {
        L => l,
        StateDim => s,
        EmbedDim => e,
        Heads => 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: usize,
    pub macs: BTreeMap<&'static str, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageFit {
    pub stage: &'static str,
    pub slope: f64,
    pub predicted: Option<u32>,
    /// `counts[i + 1] / counts[i]` when that ratio is the same integer for
    /// every step.
    pub exact_ratio: Option<u64>,
}

impl StageFit {
    /// The counts scale by exactly `2^predicted` per doubling.
    pub fn matches(&self) -> bool {
        self.predicted.is_some_and(|p| self.exact_ratio == Some(1u64 << p))
    }
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// points or any non-positive value.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|&v| v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn exact_ratio(counts: &[u64]) -> Option<u64> {
    let mut ratio = None;
    for w in counts.windows(2) {
        if w[0] == 0 || w[1] % w[0] != 0 {
            return None;
        }
        let r = w[1] / w[0];
        if ratio.is_some_and(|prev| prev != r) {
            return None;
        }
        ratio = Some(r);
    }
    ratio
}

fn random_tokens(batch: usize, len: usize, bands: usize, seed: u64) -> TokenPair<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).expect("positive shape")
    };
    TokenPair {
        spatial: t(&[batch, len, bands]),
        spectral: t(&[batch, len, bands]),
        context: t(&[batch, bands]),
    }
}

/// Per-stage MAC counts of one forward pass.
pub fn forward_macs(
    base: &ProfileBase,
    hp: &HyperParams,
    tokens: usize,
) -> Result<BTreeMap<&'static str, u64>, ModelError> {
    let model = Mhssmamba::<f64>::new(*hp, base.bands, base.seed)?;
    let pair = random_tokens(base.batch, tokens, base.bands, base.seed);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    forward_tokens(&mut g, &bound, hp, &pair)?;
    Ok(g.flops().stages().collect())
}

/// Doubles `param` `base.points - 1` times from its base value; the head
/// count always starts at 1 and must keep dividing `embed_dim`.
pub fn run_sweep(param: SweepParam, base: &ProfileBase) -> Result<Sweep, ModelError> {
    if base.points < 2 {
        return Err(ModelError::Config("a sweep needs at least 2 points".into()));
    }
    let mut points = Vec::with_capacity(base.points);
    for i in 0..base.points {
        let scale = 1usize << i;
        let mut hp = base.hp;
        let mut tokens = base.tokens;
        let value = match param {
            SweepParam::L => {
                tokens *= scale;
                tokens
            }
            SweepParam::StateDim => {
                hp.state_dim *= scale;
                hp.state_dim
            }
            SweepParam::EmbedDim => {
                hp.embed_dim *= scale;
                hp.embed_dim
            }
            SweepParam::Heads => {
                hp.num_heads = scale;
                hp.num_heads
            }
        };
        hp.validate()?;
        let macs = forward_macs(base, &hp, tokens)?;
        points.push(SweepPoint { value, macs });
    }
    Ok(Sweep { param, points })
}

impl Sweep {
    pub fn fits(&self) -> Vec<StageFit> {
        let xs: Vec<f64> = self.points.iter().map(|p| p.value as f64).collect();
        stage::ALL
            .iter()
            .map(|&s| {
                let counts: Vec<u64> = self
                    .points
                    .iter()
                    .map(|p| p.macs.get(s).copied().unwrap_or(0))
                    .collect();
                let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                StageFit {
                    stage: s,
                    slope: loglog_slope(&xs, &ys).unwrap_or(f64::NAN),
                    predicted: predicted_exponent(self.param, s),
                    exact_ratio: exact_ratio(&counts),
                }
            })
            .collect()
    }

    pub fn fit(&self, stage_name: &str) -> Option<StageFit> {
        self.fits().into_iter().find(|f| f.stage == stage_name)
    }

    /// MAC counts per point, then the measured-vs-predicted exponent table.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sweep over {}: {:?}",
            self.param,
            self.points.iter().map(|p| p.value).collect::<Vec<_>>()
        );
        let _ = write!(out, "{:<22}", "stage");
        for p in &self.points {
            let _ = write!(out, "{:>14}", format!("{}={}", self.param, p.value));
        }
        let _ = writeln!(out);
        for &s in &stage::ALL {
            let _ = write!(out, "{s:<22}");
            for p in &self.points {
                let _ = write!(out, "{:>14}", p.macs.get(s).copied().unwrap_or(0));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<22}{:>10}{:>11}{:>8}{:>8}",
            "stage", "measured", "predicted", "ratio", "status"
        );
        for f in self.fits() {
            let predicted = f.predicted.map_or("-".to_string(), |p| format!("{p}.00"));
            let ratio = f.exact_ratio.map_or("-".to_string(), |r| r.to_string());
            let status = if f.matches() { "ok" } else { "MISMATCH" };
            let _ = writeln!(
                out,
                "{:<22}{:>10.2}{:>11}{:>8}{:>8}",
                f.stage, f.slope, predicted, ratio, status
            );
        }
        out
    }
}
