use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{ClassifierParams, Gradients};
use crate::transition::{revise_matrix, SlackVariable};
use crate::{Error, Result};

/// Smallest denominator used in a log or a reweighting ratio.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;
pub const DEFAULT_WEIGHT_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    /// Cross-entropy against the noisy labels.
    Ce,
    /// Forward correction: cross-entropy of `Tᵀg`.
    PtdF,
    /// Importance reweighting by `g_ȳ / (Tᵀg)_ȳ`.
    PtdR,
    PtdFV,
    PtdRV,
}

impl RiskKind {
    pub const ALL: [RiskKind; 5] = [Self::Ce, Self::PtdF, Self::PtdR, Self::PtdFV, Self::PtdRV];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::PtdF => "ptd_f",
            Self::PtdR => "ptd_r",
            Self::PtdFV => "ptd_f_v",
            Self::PtdRV => "ptd_r_v",
        }
    }

    /// Whether the kind learns a slack matrix.
    pub fn is_revision(self) -> bool {
        matches!(self, Self::PtdFV | Self::PtdRV)
    }

    pub fn needs_transitions(self) -> bool {
        self != Self::Ce
    }

    /// The same risk without slack.
    pub fn without_revision(self) -> Self {
        match self {
            Self::PtdFV => Self::PtdF,
            Self::PtdRV => Self::PtdR,
            k => k,
        }
    }

    fn is_reweight(self) -> bool {
        matches!(self, Self::PtdR | Self::PtdRV)
    }
}

impl std::fmt::Display for RiskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RiskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown risk kind {s:?}; expected one of ce, ptd_f, ptd_r, ptd_f_v, ptd_r_v"
            ))
        })
    }
}

/// A minibatch. `transitions[b]` is the unrevised `T(x_b)`; it may be empty
/// for `ce`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub transitions: &'a [Array2<f64>],
}

#[derive(Debug, Clone)]
pub struct RiskOutput {
    pub loss: f64,
    pub grads: Gradients,
    pub slack_grad: Option<Array2<f64>>,
    /// Examples whose reweighting factor was capped or whose denominator hit the floor.
    pub clamp_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskOptions {
    pub weight_cap: f64,
    /// Treat the reweighting factor as a constant when differentiating.
    /// The loss value is unchanged; the gradient is then that of the
    /// frozen-weight loss.
    pub detach_weight: bool,
}

impl Default for RiskOptions {
    fn default() -> Self {
        Self {
            weight_cap: DEFAULT_WEIGHT_CAP,
            detach_weight: false,
        }
    }
}

/// Mean corrected loss over the batch and its gradients.
///
/// For the revision kinds the loss sees `revise(T + ΔT)` and the slack
/// gradient is differentiated through the clip and row normalisation.
/// With default options every gradient is the exact derivative of the loss
/// value, the reweighting factor included (except where it is clamped).
pub fn risk(
    params: &ClassifierParams,
    batch: Batch<'_>,
    kind: RiskKind,
    slack: Option<&SlackVariable>,
    options: RiskOptions,
) -> Result<RiskOutput> {
    let weight_cap = options.weight_cap;
    let b = batch.features.nrows();
    let c = params.class_count();
    if b == 0 || batch.labels.len() != b {
        return Err(Error::Dimension(format!(
            "batch has {b} rows and {} labels",
            batch.labels.len()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidInput(format!("label {y} out of range for {c} classes")));
    }
    if kind.needs_transitions() && batch.transitions.len() != b {
        return Err(Error::InvalidInput(format!(
            "{kind} needs a transition matrix per example, got {} for {b}",
            batch.transitions.len()
        )));
    }
    let slack = match (kind.is_revision(), slack) {
        (true, None) => return Err(Error::InvalidInput(format!("{kind} requires a slack variable"))),
        (true, Some(s)) if s.delta.dim() != (c, c) => {
            return Err(Error::Dimension(format!(
                "slack is {:?}, expected ({c}, {c})",
                s.delta.dim()
            )))
        }
        (true, s) => s,
        (false, _) => None,
    };

    let fwd = params.forward(batch.features)?;
    let g = &fwd.probs;
    let scale = 1.0 / b as f64;
    let mut dlogits = Array2::<f64>::zeros((b, c));
    let mut slack_grad = slack.map(|_| Array2::<f64>::zeros((c, c)));
    let mut loss = 0.0;
    let mut clamp_count = 0;

    for n in 0..b {
        let y = batch.labels[n];
        let gn = g.row(n);
        if kind == RiskKind::Ce {
            loss -= gn[y].max(DENOMINATOR_FLOOR).ln();
            let mut d = dlogits.row_mut(n);
            d.assign(&gn);
            d[y] -= 1.0;
            d *= scale;
            continue;
        }

        let t_raw = &batch.transitions[n];
        if t_raw.dim() != (c, c) {
            return Err(Error::Dimension(format!(
                "transition {n} is {:?}, expected ({c}, {c})",
                t_raw.dim()
            )));
        }
        let revised = slack.map(|s| revise_matrix(t_raw.view(), s.delta.view()).0);
        let t = revised.as_ref().unwrap_or(t_raw);
        let col = t.column(y);
        let p_y: f64 = col.dot(&gn);

        // dL/dg and dL/dT[·, y]
        let mut dg = ndarray::Array1::<f64>::zeros(c);
        let mut dt_col = ndarray::Array1::<f64>::zeros(c);
        if kind.is_reweight() {
            let g_y = gn[y].max(DENOMINATOR_FLOOR);
            let nll = -g_y.ln();
            let floored = p_y < DENOMINATOR_FLOOR;
            let ratio = gn[y] / p_y.max(DENOMINATOR_FLOOR);
            let clamped = floored || ratio > weight_cap;
            let w = ratio.min(weight_cap);
            if clamped {
                clamp_count += 1;
            }
            loss += w * nll;
            if gn[y] > DENOMINATOR_FLOOR {
                dg[y] -= w / gn[y];
            }
            if !clamped && !options.detach_weight {
                // w = g_y / p_y with p_y = Σ_i T[i,y] g_i
                let inv = 1.0 / p_y;
                dg[y] += nll * inv;
                dg.scaled_add(-nll * gn[y] * inv * inv, &col);
                dt_col.scaled_add(-nll * gn[y] * inv * inv, &gn);
            }
        } else if p_y < DENOMINATOR_FLOOR {
            loss -= DENOMINATOR_FLOOR.ln();
            clamp_count += 1;
        } else {
            loss -= p_y.ln();
            dg.scaled_add(-1.0 / p_y, &col);
            dt_col.scaled_add(-1.0 / p_y, &gn);
        }

        // softmax backward: dz = g ⊙ (dg − ⟨dg, g⟩)
        let inner = dg.dot(&gn);
        let mut d = dlogits.row_mut(n);
        for j in 0..c {
            d[j] = scale * gn[j] * (dg[j] - inner);
        }

        if let (Some(sg), Some(s), Some(revised)) = (slack_grad.as_mut(), slack, revised.as_ref()) {
            accumulate_slack_grad(sg, t_raw.view(), s.delta.view(), revised.view(), y, &dt_col, scale);
        }
    }

    let grads = params.backward(&fwd, dlogits);
    Ok(RiskOutput {
        loss: loss * scale,
        grads,
        slack_grad,
        clamp_count,
    })
}

/// Chain rule through `T' = a / Σa` with `a = max(T + ΔT, 0)`, given
/// `dL/dT'` nonzero only in column `y`.
fn accumulate_slack_grad(
    out: &mut Array2<f64>,
    t: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    revised: ArrayView2<f64>,
    y: usize,
    dt_col: &ndarray::Array1<f64>,
    scale: f64,
) {
    let c = t.ncols();
    for i in 0..c {
        let upstream = dt_col[i];
        if upstream == 0.0 {
            continue;
        }
        let s: f64 = (0..c).map(|m| (t[[i, m]] + delta[[i, m]]).max(0.0)).sum();
        if s <= 0.0 || !s.is_finite() {
            // uniform fallback row is constant in ΔT
            continue;
        }
        // Σ_j G_ij T'_ij reduces to G_iy T'_iy
        let inner = upstream * revised[[i, y]];
        for m in 0..c {
            if t[[i, m]] + delta[[i, m]] > 0.0 {
                let gm = if m == y { upstream } else { 0.0 };
                out[[i, m]] += scale * (gm - inner) / s;
            }
        }
    }
}
