use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::network::Model;
use super::params::{Family, ParamId};
use super::train::{video_loss, LossTargets, VideoSample};
use crate::error::{Error, Result};
use crate::membank::BankConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    /// Scalars to probe, spread evenly over the trainable families.
    pub n_scalars: usize,
    pub step: f64,
    pub seed: u64,
    /// Double the analytic gradient of the largest probed scalar.
    pub corrupt: bool,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            n_scalars: 120,
            step: 1e-5,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbedScalar {
    pub name: String,
    pub family: Family,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub families: Vec<Family>,
    pub probes: Vec<ProbedScalar>,
    /// Loss evaluated twice at the unperturbed point agreed bitwise.
    pub deterministic: bool,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

fn loss_at(model: &Model, sample: &VideoSample, idx: &[usize], bank: &BankConfig, targets: Option<&LossTargets>) -> Result<(f64, LossTargets)> {
    let mut g = Graph::new();
    let (l, t) = video_loss(model, &mut g, sample, idx, bank, true, targets)?
        .ok_or_else(|| Error::EmptyInput("gradient check sample has no objects in frame 0".into()))?;
    Ok((g.value(l).item(), t))
}

/// Compare tape gradients of the full video loss with central differences on
/// a seeded subset of trainable scalars. Confidence targets are frozen at
/// their values at the unperturbed point.
pub fn grad_check(model: &Model, sample: &VideoSample, settings: &GradCheckSettings) -> Result<GradCheckReport> {
    let idx: Vec<usize> = (0..sample.len()).collect();
    let bank = BankConfig::default();
    let (l0, targets) = loss_at(model, sample, &idx, &bank, None)?;
    let (l1, _) = loss_at(model, sample, &idx, &bank, Some(&targets))?;

    let mut g = Graph::new();
    let (loss, _) = video_loss(model, &mut g, sample, &idx, &bank, true, Some(&targets))?.expect("checked above");
    g.backward(loss);
    let grads: BTreeMap<ParamId, _> = g.param_grads().into_iter().map(|(p, t)| (p, t.clone())).collect();

    let mut by_family: BTreeMap<Family, Vec<(ParamId, usize)>> = BTreeMap::new();
    for id in model.params().trainable_ids() {
        let p = model.params().get(id);
        for i in 0..p.value.len() {
            by_family.entry(p.family).or_default().push((id, i));
        }
    }
    let per_family = settings.n_scalars.div_ceil(by_family.len().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut chosen = Vec::new();
    for scalars in by_family.values() {
        let take = per_family.min(scalars.len());
        let mut picks: Vec<usize> = index::sample(&mut rng, scalars.len(), take).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|k| scalars[k]));
    }

    let mut probe_model = model.clone();
    let mut probes = Vec::with_capacity(chosen.len());
    for (id, i) in chosen {
        let analytic = grads.get(&id).map_or(0.0, |t| t.data[i]);
        let orig = probe_model.params().value(id).data[i];
        probe_model.params_mut().value_mut(id).data[i] = orig + settings.step;
        let (lp, _) = loss_at(&probe_model, sample, &idx, &bank, Some(&targets))?;
        probe_model.params_mut().value_mut(id).data[i] = orig - settings.step;
        let (lm, _) = loss_at(&probe_model, sample, &idx, &bank, Some(&targets))?;
        probe_model.params_mut().value_mut(id).data[i] = orig;
        let numeric = (lp - lm) / (2.0 * settings.step);
        let p = model.params().get(id);
        probes.push(ProbedScalar {
            name: p.name.clone(),
            family: p.family,
            index: i,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    if settings.corrupt {
        if let Some(p) = probes
            .iter_mut()
            .max_by(|a, b| a.analytic.abs().total_cmp(&b.analytic.abs()))
        {
            p.analytic *= 2.0;
            p.rel_error = rel_error(p.analytic, p.numeric);
        }
    }
    let max_rel_error = probes.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    let mut families: Vec<Family> = probes.iter().map(|p| p.family).collect();
    families.dedup();
    Ok(GradCheckReport {
        max_rel_error,
        families,
        probes,
        deterministic: l0.to_bits() == l1.to_bits(),
    })
}
