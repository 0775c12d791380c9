//! Application-agnostic PMACE machinery.
//!
//! The state is a [`PatchStack`] `v = [v_0, …, v_{J-1}]` of patches, one per
//! agent. Agents act on their own patch independently; the
//! [`ConsensusOperator`] `G^P` gathers the patches into one image by a
//! pixel-weighted average `x̄ = Λ⁻¹ Σ_j P_jᵀ W v_j` and scatters the result
//! back. A solution satisfies `F(v) = G^P(v)`, equivalently it is a fixed
//! point of `T = (2G^P − I)(2F − I)`, which [`mann_solve`] finds by Mann
//! iteration.

use std::time::Instant;

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{ConvergenceTrace, TraceRecord};
use crate::ptycho::ScanPattern;
use crate::{ComplexImage, Error, RealImage, Result, C64};

/// Stacked patch state, one equally shaped complex patch per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    patches: Vec<ComplexImage>,
}

impl PatchStack {
    pub fn new(patches: Vec<ComplexImage>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty patch stack".into()))?
            .dim();
        for p in &patches {
            if p.dim() != first {
                return Err(Error::ShapeMismatch {
                    expected: first,
                    found: p.dim(),
                });
            }
        }
        let stack = Self { patches };
        if !stack.is_finite() {
            return Err(Error::NonFinite("patch stack".into()));
        }
        Ok(stack)
    }

    /// `[P_0 x, …, P_{J-1} x]`.
    pub fn from_image(scan: &ScanPattern, x: &ComplexImage) -> Result<Self> {
        let patches = (0..scan.len())
            .map(|j| scan.extract_patch(x, j))
            .collect::<Result<Vec<_>>>()?;
        Self::new(patches)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.patches[0].dim()
    }

    pub fn patches(&self) -> &[ComplexImage] {
        &self.patches
    }

    pub fn into_patches(self) -> Vec<ComplexImage> {
        self.patches
    }

    pub fn get(&self, j: usize) -> Option<&ComplexImage> {
        self.patches.get(j)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.patches
            .iter()
            .flat_map(|p| p.iter())
            .map(|z| z.norm_sqr())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.patches
            .iter()
            .flat_map(|p| p.iter())
            .all(|z| z.is_finite())
    }

    /// `‖self − other‖`.
    pub fn distance(&self, other: &PatchStack) -> f64 {
        self.patches
            .iter()
            .zip(&other.patches)
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `a·self + b·other`, patch by patch.
    pub fn combine(&self, a: f64, other: &PatchStack, b: f64) -> PatchStack {
        let patches = self
            .patches
            .iter()
            .zip(&other.patches)
            .map(|(p, q)| Zip::from(p).and(q).map_collect(|&x, &y| x * a + y * b))
            .collect();
        PatchStack { patches }
    }

    fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// A map from one patch to an improved patch of the same shape.
pub trait Agent: Send + Sync {
    fn apply(&self, v: &ComplexImage) -> Result<ComplexImage>;
}

impl<F> Agent for F
where
    F: Fn(&ComplexImage) -> ComplexImage + Send + Sync,
{
    fn apply(&self, v: &ComplexImage) -> Result<ComplexImage> {
        Ok(self(v))
    }
}

/// The identity agent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Agent for Identity {
    fn apply(&self, v: &ComplexImage) -> Result<ComplexImage> {
        Ok(v.clone())
    }
}

/// One agent per patch.
#[derive(Default)]
pub struct AgentSet {
    agents: Vec<Box<dyn Agent>>,
}

impl AgentSet {
    pub fn new(agents: Vec<Box<dyn Agent>>) -> Self {
        Self { agents }
    }

    pub fn identity(count: usize) -> Self {
        Self::new(
            (0..count)
                .map(|_| Box::new(Identity) as Box<dyn Agent>)
                .collect(),
        )
    }

    pub fn push(&mut self, agent: Box<dyn Agent>) {
        self.agents.push(agent);
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn get(&self, j: usize) -> Option<&dyn Agent> {
        self.agents.get(j).map(|a| a.as_ref())
    }
}

impl FromIterator<Box<dyn Agent>> for AgentSet {
    fn from_iter<I: IntoIterator<Item = Box<dyn Agent>>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// `F(v) = [F_0(v_0), …, F_{J-1}(v_{J-1})]`, evaluated in parallel.
///
/// Each output patch depends only on its own input, so the result is the
/// same for every evaluation order.
pub fn apply_agents(agents: &AgentSet, v: &PatchStack) -> Result<PatchStack> {
    v.check_len(agents.len())?;
    let shape = v.patch_shape();
    let patches = agents
        .agents
        .par_iter()
        .zip(v.patches.par_iter())
        .map(|(agent, p)| {
            let out = agent.apply(p)?;
            if out.dim() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    found: out.dim(),
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchStack { patches })
}

/// The pixel-weighted consensus projection `G^P`.
///
/// `Λ = Σ_j P_jᵀ W P_j` is built once. Pixels no patch covers are outside the
/// reconstruction support and stay zero in [`ConsensusOperator::weighted_mean`];
/// construction fails if any covered pixel has `Λ = 0`.
#[derive(Debug, Clone)]
pub struct ConsensusOperator {
    scan: ScanPattern,
    weight: RealImage,
    lambda: RealImage,
    inv_lambda: RealImage,
    support: Array2<bool>,
}

impl ConsensusOperator {
    pub fn new(scan: ScanPattern, weight: RealImage) -> Result<Self> {
        scan.check_patch(weight.dim())?;
        if weight.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        let lambda = scan.embedding_sum(&weight)?;
        let support = scan.support();
        let singular: Vec<(usize, usize)> = lambda
            .indexed_iter()
            .filter(|&(ix, &l)| support[ix] && l <= 0.0)
            .map(|(ix, _)| ix)
            .collect();
        if !singular.is_empty() {
            return Err(Error::SingularWeights {
                count: singular.len(),
                first: singular.into_iter().take(8).collect(),
            });
        }
        let inv_lambda = lambda.mapv(|l| if l > 0.0 { 1.0 / l } else { 0.0 });
        Ok(Self {
            scan,
            weight,
            lambda,
            inv_lambda,
            support,
        })
    }

    /// Operator with unit weights (`Λ = Λ₀`, the coverage count).
    pub fn uniform(scan: ScanPattern) -> Result<Self> {
        let weight = Array2::from_elem(scan.patch_shape(), 1.0);
        Self::new(scan, weight)
    }

    pub fn scan(&self) -> &ScanPattern {
        &self.scan
    }

    pub fn weight(&self) -> &RealImage {
        &self.weight
    }

    pub fn lambda(&self) -> &RealImage {
        &self.lambda
    }

    pub fn support(&self) -> &Array2<bool> {
        &self.support
    }

    /// `x̄(v) = Λ⁻¹ Σ_j P_jᵀ W v_j`, accumulated in ascending `j`.
    pub fn weighted_mean(&self, v: &PatchStack) -> Result<ComplexImage> {
        v.check_len(self.scan.len())?;
        self.scan.check_patch(v.patch_shape())?;
        let mut acc: ComplexImage = Array2::zeros(self.scan.image_shape());
        for (j, p) in v.patches.iter().enumerate() {
            let weighted = Zip::from(p).and(&self.weight).map_collect(|&z, &w| z * w);
            self.scan.add_embedded(&mut acc, weighted.view(), j)?;
        }
        Zip::from(&mut acc)
            .and(&self.inv_lambda)
            .for_each(|a, &il| *a *= il);
        Ok(acc)
    }

    /// `G^P(v) = [P_0 x̄(v), …, P_{J-1} x̄(v)]`.
    pub fn project(&self, v: &PatchStack) -> Result<PatchStack> {
        let mean = self.weighted_mean(v)?;
        self.broadcast(&mean)
    }

    /// `[P_0 x, …, P_{J-1} x]`.
    pub fn broadcast(&self, x: &ComplexImage) -> Result<PatchStack> {
        let patches = (0..self.scan.len())
            .into_par_iter()
            .map(|j| self.scan.extract_patch(x, j))
            .collect::<Result<Vec<_>>>()?;
        Ok(PatchStack { patches })
    }

    /// `(2G^P − I)(v)`.
    pub fn reflect(&self, v: &PatchStack) -> Result<PatchStack> {
        Ok(self.project(v)?.combine(2.0, v, -1.0))
    }
}

/// `T(v) = (2G^P − I)(2F − I)(v)`.
pub fn fixed_point_map(
    op: &ConsensusOperator,
    agents: &AgentSet,
    v: &PatchStack,
) -> Result<PatchStack> {
    let w = apply_agents(agents, v)?;
    op.reflect(&w.combine(2.0, v, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannConfig {
    /// Mann averaging parameter in `(0, 1)`.
    pub rho: f64,
    pub max_iters: usize,
    /// Stop once `‖v_{k+1} − v_k‖ / ‖v_k‖` falls to this value.
    pub residual_tol: f64,
    pub record_trace: bool,
}

impl Default for MannConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            max_iters: 100,
            residual_tol: 1e-6,
            record_trace: true,
        }
    }
}

impl MannConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie strictly inside (0, 1), got {}",
                self.rho
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidParameter(
                "residual_tol must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Extra per-iteration quantities supplied by the caller's monitor.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Observation {
    pub nrmse: Option<f64>,
    pub image_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MannSolution {
    pub state: PatchStack,
    pub trace: ConvergenceTrace,
    pub iterations: usize,
    pub converged: bool,
}

/// Mann iteration `v ← (1−ρ)v + ρT(v)`.
pub fn mann_solve(
    op: &ConsensusOperator,
    agents: &AgentSet,
    v0: PatchStack,
    cfg: &MannConfig,
) -> Result<MannSolution> {
    mann_solve_monitored(op, agents, v0, cfg, |_, _| Observation::default())
}

/// [`mann_solve`] with a monitor called on the state after every iteration.
///
/// The loop body is the three-step form
/// `w ← F(v); z ← G^P(2w − v); v ← v + 2ρ(z − w)`, which equals the Mann
/// update without materializing `T(v)`.
pub fn mann_solve_monitored<M>(
    op: &ConsensusOperator,
    agents: &AgentSet,
    v0: PatchStack,
    cfg: &MannConfig,
    mut monitor: M,
) -> Result<MannSolution>
where
    M: FnMut(usize, &PatchStack) -> Observation,
{
    cfg.validate()?;
    v0.check_len(op.scan.len())?;
    let start = Instant::now();
    let mut trace = ConvergenceTrace::default();
    let mut v = v0;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iters {
        iterations = k;
        let w = apply_agents(agents, &v)?;
        let z = op.project(&w.combine(2.0, &v, -1.0))?;
        let step = 2.0 * cfg.rho;
        let mut update_sq = 0.0;
        for ((vj, wj), zj) in v.patches.iter_mut().zip(&w.patches).zip(&z.patches) {
            Zip::from(vj).and(wj).and(zj).for_each(|v, &w, &z| {
                let delta: C64 = (z - w) * step;
                update_sq += delta.norm_sqr();
                *v += delta;
            });
        }
        if !update_sq.is_finite() || !v.is_finite() {
            return Err(Error::Diverged { iteration: k });
        }
        let norm = v.norm();
        let residual = relative(update_sq.sqrt(), norm);

        if cfg.record_trace {
            let obs = monitor(k, &v);
            trace.push(TraceRecord {
                iteration: k,
                residual,
                nrmse: obs.nrmse,
                seconds: start.elapsed().as_secs_f64(),
                image_residual: obs.image_residual,
                objective: None,
            });
        }
        if residual <= cfg.residual_tol {
            converged = true;
            break;
        }
    }
    Ok(MannSolution {
        state: v,
        trace,
        iterations,
        converged,
    })
}

/// `num / den`, with `0/0 = 0`.
pub(crate) fn relative(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// Proximal map of `f(v) = ½‖v − b‖²` with strength `σ`:
/// `v ↦ (v + σ² b) / (1 + σ²)`.
#[derive(Debug, Clone)]
pub struct ProximalQuadratic {
    target: ComplexImage,
    sigma_sq: f64,
}

impl ProximalQuadratic {
    pub fn new(target: ComplexImage, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        Ok(Self {
            target,
            sigma_sq: sigma * sigma,
        })
    }
}

impl Agent for ProximalQuadratic {
    fn apply(&self, v: &ComplexImage) -> Result<ComplexImage> {
        if v.dim() != self.target.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.target.dim(),
                found: v.dim(),
            });
        }
        let s = self.sigma_sq;
        Ok(Zip::from(v)
            .and(&self.target)
            .map_collect(|&x, &b| (x + b * s) / (1.0 + s)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_stack(values: &[C64]) -> PatchStack {
        PatchStack::new(
            values
                .iter()
                .map(|&z| Array2::from_elem((1, 1), z))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_agents_return_input() {
        let v = scalar_stack(&[c(1.0, 2.0), c(-3.0, 0.5)]);
        assert_eq!(apply_agents(&AgentSet::identity(2), &v).unwrap(), v);
    }

    #[test]
    fn doubling_agents() {
        let v = scalar_stack(&[c(1.0, 0.0), c(0.0, 3.0)]);
        let agents: AgentSet = (0..2)
            .map(|_| Box::new(|p: &ComplexImage| p.mapv(|z| z * 2.0)) as Box<dyn Agent>)
            .collect();
        let out = apply_agents(&agents, &v).unwrap();
        assert_eq!(out, scalar_stack(&[c(2.0, 0.0), c(0.0, 6.0)]));
    }

    #[test]
    fn apply_agents_errors() {
        let v = scalar_stack(&[c(1.0, 0.0), c(0.0, 3.0)]);
        assert_eq!(
            apply_agents(&AgentSet::identity(3), &v),
            Err(Error::LengthMismatch {
                expected: 3,
                found: 2
            })
        );
        let agents: AgentSet = (0..2)
            .map(|_| Box::new(|_: &ComplexImage| Array2::zeros((2, 2))) as Box<dyn Agent>)
            .collect();
        assert!(matches!(
            apply_agents(&agents, &v),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn patch_stack_validation() {
        assert!(PatchStack::new(vec![]).is_err());
        assert!(PatchStack::new(vec![Array2::zeros((2, 2)), Array2::zeros((2, 3))]).is_err());
        assert!(PatchStack::new(vec![Array2::from_elem((1, 1), c(f64::NAN, 0.0))]).is_err());
    }

    #[test]
    fn single_full_patch_mean_is_the_patch() {
        let scan = ScanPattern::new((3, 3), 3, vec![(0, 0)]).unwrap();
        let op = ConsensusOperator::uniform(scan).unwrap();
        let p = Array2::from_shape_fn((3, 3), |(i, j)| c(i as f64, j as f64));
        let v = PatchStack::new(vec![p.clone()]).unwrap();
        assert_eq!(op.weighted_mean(&v).unwrap(), p);
    }

    #[test]
    fn fully_overlapping_patches_average() {
        let scan = ScanPattern::new((2, 2), 2, vec![(0, 0), (0, 0)]).unwrap();
        let op = ConsensusOperator::uniform(scan).unwrap();
        let v = PatchStack::new(vec![
            Array2::from_elem((2, 2), c(1.0, 1.0)),
            Array2::from_elem((2, 2), c(3.0, -1.0)),
        ])
        .unwrap();
        let mean = op.weighted_mean(&v).unwrap();
        assert!(mean.iter().all(|&z| z == c(2.0, 0.0)));
    }

    #[test]
    fn uncovered_pixels_stay_zero_and_zero_weights_fail() {
        let scan = ScanPattern::new((3, 3), 2, vec![(0, 0)]).unwrap();
        let op = ConsensusOperator::uniform(scan.clone()).unwrap();
        let v = PatchStack::new(vec![Array2::from_elem((2, 2), c(1.0, 0.0))]).unwrap();
        let mean = op.weighted_mean(&v).unwrap();
        assert_eq!(mean[[2, 2]], c(0.0, 0.0));
        assert!(!op.support()[[2, 2]]);

        let mut w = Array2::from_elem((2, 2), 1.0);
        w[[1, 1]] = 0.0;
        match ConsensusOperator::new(scan, w) {
            Err(Error::SingularWeights { count, first }) => {
                assert_eq!(count, 1);
                assert_eq!(first, vec![(1, 1)]);
            }
            other => panic!("expected singular weights, got {other:?}"),
        }
    }

    #[test]
    fn projection_fixes_consistent_stacks() {
        let scan = ScanPattern::new((4, 5), 3, vec![(0, 0), (1, 2), (0, 1)]).unwrap();
        let w = Array2::from_shape_fn((3, 3), |(i, j)| 0.5 + (i * 3 + j) as f64 * 0.1);
        let op = ConsensusOperator::new(scan.clone(), w).unwrap();
        let x = Array2::from_shape_fn((4, 5), |(i, j)| c(i as f64 - 1.0, (j * j) as f64));
        let x = &x
            * &op
                .support()
                .mapv(|s| if s { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let v = PatchStack::from_image(&scan, &x).unwrap();
        let p = op.project(&v).unwrap();
        assert!(p.distance(&v) < 1e-12);
        // identity agents on a consistent stack: T fixes it
        let t = fixed_point_map(&op, &AgentSet::identity(3), &v).unwrap();
        assert!(t.distance(&v) < 1e-12);
    }

    #[test]
    fn mann_stops_immediately_at_a_fixed_point() {
        let scan = ScanPattern::new((4, 4), 2, vec![(0, 0), (1, 1), (2, 2)]).unwrap();
        let op = ConsensusOperator::uniform(scan.clone()).unwrap();
        let x = Array2::from_elem((4, 4), c(0.3, -0.2));
        let v0 = PatchStack::from_image(&scan, &x).unwrap();
        let sol = mann_solve(
            &op,
            &AgentSet::identity(3),
            v0.clone(),
            &MannConfig::default(),
        )
        .unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.converged);
        assert_eq!(sol.state, v0);
        assert_eq!(sol.trace.len(), 1);
        assert_eq!(sol.trace.records()[0].residual, 0.0);
    }

    #[test]
    fn mann_config_validation() {
        for rho in [0.0, 1.0, -0.1, f64::NAN] {
            let cfg = MannConfig {
                rho,
                ..MannConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        assert!(MannConfig {
            max_iters: 0,
            ..MannConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let scan = ScanPattern::new((2, 2), 2, vec![(0, 0)]).unwrap();
        let op = ConsensusOperator::uniform(scan).unwrap();
        let agents: AgentSet =
            std::iter::once(Box::new(|p: &ComplexImage| p.mapv(|z| z * 1e150)) as Box<dyn Agent>)
                .collect();
        let v0 = PatchStack::new(vec![Array2::from_elem((2, 2), c(1.0, 0.0))]).unwrap();
        let cfg = MannConfig {
            residual_tol: 0.0,
            ..MannConfig::default()
        };
        assert_eq!(
            mann_solve(&op, &agents, v0, &cfg).unwrap_err(),
            Error::Diverged { iteration: 2 }
        );
    }

    #[test]
    fn proximal_quadratic_closed_form() {
        let b = Array2::from_elem((1, 1), c(2.0, 0.0));
        let agent = ProximalQuadratic::new(b.clone(), 1.0).unwrap();
        assert_eq!(agent.apply(&b).unwrap(), b);
        let zero = Array2::zeros((1, 1));
        assert_eq!(agent.apply(&zero).unwrap()[[0, 0]], c(1.0, 0.0));
        assert!(ProximalQuadratic::new(b, 0.0).is_err());
    }
}
