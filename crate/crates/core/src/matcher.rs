//! Turning per-pulse tone estimates into delay/Doppler/phase/amplitude
//! triplets.
//!
//! Every tone `nu_k^m = f_k - 2 fc^m tau_k` is one linear constraint on its
//! target, but the tones of different pulses come unlabelled. Sign-paired
//! pulses (`fc, -fc`) let each cross pairing be inverted to a hypothesized
//! `(tau, f)`; the phases, further pulse pairs and a stacked least-squares fit
//! then pick out the pairings that describe real targets.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{wrap_centered, wrap_cycles, ChirpProfile, ChirpSchedule, TargetParams};
use crate::specest::{SinusoidEstimate, SinusoidEstimateSet};

/// The stacked frequency constraints `A beta = P nu` with `A = B (x) I_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    /// `M x 2`, row `m` is `[1, -2 fc^m]`.
    pub b: DMatrix<f64>,
    /// `MK x 2K`.
    pub a: DMatrix<f64>,
    /// Pulse-major stack of the estimated frequencies.
    pub nu_stack: Vec<f64>,
    pub chirps: ChirpSchedule,
    pub k: usize,
    /// Fewer independent constraints than unknowns (a single pulse, or all
    /// rates equal).
    pub underdetermined: bool,
}

impl ConstraintSystem {
    pub fn pulses(&self) -> usize {
        self.b.nrows()
    }

    /// Frequency of component `j` on pulse `m`.
    pub fn nu(&self, m: usize, j: usize) -> f64 {
        self.nu_stack[m * self.k + j]
    }

    /// `B^T B`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.b.transpose() * &self.b
    }
}

pub fn build_constraints(chirps: &ChirpSchedule, estimates: &[SinusoidEstimateSet]) -> Result<ConstraintSystem> {
    if estimates.is_empty() {
        return Err(invalid("estimates", "no pulses"));
    }
    if estimates.len() != chirps.len() {
        return Err(Error::Size(format!(
            "{} estimate sets for {} scheduled pulses",
            estimates.len(),
            chirps.len()
        )));
    }
    let k = estimates[0].len();
    for (m, e) in estimates.iter().enumerate() {
        if e.len() != k {
            return Err(Error::InconsistentModelOrder {
                pulse: m,
                expected: k,
                found: e.len(),
            });
        }
    }
    let rates = chirps.rates();
    let mm = rates.len();
    let b = DMatrix::from_fn(mm, 2, |m, c| if c == 0 { 1.0 } else { -2.0 * rates[m] });
    let a = b.kronecker(&DMatrix::<f64>::identity(k, k));
    let nu_stack = estimates.iter().flat_map(|e| e.frequencies()).collect();
    let distinct = rates.iter().any(|&r| r != rates[0]);
    Ok(ConstraintSystem {
        b,
        a,
        nu_stack,
        chirps: chirps.clone(),
        k,
        underdetermined: !distinct,
    })
}

/// Outcome of the phase-matching test for one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseCheck {
    Pass,
    Fail,
    Untested,
}

/// A pairing of component `k` of one pulse with component `l` of its
/// sign-paired partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub k: usize,
    pub l: usize,
    pub tau_h: f64,
    pub f_h: f64,
    pub phase_ok: PhaseCheck,
}

/// The region hypotheses must fall in, widened by the given slacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub tau_max: f64,
    pub f_max: f64,
    pub tau_slack: f64,
    pub f_slack: f64,
}

impl SearchBounds {
    /// Bounds with a relative slack of `1e-9` for rounding.
    pub fn new(tau_max: f64, f_max: f64) -> Self {
        Self {
            tau_max,
            f_max,
            tau_slack: 1e-9 * tau_max,
            f_slack: 1e-9 * f_max,
        }
    }

    pub fn with_slack(mut self, tau_slack: f64, f_slack: f64) -> Self {
        self.tau_slack = tau_slack;
        self.f_slack = f_slack;
        self
    }

    pub fn admits(&self, tau: f64, f: f64) -> bool {
        tau >= -self.tau_slack && tau <= self.tau_max + self.tau_slack && f.abs() < self.f_max + self.f_slack
    }
}

/// All `K^2` cross pairings of two sign-paired pulses that land inside the
/// bounds. `fc1` is the rate of the pulse `est1` came from; its partner has
/// rate `-fc1`.
pub fn candidate_intersections(
    est1: &SinusoidEstimateSet,
    est2: &SinusoidEstimateSet,
    fc1: f64,
    bounds: &SearchBounds,
) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    if fc1 == 0.0 {
        return out;
    }
    for (k, a) in est1.components.iter().enumerate() {
        for (l, b) in est2.components.iter().enumerate() {
            let tau_h = (a.nu - b.nu) / (-4.0 * fc1);
            let f_h = 0.5 * (a.nu + b.nu);
            if bounds.admits(tau_h, f_h) {
                out.push(Hypothesis {
                    k,
                    l,
                    tau_h,
                    f_h,
                    phase_ok: PhaseCheck::Untested,
                });
            }
        }
    }
    out
}

/// All `K^2` cross pairings of two pulses with distinct rates `fa` and `fb`
/// that land inside the bounds.
pub fn general_intersections(
    est_a: &SinusoidEstimateSet,
    est_b: &SinusoidEstimateSet,
    fa: f64,
    fb: f64,
    bounds: &SearchBounds,
) -> Vec<Hypothesis> {
    let mut out = Vec::new();
    if fa == fb {
        return out;
    }
    for (k, a) in est_a.components.iter().enumerate() {
        for (l, b) in est_b.components.iter().enumerate() {
            let tau_h = (b.nu - a.nu) / (2.0 * (fa - fb));
            let f_h = a.nu + 2.0 * fa * tau_h;
            if bounds.admits(tau_h, f_h) {
                out.push(Hypothesis {
                    k,
                    l,
                    tau_h,
                    f_h,
                    phase_ok: PhaseCheck::Untested,
                });
            }
        }
    }
    out
}

/// Distance in cycles between the observed phase difference of two pulses
/// and the one a target at delay `tau` would produce.
pub fn phase_residual(tau: f64, psi_a: f64, psi_b: f64, a: &ChirpProfile, b: &ChirpProfile) -> f64 {
    let predicted = (a.fc - b.fc) * tau * tau - (a.f0 - b.f0) * tau;
    wrap_centered(psi_a - psi_b - predicted).abs()
}

/// Tests `tau_h^2 = (psi1 - psi2) / (2 fc1)` on the branch of the phase
/// difference nearest `tau_h^2`, for the pair `(fc1, -fc1)`.
pub fn phase_match_check(h: &Hypothesis, psi1: f64, psi2: f64, fc1: f64, tol_cycles: f64) -> PhaseCheck {
    if fc1 == 0.0 {
        return PhaseCheck::Untested;
    }
    let a = ChirpProfile::new(0, fc1);
    let b = ChirpProfile::new(1, -fc1);
    if phase_residual(h.tau_h, psi1, psi2, &a, &b) <= tol_cycles {
        PhaseCheck::Pass
    } else {
        PhaseCheck::Fail
    }
}

/// Phase and amplitude of a target matched across two pulses.
///
/// Half the summed phases is only known up to half a cycle; the branch
/// closer to the single-pulse prediction `psi_a - fc_a tau^2 + f0_a tau` is
/// kept.
pub fn recover_phase_amplitude(
    tau: f64,
    ea: &SinusoidEstimate,
    eb: &SinusoidEstimate,
    a: &ChirpProfile,
    b: &ChirpProfile,
) -> (f64, f64) {
    let sum = ea.psi + eb.psi - (a.fc + b.fc) * tau * tau + (a.f0 + b.f0) * tau;
    let reference = ea.psi - a.fc * tau * tau + a.f0 * tau;
    let c0 = wrap_cycles(0.5 * sum);
    let c1 = wrap_cycles(0.5 * sum + 0.5);
    let phi = if wrap_centered(c0 - reference).abs() <= wrap_centered(c1 - reference).abs() {
        c0
    } else {
        c1
    };
    (phi, 0.5 * (ea.amp + eb.amp))
}

/// Every complete matching (one hypothesis per row `k`, no column `l` used
/// twice), as lists of hypothesis indices ordered by row.
pub fn complete_matchings(hyps: &[Hypothesis], k: usize) -> Vec<Vec<usize>> {
    let rows: Vec<usize> = (0..k).collect();
    let idx: Vec<usize> = (0..hyps.len()).collect();
    enumerate_matchings(hyps, &idx, &rows, usize::MAX)
}

fn enumerate_matchings(hyps: &[Hypothesis], edges: &[usize], rows: &[usize], limit: usize) -> Vec<Vec<usize>> {
    let by_row: Vec<Vec<usize>> = rows
        .iter()
        .map(|&r| edges.iter().copied().filter(|&e| hyps[e].k == r).collect())
        .collect();
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(rows.len());
    let mut used = BTreeSet::new();
    fn rec(
        i: usize,
        by_row: &[Vec<usize>],
        hyps: &[Hypothesis],
        chosen: &mut Vec<usize>,
        used: &mut BTreeSet<usize>,
        out: &mut Vec<Vec<usize>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if i == by_row.len() {
            out.push(chosen.clone());
            return;
        }
        for &e in &by_row[i] {
            let l = hyps[e].l;
            if used.insert(l) {
                chosen.push(e);
                rec(i + 1, by_row, hyps, chosen, used, out, limit);
                chosen.pop();
                used.remove(&l);
            }
        }
    }
    rec(0, &by_row, hyps, &mut chosen, &mut used, &mut out, limit);
    out
}

/// Agreement thresholds used by the noiseless matcher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchTolerance {
    pub phase_cycles: f64,
    /// Seconds.
    pub tau: f64,
    /// Hz.
    pub f: f64,
    /// Relative amplitude difference.
    pub amp: f64,
}

impl MatchTolerance {
    /// Defaults scaled to the search region.
    pub fn for_bounds(bounds: &SearchBounds) -> Self {
        Self {
            phase_cycles: 1e-6,
            tau: 1e-6 * bounds.tau_max,
            f: 1e-6 * bounds.f_max,
            amp: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguityKind {
    /// Several complete matchings explain the tones equally well.
    Ambiguous,
    /// A conflict group too large for exhaustive search.
    Oversized,
    /// No matching inside the bounds covers every component.
    Infeasible,
    /// Two fitted targets cannot be told apart on any pulse.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityFlag {
    pub kind: AmbiguityKind,
    /// Components of the first pulse involved (target indices for
    /// `Unresolved`).
    pub components: Vec<usize>,
    /// Number of competing matchings, when counted.
    pub matchings: usize,
}

impl AmbiguityFlag {
    /// Whether the flag means the result is incomplete or not unique.
    /// An `Infeasible` flag only records that the bounds had to be relaxed.
    pub fn is_blocking(&self) -> bool {
        self.kind != AmbiguityKind::Infeasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub triplets: Vec<TargetParams>,
    /// Norm of the stacked least-squares residual, Hz.
    pub residual: f64,
    #[serde(rename = "flags")]
    pub ambiguity_flags: Vec<AmbiguityFlag>,
    pub pulses_used: usize,
    /// `assignment[m][i]` is the component of pulse `m` attributed to
    /// triplet `i`.
    #[serde(default)]
    pub assignment: Vec<Vec<usize>>,
}

impl MatchResult {
    pub fn is_ambiguous(&self) -> bool {
        self.ambiguity_flags.iter().any(AmbiguityFlag::is_blocking)
    }
}

/// Closed-form least squares for `beta = [f_1..f_K, tau_1..tau_K]` with
/// `assignment[m][i]` naming the component of pulse `m` that belongs to
/// target `i`. Returns `beta` and the residual norm.
///
/// `A = B (x) I_K` decouples the targets, so each one is a 2-parameter fit
/// with normal matrix `B^T B`, which is diagonal for sign-paired schedules.
pub fn ls_fit_parameters(system: &ConstraintSystem, assignment: &[Vec<usize>]) -> Result<(Vec<f64>, f64)> {
    let mm = system.pulses();
    if assignment.len() != mm {
        return Err(Error::Size(format!("assignment covers {} of {mm} pulses", assignment.len())));
    }
    let targets = assignment[0].len();
    for (m, row) in assignment.iter().enumerate() {
        if row.len() != targets {
            return Err(Error::Size(format!("pulse {m} assigns {} targets, expected {targets}", row.len())));
        }
        let mut seen = BTreeSet::new();
        for &j in row {
            if j >= system.k || !seen.insert(j) {
                return Err(Error::Size(format!("pulse {m} assignment is not a partial permutation")));
            }
        }
    }
    if system.underdetermined || mm < 2 {
        return Err(Error::RankDeficientSchedule);
    }
    let g = system.gram();
    let (g11, g12, g22) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
    let det = g11 * g22 - g12 * g12;
    if !(det > 0.0) {
        return Err(Error::RankDeficientSchedule);
    }
    let sign_paired = system.chirps.is_sign_paired();
    let mut beta = vec![0.0; 2 * targets];
    let mut ss = 0.0;
    for i in 0..targets {
        let (mut r1, mut r2) = (0.0, 0.0);
        for m in 0..mm {
            let nu = system.nu(m, assignment[m][i]);
            r1 += system.b[(m, 0)] * nu;
            r2 += system.b[(m, 1)] * nu;
        }
        let (f, tau) = if sign_paired {
            (r1 / g11, r2 / g22)
        } else {
            ((g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det)
        };
        beta[i] = f;
        beta[targets + i] = tau;
        for m in 0..mm {
            let pred = system.b[(m, 0)] * f + system.b[(m, 1)] * tau;
            ss += (system.nu(m, assignment[m][i]) - pred).powi(2);
        }
    }
    Ok((beta, ss.sqrt()))
}

/// Consecutive pulse pairs `(2i, 2i+1)` whose rates are exact negatives.
pub fn sign_pairs(chirps: &ChirpSchedule) -> Vec<(usize, usize)> {
    let p = chirps.pulses();
    (0..p.len() / 2)
        .map(|i| (2 * i, 2 * i + 1))
        .filter(|&(a, b)| p[a].fc != 0.0 && p[b].fc == -p[a].fc)
        .collect()
}

/// One phase-consistent pairing of a sign pair, with the target it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    k: usize,
    l: usize,
    tau: f64,
    f: f64,
    phi: f64,
    amp: f64,
}

fn pair_edges(
    pair: (usize, usize),
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
    phase_tol: Option<f64>,
) -> (Vec<Hypothesis>, Vec<Edge>) {
    let (pa, pb) = pair;
    let ca = &chirps.pulses()[pa];
    let cb = &chirps.pulses()[pb];
    let mut hyps = candidate_intersections(&estimates[pa], &estimates[pb], ca.fc, bounds);
    let mut edges = Vec::new();
    for h in hyps.iter_mut() {
        let ea = &estimates[pa].components[h.k];
        let eb = &estimates[pb].components[h.l];
        if let Some(tol) = phase_tol {
            h.phase_ok = if phase_residual(h.tau_h, ea.psi, eb.psi, ca, cb) <= tol {
                PhaseCheck::Pass
            } else {
                PhaseCheck::Fail
            };
            if h.phase_ok == PhaseCheck::Fail {
                continue;
            }
        }
        let (phi, amp) = recover_phase_amplitude(h.tau_h, ea, eb, ca, cb);
        edges.push(Edge {
            k: h.k,
            l: h.l,
            tau: h.tau_h,
            f: h.f_h,
            phi,
            amp,
        });
    }
    (hyps, edges)
}

fn agrees(a: &Edge, b: &Edge, tol: &MatchTolerance) -> bool {
    (a.tau - b.tau).abs() <= tol.tau && (a.f - b.f).abs() <= tol.f && wrap_centered(a.phi - b.phi).abs() <= tol.phase_cycles
}

/// Outcome of resolving the first sign pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Accepted `(k, l)` pairings of the first pair.
    pub accepted: Vec<(usize, usize)>,
    pub flags: Vec<AmbiguityFlag>,
}

/// Largest conflict group searched exhaustively.
pub const MAX_EXHAUSTIVE_GROUP: usize = 4;

/// Resolves the phase-consistent pairings of the first sign pair, using the
/// pairings of the later pairs to break ties.
///
/// Forced pairings (a row or column with a single candidate) are accepted
/// and removed until none remain. What is left splits into conflict groups;
/// their candidates must agree in `(tau, f, phi)` with some pairing of every
/// later pair, then small groups are searched exhaustively, preferring the
/// matching whose amplitudes agree best with the later pairs.
fn resolve(k: usize, first: &[Edge], later: &[Vec<Edge>], tol: &MatchTolerance) -> (Vec<Edge>, Vec<AmbiguityFlag>) {
    let mut accepted = Vec::new();
    let mut flags = Vec::new();
    let rows: Vec<usize> = (0..k).collect();
    let remaining = eliminate(first.to_vec(), &rows, &mut accepted);
    let open_rows: Vec<usize> = rows.iter().copied().filter(|r| !accepted.iter().any(|e: &Edge| e.k == *r)).collect();
    for group in conflict_groups(&remaining, &open_rows) {
        let (grows, gedges) = group;
        // cross-check against every later pair
        let filtered: Vec<Edge> = gedges
            .iter()
            .copied()
            .filter(|e| later.iter().all(|q| q.iter().any(|h| agrees(e, h, tol))))
            .collect();
        let mut sub_accepted = Vec::new();
        let rest = eliminate(filtered, &grows, &mut sub_accepted);
        accepted.extend(sub_accepted.iter().copied());
        let sub_rows: Vec<usize> = grows
            .iter()
            .copied()
            .filter(|r| !sub_accepted.iter().any(|e| e.k == *r))
            .collect();
        for (srows, sedges) in conflict_groups(&rest, &sub_rows) {
            if srows.len() > MAX_EXHAUSTIVE_GROUP {
                flags.push(AmbiguityFlag {
                    kind: AmbiguityKind::Oversized,
                    components: srows,
                    matchings: 0,
                });
                continue;
            }
            let hyps: Vec<Hypothesis> = sedges
                .iter()
                .map(|e| Hypothesis {
                    k: e.k,
                    l: e.l,
                    tau_h: e.tau,
                    f_h: e.f,
                    phase_ok: PhaseCheck::Pass,
                })
                .collect();
            let idx: Vec<usize> = (0..hyps.len()).collect();
            let matchings = enumerate_matchings(&hyps, &idx, &srows, usize::MAX);
            match matchings.len() {
                0 => flags.push(AmbiguityFlag {
                    kind: AmbiguityKind::Infeasible,
                    components: srows,
                    matchings: 0,
                }),
                1 => accepted.extend(matchings[0].iter().map(|&i| sedges[i])),
                n => {
                    let score = |mt: &Vec<usize>| -> f64 {
                        mt.iter()
                            .map(|&i| {
                                let e = &sedges[i];
                                later
                                    .iter()
                                    .map(|q| {
                                        q.iter()
                                            .filter(|h| agrees(e, h, tol))
                                            .map(|h| (e.amp - h.amp).abs() / e.amp.abs().max(h.amp.abs()).max(1e-300))
                                            .fold(f64::INFINITY, f64::min)
                                    })
                                    .sum::<f64>()
                            })
                            .sum()
                    };
                    let mut scored: Vec<(f64, usize)> = matchings.iter().enumerate().map(|(i, m)| (score(m), i)).collect();
                    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let decisive = !later.is_empty() && scored[0].0.is_finite() && scored[1].0 - scored[0].0 > tol.amp;
                    if decisive {
                        accepted.extend(matchings[scored[0].1].iter().map(|&i| sedges[i]));
                    } else {
                        flags.push(AmbiguityFlag {
                            kind: AmbiguityKind::Ambiguous,
                            components: srows,
                            matchings: n,
                        });
                    }
                }
            }
        }
    }
    accepted.sort_by_key(|e| e.k);
    (accepted, flags)
}

/// Repeatedly accepts edges that are the only option for their row or
/// column. Returns the edges still in play.
fn eliminate(mut edges: Vec<Edge>, rows: &[usize], accepted: &mut Vec<Edge>) -> Vec<Edge> {
    let mut open: BTreeSet<usize> = rows.iter().copied().collect();
    loop {
        let mut forced = None;
        for &r in &open {
            let mut it = edges.iter().filter(|e| e.k == r);
            if let (Some(e), None) = (it.next(), it.next()) {
                forced = Some(*e);
                break;
            }
        }
        if forced.is_none() {
            let cols: BTreeSet<usize> = edges.iter().map(|e| e.l).collect();
            for c in cols {
                let mut it = edges.iter().filter(|e| e.l == c);
                if let (Some(e), None) = (it.next(), it.next()) {
                    forced = Some(*e);
                    break;
                }
            }
        }
        match forced {
            Some(e) => {
                accepted.push(e);
                open.remove(&e.k);
                edges.retain(|x| x.k != e.k && x.l != e.l);
            }
            None => return edges,
        }
    }
}

/// Splits rows and edges into connected components of the bipartite graph.
fn conflict_groups(edges: &[Edge], rows: &[usize]) -> Vec<(Vec<usize>, Vec<Edge>)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &r0 in rows {
        if seen.contains(&r0) {
            continue;
        }
        let mut grows = BTreeSet::from([r0]);
        let mut gcols = BTreeSet::new();
        loop {
            let before = grows.len() + gcols.len();
            for e in edges {
                if grows.contains(&e.k) || gcols.contains(&e.l) {
                    grows.insert(e.k);
                    gcols.insert(e.l);
                }
            }
            if grows.len() + gcols.len() == before {
                break;
            }
        }
        seen.extend(grows.iter().copied());
        let gedges = edges.iter().copied().filter(|e| grows.contains(&e.k)).collect();
        out.push((grows.into_iter().collect(), gedges));
    }
    out
}

/// The pairing of the first sign pair found by the noiseless matcher, and
/// any groups it could not settle.
pub fn resolve_ambiguities(
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
    tol: &MatchTolerance,
) -> Result<Resolution> {
    let system = build_constraints(chirps, estimates)?;
    let pairs = sign_pairs(chirps);
    if pairs.is_empty() {
        return Err(invalid("schedule", "matching needs at least one sign-paired pulse pair"));
    }
    let edge_sets: Vec<Vec<Edge>> = pairs
        .iter()
        .map(|&p| pair_edges(p, estimates, chirps, bounds, Some(tol.phase_cycles)).1)
        .collect();
    let (accepted, flags) = resolve(system.k, &edge_sets[0], &edge_sets[1..], tol);
    Ok(Resolution {
        accepted: accepted.iter().map(|e| (e.k, e.l)).collect(),
        flags,
    })
}

/// Number of complete matchings of the first sign pair, with or without the
/// phase test.
pub fn count_pair_matchings(
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
    phase_tol: Option<f64>,
) -> Result<usize> {
    let pairs = sign_pairs(chirps);
    let &(pa, pb) = pairs
        .first()
        .ok_or_else(|| invalid("schedule", "matching needs at least one sign-paired pulse pair"))?;
    let (hyps, _) = pair_edges((pa, pb), estimates, chirps, bounds, phase_tol);
    let kept: Vec<Hypothesis> = hyps.into_iter().filter(|h| h.phase_ok != PhaseCheck::Fail).collect();
    Ok(complete_matchings(&kept, estimates[pa].len()).len())
}

/// Noiseless matching: phase test on every sign pair, ambiguity resolution
/// across pairs, then a joint least-squares fit over all pulses.
pub fn match_noiseless(
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
    tol: &MatchTolerance,
) -> Result<MatchResult> {
    let system = build_constraints(chirps, estimates)?;
    let pairs = sign_pairs(chirps);
    if pairs.is_empty() {
        return Err(invalid("schedule", "matching needs at least one sign-paired pulse pair"));
    }
    let edge_sets: Vec<Vec<Edge>> = pairs
        .iter()
        .map(|&p| pair_edges(p, estimates, chirps, bounds, Some(tol.phase_cycles)).1)
        .collect();
    let (accepted, flags) = resolve(system.k, &edge_sets[0], &edge_sets[1..], tol);
    let provisional: Vec<TargetParams> = accepted.iter().map(|e| TargetParams::new(e.tau, e.f, e.amp, e.phi)).collect();
    let assignment = assign_pulses(&provisional, estimates, chirps, bounds);
    finish(&system, estimates, &assignment, flags)
}

/// For each pulse, the component nearest each provisional target in
/// frequency, phase and amplitude, chosen jointly.
fn assign_pulses(
    targets: &[TargetParams],
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
) -> Vec<Vec<usize>> {
    let amp_scale = targets.iter().map(|t| t.amp.abs()).fold(0.0, f64::max).max(1e-300);
    let nu_scale = bounds.f_max.max(1e-300);
    estimates
        .iter()
        .zip(chirps.pulses())
        .map(|(est, chirp)| {
            if targets.is_empty() {
                return Vec::new();
            }
            let cost: Vec<Vec<f64>> = targets
                .iter()
                .map(|t| {
                    let nu = t.f - 2.0 * chirp.fc * t.tau;
                    let psi = t.phi + chirp.fc * t.tau * t.tau - chirp.f0 * t.tau;
                    est.components
                        .iter()
                        .map(|c| {
                            (c.nu - nu).abs() / nu_scale + wrap_centered(c.psi - psi).abs() + 1e-3 * (c.amp - t.amp).abs() / amp_scale
                        })
                        .collect()
                })
                .collect();
            linalg::min_cost_assignment(&cost)
        })
        .collect()
}

/// Least-squares delay/Doppler, then phase and amplitude averaged over the
/// pulses.
fn finish(
    system: &ConstraintSystem,
    estimates: &[SinusoidEstimateSet],
    assignment: &[Vec<usize>],
    flags: Vec<AmbiguityFlag>,
) -> Result<MatchResult> {
    let n = assignment.first().map_or(0, Vec::len);
    let (beta, residual) = if n == 0 {
        (Vec::new(), 0.0)
    } else {
        ls_fit_parameters(system, assignment)?
    };
    let chirps = system.chirps.pulses();
    let triplets = (0..n)
        .map(|i| {
            let (f, tau) = (beta[i], beta[n + i]);
            let mut acc = num_complex::Complex64::new(0.0, 0.0);
            let mut amp = 0.0;
            for (m, est) in estimates.iter().enumerate() {
                let c = &est.components[assignment[m][i]];
                let phi = c.psi - chirps[m].fc * tau * tau + chirps[m].f0 * tau;
                acc += num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * phi);
                amp += c.amp;
            }
            let phi = wrap_cycles(acc.arg() / std::f64::consts::TAU);
            TargetParams::new(tau, f, amp / estimates.len() as f64, phi)
        })
        .collect();
    Ok(MatchResult {
        triplets,
        residual,
        ambiguity_flags: flags,
        pulses_used: estimates.len(),
        assignment: assignment.to_vec(),
    })
}

/// Tolerances for matching noisy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyTolerance {
    /// Standard deviation of a single frequency estimate, Hz.
    pub sigma_nu: f64,
    /// Width of the acceptance band in standard deviations.
    pub bands: f64,
}

impl NoisyTolerance {
    pub const DEFAULT_BANDS: f64 = 3.0;

    pub fn new(sigma_nu: f64) -> Self {
        Self {
            sigma_nu,
            bands: Self::DEFAULT_BANDS,
        }
    }

    /// Band from the frequency-estimation bound at per-sample SNR
    /// `snr_linear` with `n` samples at period `ts`.
    pub fn from_snr(snr_linear: f64, n: usize, ts: f64) -> Self {
        Self::new(crate::specest::crlb_frequency_var_hz(snr_linear, n, ts).sqrt())
    }

    pub fn nu_band(&self) -> f64 {
        self.bands * self.sigma_nu
    }
}

/// Largest number of complete matchings of the first pair scored by
/// [`match_noisy`].
pub const MAX_NOISY_MATCHINGS: usize = 40_320;

/// Noisy matching: every complete pairing of every sign pair that lands
/// inside the (widened) bounds is extended to the other pulses by nearest
/// predicted frequency, fitted by least squares, and the smallest residual
/// wins. Phases are not used to discriminate.
///
/// When the winning residual is larger than the frequency band allows, the
/// search is repeated with each pulse left out in turn, and the subset with
/// the smallest residual per degree of freedom is kept. This drops a pulse on
/// which two tones fell too close together to be estimated.
///
/// When no pairing fits inside the bounds, all pairings are scored and an
/// `Infeasible` flag is attached. Targets whose predicted tones stay within
/// the band of each other on every pulse are flagged `Unresolved`.
pub fn match_noisy(
    estimates: &[SinusoidEstimateSet],
    chirps: &ChirpSchedule,
    bounds: &SearchBounds,
    tol: &NoisyTolerance,
) -> Result<MatchResult> {
    let system = build_constraints(chirps, estimates)?;
    if sign_pairs(chirps).is_empty() {
        return Err(invalid("schedule", "matching needs at least one sign-paired pulse pair"));
    }
    if system.underdetermined {
        return Err(Error::RankDeficientSchedule);
    }
    let k = system.k;
    if k == 0 {
        return finish(&system, estimates, &vec![Vec::new(); estimates.len()], Vec::new());
    }
    let band = tol.nu_band();
    let total = estimates.len();
    let dof = |pulses: usize| ((pulses * k).saturating_sub(2 * k)).max(1) as f64;
    let mut best = noisy_fit(&system, estimates, bounds, band)?;
    let mut dropped = None;
    if total > 2 && best.residual > band * dof(total).sqrt() {
        let mut score = best.residual / dof(total).sqrt();
        for d in 0..total {
            let keep: Vec<usize> = (0..total).filter(|&m| m != d).collect();
            let sub_chirps: ChirpSchedule = keep.iter().map(|&m| chirps.pulses()[m]).collect::<Vec<_>>().into();
            let sub_est = subset(estimates, &keep);
            let sub_sys = build_constraints(&sub_chirps, &sub_est)?;
            if sub_sys.underdetermined {
                continue;
            }
            let fit = noisy_fit(&sub_sys, &sub_est, bounds, band)?;
            let s = fit.residual / dof(keep.len()).sqrt();
            if s < score {
                score = s;
                best = fit;
                dropped = Some((d, sub_sys, sub_est));
            }
        }
    }
    let mut result = match dropped {
        None => finish(&system, estimates, &best.assignment, best.flags)?,
        Some((d, sub_sys, sub_est)) => {
            let mut r = finish(&sub_sys, &sub_est, &best.assignment, best.flags)?;
            let fc = chirps.pulses()[d].fc;
            let cost: Vec<Vec<f64>> = r
                .triplets
                .iter()
                .map(|t| estimates[d].components.iter().map(|c| (c.nu - (t.f - 2.0 * fc * t.tau)).abs()).collect())
                .collect();
            r.assignment.insert(d, linalg::min_cost_assignment(&cost));
            r
        }
    };
    let t = &result.triplets;
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            let close = chirps.pulses().iter().all(|c| {
                let a = t[i].f - 2.0 * c.fc * t[i].tau;
                let b = t[j].f - 2.0 * c.fc * t[j].tau;
                (a - b).abs() <= band
            });
            if close {
                result.ambiguity_flags.push(AmbiguityFlag {
                    kind: AmbiguityKind::Unresolved,
                    components: vec![i, j],
                    matchings: 0,
                });
            }
        }
    }
    Ok(result)
}

fn subset(estimates: &[SinusoidEstimateSet], keep: &[usize]) -> Vec<SinusoidEstimateSet> {
    keep.iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut e = estimates[m].clone();
            e.m = i;
            e
        })
        .collect()
}

struct NoisyFit {
    residual: f64,
    assignment: Vec<Vec<usize>>,
    flags: Vec<AmbiguityFlag>,
}

/// Best least-squares assignment seeded from every sign pair of the system.
fn noisy_fit(system: &ConstraintSystem, estimates: &[SinusoidEstimateSet], bounds: &SearchBounds, band: f64) -> Result<NoisyFit> {
    let chirps = &system.chirps;
    let k = system.k;
    let pairs = sign_pairs(chirps);
    let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
    // one standard deviation of a pair intersection, per unit frequency error
    let spread = |fa: f64, fb: f64| {
        let d = (fa - fb).abs();
        (std::f64::consts::SQRT_2 / (2.0 * d), (fa * fa + fb * fb).sqrt() / d)
    };
    let widen = |fa: f64, fb: f64| {
        let (st, sf) = spread(fa, fb);
        bounds.with_slack(bounds.tau_slack.max(band * st), bounds.f_slack.max(band * sf))
    };
    let rates = chirps.rates();
    let mut seeds: Vec<(usize, usize)> = pairs;
    if seeds.is_empty() {
        for a in 0..rates.len() {
            for b in a + 1..rates.len() {
                if rates[a] != rates[b] {
                    seeds.push((a, b));
                }
            }
        }
    }
    for &(pa, pb) in &seeds {
        let (fa, fb) = (rates[pa], rates[pb]);
        let hyps = general_intersections(&estimates[pa], &estimates[pb], fa, fb, &widen(fa, fb));
        let matchings = complete_matchings_capped(&hyps, k, MAX_NOISY_MATCHINGS);
        score_matchings(system, estimates, (pa, pb), &hyps, &matchings, &mut best)?;
    }
    let mut flags = Vec::new();
    if best.is_none() {
        let (pa, pb) = seeds[0];
        let (fa, fb) = (rates[pa], rates[pb]);
        let pool = general_intersections(&estimates[pa], &estimates[pb], fa, fb, &bounds.with_slack(f64::INFINITY, f64::INFINITY));
        let matchings = complete_matchings_capped(&pool, k, MAX_NOISY_MATCHINGS);
        score_matchings(system, estimates, (pa, pb), &pool, &matchings, &mut best)?;
        flags.push(AmbiguityFlag {
            kind: AmbiguityKind::Infeasible,
            components: (0..k).collect(),
            matchings: matchings.len(),
        });
    }
    let (residual, assignment) = best.ok_or_else(|| Error::Degenerate("no complete matching of the first pulse pair".into()))?;
    Ok(NoisyFit {
        residual,
        assignment,
        flags,
    })
}

/// Extends each first-pair matching to the remaining pulses and keeps the
/// assignment with the smallest least-squares residual in `best`.
fn score_matchings(
    system: &ConstraintSystem,
    estimates: &[SinusoidEstimateSet],
    (pa, pb): (usize, usize),
    pool: &[Hypothesis],
    matchings: &[Vec<usize>],
    best: &mut Option<(f64, Vec<Vec<usize>>)>,
) -> Result<()> {
    let k = system.k;
    for mt in matchings {
        let seeds: Vec<(f64, f64)> = mt.iter().map(|&i| (pool[i].tau_h, pool[i].f_h)).collect();
        let mut assignment = vec![vec![0usize; k]; estimates.len()];
        for (i, &h) in mt.iter().enumerate() {
            assignment[pa][i] = pool[h].k;
            assignment[pb][i] = pool[h].l;
        }
        for (m, est) in estimates.iter().enumerate() {
            if m == pa || m == pb {
                continue;
            }
            let fc = system.chirps.pulses()[m].fc;
            let cost: Vec<Vec<f64>> = seeds
                .iter()
                .map(|&(tau, f)| est.components.iter().map(|c| (c.nu - (f - 2.0 * fc * tau)).abs()).collect())
                .collect();
            assignment[m] = linalg::min_cost_assignment(&cost);
        }
        let (_, residual) = ls_fit_parameters(system, &assignment)?;
        if best.as_ref().map_or(true, |b| residual < b.0) {
            *best = Some((residual, assignment));
        }
    }
    Ok(())
}

fn complete_matchings_capped(hyps: &[Hypothesis], k: usize, limit: usize) -> Vec<Vec<usize>> {
    let rows: Vec<usize> = (0..k).collect();
    let idx: Vec<usize> = (0..hyps.len()).collect();
    enumerate_matchings(hyps, &idx, &rows, limit)
}

/// Slopes, in chirp-rate units, of the lines through pairs of hypothesized
/// `(tau, f)` points. A pulse of rate `g` cannot separate two points whose
/// slope is `+-g`.
pub fn hypothesis_slopes(points: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dt = points[i].0 - points[j].0;
            if dt != 0.0 {
                out.push((points[i].1 - points[j].1) / (2.0 * dt));
            }
        }
    }
    out
}

/// Grid size of the chirp-rate search.
pub const RATE_GRID: usize = 256;

/// Picks the next chirp rate from the grid `i bound / 256`, `i = 1..=256`,
/// maximizing the smallest distance `||g| - |s||` to the conflict slopes.
///
/// Without slopes the sign-paired sequence continues: an odd-length history
/// is completed with the negated last rate, otherwise the last magnitude is
/// doubled if admissible and halved if not.
pub fn next_chirp_rate(slopes: &[f64], history: &[f64], bound: f64) -> f64 {
    let last = history.last().copied();
    if slopes.is_empty() {
        return match last {
            None => bound / 2.0,
            Some(r) if history.len() % 2 == 1 => -r,
            Some(r) => {
                if 2.0 * r.abs() <= bound {
                    2.0 * r.abs()
                } else {
                    r.abs() / 2.0
                }
            }
        };
    }
    let score = |g: f64| slopes.iter().map(|s| (g.abs() - s.abs()).abs()).fold(f64::INFINITY, f64::min);
    let grid: Vec<f64> = (1..=RATE_GRID).map(|i| i as f64 * bound / RATE_GRID as f64).collect();
    let scores: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if top - low <= 1e-12 * bound {
        let r = last.map_or(bound / 2.0, |r| 2.0 * r.abs());
        return r.min(bound);
    }
    let i = scores.iter().position(|&s| s == top).expect("nonempty grid");
    grid[i]
}
