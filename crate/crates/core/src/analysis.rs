//! Diagnostics over recorded runs: estimation error, the Lyapunov candidate
//! built on continuous companion variables, the output-error audit, set
//! invariance, the empirical ultimate bound, trigger statistics and the
//! parameter advisor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    ControllerDesign, GainSet, TriggerThresholds, LOAD_FILTER_OFFSET, STRICT_FILTER_OFFSET,
};
use crate::engine::{Detector, EventRecord, Sample, SimResult};
use crate::expr::{EvalError, NonlinearityExpr};
use crate::linalg::{build_companion, eigen_real_parts, solve_lyapunov, LyapunovCert, Mat, NumericsError, HURWITZ_TOL};
use crate::plant::PlantModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no samples at or after tail_start = {tail_start}")]
    EmptyTail { tail_start: f64 },
}

/// `eps = x - (xi + theta zeta)`.
pub fn estimation_error(x: &[f64], xi: &[f64], zeta: &[f64], theta: f64) -> Vec<f64> {
    x.iter()
        .zip(xi)
        .zip(zeta)
        .map(|((x, xi), z)| x - (xi + theta * z))
        .collect()
}

/// Continuous analogues of the virtual inputs, evaluated on the live output.
/// Returns `(alpha_hat_1..alpha_hat_{n-1}, upsilon_hat_2..upsilon_hat_n)`.
#[allow(clippy::too_many_arguments)]
pub fn companion_variables(
    y: f64,
    xi: &[f64],
    zeta: &[f64],
    theta_hat: f64,
    alpha_f: &[f64],
    gains: &GainSet,
    k: &[f64],
    psi1: &NonlinearityExpr,
) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let n = xi.len();
    let mut alpha_hat = Vec::with_capacity(n - 1);
    let mut upsilon_hat = Vec::with_capacity(n - 1);
    alpha_hat.push(-gains.c[0] * y - theta_hat * (psi1.eval(y)? + zeta[1]));
    upsilon_hat.push(alpha_f[0] - alpha_hat[0]);
    for i in 2..n {
        let z = xi[i - 1] - alpha_f[i - 2];
        let a = -gains.c[i - 1] * z - k[i - 1] * (y - xi[0]) - gains.rho[i - 2] * upsilon_hat[i - 2];
        alpha_hat.push(a);
        upsilon_hat.push(alpha_f[i - 1] - a);
    }
    Ok((alpha_hat, upsilon_hat))
}

/// `z_1 = y`, `z_i = xi_i - alpha_if`.
pub fn virtual_errors(y: f64, xi: &[f64], alpha_f: &[f64]) -> Vec<f64> {
    std::iter::once(y)
        .chain(xi[1..].iter().zip(alpha_f).map(|(x, a)| x - a))
        .collect()
}

fn quad(p: &Mat, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            s += v[r] * p[(r, c)] * v[c];
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovValue {
    pub total: f64,
    /// `V_1 .. V_n`
    pub parts: Vec<f64>,
}

pub fn lyapunov_value(
    z: &[f64],
    upsilon_hat: &[f64],
    theta_tilde: f64,
    eps: &[f64],
    zeta: &[f64],
    p: &Mat,
) -> LyapunovValue {
    let n = z.len();
    let mut parts = Vec::with_capacity(n);
    parts.push(
        0.5 * (z[0] * z[0] + theta_tilde * theta_tilde + upsilon_hat[0] * upsilon_hat[0])
            + quad(p, eps)
            + quad(p, zeta),
    );
    for i in 1..n - 1 {
        parts.push(0.5 * (z[i] * z[i] + upsilon_hat[i] * upsilon_hat[i]));
    }
    if n > 1 {
        parts.push(0.5 * z[n - 1] * z[n - 1]);
    }
    LyapunovValue {
        total: parts.iter().sum(),
        parts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticFrame {
    pub t: f64,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub upsilon_hat: Vec<f64>,
    pub theta_tilde: f64,
    pub v: f64,
    pub v_parts: Vec<f64>,
}

/// Builds every proof quantity at one instant from continuous signals.
#[allow(clippy::too_many_arguments)]
pub fn diagnostic_frame(
    t: f64,
    x: &[f64],
    xi: &[f64],
    zeta: &[f64],
    theta_hat: f64,
    alpha_f: &[f64],
    theta: f64,
    design: &ControllerDesign,
    p: &Mat,
) -> Result<DiagnosticFrame, EvalError> {
    let y = x[0];
    let eps = estimation_error(x, xi, zeta, theta);
    let z = virtual_errors(y, xi, alpha_f);
    let (alpha_hat, upsilon_hat) =
        companion_variables(y, xi, zeta, theta_hat, alpha_f, &design.gains, &design.k, &design.psi[0])?;
    let theta_tilde = theta - theta_hat;
    let v = lyapunov_value(&z, &upsilon_hat, theta_tilde, &eps, zeta, p);
    Ok(DiagnosticFrame {
        t,
        eps,
        z,
        alpha_hat,
        upsilon_hat,
        theta_tilde,
        v: v.total,
        v_parts: v.parts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Audit {
    pub max_error: f64,
    pub violations: usize,
    pub bound: f64,
    pub slack: f64,
}

/// Slack is `10 * event_tol * max |ydot|`, covering the bisection overshoot.
pub fn lemma1_audit_samples(samples: &[Sample], gamma_y: f64, gamma_ybar: f64, event_tol: f64) -> Lemma1Audit {
    let max_ydot = samples.iter().map(|s| s.ydot.abs()).fold(0.0, f64::max);
    let slack = 10.0 * event_tol * max_ydot;
    let bound = gamma_y + gamma_ybar;
    let mut max_error: f64 = 0.0;
    let mut violations = 0;
    for s in samples {
        let e = (s.y - s.ybar_tj).abs();
        max_error = max_error.max(e);
        if e > bound + slack {
            violations += 1;
        }
    }
    Lemma1Audit {
        max_error,
        violations,
        bound,
        slack,
    }
}

pub fn lemma1_audit(result: &SimResult, thresholds: &TriggerThresholds) -> Lemma1Audit {
    lemma1_audit_samples(
        &result.samples,
        thresholds.gamma_y,
        thresholds.gamma_ybar,
        result.meta.event_tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub q: f64,
    pub v0: f64,
    pub v_max: f64,
    /// `V(0) <= q`; the containment check is skipped when false.
    pub precondition_met: bool,
    pub contained: Option<bool>,
}

pub fn invariance_check(result: &SimResult, q: f64) -> InvarianceReport {
    let v0 = result.samples.first().map_or(0.0, |s| s.v);
    let v_max = result.samples.iter().map(|s| s.v).fold(0.0, f64::max);
    let precondition_met = v0 <= q;
    InvarianceReport {
        q,
        v0,
        v_max,
        precondition_met,
        contained: precondition_met.then_some(v_max <= q * (1.0 + 1e-6)),
    }
}

pub fn tail_sup(samples: &[Sample], tail_start: f64) -> Result<f64, AnalysisError> {
    let mut any = false;
    let mut sup: f64 = 0.0;
    for s in samples.iter().filter(|s| s.t >= tail_start) {
        any = true;
        sup = sup.max(s.y.abs());
    }
    if any {
        Ok(sup)
    } else {
        Err(AnalysisError::EmptyTail { tail_start })
    }
}

/// Empirical ultimate bound: `sup |y(t)|` over `t >= tail_start`.
pub fn practical_bound(result: &SimResult, tail_start: f64) -> Result<f64, AnalysisError> {
    tail_sup(&result.samples, tail_start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorStats {
    pub count: usize,
    #[serde(with = "inf_as_string")]
    pub min_gap: f64,
    #[serde(with = "inf_as_string")]
    pub mean_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerStats {
    pub ed1: DetectorStats,
    pub ed2: DetectorStats,
}

fn detector_stats(events: &[EventRecord], det: Detector) -> DetectorStats {
    let ts: Vec<f64> = events.iter().filter(|e| e.detector == det).map(|e| e.t).collect();
    let gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return DetectorStats {
            count: ts.len(),
            min_gap: f64::INFINITY,
            mean_gap: f64::INFINITY,
        };
    }
    DetectorStats {
        count: ts.len(),
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        mean_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
    }
}

/// Counts and gaps between consecutive firings of each detector.
pub fn trigger_statistics(events: &[EventRecord]) -> TriggerStats {
    TriggerStats {
        ed1: detector_stats(events, Detector::Ed1),
        ed2: detector_stats(events, Detector::Ed2),
    }
}

/// JSON has no infinity; write it as the string `"inf"`.
pub mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// parameter advisor

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvisorError {
    #[error("A_c built from k is not Hurwitz (largest real part {max_real})")]
    NotHurwitz { max_real: f64 },
    #[error("sigma = {sigma} must lie in (0, 1/5)")]
    SigmaRange { sigma: f64 },
    #[error("q = {q} must be positive")]
    NonPositiveQ { q: f64 },
    #[error("2q = {two_q} <= theta_bar^2 = {theta_bar_sq}; the delta formula is undefined")]
    DeltaFormulaUndefined { two_q: f64, theta_bar_sq: f64 },
    #[error("c_delta = {0} must exceed 1")]
    CDeltaTooSmall(f64),
    #[error("c_Delta = {0} must be non-negative")]
    NegativeCDelta(f64),
    #[error("psi(0) could not be evaluated: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Design-rule inequalities a parameter set is expected to meet.
    Structural,
    /// Conservative sufficient conditions from the stability argument.
    Sufficient,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintResult {
    pub name: String,
    pub kind: CheckKind,
    pub satisfied: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvisorOptions {
    /// Additive slack `c_Delta >= 0` in `eta_0`.
    pub c_big_delta: f64,
    /// Multiplier `c_delta > 1` in the suggested leakage gain.
    pub c_small_delta: f64,
    /// Target for every `c_bar_i`; defaults to `c_0 = d_bar / q`.
    pub c_bar_target: Option<f64>,
}

impl Default for AdvisorOptions {
    fn default() -> Self {
        Self {
            c_big_delta: 0.0,
            c_small_delta: 2.0,
            c_bar_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvisorReport {
    pub a_c_hurwitz: bool,
    pub p: LyapunovCert,
    pub constraint_results: Vec<ConstraintResult>,
    pub suggested_delta: f64,
    /// Smallest admissible `c_i` for the chosen `c_bar` target.
    pub c_lower_bounds: Vec<f64>,
    /// `c_bar_i` implied by the configured `c_i`.
    pub c_bar: Vec<f64>,
    pub c_bar_target: f64,
    pub c0: f64,
    pub d_bar: f64,
    pub c_of_beta: f64,
    pub delta_bar: f64,
    pub sigma_bar: f64,
    pub lambda_bar: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta_under: f64,
    pub q_floor: f64,
}

impl AdvisorReport {
    pub fn check(&self, name: &str) -> Option<&ConstraintResult> {
        self.constraint_results.iter().find(|c| c.name == name)
    }

    pub fn structural_ok(&self) -> bool {
        self.constraint_results
            .iter()
            .filter(|c| c.kind == CheckKind::Structural)
            .all(|c| c.satisfied)
    }
}

fn eta_under(eta0: f64, eta1: f64, sigma: f64, c_small_delta: f64, theta_bar: f64, gamma_tilde: f64) -> [f64; 3] {
    let tb2 = theta_bar * theta_bar;
    let eta2 = (2.0 * eta0 * sigma + c_small_delta * tb2 * (1.0 + gamma_tilde * gamma_tilde) + eta1 * tb2 * sigma / 2.0) / sigma;
    let eta3 = (c_small_delta - 1.0) * eta0 * tb2;
    let root = (eta2 + (eta2 * eta2 + 4.0 * eta1 * eta3).sqrt()) / (2.0 * eta1);
    [eta2, eta3, root]
}

fn constraint(name: impl Into<String>, kind: CheckKind, margin: f64, strict: bool) -> ConstraintResult {
    ConstraintResult {
        name: name.into(),
        kind,
        satisfied: if strict { margin > 0.0 } else { margin >= 0.0 },
        margin,
    }
}

/// Checks the design inequalities and computes the selection-recipe quantities.
pub fn advise_parameters(
    model: &PlantModel,
    k: &[f64],
    gains: &GainSet,
    thresholds: &TriggerThresholds,
    q: f64,
    options: &AdvisorOptions,
) -> Result<AdvisorReport, AdvisorError> {
    let n = k.len();
    let a_c = build_companion(k);
    let max_real = eigen_real_parts(&a_c)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < HURWITZ_TOL) {
        return Err(AdvisorError::NotHurwitz { max_real });
    }
    let sigma = gains.sigma;
    if !(sigma > 0.0 && sigma < 0.2) {
        return Err(AdvisorError::SigmaRange { sigma });
    }
    if !(q > 0.0) {
        return Err(AdvisorError::NonPositiveQ { q });
    }
    let theta_bar = model.theta_bar;
    let tb2 = theta_bar * theta_bar;
    if !(2.0 * q > tb2) {
        return Err(AdvisorError::DeltaFormulaUndefined {
            two_q: 2.0 * q,
            theta_bar_sq: tb2,
        });
    }
    if !(options.c_small_delta > 1.0) {
        return Err(AdvisorError::CDeltaTooSmall(options.c_small_delta));
    }
    if !(options.c_big_delta >= 0.0) {
        return Err(AdvisorError::NegativeCDelta(options.c_big_delta));
    }

    let cert = solve_lyapunov(&a_c)?;
    let p_norm = cert.norm();
    let lambda_bar = cert.lambda_max;
    let l = model.lipschitz_norm();
    let psi0_sq: f64 = model
        .psi
        .iter()
        .map(|p| p.eval(0.0).map(|v| v * v))
        .sum::<Result<f64, _>>()?;
    let gamma_tilde = thresholds.gamma_tilde();
    let gt2 = gamma_tilde * gamma_tilde;
    let sigma_bar = 1.0 - 5.0 * sigma;

    let eta0 = 2.0 * p_norm * p_norm * psi0_sq / sigma + options.c_big_delta;
    let eta1 = 2.0 * sigma_bar / lambda_bar;
    let [eta2, eta3, eta_low] = eta_under(eta0, eta1, sigma, options.c_small_delta, theta_bar, gamma_tilde);
    let eta0_zero = 2.0 * p_norm * p_norm * psi0_sq / sigma;
    let [_, _, q_floor] = eta_under(eta0_zero, eta1, sigma, options.c_small_delta, theta_bar, gamma_tilde);

    let suggested_delta = 2.0 * options.c_small_delta / (2.0 * q - tb2) * (eta0 + (1.0 + gt2) * q / sigma);
    let d_bar = gains.delta * tb2 / 2.0 + eta0;
    let c0 = d_bar / q;
    let target = options.c_bar_target.unwrap_or(c0);

    let c1_offset = 1.0
        + 1.0 / (4.0 * sigma)
        + 30.0 * sigma * l * l * gt2
        + 5.0 * sigma * thresholds.gamma_zeta * thresholds.gamma_zeta
        + p_norm * p_norm * l * l / sigma;
    let offsets: Vec<f64> = (0..n)
        .map(|i| match i {
            0 => c1_offset,
            i if i == n - 1 => 1.0,
            _ => 4.5,
        })
        .collect();
    let c_bar: Vec<f64> = gains.c.iter().zip(&offsets).map(|(c, o)| c - o).collect();
    let c_lower_bounds: Vec<f64> = offsets.iter().map(|o| o + target).collect();
    let delta_bar = gains.delta / 2.0 - (1.0 + gt2) / (2.0 * sigma);

    let mut c_of_beta = sigma_bar / lambda_bar;
    for cb in &c_bar {
        c_of_beta = c_of_beta.min(2.0 * cb);
    }
    for v in &gains.varrho {
        c_of_beta = c_of_beta.min(2.0 * v);
    }
    c_of_beta = c_of_beta.min(2.0 * delta_bar);

    use CheckKind::{Structural, Sufficient};
    let mut checks = vec![constraint(
        "gamma_ybar > gamma_y",
        Structural,
        thresholds.gamma_ybar - thresholds.gamma_y,
        true,
    )];
    for i in 0..n - 1 {
        let idx = i + 2;
        let base = gains.phi[i] + gains.varrho[i];
        checks.push(constraint(
            format!("rho_{idx} >= 2 + phi_{idx} + varrho_{idx}"),
            Structural,
            gains.rho[i] - (STRICT_FILTER_OFFSET + base),
            false,
        ));
        checks.push(constraint(
            format!("rho_{idx} >= 3/2 + phi_{idx} + varrho_{idx}"),
            Structural,
            gains.rho[i] - (LOAD_FILTER_OFFSET + base),
            false,
        ));
    }
    checks.push(constraint("c_1 >= c_1 lower bound", Sufficient, gains.c[0] - c_lower_bounds[0], false));
    for (i, (c, bound)) in gains.c.iter().zip(&c_lower_bounds).enumerate().take(n - 1).skip(1) {
        checks.push(constraint(format!("c_{} >= 9/2 + c_bar", i + 1), Structural, c - bound, false));
    }
    checks.push(constraint(
        format!("c_{n} >= 1 + c_bar"),
        Structural,
        gains.c[n - 1] - c_lower_bounds[n - 1],
        false,
    ));
    checks.push(constraint("delta_bar > 0", Sufficient, delta_bar, true));
    for (i, v) in gains.varrho.iter().enumerate() {
        let idx = i + 2;
        checks.push(constraint(format!("varrho_{idx} >= c0 / 2"), Sufficient, v - c0 / 2.0, false));
    }
    checks.push(constraint("q >= eta_under", Sufficient, q - eta_low, false));

    Ok(AdvisorReport {
        a_c_hurwitz: true,
        p: cert,
        constraint_results: checks,
        suggested_delta,
        c_lower_bounds,
        c_bar,
        c_bar_target: target,
        c0,
        d_bar,
        c_of_beta,
        delta_bar,
        sigma_bar,
        lambda_bar,
        eta0,
        eta1,
        eta2,
        eta3,
        eta_under: eta_low,
        q_floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::tests::{paper_design, CASE1};
    use crate::controller::{virtual_inputs, Latched};
    use crate::engine::tests::paper_config;
    use crate::engine::{run_simulation, RunMeta, Summary};
    use crate::expr::parse_expr;
    use proptest::prelude::*;

    fn p_paper() -> Mat {
        Mat::from_row_slice(2, 2, &[0.6, -0.5, -0.5, 0.62])
    }

    #[test]
    fn estimation_error_examples() {
        assert_eq!(estimation_error(&[5.0, -5.0], &[0.0, 0.0], &[0.0, -4.0], 1.0), vec![5.0, -1.0]);
        assert_eq!(estimation_error(&[1.5, 2.0], &[1.5, 2.0], &[0.0, 0.0], 3.0), vec![0.0, 0.0]);
        assert_eq!(estimation_error(&[1.5, 2.0], &[0.5, 1.0], &[9.0, 9.0], 0.0), vec![1.0, 1.0]);
    }

    #[test]
    fn companion_examples() {
        let d = paper_design(CASE1);
        let (a, u) = companion_variables(5.0, &[0.0, 0.0], &[0.0, -4.0], 4.0, &[0.0], &d.gains, &d.k, &d.psi[0]).unwrap();
        let expect = -42.5 - 4.0 * (5f64.cos() - 4.0);
        assert!((a[0] - expect).abs() < 1e-12);
        assert!((a[0] + 27.635).abs() < 1e-3);
        assert!((u[0] - 27.635).abs() < 1e-3);
        let (a, u) = companion_variables(0.0, &[0.0, 0.0], &[0.0, 0.0], 0.0, &[0.0], &d.gains, &d.k, &d.psi[0]).unwrap();
        assert_eq!((a, u), (vec![0.0], vec![0.0]));
    }

    proptest! {
        #[test]
        fn companions_coincide_with_virtual_inputs(
            y in -5.0..5.0f64,
            xi in prop::collection::vec(-3.0..3.0f64, 3),
            zeta in prop::collection::vec(-3.0..3.0f64, 3),
            th in -2.0..2.0f64,
            af in prop::collection::vec(-3.0..3.0f64, 2),
        ) {
            let gains = GainSet {
                c: vec![2.0, 6.0, 3.0],
                rho: vec![15.0, 20.0],
                phi: vec![10.0, 10.0],
                varrho: vec![1.0, 1.0],
                delta: 1.0,
                sigma: 0.1,
            };
            let k = [6.0, 11.0, 6.0];
            let psi1 = parse_expr("sin(y) + 0.5*y").unwrap();
            let l = Latched { xi: xi.clone(), zeta: zeta.clone(), theta_hat: th, alpha_f: af.clone(), ybar: y, t_j: 0.0 };
            let alpha = virtual_inputs(&l, &gains, &k, &psi1).unwrap();
            let (alpha_hat, _) = companion_variables(y, &xi, &zeta, th, &af, &gains, &k, &psi1).unwrap();
            prop_assert_eq!(alpha, alpha_hat);
        }

        #[test]
        fn eps_rearranges_exactly(
            xi in prop::collection::vec(-10.0..10.0f64, 3),
            zeta in prop::collection::vec(-10.0..10.0f64, 3),
            eps0 in prop::collection::vec(-10.0..10.0f64, 3),
            theta in -2.0..2.0f64,
        ) {
            let x: Vec<f64> = (0..3).map(|i| xi[i] + theta * zeta[i] + eps0[i]).collect();
            let eps = estimation_error(&x, &xi, &zeta, theta);
            for i in 0..3 {
                prop_assert_eq!(x[i], x[i] - eps[i] + eps[i]);
                prop_assert!((x[i] - (xi[i] + theta * zeta[i] + eps[i])).abs() <= 4.0 * f64::EPSILON * x[i].abs().max(1.0) * 8.0);
            }
        }
    }

    #[test]
    fn lyapunov_examples() {
        let p = p_paper();
        let zero = lyapunov_value(&[0.0, 0.0], &[0.0], 0.0, &[0.0, 0.0], &[0.0, 0.0], &p);
        assert_eq!(zero.total, 0.0);
        let e = lyapunov_value(&[0.0, 0.0], &[0.0], 0.0, &[1.0, 0.0], &[0.0, 0.0], &p);
        assert!((e.total - 0.6).abs() < 1e-15);
        assert_eq!(e.parts.len(), 2);
    }

    #[test]
    fn initial_v_by_hand() {
        // hand oracle at the initial frame
        let cert = solve_lyapunov(&build_companion(&[5.0, 5.0])).unwrap();
        let d = paper_design(CASE1);
        let f = diagnostic_frame(0.0, &[5.0, -5.0], &[0.0, 0.0], &[0.0, -4.0], 4.0, &[0.0], 1.0, &d, &cert.p).unwrap();
        let ups = 42.5 + 4.0 * (5f64.cos() - 4.0);
        let by_hand = 0.5 * (25.0 + 9.0 + ups * ups) + (0.6 * 25.0 + 5.0 + 0.62) + 0.62 * 16.0;
        assert!((f.v - by_hand).abs() < 1e-9, "{} vs {}", f.v, by_hand);
        assert!(f.v > 400.0);
        assert_eq!(f.z, vec![5.0, 0.0]);
        assert_eq!(f.theta_tilde, -3.0);
    }

    fn sample(t: f64, y: f64, ybar_tj: f64, v: f64) -> Sample {
        Sample {
            t,
            x: vec![y, 0.0],
            y,
            ybar: ybar_tj,
            u: 0.0,
            xi: vec![0.0, 0.0],
            zeta: vec![0.0, 0.0],
            theta_hat: 0.0,
            alpha_f: vec![0.0],
            eps_norm: 0.0,
            v,
            ybar_tj,
            ydot: 1.0,
        }
    }

    fn ev(t: f64, detector: Detector) -> EventRecord {
        EventRecord {
            t,
            detector,
            condition: crate::engine::Condition::Y,
            value: 0.0,
        }
    }

    #[test]
    fn lemma1_examples() {
        let flat: Vec<Sample> = (0..5).map(|i| sample(i as f64, 1.0, 1.0, 0.0)).collect();
        let a = lemma1_audit_samples(&flat, 0.05, 0.051, 1e-9);
        assert_eq!((a.max_error, a.violations), (0.0, 0));
        let mut bad = flat.clone();
        bad[2].ybar_tj += 1.0;
        assert!(lemma1_audit_samples(&bad, 0.05, 0.051, 1e-9).violations > 0);
    }

    #[test]
    fn lemma1_on_case1_run() {
        let r = run_simulation(&paper_config(CASE1)).unwrap();
        let a = lemma1_audit(&r, &CASE1);
        assert_eq!(a.violations, 0);
        assert!(a.max_error <= 0.101 + a.slack);
        let mut corrupted = r.clone();
        for s in corrupted.samples.iter_mut() {
            s.ybar_tj += 1.0;
        }
        assert!(lemma1_audit(&corrupted, &CASE1).violations > 0);
    }

    fn fake_result(samples: Vec<Sample>, events: Vec<EventRecord>) -> SimResult {
        let stats = trigger_statistics(&events);
        SimResult {
            summary: Summary {
                ed1_count: stats.ed1.count,
                ed2_count: stats.ed2.count,
                ed1: stats.ed1,
                ed2: stats.ed2,
                tail_sup_y: 0.0,
                v0: 0.0,
                v_max: 0.0,
                lemma1_max_error: 0.0,
                lemma1_violations: 0,
                lemma1_slack: 0.0,
            },
            samples,
            events,
            meta: RunMeta {
                t_end: 4.0,
                h: 1.0,
                event_tol: 1e-9,
                tail_start: 2.0,
                gamma_y: 0.05,
                gamma_ybar: 0.051,
            },
            lyapunov: solve_lyapunov(&build_companion(&[5.0, 5.0])).unwrap(),
        }
    }

    #[test]
    fn invariance_examples() {
        let zero = fake_result((0..5).map(|i| sample(i as f64, 0.0, 0.0, 0.0)).collect(), vec![]);
        let r = invariance_check(&zero, 50.0);
        assert_eq!((r.v_max, r.contained), (0.0, Some(true)));

        let vs = [10.0, 8.0, 60.0, 1.0];
        let s: Vec<Sample> = vs.iter().enumerate().map(|(i, &v)| sample(i as f64, 0.0, 0.0, v)).collect();
        let r = invariance_check(&fake_result(s.clone(), vec![]), 50.0);
        assert_eq!(r.contained, Some(false));
        let r = invariance_check(&fake_result(s, vec![]), 5.0);
        assert!(!r.precondition_met);
        assert_eq!(r.contained, None);
    }

    #[test]
    fn practical_bound_examples() {
        let ys = [5.0, 2.0, -0.3, 0.2, 0.1];
        let s: Vec<Sample> = ys.iter().enumerate().map(|(i, &y)| sample(i as f64, y, y, 0.0)).collect();
        let r = fake_result(s, vec![]);
        assert_eq!(practical_bound(&r, 2.0).unwrap(), 0.3);
        assert!(matches!(practical_bound(&r, 9.0), Err(AnalysisError::EmptyTail { .. })));
        let zero = fake_result((0..5).map(|i| sample(i as f64, 0.0, 0.0, 0.0)).collect(), vec![]);
        assert_eq!(practical_bound(&zero, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn trigger_statistics_examples() {
        let s = trigger_statistics(&[]);
        assert_eq!(s.ed1.count, 0);
        assert_eq!(s.ed1.min_gap, f64::INFINITY);
        assert_eq!(s.ed2.mean_gap, f64::INFINITY);

        let s = trigger_statistics(&[ev(1.0, Detector::Ed1), ev(1.1, Detector::Ed2), ev(1.2, Detector::Ed1)]);
        assert_eq!(s.ed1.count, 2);
        assert!((s.ed1.min_gap - 0.2).abs() < 1e-15);
        assert_eq!(s.ed2.count, 1);
        assert_eq!(s.ed2.min_gap, f64::INFINITY);
    }

    #[test]
    fn stats_json_uses_inf_string() {
        let s = trigger_statistics(&[]).ed1;
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"count":0,"min_gap":"inf","mean_gap":"inf"}"#);
        let back: DetectorStats = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }

    fn paper_model() -> PlantModel {
        paper_config(CASE1).model
    }

    fn advise(gains: &GainSet, th: &TriggerThresholds, q: f64) -> Result<AdvisorReport, AdvisorError> {
        advise_parameters(&paper_model(), &[5.0, 5.0], gains, th, q, &AdvisorOptions::default())
    }

    #[test]
    fn advisor_on_paper_setup() {
        let d = paper_design(CASE1);
        let r = advise(&d.gains, &CASE1, 50.0).unwrap();
        assert!((r.lambda_bar - 1.1101).abs() < 1e-3);
        assert!(r.check("gamma_ybar > gamma_y").unwrap().satisfied);
        let relaxed = r.check("rho_2 >= 3/2 + phi_2 + varrho_2").unwrap();
        assert!(relaxed.satisfied);
        assert!((relaxed.margin - 0.34).abs() < 1e-12);
        let strict = r.check("rho_2 >= 2 + phi_2 + varrho_2").unwrap();
        assert!((strict.margin + 0.16).abs() < 1e-12);
        assert!(r.check("c_2 >= 1 + c_bar").unwrap().satisfied);

        // independent evaluation of the recipe constants
        let pn = r.p.lambda_max;
        let eta0 = 2.0 * pn * pn * 2.0 / 0.1;
        assert!((r.eta0 - eta0).abs() < 1e-9);
        assert!((r.c0 - (1.125 + eta0) / 50.0).abs() < 1e-12);
        let gt2 = 0.101f64 * 0.101;
        assert!((r.delta_bar - (0.5 - (1.0 + gt2) / 0.2)).abs() < 1e-12);
        let c1_lb = 1.0 + 2.5 + 30.0 * 0.1 * 2.0 * gt2 + 5.0 * 0.1 * 0.04 + pn * pn * 2.0 / 0.1 + r.c0;
        assert!((r.c_lower_bounds[0] - c1_lb).abs() < 1e-9);
    }

    #[test]
    fn advisor_rho_mutation_margin() {
        let mut g = paper_design(CASE1).gains;
        g.rho = vec![1.0];
        let r = advise(&g, &CASE1, 50.0).unwrap();
        let c = r.check("rho_2 >= 2 + phi_2 + varrho_2").unwrap();
        assert!(!c.satisfied);
        assert!((c.margin + 11.16).abs() < 1e-12);
    }

    #[test]
    fn advisor_errors() {
        let d = paper_design(CASE1);
        assert!(matches!(advise(&d.gains, &CASE1, 1.125), Err(AdvisorError::DeltaFormulaUndefined { .. })));
        let mut g = d.gains.clone();
        g.sigma = 0.3;
        assert!(matches!(advise(&g, &CASE1, 50.0), Err(AdvisorError::SigmaRange { .. })));
        let r = advise_parameters(&paper_model(), &[-1.0, 5.0], &d.gains, &CASE1, 50.0, &AdvisorOptions::default());
        assert!(matches!(r, Err(AdvisorError::NotHurwitz { .. })));
    }

    #[test]
    fn suggested_delta_fixes_leakage_check() {
        let d = paper_design(CASE1);
        let r = advise(&d.gains, &CASE1, 50.0).unwrap();
        let mut g = d.gains.clone();
        g.delta = r.suggested_delta;
        let r2 = advise(&g, &CASE1, 50.0).unwrap();
        assert!(r2.check("delta_bar > 0").unwrap().satisfied);
    }

    #[test]
    fn all_pass_implies_positive_c_of_beta() {
        let d = paper_design(CASE1);
        let base = advise(&d.gains, &CASE1, 50.0).unwrap();
        let mut g = d.gains.clone();
        g.c = vec![base.c_lower_bounds[0] + 1.0, base.c_lower_bounds[1] + 1.0];
        g.varrho = vec![base.c0];
        g.rho = vec![2.0 + g.phi[0] + g.varrho[0] + 1.0];
        g.delta = base.suggested_delta;
        let r = advise(&g, &CASE1, 1e4).unwrap();
        assert!(r.constraint_results.iter().all(|c| c.satisfied), "{:#?}", r.constraint_results);
        assert!(r.c_of_beta > 0.0);
        assert!(r.constraint_results.iter().all(|c| c.margin >= 0.0));
    }
}
