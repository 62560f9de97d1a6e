//! Five-state linear model of one unit about an operating point.
//!
//! States `[dV_dc, dxi, ddelta, dI_stack, dgamma]`. Here `xi` integrates
//! `V_dc - V_ref` (the engine integrates the opposite sign), `delta` is the
//! VSM angle against the grid and `gamma` the stack current-loop integral.
//! The rectifier current closes through `dP_ac = K_delta ddelta` and the
//! droop conductance `G = K_droop S_base`.

use std::io::Write;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::stack::{stack_slope, stack_voltage, StackParams};
use crate::vsm::VsmParams;

pub const STATE_LABELS: [&str; 5] = ["dV_dc", "dxi", "ddelta", "dI_stack", "dgamma"];

#[derive(Debug, Clone, Copy, PartialEq)]
#[allow(non_snake_case)]
pub struct OperatingPoint {
    pub D_0: f64,
    pub I_stack0: f64,
    pub V_dc0: f64,
    pub K_delta: f64,
    /// Linearised branch resistance, ohm.
    pub R_stack: f64,
}

impl OperatingPoint {
    /// Steady state of the branch at stack current `i0` on bus voltage `v_dc0`.
    pub fn at(i0: f64, v_dc0: f64, k_delta: f64, stack: &StackParams) -> Result<Self> {
        if !(v_dc0 > 0.0 && i0 >= 0.0) {
            return Err(Error::Precondition(format!(
                "operating point needs V_dc0 > 0 and I_stack0 >= 0 (got {v_dc0}, {i0})"
            )));
        }
        let d0 = (stack_voltage(i0, stack)? + stack.R_L_stack * i0) / v_dc0;
        let op = Self {
            D_0: d0,
            I_stack0: i0,
            V_dc0: v_dc0,
            K_delta: k_delta,
            R_stack: stack.R_L_stack + stack_slope(i0, stack),
        };
        op.check()?;
        Ok(op)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.D_0 > 0.0 && self.D_0 < 1.0) {
            return Err(Error::Precondition(format!(
                "inconsistent operating point: duty {} outside (0, 1)",
                self.D_0
            )));
        }
        if !(self.V_dc0 > 0.0 && self.R_stack >= 0.0 && self.I_stack0 >= 0.0) {
            return Err(Error::Precondition("inconsistent operating point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub op: OperatingPoint,
    pub a: Vec<Vec<f64>>,
    /// Single input column: the stack current reference.
    pub b: Vec<Vec<f64>>,
    pub eigenvalues: Vec<Complex64>,
}

impl LinearModel {
    pub fn labels(&self) -> [&'static str; 5] {
        STATE_LABELS
    }

    /// `A x + B u`.
    pub fn derivative(&self, x: &[f64; 5], u: f64) -> [f64; 5] {
        let mut dx = [0.0; 5];
        for (i, d) in dx.iter_mut().enumerate() {
            *d = (0..5).map(|j| self.a[i][j] * x[j]).sum::<f64>() + self.b[i][0] * u;
        }
        dx
    }
}

/// Everything the linear model depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[allow(non_snake_case)]
pub struct LinearInputs {
    pub I_stack0: f64,
    pub V_dc0: f64,
    pub C_dc: f64,
    pub K_p: f64,
    pub K_i: f64,
    pub stack: StackParams,
    pub vsm: VsmParams,
}

impl Default for LinearInputs {
    fn default() -> Self {
        Self {
            I_stack0: 3000.0,
            V_dc0: 1000.0,
            C_dc: 0.05,
            K_p: 0.02,
            K_i: 15.0,
            stack: StackParams::default(),
            vsm: VsmParams::default(),
        }
    }
}

impl LinearInputs {
    pub fn model(&self) -> Result<LinearModel> {
        let op = OperatingPoint::at(self.I_stack0, self.V_dc0, self.vsm.K_delta, &self.stack)?;
        build_a_matrix(&op, &self.vsm, &self.stack, self.K_p, self.K_i, self.C_dc)
    }
}

pub fn build_a_matrix(op: &OperatingPoint, vsm: &VsmParams, stack: &StackParams, k_p: f64, k_i: f64, c_dc: f64) -> Result<LinearModel> {
    op.check()?;
    if !(c_dc > 0.0) {
        return Err(Error::Precondition(format!("C_dc must be positive, got {c_dc}")));
    }
    let (d0, i0, v0) = (op.D_0, op.I_stack0, op.V_dc0);
    let g = vsm.droop_gain();
    let l = stack.L_stack;
    let a = vec![
        // C V0 dV' = K_delta ddelta - (D0 I0 + G) dV - V0 (D0 dI + I0 dD)
        vec![
            -(d0 * i0 + g) / (c_dc * v0),
            0.0,
            op.K_delta / (c_dc * v0),
            (-d0 + i0 * k_p) / c_dc,
            -i0 * k_i / c_dc,
        ],
        vec![1.0, 0.0, 0.0, 0.0, 0.0],
        vec![-vsm.K_D, -vsm.K_J, 0.0, 0.0, 0.0],
        // L dI' = D0 dV + V0 dD - R_stack dI, dD = -K_p dI + K_i dgamma
        vec![d0 / l, 0.0, 0.0, (-op.R_stack - v0 * k_p) / l, v0 * k_i / l],
        vec![0.0, 0.0, 0.0, -1.0, 0.0],
    ];
    let b = vec![
        vec![-i0 * k_p / c_dc],
        vec![0.0],
        vec![0.0],
        vec![v0 * k_p / l],
        vec![1.0],
    ];
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("A has non-finite entries".into()));
    }
    let eigenvalues = linalg::eigenvalues(&a)?;
    Ok(LinearModel {
        op: *op,
        a,
        b,
        eigenvalues,
    })
}

pub fn eigenvalues(model: &LinearModel) -> Result<Vec<Complex64>> {
    linalg::eigenvalues(&model.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Stack current, A.
    IStack0,
    KDroop,
    /// ES current-loop gain; mapped onto the stack current-loop gain as
    /// `K_p = K_p_base * K_p3 / 3`.
    Kp3,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::IStack0 => "I_stack0",
            SweepParam::KDroop => "K_droop",
            SweepParam::Kp3 => "K_p3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "I_stack0" | "i_stack0" => Ok(SweepParam::IStack0),
            "K_droop" | "k_droop" => Ok(SweepParam::KDroop),
            "K_p3" | "k_p3" => Ok(SweepParam::Kp3),
            other => Err(Error::Invalid(format!("unknown sweep parameter '{other}'"))),
        }
    }

    pub fn default_range(self) -> (f64, f64) {
        match self {
            SweepParam::IStack0 => (1000.0, 5000.0),
            SweepParam::KDroop => (0.002, 0.01),
            SweepParam::Kp3 => (0.5, 6.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Sweep {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Precondition("sweep needs at least one point".into()));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        let step = (self.end - self.start) / (self.count - 1) as f64;
        Ok((0..self.count).map(|k| self.start + step * k as f64).collect())
    }
}

fn apply(base: &LinearInputs, param: SweepParam, value: f64) -> LinearInputs {
    let mut m = base.clone();
    match param {
        SweepParam::IStack0 => m.I_stack0 = value,
        SweepParam::KDroop => m.vsm.K_droop = value,
        SweepParam::Kp3 => m.K_p = base.K_p * value / 3.0,
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocusPoint {
    pub value: f64,
    pub eigenvalues: Vec<Complex64>,
}

/// Reorder `next` to minimise the summed distance to `prev`.
fn pair_nearest(prev: &[Complex64], next: &[Complex64]) -> Vec<Complex64> {
    let n = next.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    // Heap's algorithm; n is 5 so 120 permutations
    let cost = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| (prev[i] - next[j]).norm()).sum() };
    let mut c = vec![0usize; n];
    let mut check = |p: &[usize]| {
        let k = cost(p);
        if k < best_cost {
            best_cost = k;
            best = p.to_vec();
        }
    };
    check(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            check(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best.into_iter().map(|j| next[j]).collect()
}

/// Eigenvalue trajectories over a one-parameter sweep, paired point to
/// point by nearest neighbour.
pub fn root_locus(sweep: &Sweep, base: &LinearInputs) -> Result<Vec<LocusPoint>> {
    let values = sweep.values()?;
    let sets: Vec<Result<Vec<Complex64>>> = values
        .par_iter()
        .map(|&v| apply(base, sweep.param, v).model().map(|m| m.eigenvalues))
        .collect();
    let mut out: Vec<LocusPoint> = Vec::with_capacity(values.len());
    for (value, set) in values.into_iter().zip(sets) {
        let set = set?;
        let eigenvalues = match out.last() {
            Some(prev) => pair_nearest(&prev.eigenvalues, &set),
            None => set,
        };
        out.push(LocusPoint { value, eigenvalues });
    }
    Ok(out)
}

/// Rows of `param,re1,im1,...,re5,im5`.
pub fn write_locus_csv<W: Write>(param: SweepParam, points: &[LocusPoint], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let n = points.first().map_or(5, |p| p.eigenvalues.len());
    let mut header = vec![param.name().to_string()];
    for k in 1..=n {
        header.push(format!("re{k}"));
        header.push(format!("im{k}"));
    }
    wr.write_record(&header)?;
    for p in points {
        let mut row = vec![format!("{}", p.value)];
        for e in &p.eigenvalues {
            row.push(format!("{}", e.re));
            row.push(format!("{}", e.im));
        }
        wr.write_record(&row)?;
    }
    wr.flush().map_err(|e| Error::io("<locus>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rows() {
        let m = LinearInputs::default().model().unwrap();
        assert_eq!(m.a[1], vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.a[4], vec![0.0, 0.0, 0.0, -1.0, 0.0]);
        assert_eq!(m.labels()[3], "dI_stack");
    }

    #[test]
    fn zero_gains_leave_first_order_branch() {
        let base = LinearInputs {
            K_p: 0.0,
            K_i: 0.0,
            vsm: VsmParams {
                K_J: 0.0,
                K_D: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = base.model().unwrap();
        let l = base.stack.L_stack;
        assert_eq!(m.a[3][3], -m.op.R_stack / l);
        assert_eq!(m.a[3][4], 0.0);
        assert_eq!(m.a[2], vec![0.0; 5]);
        // with the bus held (dV = 0) the branch is dI' = -(R/L) dI
        assert!(m.a[3][3] < 0.0);
    }

    #[test]
    fn default_point_is_stable() {
        let m = LinearInputs::default().model().unwrap();
        assert_eq!(m.eigenvalues.len(), 5);
        assert!(m.eigenvalues.iter().all(|e| e.re < 0.0), "{:?}", m.eigenvalues);
    }

    #[test]
    fn inconsistent_point_rejected() {
        let base = LinearInputs {
            V_dc0: 100.0,
            ..Default::default()
        };
        assert!(base.model().is_err());
    }

    #[test]
    fn sweeps_stay_stable() {
        let base = LinearInputs::default();
        for param in [SweepParam::IStack0, SweepParam::KDroop, SweepParam::Kp3] {
            let (a, b) = param.default_range();
            let pts = root_locus(
                &Sweep {
                    param,
                    start: a,
                    end: b,
                    count: 21,
                },
                &base,
            )
            .unwrap();
            for p in &pts {
                assert!(p.eigenvalues.iter().all(|e| e.re < 0.0), "{param:?} {}", p.value);
            }
        }
    }

    #[test]
    fn single_point_sweep_matches_model() {
        let base = LinearInputs::default();
        let pts = root_locus(
            &Sweep {
                param: SweepParam::IStack0,
                start: 3000.0,
                end: 3000.0,
                count: 1,
            },
            &base,
        )
        .unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].eigenvalues, base.model().unwrap().eigenvalues);
    }

    #[test]
    fn pairing_follows_nearest() {
        let prev = vec![Complex64::new(-1.0, 0.0), Complex64::new(-10.0, 0.0)];
        let next = vec![Complex64::new(-9.5, 0.0), Complex64::new(-1.1, 0.0)];
        let p = pair_nearest(&prev, &next);
        assert_eq!(p[0].re, -1.1);
    }
}
