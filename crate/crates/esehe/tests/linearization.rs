//! The five-state linear model against a nonlinear model of the same
//! loop written out here from the branch and DC-link equations.

use esehe::smallsignal::{LinearInputs, LinearModel};
use esehe::stack::stack_voltage;

/// Nonlinear right-hand side in absolute coordinates
/// `[V_dc, xi, delta, I_stack, gamma]` with the reference held at `I_stack0`.
fn nonlinear(inp: &LinearInputs, m: &LinearModel, x: &[f64; 5]) -> [f64; 5] {
    let (v0, i0, d0) = (m.op.V_dc0, m.op.I_stack0, m.op.D_0);
    let [v, xi, delta, i, gamma] = *x;
    let g = inp.vsm.droop_gain();
    let d = d0 + inp.K_p * (i0 - i) + inp.K_i * gamma;
    let p_ac = v0 * d0 * i0 + inp.vsm.K_delta * delta.sin() - g * (v - v0);
    let u = stack_voltage(i, &inp.stack).unwrap();
    [
        (p_ac - v * d * i) / (inp.C_dc * v),
        v - v0,
        -inp.vsm.K_D * (v - v0) - inp.vsm.K_J * xi,
        (d * v - u - inp.stack.R_L_stack * i) / inp.stack.L_stack,
        i0 - i,
    ]
}

fn rk4(f: impl Fn(&[f64; 5]) -> [f64; 5], x: &[f64; 5], h: f64) -> [f64; 5] {
    let add = |a: &[f64; 5], b: &[f64; 5], s: f64| std::array::from_fn(|k| a[k] + s * b[k]);
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    std::array::from_fn(|k| x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
}

fn equilibrium(m: &LinearModel) -> [f64; 5] {
    [m.op.V_dc0, 0.0, 0.0, m.op.I_stack0, 0.0]
}

#[test]
fn operating_point_is_an_equilibrium() {
    let inp = LinearInputs::default();
    let m = inp.model().unwrap();
    let dx = nonlinear(&inp, &m, &equilibrium(&m));
    for v in dx {
        assert!(v.abs() < 1e-9, "{dx:?}");
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    for i0 in [1000.0, 3000.0, 5000.0] {
        let inp = LinearInputs {
            I_stack0: i0,
            ..LinearInputs::default()
        };
        let m = inp.model().unwrap();
        let x0 = equilibrium(&m);
        let steps = [1e-3, 1e-5, 1e-7, 1e-3, 1e-7];
        for j in 0..5 {
            let (mut xp, mut xm) = (x0, x0);
            xp[j] += steps[j];
            xm[j] -= steps[j];
            let (fp, fm) = (nonlinear(&inp, &m, &xp), nonlinear(&inp, &m, &xm));
            for i in 0..5 {
                let fd = (fp[i] - fm[i]) / (2.0 * steps[j]);
                let row = m.a[i].iter().fold(1.0_f64, |s, v| s.max(v.abs()));
                assert!(
                    (fd - m.a[i][j]).abs() <= 1e-6 * row,
                    "I0 {i0}: A[{i}][{j}] = {} vs {fd}",
                    m.a[i][j]
                );
            }
        }
    }
}

#[test]
fn small_perturbation_tracks_the_linear_model() {
    for i0 in [1000.0, 3000.0, 5000.0] {
        let inp = LinearInputs {
            I_stack0: i0,
            ..LinearInputs::default()
        };
        let m = inp.model().unwrap();
        // dominant mode: oscillatory pair closest to the imaginary axis
        let dom = m
            .eigenvalues
            .iter()
            .filter(|z| z.im.abs() > 1e-9)
            .max_by(|a, b| a.re.total_cmp(&b.re))
            .expect("oscillatory mode");
        let period = 2.0 * std::f64::consts::PI / dom.im.abs();
        let fastest = m.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let h = 0.05 / fastest;
        let steps = (period / h).ceil() as usize;

        let x0 = equilibrium(&m);
        // 1e-4 pu of the bus voltage
        let dv = 1e-4 * m.op.V_dc0;
        let mut nl = x0;
        nl[0] += dv;
        let mut lin = [dv, 0.0, 0.0, 0.0, 0.0];
        let mut peak = [0.0_f64; 5];
        let mut err = [0.0_f64; 5];
        for _ in 0..steps {
            nl = rk4(|x| nonlinear(&inp, &m, x), &nl, h);
            lin = rk4(|x| m.derivative(x, 0.0), &lin, h);
            for k in 0..5 {
                peak[k] = peak[k].max(lin[k].abs());
                err[k] = err[k].max((nl[k] - x0[k] - lin[k]).abs());
            }
        }
        for k in [0, 2, 3] {
            assert!(err[k] <= 0.05 * peak[k], "I0 {i0} state {k}: err {} peak {}", err[k], peak[k]);
        }
    }
}
