//! Shared helpers for the integration suite: an independent density-matrix
//! steady-state solver used to cross-check the analytic weak-probe coherence.
//!
//! Deliberately brute force: build the full 16x16 Liouvillian of the
//! four-level cascade, replace one row with the trace constraint, and solve
//! by Gaussian elimination. Nothing here shares code with the library's
//! nested-fraction expression, so agreement is meaningful.

use num_complex::Complex64;
use rydsim_core::spectro::AtomicSystem;
use std::f64::consts::PI;

type M4 = [[Complex64; 4]; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn zeros() -> M4 {
    [[ZERO; 4]; 4]
}

fn matmul(a: &M4, b: &M4) -> M4 {
    let mut out = zeros();
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn dagger(a: &M4) -> M4 {
    let mut out = zeros();
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

/// -i[H, rho] + sum_k (C_k rho C_k^+ - 1/2 {C_k^+ C_k, rho}) for one rho.
fn generator(h: &M4, collapses: &[M4], rho: &M4) -> M4 {
    let i = Complex64::new(0.0, 1.0);
    let mut out = zeros();
    let h_rho = matmul(h, rho);
    let rho_h = matmul(rho, h);
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = -i * (h_rho[r][c] - rho_h[r][c]);
        }
    }
    for cop in collapses {
        let cd = dagger(cop);
        let cdc = matmul(&cd, cop);
        let jump = matmul(&matmul(cop, rho), &cd);
        let anti1 = matmul(&cdc, rho);
        let anti2 = matmul(rho, &cdc);
        for r in 0..4 {
            for c in 0..4 {
                out[r][c] += jump[r][c] - 0.5 * (anti1[r][c] + anti2[r][c]);
            }
        }
    }
    out
}

/// Steady-state density matrix of the probe/coupling/RF cascade in the
/// rotating frame, for one velocity class. States are ordered ground,
/// intermediate, first Rydberg, second Rydberg. Doppler shifts follow the
/// counter-propagating convention: probe detuning +k_p v, coupling -k_c v.
pub fn lindblad_steady_state(system: &AtomicSystem, velocity: f64) -> M4 {
    let kp = 2.0 * PI / system.lambda_p;
    let kc = 2.0 * PI / system.lambda_c;
    let dp = system.delta_p + kp * velocity;
    let dc = system.delta_c - kc * velocity;
    let drf = system.delta_rf;

    let re = |x: f64| Complex64::new(x, 0.0);
    let mut h = zeros();
    h[1][1] = re(-dp);
    h[2][2] = re(-(dp + dc));
    h[3][3] = re(-(dp + dc + drf));
    h[0][1] = re(0.5 * system.omega_p);
    h[1][0] = re(0.5 * system.omega_p);
    h[1][2] = re(0.5 * system.omega_c);
    h[2][1] = re(0.5 * system.omega_c);
    h[2][3] = re(0.5 * system.omega_rf);
    h[3][2] = re(0.5 * system.omega_rf);

    // Decay down the ladder plus transit dephasing on every excited state.
    let mut collapses: Vec<M4> = Vec::new();
    let mut c = zeros();
    c[0][1] = re(system.gamma_e.sqrt());
    collapses.push(c);
    let mut c = zeros();
    c[1][2] = re(system.gamma_r.sqrt());
    collapses.push(c);
    let mut c = zeros();
    c[2][3] = re(system.gamma_r.sqrt());
    collapses.push(c);
    for k in 1..4 {
        let mut c = zeros();
        c[k][k] = re((2.0 * system.gamma_t).sqrt());
        collapses.push(c);
    }

    // Liouvillian columns from the generator acting on basis matrices,
    // row-major vectorization: vec index 4r + c holds rho_rc.
    let mut l = [[ZERO; 16]; 16];
    for a in 0..4 {
        for b in 0..4 {
            let mut basis = zeros();
            basis[a][b] = re(1.0);
            let g = generator(&h, &collapses, &basis);
            let col = 4 * a + b;
            for r in 0..4 {
                for c in 0..4 {
                    l[4 * r + c][col] = g[r][c];
                }
            }
        }
    }

    // Trace replacement: the rho_00 equation becomes Tr(rho) = 1.
    let mut rhs = [ZERO; 16];
    for col in 0..16 {
        l[0][col] = ZERO;
    }
    for d in 0..4 {
        l[0][4 * d + d] = re(1.0);
    }
    rhs[0] = re(1.0);

    let x = solve(&mut l, &mut rhs);
    let mut rho = zeros();
    for r in 0..4 {
        for c in 0..4 {
            rho[r][c] = x[4 * r + c];
        }
    }
    rho
}

/// Dense complex solve with partial pivoting; panics on a singular system
/// because the caller's Liouvillian is full rank by construction.
fn solve(a: &mut [[Complex64; 16]; 16], b: &mut [Complex64; 16]) -> [Complex64; 16] {
    let n = 16;
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].norm() > a[pivot][col].norm() {
                pivot = row;
            }
        }
        assert!(a[pivot][col].norm() > 0.0, "singular Liouvillian at column {col}");
        if pivot != col {
            a.swap(pivot, col);
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == ZERO {
                continue;
            }
            for k in col..n {
                let sub = f * a[col][k];
                a[row][k] -= sub;
            }
            let sub = f * b[col];
            b[row] -= sub;
        }
    }
    let mut x = [ZERO; 16];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}
