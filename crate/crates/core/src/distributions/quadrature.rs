//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 60;
const MAX_EVALS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

fn kronrod(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over the finite interval `[a, b]` to within
/// `max(abs_tol, rel_tol·|∫f|)`.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Argument(format!(
            "integration bounds must be finite, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(Quadrature {
            value: 0.0,
            error: 0.0,
        });
    }
    let (whole, err) = kronrod(&mut f, a, b);
    let mut evals = 15usize;
    // Pending segments: (a, b, estimate, error, depth)
    let mut stack = vec![(a, b, whole, err, 0u32)];
    let mut value = 0.0;
    let mut error = 0.0;
    let scale = whole.abs();
    while let Some((lo, hi, est, e, depth)) = stack.pop() {
        let budget = abs_tol.max(rel_tol * scale) * ((hi - lo) / (b - a)).abs();
        if e <= budget || depth >= MAX_DEPTH || (hi - lo).abs() < f64::EPSILON * lo.abs().max(1.0)
        {
            value += est;
            error += e;
            continue;
        }
        if evals > MAX_EVALS {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] did not converge (error {error:e})"
            )));
        }
        let mid = 0.5 * (lo + hi);
        let (l, le) = kronrod(&mut f, lo, mid);
        let (r, re) = kronrod(&mut f, mid, hi);
        evals += 30;
        stack.push((lo, mid, l, le, depth + 1));
        stack.push((mid, hi, r, re, depth + 1));
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "quadrature on [{a}, {b}] produced {value}"
        )));
    }
    Ok(Quadrature { value, error })
}

/// Integrates over `[a, ∞)` through the substitution `x = a + t/(1 − t)`.
pub fn integrate_to_infinity(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    integrate(
        |t| {
            let u = 1.0 - t;
            let v = f(a + t / u) / (u * u);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

/// Trapezoidal rule over sampled `(x, y)` pairs.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
