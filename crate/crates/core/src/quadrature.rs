//! One-dimensional quadrature primitives: Gauss–Legendre rules with
//! deterministic Newton-refined nodes, and an adaptive Gauss–Kronrod (G7,K15)
//! integrator used where no closed antiderivative is available.

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Nodes are found by Newton iteration on the Legendre polynomial starting
/// from the Chebyshev-based initial guess; the iteration is deterministic, so
/// repeated calls yield bit-identical rules.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 * (1.0 + x.abs()) {
                let (_, d) = legendre_with_deriv(n, x);
                dp = d;
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // cos starts near +1; report nodes in increasing order.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

// 15-point Kronrod extension of the 7-point Gauss rule (positive abscissae).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = WGK[7] * f(mid);
    let mut gauss = WG[3] * f(mid);
    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Integrate `f` over `[a, b]` by adaptive bisection of (G7, K15) panels until
/// the summed error estimate is below `abs_tol`.
pub fn adaptive_gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod_panel(f, a, b);
        if err <= tol || depth >= 48 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(f, a, b, abs_tol, 0)
}

/// Sum addends pairwise in their given order. Error grows like `log n` instead
/// of `n`, and the reduction tree is fixed, so parallel producers feeding a
/// pre-ordered buffer still reduce deterministically.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}
