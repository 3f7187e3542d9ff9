//! Nelder-Mead simplex descent and a finite-difference Newton polish for
//! the low-dimensional profiled likelihood surface.

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], lo: f64, hi: f64) {
    for v in x {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` from `x0` with an initial simplex of edge `step`, keeping
/// every vertex inside `[lo, hi]`. Stops when the spread of simplex values
/// falls below `ftol` relative to the best value.
pub(crate) fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    (lo, hi): (f64, f64),
    ftol: f64,
    max_iter: usize,
) -> Outcome {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut start = x0.to_vec();
    clamp(&mut start, lo, hi);
    simplex.push(start.clone());
    for i in 0..d {
        let mut v = start.clone();
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[d]);
        let spread = worst - best;
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (best.is_finite() && spread <= ftol * best.abs().max(1e-300)) || diameter < 1e-12 {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..d).map(|j| centroid[j] + t * (simplex[d][j] - centroid[j])).collect();
            clamp(&mut p, lo, hi);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[d] = xe;
                values[d] = fe;
            } else {
                simplex[d] = xr;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = xr;
            values[d] = fr;
        } else {
            let (xc, fc) = if fr < values[d] {
                let x = along(-0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x, &mut evals);
                (x, v)
            };
            if fc < values[d].min(fr) {
                simplex[d] = xc;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    let p: Vec<f64> = (0..d).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = eval(&p, &mut evals);
                    simplex[i] = p;
                }
            }
        }
    }
    let mut bi = 0;
    for i in 1..values.len() {
        if values[i] < values[bi] {
            bi = i;
        }
    }
    Outcome {
        x: simplex[bi].clone(),
        fx: values[bi],
        iterations,
        evaluations: evals,
        converged,
    }
}

/// Newton iterations with central-difference derivatives on the
/// coordinates listed in `active`, with step halving so `f` never
/// increases. Returns the polished point, its value and the number of
/// accepted steps.
pub(crate) fn newton_polish(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    fx0: f64,
    active: &[usize],
    (lo, hi): (f64, f64),
    evaluations: &mut usize,
) -> (Vec<f64>, f64, usize) {
    const H: f64 = 1e-4;
    let mut x = x0.to_vec();
    let mut fx = fx0;
    let mut steps = 0;
    if active.is_empty() {
        return (x, fx, 0);
    }
    let k = active.len();
    let mut call = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        f(p)
    };
    for _ in 0..60 {
        let mut g = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        let shifted = |x: &[f64], moves: &[(usize, f64)]| {
            let mut p = x.to_vec();
            for &(i, d) in moves {
                p[active[i]] += d;
            }
            p
        };
        for i in 0..k {
            let fp = call(&shifted(&x, &[(i, H)]), evaluations);
            let fm = call(&shifted(&x, &[(i, -H)]), evaluations);
            g[i] = (fp - fm) / (2.0 * H);
            hess[i][i] = (fp - 2.0 * fx + fm) / (H * H);
            for j in 0..i {
                let fpp = call(&shifted(&x, &[(i, H), (j, H)]), evaluations);
                let fpm = call(&shifted(&x, &[(i, H), (j, -H)]), evaluations);
                let fmp = call(&shifted(&x, &[(i, -H), (j, H)]), evaluations);
                let fmm = call(&shifted(&x, &[(i, -H), (j, -H)]), evaluations);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * H * H);
                hess[i][j] = v;
                hess[j][i] = v;
            }
        }
        if g.iter().chain(hess.iter().flatten()).any(|v| !v.is_finite()) {
            break;
        }
        // solve hess * step = -g for k <= 2
        let step = match k {
            1 => {
                if hess[0][0] <= 0.0 {
                    break;
                }
                vec![-g[0] / hess[0][0]]
            }
            _ => {
                let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
                if hess[0][0] <= 0.0 || det <= 0.0 {
                    break;
                }
                vec![
                    -(hess[1][1] * g[0] - hess[0][1] * g[1]) / det,
                    -(hess[0][0] * g[1] - hess[1][0] * g[0]) / det,
                ]
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut p = x.clone();
            for i in 0..k {
                p[active[i]] = (p[active[i]] + t * step[i]).clamp(lo, hi);
            }
            let fp = call(&p, evaluations);
            if fp <= fx {
                let moved = p.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x = p;
                fx = fp;
                accepted = moved > 0.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        steps += 1;
        let size = step.iter().map(|s| (t * s).abs()).fold(0.0, f64::max);
        if size < 1e-10 {
            break;
        }
    }
    (x, fx, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 5.0;
        let o = nelder_mead(&mut f, &[0.0, 0.0], 1.0, (-10.0, 10.0), 1e-12, 10_000);
        assert!(o.converged);
        let mut ev = 0;
        let (x, fx, _) = newton_polish(&mut f, &o.x, o.fx, &[0, 1], (-10.0, 10.0), &mut ev);
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] + 2.0).abs() < 1e-8);
        assert!((fx - 5.0).abs() < 1e-12);
    }

    #[test]
    fn respects_bounds() {
        let mut f = |x: &[f64]| x[0];
        let o = nelder_mead(&mut f, &[0.0], 1.0, (-3.0, 3.0), 1e-12, 1000);
        assert!((o.x[0] + 3.0).abs() < 1e-9);
    }
}
