/// Linear-spline basis with `knots.len() + 1` columns, one per segment,
/// so that each fitted coefficient is the within-segment slope:
/// `b1 = min(x, k1)`, `bj = clamp(x - k(j-1), 0, kj - k(j-1))`,
/// `b(m+1) = max(x - km, 0)`.
pub fn spline_basis(x: f64, knots: &[f64]) -> Vec<f64> {
    let m = knots.len();
    if m == 0 {
        return vec![x];
    }
    let mut out = Vec::with_capacity(m + 1);
    out.push(x.min(knots[0]));
    for j in 1..m {
        let width = knots[j] - knots[j - 1];
        out.push((x - knots[j - 1]).clamp(0.0, width));
    }
    out.push((x - knots[m - 1]).max(0.0));
    out
}
