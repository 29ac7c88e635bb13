//! Block-tridiagonal solver with 2x2 blocks (block Thomas algorithm).

pub(crate) type Mat2 = [[f64; 2]; 2];
pub(crate) type Vec2 = [f64; 2];

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn apply(a: &Mat2, v: &Vec2) -> Vec2 {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn inverse(a: &Mat2) -> Option<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(det.abs() > 1e-300 && det.abs() > f64::EPSILON * scale * scale * 1e-6) {
        return None;
    }
    Some([[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]])
}

/// Block rows `lower[i] z[i-1] + diag[i] z[i] + upper[i] z[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub(crate) struct BlockTridiagonal {
    pub lower: Vec<Mat2>,
    pub diag: Vec<Mat2>,
    pub upper: Vec<Mat2>,
    pub rhs: Vec<Vec2>,
}

/// Returns `None` when a pivot block is singular.
pub(crate) fn solve(sys: &BlockTridiagonal) -> Option<Vec<Vec2>> {
    let n = sys.diag.len();
    let mut inv_pivot: Vec<Mat2> = Vec::with_capacity(n);
    let mut rhs: Vec<Vec2> = Vec::with_capacity(n);
    for i in 0..n {
        let (pivot, r) = if i == 0 {
            (sys.diag[0], sys.rhs[0])
        } else {
            let m = mul(&sys.lower[i], &inv_pivot[i - 1]);
            let mc = mul(&m, &sys.upper[i - 1]);
            let mr = apply(&m, &rhs[i - 1]);
            let d = &sys.diag[i];
            (
                [[d[0][0] - mc[0][0], d[0][1] - mc[0][1]], [d[1][0] - mc[1][0], d[1][1] - mc[1][1]]],
                [sys.rhs[i][0] - mr[0], sys.rhs[i][1] - mr[1]],
            )
        };
        inv_pivot.push(inverse(&pivot)?);
        rhs.push(r);
    }
    let mut z = vec![[0.0; 2]; n];
    z[n - 1] = apply(&inv_pivot[n - 1], &rhs[n - 1]);
    for i in (0..n - 1).rev() {
        let cz = apply(&sys.upper[i], &z[i + 1]);
        z[i] = apply(&inv_pivot[i], &[rhs[i][0] - cz[0], rhs[i][1] - cz[1]]);
    }
    Some(z)
}
